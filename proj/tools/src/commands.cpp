#include "prowave/app/commands.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "prowave/config.hpp"

namespace prowave::app {
namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string numbered(const std::string& prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu.wav", prefix.c_str(), i);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
  if (!f.flush()) throw FormatError("cannot write " + path.string());
}

// Appends rows to a stage's metrics CSV, starting it with a header.
class MetricsLog {
 public:
  MetricsLog(const fs::path& path, std::optional<std::size_t> resume_at) {
    if (resume_at && fs::exists(path)) {
      train::truncate_metrics(path, *resume_at);
    } else {
      write_text(path, train::metrics_header());
    }
    file_.open(path, std::ios::app);
    if (!file_) throw FormatError("cannot append to " + path.string());
  }
  void add(const train::Metrics& m) {
    file_ << train::metrics_row(m);
    file_.flush();
  }

 private:
  std::ofstream file_;
};

train::Checkpoint run_stage(int index, train::StageKind kind, const train::Dataset& data, const train::TrainConfig& cfg,
                            std::optional<train::Checkpoint> resume, std::optional<models::Stage> source,
                            const RunLayout& layout, std::ostream& out) {
  const std::size_t target = kind == train::StageKind::wavegan ? cfg.stage1_iters : cfg.stage2_iters;
  if (resume && resume->iteration >= target) {
    if (!(resume->config == cfg)) throw ParameterError("training config differs from the checkpoint's config");
    out << "stage " << index << ": already complete at iteration " << resume->iteration << '\n';
    return *resume;
  }
  MetricsLog log(layout.metrics(index), resume ? std::optional(resume->iteration) : std::nullopt);
  if (resume) out << "stage " << index << ": resuming at iteration " << resume->iteration << '\n';

  train::TrainHooks hooks;
  train::Metrics latest;
  hooks.on_metrics = [&](const train::Metrics& m) {
    latest = m;
    log.add(m);
  };
  hooks.on_checkpoint = [&](const train::Checkpoint& c) {
    train::save_checkpoint(layout.checkpoint(index), c);
    char line[160];
    std::snprintf(line, sizeof line, "stage %d (%s): iteration %zu/%zu critic %.5g generator %.5g\n", index,
                  train::to_string(kind).c_str(), c.iteration, target, latest.critic_loss, latest.generator_loss);
    out << line << std::flush;
  };
  try {
    return train::train_stage(kind, data, cfg, std::move(resume), std::move(source), hooks);
  } catch (const train::TrainingDiverged& e) {
    train::save_checkpoint(layout.diverged(index), e.state());
    out << "stage " << index << ": " << e.what() << " at iteration " << e.state().iteration
        << "; diagnostic checkpoint " << layout.diverged(index).string() << '\n';
    throw;
  }
}

void write_manifest(const TrainOptions& opt, const RunLayout& layout, const train::TrainConfig& cfg) {
  nlohmann::ordered_json m;
  m["experiment"] = fs::absolute(opt.out_dir).filename().string();
  m["created"] = utc_timestamp();
  m["dataset"] = fs::absolute(opt.data_dir).string();
  m["mode"] = opt.mode == TrainMode::progressive ? "progressive" : "wavegan-only";
  m["config"] = train::to_text(cfg);
  m["checkpoints"] = nlohmann::json::array();
  m["metrics"] = nlohmann::json::array();
  for (int stage : {1, 2}) {
    if (fs::exists(layout.checkpoint(stage))) m["checkpoints"].push_back(layout.checkpoint(stage).filename().string());
    if (fs::exists(layout.metrics(stage))) m["metrics"].push_back(layout.metrics(stage).filename().string());
  }
  write_text(layout.manifest(), m.dump(2) + "\n");
}

}  // namespace

audio::DatasetSummary cmd_preprocess(const PreprocessOptions& opt, std::ostream& out) {
  audio::IngestOptions ingest;
  ingest.labels = opt.labels;
  ingest.trim_enabled = opt.trim;
  ingest.trim.tail_trim = opt.tail_trim;
  ingest.trim.threshold_fraction = opt.threshold;
  ingest.trim.validate();
  const auto result = audio::ingest_dataset(opt.in_dir, ingest);

  for (std::size_t i = 0; i < result.clips.size(); ++i) {
    const auto& src = result.sources[i];
    const auto dir = opt.out_dir / src.parent_path().filename();
    fs::create_directories(dir);
    audio::save_wav(dir / src.filename(), result.clips[i]);
  }

  const auto& s = result.summary;
  char line[128];
  std::snprintf(line, sizeof line, "clips: %zu\nmean duration: %.4f s\nstd duration: %.4f s\n", s.clip_count,
                s.mean_duration, s.std_duration);
  out << line;
  for (const auto& [label, n] : s.per_label_counts) out << "  " << label << ": " << n << '\n';
  if (!result.skipped.empty()) out << "skipped unreadable files: " << result.skipped.size() << '\n';
  if (!result.silent.empty()) out << "kept untrimmed (no speech found): " << result.silent.size() << '\n';
  out << "wrote " << result.clips.size() << " clips to " << opt.out_dir.string() << '\n';
  return s;
}

TrainOutcome cmd_train(const TrainOptions& opt, std::ostream& out) {
  const RunLayout layout{opt.out_dir};
  std::optional<train::Checkpoint> resume1, resume2;
  if (opt.resume) {
    if (!fs::exists(layout.checkpoint(1))) {
      throw UsageError("--resume: no checkpoint at " + layout.checkpoint(1).string());
    }
    resume1 = train::load_checkpoint(layout.checkpoint(1));
    if (opt.mode == TrainMode::progressive && fs::exists(layout.checkpoint(2))) {
      resume2 = train::load_checkpoint(layout.checkpoint(2));
    }
  }

  train::TrainConfig cfg;
  if (opt.config_path) {
    cfg = train::load_config(*opt.config_path);
  } else if (resume1) {
    cfg = resume1->config;
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.mode == TrainMode::wavegan_only) cfg.stage2_iters = 0;
  cfg.validate();

  audio::IngestOptions ingest;
  ingest.trim_enabled = false;
  const auto clips = audio::ingest_dataset(opt.data_dir, ingest).clips;
  const train::Dataset data(clips);
  out << "dataset: " << data.size() << " clips from " << opt.data_dir.string() << '\n';

  fs::create_directories(opt.out_dir);
  write_text(layout.config(), train::to_text(cfg));

  TrainOutcome result;
  result.stage1 = run_stage(1, train::StageKind::wavegan, data, cfg, std::move(resume1), {}, layout, out);
  if (cfg.stage2_iters > 0) {
    models::Stage source{result.stage1.generator_spec, result.stage1.generator};
    result.stage2 =
        run_stage(2, train::StageKind::audio2audio, data, cfg, std::move(resume2), std::move(source), layout, out);
    if (train::params_hash(result.stage2->source->params) != train::params_hash(result.stage1.generator)) {
      throw ContractError("stage-1 parameters changed during stage 2");
    }
  }
  write_manifest(opt, layout, cfg);
  out << "done: " << layout.checkpoint(result.stage2 ? 2 : 1).string() << '\n';
  return result;
}

models::Pipeline proposed_pipeline(const train::Checkpoint& stage2) {
  if (stage2.stage != train::StageKind::audio2audio || !stage2.source) {
    throw ParameterError("proposed checkpoint must come from an audio2audio stage");
  }
  return models::Pipeline({*stage2.source, {stage2.generator_spec, stage2.generator}});
}

std::vector<fs::path> cmd_generate(const GenerateOptions& opt, std::ostream& out) {
  if (!opt.baseline && !opt.proposed) throw UsageError("generate needs --baseline and/or --proposed");

  struct Job {
    std::string prefix;
    models::Pipeline pipeline;
    train::NoiseRange range;
  };
  std::vector<Job> jobs;
  if (opt.baseline) {
    const auto ckpt = train::load_checkpoint(*opt.baseline);
    if (ckpt.stage != train::StageKind::wavegan) {
      throw ParameterError("baseline checkpoint must come from a wavegan stage");
    }
    jobs.push_back({"baseline", train::make_pipeline(ckpt), ckpt.config.noise_range});
  }
  if (opt.proposed) {
    const auto ckpt = train::load_checkpoint(*opt.proposed);
    jobs.push_back({"proposed", proposed_pipeline(ckpt), ckpt.config.noise_range});
  }

  std::vector<fs::path> files;
  if (opt.count == 0) {
    out << "nothing to generate\n";
    return files;
  }
  fs::create_directories(opt.out_dir);
  std::string diagnostics = "file,peak,rms,dc_offset,silence_ratio\n";
  for (const auto& job : jobs) {
    const auto clips = train::generate(job.pipeline, opt.count, opt.seed, job.range);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const auto path = opt.out_dir / numbered(job.prefix, i);
      audio::save_wav(path, clips[i]);
      files.push_back(path);
      const auto d = eval::clip_diagnostics(clips[i]);
      char row[192];
      std::snprintf(row, sizeof row, "%s,%.6f,%.6f,%.6f,%.4f\n", path.filename().c_str(), d.peak, d.rms, d.dc_offset,
                    d.silence_ratio);
      diagnostics += row;
    }
    out << "wrote " << clips.size() << ' ' << job.prefix << " clips\n";
  }
  write_text(opt.out_dir / "diagnostics.csv", diagnostics);
  return files;
}

eval::Report cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err) {
  const auto file = eval::read_ratings(opt.ratings);
  for (const auto& s : file.skipped) err << opt.ratings.string() << ":" << s.line << ": skipped: " << s.reason << '\n';
  if (file.records.empty()) throw FormatError("no valid ratings in " + opt.ratings.string());
  const auto report = eval::make_report(file.records);
  out << eval::format_report(report);
  out << "ratings: " << file.records.size() << ", skipped malformed lines: " << file.skipped.size() << '\n';
  const auto table = eval::table_csv(report);
  if (opt.table_out) {
    if (opt.table_out->has_parent_path()) fs::create_directories(opt.table_out->parent_path());
    write_text(*opt.table_out, table);
    out << "table written to " << opt.table_out->string() << '\n';
  } else {
    out << '\n' << table;
  }
  return report;
}

}  // namespace prowave::app
