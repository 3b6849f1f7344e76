// Acceptance suite: one PASS/FAIL line per criterion.
//
//   prowave_acceptance [name-filter]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "gp_check.hpp"
#include "prowave/app/commands.hpp"
#include "prowave/audio.hpp"
#include "prowave/evaluation.hpp"
#include "prowave/losses.hpp"
#include "prowave/models.hpp"
#include "prowave/training.hpp"
#include "ratings_fixture.hpp"
#include "reference.hpp"
#include "temp_dir.hpp"

namespace ad = prowave::ad;
namespace audio = prowave::audio;
namespace eval = prowave::eval;
namespace m = prowave::models;
namespace tr = prowave::train;
using prowave::Rng;
using prowave::Shape;
using prowave::Tensor;

namespace {

// Collects failed checks of one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok && failures_.size() < 8) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool passed() const { return failed_ == 0; }
  std::string summary() const {
    std::string out;
    for (const auto& n : notes_) out += (out.empty() ? "" : "; ") + n;
    if (failed_) {
      out += (out.empty() ? "" : "; ") + std::to_string(failed_) + "/" + std::to_string(count_) + " checks failed:";
      for (const auto& f : failures_) out += " [" + f + "]";
    } else {
      out += (out.empty() ? "" : "; ") + std::to_string(count_) + " checks";
    }
    return out;
  }

 private:
  std::size_t count_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void progress(const std::string& s) { std::cout << "      " << s << std::endl; }

// ---- Cohen's d ----------------------------------------------------------

void cohens_d_reproduction(Checks& c) {
  const eval::SystemStats baseline{eval::System::baseline, 300, 3.39, 1.67};
  const eval::SystemStats proposed{eval::System::proposed, 300, 4.48, 1.70};
  const double d = eval::cohens_d(baseline, proposed);
  c.note("d = " + fmt("%.5f", d));
  c.expect(std::abs(d - 0.65) <= 0.005, "d within 0.65 +- 0.005");
  c.expect(eval::effect_band(d) == eval::EffectBand::medium, "band is medium");
}

// ---- Architecture shapes ------------------------------------------------

std::vector<std::size_t> generator_lengths(std::size_t d) {
  const auto spec = m::build_generator(d);
  const auto trace = m::shape_trace(spec);
  std::vector<std::size_t> out{trace[2][0]};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (spec.layers[i].kind == m::LayerKind::tconv) out.push_back(trace[i + 1][0]);
  }
  return out;
}

void architecture_shapes(Checks& c) {
  const std::vector<std::size_t> schedule{16, 64, 256, 1024, 4096, 16384};
  for (std::size_t d : {1, 2, 4, 64}) {
    const auto ds = std::to_string(d);
    c.expect(generator_lengths(d) == schedule, "generator schedule d=" + ds);
    c.expect(m::output_shape(m::build_generator(d)) == Shape{16384, 1}, "generator output d=" + ds);
    const auto trace = m::shape_trace(m::build_autoencoder(d));
    c.expect(trace[8] == Shape{64, 8 * d}, "autoencoder bottleneck d=" + ds);
    c.expect(trace.back() == Shape{16384, 1}, "autoencoder output d=" + ds);
    c.expect(m::output_shape(m::build_discriminator(d, 2)) == Shape{1}, "critic output d=" + ds);
  }
  const auto bottleneck = m::shape_trace(m::build_autoencoder(64))[8];
  c.note("bottleneck(64) = " + prowave::to_string(bottleneck));
  c.expect(bottleneck == Shape{64, 512}, "bottleneck [64, 512]");
}

// ---- Gradient penalty ---------------------------------------------------

tr::Critic linear_critic(const Tensor& w) {
  return [w](const ad::Var& x) { return ad::sum_rows(ad::mul(x, ad::Var(w))); };
}

void gradient_penalty(Checks& c) {
  double worst = 0;
  for (bool smooth : {true, false}) {
    for (std::uint64_t seed : {101, 102, 103}) {
      const auto check = reference::check_gp_gradient(reference::make_gp_case(smooth, seed), 10.0);
      worst = std::max(worst, check.gradient_error);
      c.expect(check.param_count <= 200, "critic has <= 200 parameters");
      c.expect(check.gradient_error < 1e-3, std::string(smooth ? "tanh" : "lrelu") + " critic seed " +
                                               std::to_string(seed) + " rel err " + fmt("%.2e", check.gradient_error));
    }
  }
  c.note("max relative gradient error " + fmt("%.2e", worst));

  // lambda = 0: loss and gradients equal the unregularised ones exactly.
  {
    const auto g = reference::make_gp_case(false, 7);
    ad::Tape tape;
    const auto bound = m::bind_params(g.params, &tape);
    const tr::Critic critic = [&](const ad::Var& x) { return m::forward(g.spec, bound, x, nullptr); };
    Rng rng(8);
    const auto loss = tr::critic_loss_wgan_gp(critic, tape, g.fake, g.real, 0.0, rng);
    c.expect(loss.total.value() == loss.wasserstein.value(), "lambda=0 loss equals Wasserstein term");
    c.expect(tr::collect_gradients(tape.backward(loss.total), bound) ==
                 tr::collect_gradients(tape.backward(loss.wasserstein), bound),
             "lambda=0 gradients equal");
  }

  // Unit-norm linear critics.
  Rng rng(9);
  const auto fake = reference::random_tensor({3, 64, 1}, rng), real = reference::random_tensor({3, 64, 1}, rng);
  Tensor one_hot({3, 64, 1}), pair({3, 64, 1});
  for (std::size_t b = 0; b < 3; ++b) {
    one_hot[b * 64 + 11] = 1.0f;
    pair[b * 64 + 5] = 0.6f;
    pair[b * 64 + 50] = -0.8f;
  }
  for (const auto& w : {one_hot, pair}) {
    ad::Tape tape;
    const auto loss = tr::critic_loss_wgan_gp(linear_critic(w), tape, fake, real, 10.0, rng);
    c.expect(loss.penalty.value().item() == 0.0f, "unit-norm linear critic penalty is exactly 0");
  }
}

// ---- Preprocessing ------------------------------------------------------

void preprocessing(Checks& c) {
  audio::TrimConfig keep_tail;
  keep_tail.tail_trim = false;
  Rng rng(12);
  long worst = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto onset = static_cast<std::size_t>(rng.uniform_int(600, 12000));
    const auto clip = audio::synth_fixture(audio::FixtureKind::silence_tone, seed, onset);
    const auto trimmed = audio::trim_onset(clip, keep_tail);
    const long detected = static_cast<long>(clip.samples.size() - trimmed.samples.size());
    worst = std::max(worst, std::abs(detected - static_cast<long>(onset)));
    c.expect(std::abs(detected - static_cast<long>(onset)) <= 512, "onset " + std::to_string(onset) + " detected at " +
                                                                        std::to_string(detected));
  }
  c.note("worst onset error " + std::to_string(worst) + " samples");

  for (auto kind : {audio::FixtureKind::tone, audio::FixtureKind::chirp, audio::FixtureKind::silence_tone}) {
    for (bool tail : {true, false}) {
      audio::TrimConfig cfg;
      cfg.tail_trim = tail;
      const auto once = audio::trim_onset(audio::synth_fixture(kind, 3, 5000), cfg);
      c.expect(audio::trim_onset(once, cfg).samples == once.samples, "trim is idempotent");
    }
  }

  double worst_wav = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    audio::AudioClip clip;
    Rng r(seed);
    clip.samples.resize(4000);
    for (auto& s : clip.samples) s = static_cast<float>(r.uniform(-1.0, 1.0));
    clip.samples[0] = 1.0f;
    clip.samples[1] = -1.0f;
    const auto back = audio::read_wav(audio::write_wav(clip));
    c.expect(back.samples.size() == clip.samples.size(), "WAV length preserved");
    for (std::size_t i = 0; i < clip.samples.size(); ++i) {
      worst_wav = std::max(worst_wav, std::abs(double(back.samples[i]) - clip.samples[i]));
    }
  }
  c.expect(worst_wav <= 1.0 / 32768.0, "WAV round trip within 1/32768");
  c.note("WAV max error " + fmt("%.3g", worst_wav));

  audio::AudioClip zeros;
  zeros.samples.assign(16384, 0.0f);
  bool raised = false;
  try {
    audio::trim_onset(zeros, {});
  } catch (const audio::NoSpeechError&) {
    raised = true;
  }
  c.expect(raised, "all-zero clip raises the no-speech error");
}

// ---- Desk-scale training ------------------------------------------------

bool all_finite(const m::ModelParams& p) {
  for (const auto& [name, t] : p)
    if (!t.all_finite()) return false;
  return true;
}

bool finite(const tr::Metrics& m) {
  return std::isfinite(m.critic_loss) && std::isfinite(m.wasserstein_term) && std::isfinite(m.penalty_term) &&
         std::isfinite(m.generator_loss);
}

void check_outputs(Checks& c, const m::Pipeline& pipeline, const std::string& what) {
  const auto clips = tr::generate(pipeline, 8, 99);
  bool ok = clips.size() == 8;
  for (const auto& clip : clips) {
    ok &= clip.samples.size() == audio::kClipLength;
    for (float v : clip.samples) ok &= std::isfinite(v) && v >= -1.0f && v <= 1.0f;
  }
  c.expect(ok, what + " outputs finite and within [-1, 1]");
}

void desk_training(Checks& c) {
  TempDir dir;
  std::vector<audio::AudioClip> clips;
  const audio::FixtureKind kinds[] = {audio::FixtureKind::tone, audio::FixtureKind::chirp,
                                      audio::FixtureKind::silence_tone};
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto raw = audio::synth_fixture(kinds[i % 3], i, 1000 + 97 * i);
    clips.push_back(audio::fit_length(audio::trim_onset(raw, {})));
  }
  const tr::Dataset data(clips);

  tr::TrainConfig cfg;  // d=1, batch 8, 2000 + 500 iterations
  cfg.seed = 2019;
  cfg.checkpoint_every = 50;
  c.expect(cfg.model_dim == 1 && cfg.batch_size == 8 && cfg.stage1_iters == 2000 && cfg.stage2_iters == 500,
           "desk configuration");

  constexpr std::size_t kEarly = 100, kStage1Resume = 1000, kStage2Resume = 250;
  std::vector<tr::Metrics> metrics1, metrics2;
  std::optional<tr::Checkpoint> early;
  const auto t0 = std::chrono::steady_clock::now();

  // Uninterrupted run.
  tr::TrainHooks h1;
  h1.on_metrics = [&](const tr::Metrics& m) { metrics1.push_back(m); };
  h1.on_checkpoint = [&](const tr::Checkpoint& ck) {
    if (ck.iteration == kEarly) early = ck;
    if (ck.iteration == kStage1Resume) tr::save_checkpoint(dir.path() / "stage1_resume.ckpt", ck);
    if (ck.iteration % 500 == 0) progress("stage 1 iteration " + std::to_string(ck.iteration));
  };
  const auto stage1 = tr::train_stage(tr::StageKind::wavegan, data, cfg, {}, {}, h1);
  const auto frozen = tr::params_hash(stage1.generator);

  tr::TrainHooks h2;
  std::size_t hash_checks = 0, hash_changes = 0;
  h2.on_metrics = [&](const tr::Metrics& m) { metrics2.push_back(m); };
  h2.on_iteration = [&](const tr::Trainer& t) {
    ++hash_checks;
    hash_changes += tr::params_hash(t.state().source->params) != frozen;
  };
  h2.on_checkpoint = [&](const tr::Checkpoint& ck) {
    if (ck.iteration == kStage2Resume) tr::save_checkpoint(dir.path() / "stage2_resume.ckpt", ck);
    if (ck.iteration % 250 == 0) progress("stage 2 iteration " + std::to_string(ck.iteration));
  };
  const auto stage2 =
      tr::train_stage(tr::StageKind::audio2audio, data, cfg, {}, m::Stage{stage1.generator_spec, stage1.generator}, h2);
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  c.note("full run " + fmt("%.1f", minutes) + " min");

  c.expect(stage1.iteration == 2000 && stage2.iteration == 500, "iteration counts");
  c.expect(stage1.critic_steps == 2000 * cfg.n_critic && stage1.generator_steps == 2000, "step counts");
  bool finite_metrics = true;
  for (const auto& m : metrics1) finite_metrics &= finite(m);
  for (const auto& m : metrics2) finite_metrics &= finite(m);
  c.expect(finite_metrics && metrics1.size() == 200 && metrics2.size() == 50, "no NaN in metrics");
  c.expect(all_finite(stage1.generator) && all_finite(stage1.critic) && all_finite(stage2.generator) &&
               all_finite(stage2.critic),
           "no NaN in parameters");
  c.expect(hash_checks == 500 && hash_changes == 0, "frozen stage-1 hash unchanged every stage-2 iteration");
  c.expect(tr::params_hash(stage2.source->params) == frozen, "stage-2 source equals stage-1 generator");
  check_outputs(c, tr::make_pipeline(stage1), "stage-1");
  check_outputs(c, tr::make_pipeline(stage1, stage2), "progressive");

  // Bit-reproducible from seed: fresh reruns reach the saved resume points,
  // and resuming from those points reaches the final states below.
  {
    tr::Trainer again(tr::initial_state(tr::StageKind::wavegan, cfg), data);
    std::vector<tr::Metrics> rerun;
    while (again.state().iteration < kStage1Resume) {
      const auto m = again.iterate();
      if (m.iteration % cfg.metrics_every == 0) rerun.push_back(m);
      if (m.iteration == kEarly) {
        c.expect(early && tr::encode_checkpoint(again.snapshot()) == tr::encode_checkpoint(*early),
                 "seed rerun matches checkpoint bytes at iteration 100");
      }
    }
    c.expect(tr::encode_checkpoint(again.snapshot()) ==
                 tr::encode_checkpoint(tr::load_checkpoint(dir.path() / "stage1_resume.ckpt")),
             "seed rerun matches checkpoint bytes at iteration 1000");
    c.expect(std::equal(rerun.begin(), rerun.end(), metrics1.begin()), "seed rerun matches metrics");
    progress("stage-1 seed rerun checked");

    tr::Trainer again2(
        tr::initial_state(tr::StageKind::audio2audio, cfg, m::Stage{stage1.generator_spec, stage1.generator}), data);
    while (again2.state().iteration < kStage2Resume) again2.iterate();
    c.expect(tr::encode_checkpoint(again2.snapshot()) ==
                 tr::encode_checkpoint(tr::load_checkpoint(dir.path() / "stage2_resume.ckpt")),
             "stage-2 seed rerun matches checkpoint bytes at iteration 250");
    progress("stage-2 seed rerun checked");
  }

  // Resume in stage 1 from the file written at iteration 1000.
  {
    std::vector<tr::Metrics> resumed;
    tr::TrainHooks h;
    h.on_metrics = [&](const tr::Metrics& m) { resumed.push_back(m); };
    const auto r1 = tr::train_stage(tr::StageKind::wavegan, data, cfg,
                                    tr::load_checkpoint(dir.path() / "stage1_resume.ckpt"), {}, h);
    c.expect(tr::encode_checkpoint(r1) == tr::encode_checkpoint(stage1), "stage-1 resume gives identical bytes");
    c.expect(std::equal(resumed.begin(), resumed.end(), metrics1.begin() + kStage1Resume / cfg.metrics_every) &&
                 resumed.size() == (2000 - kStage1Resume) / cfg.metrics_every,
             "stage-1 resume gives identical metrics");
    progress("stage-1 resume checked");
  }
  // Resume in stage 2 from the file written at iteration 250.
  {
    const auto r2 = tr::train_stage(tr::StageKind::audio2audio, data, cfg,
                                    tr::load_checkpoint(dir.path() / "stage2_resume.ckpt"),
                                    m::Stage{stage1.generator_spec, stage1.generator});
    c.expect(tr::encode_checkpoint(r2) == tr::encode_checkpoint(stage2), "stage-2 resume gives identical bytes");
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  c.note("criterion total " + fmt("%.1f", total) + " min");
  c.expect(total <= 15.0, "runtime within 15 min");
}

// ---- Ratings pipeline ---------------------------------------------------

void ratings_pipeline(Checks& c) {
  TempDir dir;
  const auto path = dir.path() / "ratings.jsonl";
  std::ofstream(path) << fixture::to_jsonl(fixture::table_ratings());
  std::ostringstream out, err;
  const auto report = prowave::app::cmd_evaluate({path, dir.path() / "table1.csv"}, out, err);
  c.note("means " + fmt("%.4f", report.baseline.mean) + " / " + fmt("%.4f", report.proposed.mean) + ", d " +
         fmt("%.4f", report.d));
  c.expect(report.baseline.n + report.proposed.n == 600, "600 records ingested");
  c.expect(err.str().empty(), "no skipped lines");
  c.expect(std::abs(report.baseline.mean - 3.39) <= 0.01, "baseline mean within 0.01");
  c.expect(std::abs(report.proposed.mean - 4.48) <= 0.01, "proposed mean within 0.01");
  c.expect(std::abs(report.d - 0.65) <= 0.01, "d = 0.65 +- 0.01");
  c.expect(report.band == eval::EffectBand::medium, "band medium");
}

// ---- Phase shuffle ------------------------------------------------------

void phase_shuffle(Checks& c) {
  Rng cfg_rng(2024);
  Rng shuffle_rng(7);
  std::size_t configs = 0, shape_ok = 0, shift_ok = 0, identity_ok = 0, identity_runs = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<long>(cfg_rng.uniform_int(0, 4));
    const auto B = static_cast<std::size_t>(cfg_rng.uniform_int(1, 3));
    const auto L = static_cast<std::size_t>(cfg_rng.uniform_int(n + 1, 80));
    const auto C = static_cast<std::size_t>(cfg_rng.uniform_int(1, 5));
    const auto x = reference::random_tensor({B, L, C}, cfg_rng);
    const auto y = m::phase_shuffle(ad::Var(x), static_cast<std::size_t>(n), shuffle_rng).value();
    ++configs;
    shape_ok += y.shape() == x.shape();
    if (n == 0) {
      ++identity_runs;
      identity_ok += y == x;
    }
    // Some shift k in [-n, n] reproduces every sample except at most n at
    // the boundary.
    bool all_channels = true;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t ch = 0; ch < C; ++ch) {
        long best = static_cast<long>(L);
        for (long k = -n; k <= n; ++k) {
          long differing = 0;
          for (long i = 0; i < static_cast<long>(L); ++i) {
            const long j = i + k;
            const bool inside = j >= 0 && j < static_cast<long>(L);
            if (!inside || y[(b * L + i) * C + ch] != x[(b * L + static_cast<std::size_t>(j)) * C + ch]) ++differing;
          }
          best = std::min(best, differing);
        }
        all_channels &= best <= n;
      }
    shift_ok += all_channels;
  }
  c.note(std::to_string(configs) + " configurations, " + std::to_string(identity_runs) + " with n=0");
  c.expect(shape_ok == configs, "shapes preserved");
  c.expect(identity_ok == identity_runs && identity_runs > 0, "n=0 is identity");
  c.expect(shift_ok == configs, "differs from a pure shift in at most n boundary samples per channel");
}

struct Criterion {
  const char* name;
  std::function<void(Checks&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::string filter = argc > 1 ? argv[1] : "";
  const std::vector<Criterion> criteria{
      {"Cohen's d reproduction", cohens_d_reproduction},
      {"Architecture shape suite", architecture_shapes},
      {"Gradient-penalty correctness", gradient_penalty},
      {"Preprocessing suite", preprocessing},
      {"Desk-scale training smoke", desk_training},
      {"End-to-end ratings pipeline", ratings_pipeline},
      {"Phase shuffle properties", phase_shuffle},
  };
  int failed = 0, ran = 0;
  for (const auto& cr : criteria) {
    if (!filter.empty() && std::string(cr.name).find(filter) == std::string::npos) continue;
    ++ran;
    std::cout << "RUN   " << cr.name << std::endl;
    Checks checks;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (checks.passed() ? "PASS  " : "FAIL  ") << cr.name << " (" << fmt("%.1f", secs)
              << " s): " << checks.summary() << std::endl;
    failed += !checks.passed();
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << ran - failed << "/" << ran << " criteria" << std::endl;
  return failed ? 1 : 0;
}
