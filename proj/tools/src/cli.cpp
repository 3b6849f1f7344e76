#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "prowave/app/commands.hpp"
#include "prowave/app/service.hpp"

namespace prowave::app {
namespace {

RatingService* g_service = nullptr;

void stop_service(int) {
  if (g_service) g_service->stop();
}

const std::set<std::string> kDigits{"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"};

struct ServeOptions {
  ServiceOptions service;
  std::string ui_dir;
  std::string host = "127.0.0.1";
  int port = 8080;
};

int serve(ServeOptions opt, std::ostream& out) {
  if (!opt.ui_dir.empty()) opt.service.ui_dir = opt.ui_dir;
  RatingService service(opt.service);
  out << "serving " << service.samples().size() << " samples on http://" << opt.host << ":" << opt.port
      << ", ratings in " << opt.service.ratings_path.string() << std::endl;
  g_service = &service;
  std::signal(SIGINT, stop_service);
  std::signal(SIGTERM, stop_service);
  const bool ok = service.listen(opt.host, opt.port);
  g_service = nullptr;
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);
  if (!ok) throw std::runtime_error("cannot listen on " + opt.host + ":" + std::to_string(opt.port));
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive WaveGAN toolkit: preprocess, train, generate, evaluate, serve"};
  app.require_subcommand(1);

  PreprocessOptions pre;
  std::string pre_in, pre_out;
  std::vector<std::string> labels;
  bool digits = false, no_trim = false, no_tail_trim = false;
  auto* cmd_pre = app.add_subcommand("preprocess", "Trim and length-fit a <root>/<label>/*.wav dataset");
  cmd_pre->add_option("input", pre_in, "Dataset root")->required();
  cmd_pre->add_option("--out", pre_out, "Output directory")->required();
  cmd_pre->add_option("--labels", labels, "Comma-separated label subdirectories (default: all)")->delimiter(',');
  cmd_pre->add_flag("--digits", digits, "Use the labels zero..nine");
  cmd_pre->add_flag("--no-trim", no_trim, "Skip onset trimming");
  cmd_pre->add_flag("--no-tail-trim", no_tail_trim, "Keep samples after the last loud frame");
  cmd_pre->add_option("--threshold", pre.threshold, "Fraction of the loudest frame energy marking speech")
      ->check(CLI::Range(1e-9, 1.0));

  TrainOptions tr;
  std::string tr_data, tr_out, tr_config, tr_stage = "progressive";
  std::uint64_t tr_seed = 0;
  auto* cmd_train_app = app.add_subcommand("train", "Train the baseline or the progressive model");
  cmd_train_app->add_option("--data", tr_data, "Preprocessed dataset root")->required();
  cmd_train_app->add_option("--out", tr_out, "Run directory for checkpoints and metrics")->required();
  auto* opt_config = cmd_train_app->add_option("--config", tr_config, "Key-value config file");
  auto* opt_seed = cmd_train_app->add_option("--seed", tr_seed, "Override the config seed");
  cmd_train_app->add_option("--stage", tr_stage, "progressive or wavegan-only")
      ->check(CLI::IsMember({"progressive", "wavegan-only"}));
  cmd_train_app->add_flag("--resume", tr.resume, "Continue from the checkpoints in --out");

  GenerateOptions gen;
  std::string gen_baseline, gen_proposed, gen_out;
  auto* cmd_gen = app.add_subcommand("generate", "Write generated clips as WAV files");
  auto* opt_baseline = cmd_gen->add_option("--baseline", gen_baseline, "Single-stage checkpoint");
  auto* opt_proposed = cmd_gen->add_option("--proposed", gen_proposed, "Stage-2 checkpoint");
  cmd_gen->add_option("-n,--count", gen.count, "Clips per system")->capture_default_str();
  cmd_gen->add_option("--seed", gen.seed, "Noise seed")->capture_default_str();
  cmd_gen->add_option("--out", gen_out, "Output directory")->required();

  EvaluateOptions ev;
  std::string ev_ratings, ev_out;
  auto* cmd_eval = app.add_subcommand("evaluate", "Aggregate listening-test ratings");
  cmd_eval->add_option("ratings", ev_ratings, "JSON-lines ratings file")->required();
  auto* opt_table = cmd_eval->add_option("--out", ev_out, "Write the results table (CSV) here");

  ServeOptions sv;
  std::string sv_samples, sv_ratings;
  auto* cmd_serve = app.add_subcommand("serve", "Run the listening-test rating service");
  cmd_serve->add_option("--samples", sv_samples, "Directory of baseline_*.wav and proposed_*.wav")->required();
  cmd_serve->add_option("--ratings", sv_ratings, "Ratings file (JSON lines)")->required();
  cmd_serve->add_option("--host", sv.host, "Bind address")->capture_default_str();
  cmd_serve->add_option("--port", sv.port, "Port")->capture_default_str()->check(CLI::Range(0, 65535));
  cmd_serve->add_option("--ui", sv.ui_dir, "Static UI directory served at /");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cmd_pre->parsed()) {
      pre.in_dir = pre_in;
      pre.out_dir = pre_out;
      pre.labels.insert(labels.begin(), labels.end());
      if (digits) pre.labels.insert(kDigits.begin(), kDigits.end());
      pre.trim = !no_trim;
      pre.tail_trim = !no_tail_trim;
      cmd_preprocess(pre, out);
    } else if (cmd_train_app->parsed()) {
      tr.data_dir = tr_data;
      tr.out_dir = tr_out;
      if (*opt_config) tr.config_path = tr_config;
      if (*opt_seed) tr.seed = tr_seed;
      tr.mode = tr_stage == "wavegan-only" ? TrainMode::wavegan_only : TrainMode::progressive;
      cmd_train(tr, out);
    } else if (cmd_gen->parsed()) {
      if (*opt_baseline) gen.baseline = gen_baseline;
      if (*opt_proposed) gen.proposed = gen_proposed;
      gen.out_dir = gen_out;
      cmd_generate(gen, out);
    } else if (cmd_eval->parsed()) {
      ev.ratings = ev_ratings;
      if (*opt_table) ev.table_out = ev_out;
      cmd_evaluate(ev, out, err);
    } else if (cmd_serve->parsed()) {
      sv.service.sample_dir = sv_samples;
      sv.service.ratings_path = sv_ratings;
      return serve(sv, out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const train::TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << '\n';
    return kExitInternal;
  } catch (const ContractError& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return kExitOk;
}

}  // namespace prowave::app
