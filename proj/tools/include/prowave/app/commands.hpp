#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "prowave/audio.hpp"
#include "prowave/error.hpp"
#include "prowave/evaluation.hpp"
#include "prowave/training.hpp"

namespace prowave::app {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

// Bad flag combinations detected after parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

// ---- preprocess ---------------------------------------------------------

struct PreprocessOptions {
  std::filesystem::path in_dir;
  std::filesystem::path out_dir;
  std::set<std::string> labels;
  bool trim = true;
  bool tail_trim = true;
  double threshold = 0.05;
};

// Writes <out>/<label>/<name>.wav, each kClipLength samples, and prints the
// duration summary of the inputs.
audio::DatasetSummary cmd_preprocess(const PreprocessOptions& opt, std::ostream& out);

// ---- train --------------------------------------------------------------

enum class TrainMode { progressive, wavegan_only };

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> config_path;
  std::optional<std::uint64_t> seed;
  TrainMode mode = TrainMode::progressive;
  bool resume = false;
};

// Files written under TrainOptions::out_dir.
struct RunLayout {
  std::filesystem::path root;

  std::filesystem::path config() const { return root / "config.txt"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
  std::filesystem::path checkpoint(int stage) const { return root / ("stage" + std::to_string(stage) + ".ckpt"); }
  std::filesystem::path metrics(int stage) const { return root / ("stage" + std::to_string(stage) + "_metrics.csv"); }
  std::filesystem::path diverged(int stage) const {
    return root / ("stage" + std::to_string(stage) + "_diverged.ckpt");
  }
};

struct TrainOutcome {
  train::Checkpoint stage1;
  std::optional<train::Checkpoint> stage2;
};

// Trains one or both stages, appending metrics rows and rewriting the stage
// checkpoints periodically. With resume, continues from the checkpoints in
// out_dir; the metrics files are cut back to the checkpointed iteration.
// Divergence leaves a diagnostic checkpoint and rethrows.
TrainOutcome cmd_train(const TrainOptions& opt, std::ostream& out);

// ---- generate -----------------------------------------------------------

struct GenerateOptions {
  // Single-stage checkpoint: files baseline_NNN.wav.
  std::optional<std::filesystem::path> baseline;
  // Stage-2 checkpoint (carries its frozen stage 1): files proposed_NNN.wav.
  std::optional<std::filesystem::path> proposed;
  std::size_t count = 10;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

std::vector<std::filesystem::path> cmd_generate(const GenerateOptions& opt, std::ostream& out);

// Pipeline of a stage-2 checkpoint: its embedded source, then its generator.
models::Pipeline proposed_pipeline(const train::Checkpoint& stage2);

// ---- evaluate -----------------------------------------------------------

struct EvaluateOptions {
  std::filesystem::path ratings;
  std::optional<std::filesystem::path> table_out;
};

// Prints per-system statistics and Cohen's d; malformed lines are listed on
// `err` and counted.
eval::Report cmd_evaluate(const EvaluateOptions& opt, std::ostream& out, std::ostream& err);

// ---- entry point --------------------------------------------------------

// Parses argv-style arguments (args[0] is the program name) and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace prowave::app
