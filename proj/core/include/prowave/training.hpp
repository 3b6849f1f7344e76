#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prowave/audio.hpp"
#include "prowave/config.hpp"
#include "prowave/error.hpp"
#include "prowave/losses.hpp"
#include "prowave/models.hpp"

namespace prowave::train {

enum class StageKind { wavegan, audio2audio };
std::string to_string(StageKind kind);

// Fixed-length training clips packed for batch assembly.
class Dataset {
 public:
  // Every clip must have `length` samples.
  explicit Dataset(const std::vector<audio::AudioClip>& clips, std::size_t length = audio::kClipLength);

  std::size_t size() const { return count_; }
  std::size_t length() const { return length_; }
  // [indices.size(), length, 1]
  Tensor batch(std::span<const std::size_t> indices) const;
  // Batch of clips drawn uniformly with replacement.
  Tensor sample(std::size_t batch, Rng& rng) const;

 private:
  std::vector<float> samples_;
  std::size_t count_ = 0;
  std::size_t length_ = 0;
};

// Generator input noise [batch, dim].
Tensor sample_noise(std::size_t batch, std::size_t dim, NoiseRange range, Rng& rng);

// Complete training state of one stage.
struct Checkpoint {
  StageKind stage = StageKind::wavegan;
  TrainConfig config;
  std::size_t iteration = 0;
  std::uint64_t critic_steps = 0;
  std::uint64_t generator_steps = 0;
  std::string rng_state;
  models::NetworkSpec generator_spec;
  models::ModelParams generator;
  models::NetworkSpec critic_spec;
  models::ModelParams critic;
  AdamState generator_adam;
  AdamState critic_adam;
  // Frozen network producing the conditioning clips of an audio2audio stage.
  std::optional<models::Stage> source;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Fresh networks for a stage: the wavegan stage builds a generator and a
// critic, the audio2audio stage an autoencoder conditioned on `source` and a
// new critic. Initialisation draws from a generator seeded by cfg.seed and
// the stage, which then drives the rest of training.
Checkpoint initial_state(StageKind stage, const TrainConfig& cfg, std::optional<models::Stage> source = {});

// Fingerprint of parameter names, shapes and values.
std::uint64_t params_hash(const models::ModelParams& params);

// Binary container; identical state gives identical bytes.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError naming the entry that failed.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct Metrics {
  std::size_t iteration = 0;
  double critic_loss = 0;
  double wasserstein_term = 0;
  double penalty_term = 0;
  double generator_loss = 0;

  friend bool operator==(const Metrics&, const Metrics&) = default;
};

std::string metrics_header();
std::string metrics_row(const Metrics& m);
// Rewrites a metrics file keeping the header and rows up to `iteration`.
void truncate_metrics(const std::filesystem::path& path, std::size_t iteration);

// Raised when a loss becomes non-finite; carries the state at that point.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, Checkpoint state) : Error(what), state_(std::move(state)) {}
  const Checkpoint& state() const { return state_; }

 private:
  Checkpoint state_;
};

// Runs iterations on a checkpointed state. One iteration is n_critic critic
// updates followed by one generator update.
class Trainer {
 public:
  Trainer(Checkpoint state, const Dataset& data);

  Metrics iterate();
  void critic_step();
  void generator_step();

  // Copy of the state including the current random generator position.
  Checkpoint snapshot() const;
  const Checkpoint& state() const { return state_; }
  std::uint64_t critic_steps() const { return state_.critic_steps; }
  std::uint64_t generator_steps() const { return state_.generator_steps; }

 private:
  Tensor generator_input(std::size_t batch);
  [[noreturn]] void diverged(const std::string& what) const;

  Checkpoint state_;
  const Dataset& data_;
  Rng rng_;
  Metrics last_;
};

struct TrainHooks {
  std::function<void(const Metrics&)> on_metrics;
  std::function<void(const Checkpoint&)> on_checkpoint;
  std::function<void(const Trainer&)> on_iteration;
};

// Trains `stage` up to its configured iteration count, starting from `init`
// (a resumed checkpoint) or from a fresh state. Metrics are emitted every
// metrics_every iterations and at the end; checkpoints likewise.
Checkpoint train_stage(StageKind stage, const Dataset& data, const TrainConfig& cfg,
                       std::optional<Checkpoint> init = {}, std::optional<models::Stage> source = {},
                       const TrainHooks& hooks = {});

struct ProgressiveResult {
  Checkpoint stage1;
  // Absent when stage2_iters is 0.
  std::optional<Checkpoint> stage2;
};

// Stage 1 (noise -> audio), then stage 2 refining the frozen stage-1 output.
ProgressiveResult train_progressive(const TrainConfig& cfg, const Dataset& data, const TrainHooks& stage1_hooks = {},
                                    const TrainHooks& stage2_hooks = {});

// Inference chain for one or two trained stages.
models::Pipeline make_pipeline(const Checkpoint& stage1, const std::optional<Checkpoint>& stage2 = {});

// n clips of the pipeline's output, one noise vector each, drawn from `seed`.
std::vector<audio::AudioClip> generate(const models::Pipeline& pipeline, std::size_t n, std::uint64_t seed,
                                       NoiseRange range = NoiseRange::unit_signed);

}  // namespace prowave::train
