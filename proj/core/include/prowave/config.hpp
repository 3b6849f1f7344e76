#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "prowave/tensor.hpp"

namespace prowave::train {

using prowave::to_string;

enum class NoiseRange { unit_signed, unit_positive };

struct AdamConfig {
  double alpha = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Hyperparameters for both stages. Defaults are the desk-scale setup.
struct TrainConfig {
  double lambda_gp = 10.0;
  std::size_t n_critic = 5;
  AdamConfig adam;
  std::size_t batch_size = 8;
  std::size_t stage1_iters = 2000;
  std::size_t stage2_iters = 500;
  std::size_t model_dim = 1;
  std::size_t shuffle_n = 2;
  NoiseRange noise_range = NoiseRange::unit_signed;
  std::uint64_t seed = 0;
  // Weight of mean((G(x) - x)^2) added to the stage-2 generator loss.
  double identity_weight = 0.0;
  // 0 disables the periodic record/checkpoint; the final one is always emitted.
  std::size_t metrics_every = 10;
  std::size_t checkpoint_every = 500;

  // Throws ParameterError naming the offending field.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

std::string to_string(NoiseRange range);

// Flat "key = value" text; '#' starts a comment. Unknown keys, malformed
// values and invalid settings raise FormatError with the line and field.
TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);
// Every field, one per line, in a form parse_config reads back exactly.
std::string to_text(const TrainConfig& cfg);

}  // namespace prowave::train
