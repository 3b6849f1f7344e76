#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "prowave/autodiff.hpp"
#include "prowave/rng.hpp"
#include "prowave/tensor.hpp"

namespace prowave::models {

using prowave::to_string;

inline constexpr std::size_t kKernel = 25;
inline constexpr std::size_t kStride = 4;
inline constexpr std::size_t kNoiseDim = 100;
inline constexpr std::size_t kDefaultShuffle = 2;
inline constexpr float kCriticSlope = 0.2f;

enum class LayerKind { dense, conv, tconv, relu, lrelu, tanh, reshape, phase_shuffle };
enum class Role { generator, discriminator, autoencoder };

std::string to_string(LayerKind kind);
std::string to_string(Role role);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  // dense: input/output features; conv/tconv: channels.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t shuffle_n = 0;
  float alpha = kCriticSlope;
  // reshape: per-example target shape.
  Shape target;

  bool has_params() const {
    return kind == LayerKind::dense || kind == LayerKind::conv || kind == LayerKind::tconv;
  }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Additive shortcut. `source` indexes activations: 0 is the network input and
// i + 1 is the output of layer i. The source activation is added to the
// output of layer `target` before the next layer runs.
struct Skip {
  std::size_t source = 0;
  std::size_t target = 0;
  friend bool operator==(const Skip&, const Skip&) = default;
};

struct NetworkSpec {
  Role role = Role::generator;
  std::vector<LayerSpec> layers;
  std::vector<Skip> skips;
  std::size_t model_dim = 1;
  // Per-example input shape (no batch axis).
  Shape input_shape;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Parameter tensors by name: "<layer>.weight" and "<layer>.bias".
using ModelParams = std::map<std::string, Tensor>;
// The same tensors as handles on a tape (or as constants).
using BoundParams = std::map<std::string, ad::Var>;

std::string weight_name(std::size_t layer);
std::string bias_name(std::size_t layer);

// Per-example shapes of every activation, input first. Throws ShapeError
// naming the offending layer; also checks the skip wiring and role rules.
std::vector<Shape> shape_trace(const NetworkSpec& spec);
Shape output_shape(const NetworkSpec& spec);

// dense(z_dim -> 16*16d), reshape [16, 16d], then five stride-4 transposed
// convolutions halving channels down to one, ReLU between, tanh at the end.
NetworkSpec build_generator(std::size_t model_dim, std::size_t z_dim = kNoiseDim);
// Five stride-4 convolutions 1 -> d -> ... -> 16d with leaky ReLU, phase
// shuffle after the first four activations, then dense -> one score.
NetworkSpec build_discriminator(std::size_t model_dim, std::size_t shuffle_n = kDefaultShuffle);
// Four stride-4 convolutions 1 -> d -> 2d -> 4d -> 8d ([64, 8d] bottleneck)
// mirrored by four transposed convolutions; each convolution's input is
// added to the output of its mirror-image transposed convolution.
NetworkSpec build_autoencoder(std::size_t model_dim);

// Weights ~ Normal(0, 0.02), biases zero. Draw order follows layer order.
ModelParams init_params(const NetworkSpec& spec, Rng& rng);
// Throws when a parameter is missing, extra, or misshapen.
void check_params(const NetworkSpec& spec, const ModelParams& params);

// Tracked leaves on `tape`, or constants when tape is null.
BoundParams bind_params(const ModelParams& params, ad::Tape* tape);

// Draws one shift in [-n, n] per (batch, channel) and applies it with mirror
// boundaries. Requires n < length.
ad::Var phase_shuffle(const ad::Var& x, std::size_t n, Rng& rng);

// Runs the network on input [B, input_shape...]. Phase shuffle draws from
// `rng`; with a null rng it is skipped.
ad::Var forward(const NetworkSpec& spec, const BoundParams& params, const ad::Var& input, Rng* rng);
Tensor evaluate(const NetworkSpec& spec, const ModelParams& params, const Tensor& input, Rng* rng = nullptr);

// Line-oriented text form used inside checkpoints.
std::string to_text(const NetworkSpec& spec);
NetworkSpec network_from_text(const std::string& text);

struct Stage {
  NetworkSpec spec;
  ModelParams params;

  friend bool operator==(const Stage&, const Stage&) = default;
};

// Stages evaluated in sequence: the first maps noise to audio, each later one
// refines the previous stage's audio.
class Pipeline {
 public:
  explicit Pipeline(std::vector<Stage> stages);

  // Output of every stage for noise z[B, z_dim]; the last entry is the final
  // clip batch.
  std::vector<Tensor> run_all(const Tensor& z) const;
  Tensor run(const Tensor& z) const;

  std::size_t size() const { return stages_.size(); }
  const Stage& stage(std::size_t i) const { return stages_.at(i); }
  std::size_t noise_dim() const { return stages_.front().spec.input_shape.at(0); }

 private:
  std::vector<Stage> stages_;
};

}  // namespace prowave::models
