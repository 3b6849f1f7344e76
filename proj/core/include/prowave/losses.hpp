#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "prowave/autodiff.hpp"
#include "prowave/config.hpp"
#include "prowave/models.hpp"
#include "prowave/rng.hpp"

namespace prowave::train {

// Maps a batch [B, ...] to one score per row ([B] or [B, 1]).
using Critic = std::function<ad::Var(const ad::Var&)>;

// t * x + (1 - t) * y.
Tensor interpolate(const Tensor& x, const Tensor& y, float t);
// Row-wise interpolation with one weight per leading-axis slice.
Tensor interpolate_rows(const Tensor& x, const Tensor& y, std::span<const float> t);

struct CriticLoss {
  // wasserstein + lambda * penalty
  ad::Var total;
  // mean D(fake) - mean D(real)
  ad::Var wasserstein;
  // mean (||grad_m D(m)|| - 1)^2 over interpolates m, unweighted
  ad::Var penalty;
};

// Regularised Wasserstein critic loss. One interpolation weight per batch row
// is drawn from `rng` before the critic runs. Every term is recorded on
// `tape` and differentiable with respect to the critic's tracked parameters.
CriticLoss critic_loss_wgan_gp(const Critic& critic, ad::Tape& tape, const Tensor& x_fake, const Tensor& x_real,
                               double lambda_gp, Rng& rng);

// -mean D(x_fake)
ad::Var generator_loss_wgan(const Critic& critic, const ad::Var& x_fake);

// mean log d_real + mean log(1 - d_fake). Diagnostic only.
double vanilla_gan_value(std::span<const double> d_real, std::span<const double> d_fake);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::uint64_t step = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam update (minimizing). Moments are created on first
// use; every parameter needs a gradient of the same shape.
void adam_step(models::ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& hyper);

// Gradient of every bound parameter, keyed by parameter name.
std::map<std::string, Tensor> collect_gradients(const ad::GradientMap& grads, const models::BoundParams& bound);

}  // namespace prowave::train
