#include <cmath>

#include "prowave/error.hpp"
#include "prowave/losses.hpp"

namespace prowave::train {

Tensor interpolate(const Tensor& x, const Tensor& y, float t) {
  if (x.shape() != y.shape()) {
    throw ShapeError("interpolate: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = t * x[i] + (1.0f - t) * y[i];
  return out;
}

Tensor interpolate_rows(const Tensor& x, const Tensor& y, std::span<const float> t) {
  if (x.shape() != y.shape()) {
    throw ShapeError("interpolate: " + to_string(x.shape()) + " vs " + to_string(y.shape()));
  }
  if (x.rank() == 0 || t.size() != x.dim(0)) {
    throw ShapeError("interpolate_rows: need one weight per row of " + to_string(x.shape()));
  }
  const std::size_t row = x.size() / x.dim(0);
  Tensor out(x.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = b * row; i < (b + 1) * row; ++i) out[i] = t[b] * x[i] + (1.0f - t[b]) * y[i];
  }
  return out;
}

CriticLoss critic_loss_wgan_gp(const Critic& critic, ad::Tape& tape, const Tensor& x_fake, const Tensor& x_real,
                               double lambda_gp, Rng& rng) {
  if (!(lambda_gp >= 0.0)) throw ParameterError("lambda_gp must be >= 0, got " + std::to_string(lambda_gp));
  if (x_fake.shape() != x_real.shape()) {
    throw ShapeError("critic loss: fake " + to_string(x_fake.shape()) + " vs real " + to_string(x_real.shape()));
  }
  std::vector<float> t(x_fake.dim(0));
  for (auto& v : t) v = static_cast<float>(rng.uniform());
  const Tensor mixed = interpolate_rows(x_real, x_fake, t);

  CriticLoss loss;
  loss.wasserstein = ad::sub(ad::reduce_mean(critic(ad::Var(x_fake))), ad::reduce_mean(critic(ad::Var(x_real))));
  const ad::Var m = tape.leaf(mixed);
  const ad::Var gap = ad::add_scalar(ad::row_l2_norm(ad::input_gradient(critic, m)), -1.0f);
  loss.penalty = ad::reduce_mean(ad::mul(gap, gap));
  loss.total = ad::add(loss.wasserstein, ad::scale(loss.penalty, static_cast<float>(lambda_gp)));
  return loss;
}

ad::Var generator_loss_wgan(const Critic& critic, const ad::Var& x_fake) {
  return ad::scale(ad::reduce_mean(critic(x_fake)), -1.0f);
}

double vanilla_gan_value(std::span<const double> d_real, std::span<const double> d_fake) {
  if (d_real.empty() || d_fake.empty()) throw DomainError("vanilla_gan_value: empty batch");
  auto mean_log = [](std::span<const double> v, bool complement) {
    double acc = 0.0;
    for (double p : v) {
      if (!(p > 0.0 && p < 1.0)) throw DomainError("discriminator output " + std::to_string(p) + " is outside (0, 1)");
      acc += std::log(complement ? 1.0 - p : p);
    }
    return acc / static_cast<double>(v.size());
  };
  return mean_log(d_real, false) + mean_log(d_fake, true);
}

void adam_step(models::ModelParams& params, const std::map<std::string, Tensor>& grads, AdamState& state,
               const AdamConfig& hyper) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw ShapeError("adam_step: no gradient for " + name);
    if (g->second.shape() != p.shape()) {
      throw ShapeError("adam_step: gradient for " + name + " has shape " + to_string(g->second.shape()) +
                       ", parameter is " + to_string(p.shape()));
    }
    if (auto m = state.m.find(name); m != state.m.end() && m->second.shape() != p.shape()) {
      throw ShapeError("adam_step: moment for " + name + " has shape " + to_string(m->second.shape()));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.try_emplace(name, p.shape()).first->second;
    Tensor& v = state.v.try_emplace(name, p.shape()).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
      const double vi = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      p[i] = static_cast<float>(p[i] - hyper.alpha * (mi / c1) / (std::sqrt(vi / c2) + hyper.epsilon));
    }
  }
}

std::map<std::string, Tensor> collect_gradients(const ad::GradientMap& grads, const models::BoundParams& bound) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, var] : bound) out.emplace(name, grads.at(var));
  return out;
}

}  // namespace prowave::train
