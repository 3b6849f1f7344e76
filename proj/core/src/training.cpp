#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "prowave/training.hpp"

namespace prowave::train {

std::string to_string(StageKind kind) { return kind == StageKind::wavegan ? "wavegan" : "audio2audio"; }

Dataset::Dataset(const std::vector<audio::AudioClip>& clips, std::size_t length) : count_(clips.size()), length_(length) {
  if (clips.empty()) throw ParameterError("training dataset is empty");
  if (length == 0) throw ParameterError("training clip length must be positive");
  samples_.reserve(clips.size() * length);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].samples.size() != length) {
      throw ShapeError("training clip " + std::to_string(i) + " has " + std::to_string(clips[i].samples.size()) +
                       " samples, expected " + std::to_string(length));
    }
    samples_.insert(samples_.end(), clips[i].samples.begin(), clips[i].samples.end());
  }
}

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  std::vector<float> out;
  out.reserve(indices.size() * length_);
  for (auto i : indices) {
    if (i >= count_) throw ParameterError("clip index " + std::to_string(i) + " out of range");
    const auto begin = samples_.begin() + static_cast<std::ptrdiff_t>(i * length_);
    out.insert(out.end(), begin, begin + static_cast<std::ptrdiff_t>(length_));
  }
  return Tensor({indices.size(), length_, 1}, std::move(out));
}

Tensor Dataset::sample(std::size_t batch_size, Rng& rng) const {
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(count_) - 1));
  return batch(idx);
}

Tensor sample_noise(std::size_t batch, std::size_t dim, NoiseRange range, Rng& rng) {
  Tensor z({batch, dim});
  const double lo = range == NoiseRange::unit_signed ? -1.0 : 0.0;
  for (auto& v : z.data()) v = static_cast<float>(rng.uniform(lo, 1.0));
  return z;
}

Checkpoint initial_state(StageKind stage, const TrainConfig& cfg, std::optional<models::Stage> source) {
  cfg.validate();
  Checkpoint c;
  c.stage = stage;
  c.config = cfg;
  Rng rng(stage == StageKind::wavegan ? cfg.seed : cfg.seed ^ fnv1a("audio2audio"));
  if (stage == StageKind::wavegan) {
    if (source) throw ParameterError("a wavegan stage takes noise, not a source network");
    c.generator_spec = models::build_generator(cfg.model_dim);
  } else {
    if (!source) throw ParameterError("an audio2audio stage needs a source network");
    models::check_params(source->spec, source->params);
    if (models::output_shape(source->spec) != Shape{audio::kClipLength, 1}) {
      throw ShapeError("audio2audio source must produce [" + std::to_string(audio::kClipLength) + ", 1] clips");
    }
    c.generator_spec = models::build_autoencoder(cfg.model_dim);
    c.source = std::move(source);
  }
  c.critic_spec = models::build_discriminator(cfg.model_dim, cfg.shuffle_n);
  c.generator = models::init_params(c.generator_spec, rng);
  c.critic = models::init_params(c.critic_spec, rng);
  c.rng_state = rng.state();
  return c;
}

std::uint64_t params_hash(const models::ModelParams& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (std::uint64_t d : t.shape()) mix(&d, sizeof d);
    mix(t.data().data(), t.size() * sizeof(float));
  }
  return h;
}

std::string metrics_header() { return "iteration,critic_loss,wasserstein_term,penalty_term,generator_loss\n"; }

std::string metrics_row(const Metrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", m.iteration, m.critic_loss, m.wasserstein_term,
                m.penalty_term, m.generator_loss);
  return buf;
}

void truncate_metrics(const std::filesystem::path& path, std::size_t iteration) {
  std::ifstream in(path);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      keep.push_back(line);
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    try {
      if (std::stoull(line.substr(0, comma)) <= iteration) keep.push_back(line);
    } catch (const std::exception&) {
    }
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

Trainer::Trainer(Checkpoint state, const Dataset& data) : state_(std::move(state)), data_(data) {
  state_.config.validate();
  models::check_params(state_.generator_spec, state_.generator);
  models::check_params(state_.critic_spec, state_.critic);
  if ((state_.stage == StageKind::audio2audio) != state_.source.has_value()) {
    throw ParameterError("checkpoint source network does not match its stage kind");
  }
  if (models::shape_trace(state_.critic_spec).front() != Shape{data.length(), 1}) {
    throw ShapeError("critic input does not match the dataset clip length " + std::to_string(data.length()));
  }
  rng_.restore(state_.rng_state);
}

Tensor Trainer::generator_input(std::size_t batch) {
  const auto noise_dim = state_.stage == StageKind::wavegan ? state_.generator_spec.input_shape.at(0)
                                                            : state_.source->spec.input_shape.at(0);
  Tensor z = sample_noise(batch, noise_dim, state_.config.noise_range, rng_);
  if (state_.stage == StageKind::wavegan) return z;
  return models::evaluate(state_.source->spec, state_.source->params, z);
}

void Trainer::diverged(const std::string& what) const {
  throw TrainingDiverged("training diverged at iteration " + std::to_string(state_.iteration) + ": " + what,
                         snapshot());
}

void Trainer::critic_step() {
  const auto& cfg = state_.config;
  const Tensor real = data_.sample(cfg.batch_size, rng_);
  const Tensor fake = models::evaluate(state_.generator_spec, state_.generator, generator_input(cfg.batch_size));

  ad::Tape tape;
  const auto bound = models::bind_params(state_.critic, &tape);
  const Critic critic = [&](const ad::Var& x) { return models::forward(state_.critic_spec, bound, x, &rng_); };
  const auto loss = critic_loss_wgan_gp(critic, tape, fake, real, cfg.lambda_gp, rng_);
  last_.critic_loss = loss.total.value().item();
  last_.wasserstein_term = loss.wasserstein.value().item();
  last_.penalty_term = loss.penalty.value().item();
  if (!std::isfinite(last_.critic_loss)) diverged("critic loss is " + std::to_string(last_.critic_loss));

  const auto grads = tape.backward(loss.total);
  adam_step(state_.critic, collect_gradients(grads, bound), state_.critic_adam, cfg.adam);
  ++state_.critic_steps;
}

void Trainer::generator_step() {
  const auto& cfg = state_.config;
  const Tensor input = generator_input(cfg.batch_size);

  ad::Tape tape;
  const auto bound = models::bind_params(state_.generator, &tape);
  const auto frozen = models::bind_params(state_.critic, nullptr);
  const Critic critic = [&](const ad::Var& x) { return models::forward(state_.critic_spec, frozen, x, &rng_); };
  const auto fake = models::forward(state_.generator_spec, bound, ad::Var(input), nullptr);
  auto loss = generator_loss_wgan(critic, fake);
  if (state_.stage == StageKind::audio2audio && cfg.identity_weight > 0.0) {
    const auto diff = ad::sub(fake, ad::Var(input));
    loss = ad::add(loss, ad::scale(ad::reduce_mean(ad::mul(diff, diff)), static_cast<float>(cfg.identity_weight)));
  }
  last_.generator_loss = loss.value().item();
  if (!std::isfinite(last_.generator_loss)) diverged("generator loss is " + std::to_string(last_.generator_loss));

  const auto grads = tape.backward(loss);
  adam_step(state_.generator, collect_gradients(grads, bound), state_.generator_adam, cfg.adam);
  ++state_.generator_steps;
}

Metrics Trainer::iterate() {
  for (std::size_t i = 0; i < state_.config.n_critic; ++i) critic_step();
  generator_step();
  ++state_.iteration;
  last_.iteration = state_.iteration;
  return last_;
}

Checkpoint Trainer::snapshot() const {
  Checkpoint c = state_;
  c.rng_state = rng_.state();
  return c;
}

Checkpoint train_stage(StageKind stage, const Dataset& data, const TrainConfig& cfg, std::optional<Checkpoint> init,
                       std::optional<models::Stage> source, const TrainHooks& hooks) {
  Checkpoint start;
  if (init) {
    if (init->stage != stage) throw ParameterError("checkpoint is for stage " + to_string(init->stage));
    if (!(init->config == cfg)) throw ParameterError("training config differs from the checkpoint's config");
    if (source && !(init->source && init->source->spec == source->spec &&
                    params_hash(init->source->params) == params_hash(source->params))) {
      throw ParameterError("checkpoint was trained on a different source network");
    }
    start = std::move(*init);
  } else {
    start = initial_state(stage, cfg, std::move(source));
  }
  const std::size_t target = stage == StageKind::wavegan ? cfg.stage1_iters : cfg.stage2_iters;
  Trainer trainer(std::move(start), data);
  while (trainer.state().iteration < target) {
    const Metrics m = trainer.iterate();
    if (hooks.on_iteration) hooks.on_iteration(trainer);
    const bool last = m.iteration == target;
    if (hooks.on_metrics && (last || (cfg.metrics_every && m.iteration % cfg.metrics_every == 0))) {
      hooks.on_metrics(m);
    }
    if (hooks.on_checkpoint && (last || (cfg.checkpoint_every && m.iteration % cfg.checkpoint_every == 0))) {
      hooks.on_checkpoint(trainer.snapshot());
    }
  }
  return trainer.snapshot();
}

ProgressiveResult train_progressive(const TrainConfig& cfg, const Dataset& data, const TrainHooks& stage1_hooks,
                                    const TrainHooks& stage2_hooks) {
  ProgressiveResult r;
  r.stage1 = train_stage(StageKind::wavegan, data, cfg, {}, {}, stage1_hooks);
  if (cfg.stage2_iters == 0) return r;
  const auto frozen = params_hash(r.stage1.generator);
  r.stage2 = train_stage(StageKind::audio2audio, data, cfg, {},
                         models::Stage{r.stage1.generator_spec, r.stage1.generator}, stage2_hooks);
  if (params_hash(r.stage2->source->params) != frozen) throw ContractError("stage-1 parameters changed during stage 2");
  return r;
}

models::Pipeline make_pipeline(const Checkpoint& stage1, const std::optional<Checkpoint>& stage2) {
  if (stage1.stage != StageKind::wavegan) throw ParameterError("first pipeline stage must be a wavegan checkpoint");
  std::vector<models::Stage> stages{{stage1.generator_spec, stage1.generator}};
  if (stage2) {
    if (stage2->stage != StageKind::audio2audio || !stage2->source) {
      throw ParameterError("second pipeline stage must be an audio2audio checkpoint");
    }
    if (!(stage2->source->spec == stage1.generator_spec) ||
        params_hash(stage2->source->params) != params_hash(stage1.generator)) {
      throw ParameterError("stage-2 checkpoint was trained on a different stage-1 generator");
    }
    stages.push_back({stage2->generator_spec, stage2->generator});
  }
  return models::Pipeline(std::move(stages));
}

std::vector<audio::AudioClip> generate(const models::Pipeline& pipeline, std::size_t n, std::uint64_t seed,
                                       NoiseRange range) {
  Rng rng(seed);
  std::vector<audio::AudioClip> clips;
  clips.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor out = pipeline.run(sample_noise(1, pipeline.noise_dim(), range, rng));
    audio::AudioClip clip;
    clip.sample_rate = audio::kCanonicalRate;
    clip.samples.assign(out.data().begin(), out.data().end());
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace prowave::train
