#include <sstream>

#include "prowave/audio.hpp"
#include "prowave/error.hpp"
#include "prowave/models.hpp"

namespace prowave::models {

using prowave::to_string;
namespace {

constexpr float kInitStd = 0.02f;

[[noreturn]] void layer_error(std::size_t i, const LayerSpec& l, const std::string& what) {
  throw ShapeError("layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + what);
}

void check_dim(std::size_t d) {
  if (d == 0) throw ParameterError("model_dim must be at least 1");
}

LayerSpec conv_layer(LayerKind kind, std::size_t in, std::size_t out) {
  LayerSpec l;
  l.kind = kind;
  l.kernel = kKernel;
  l.stride = kStride;
  l.in_channels = in;
  l.out_channels = out;
  return l;
}

LayerSpec simple(LayerKind kind) {
  LayerSpec l;
  l.kind = kind;
  return l;
}

Shape param_shape(const LayerSpec& l, bool weight) {
  if (!weight) return {l.out_channels};
  if (l.kind == LayerKind::dense) return {l.in_channels, l.out_channels};
  return {l.kernel, l.in_channels, l.out_channels};
}

LayerKind kind_from(const std::string& s) {
  for (auto k : {LayerKind::dense, LayerKind::conv, LayerKind::tconv, LayerKind::relu, LayerKind::lrelu,
                 LayerKind::tanh, LayerKind::reshape, LayerKind::phase_shuffle}) {
    if (to_string(k) == s) return k;
  }
  throw FormatError("unknown layer kind '" + s + "'");
}

Role role_from(const std::string& s) {
  for (auto r : {Role::generator, Role::discriminator, Role::autoencoder}) {
    if (to_string(r) == s) return r;
  }
  throw FormatError("unknown network role '" + s + "'");
}

Shape with_batch(std::size_t batch, const Shape& s) {
  Shape out{batch};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv: return "conv";
    case LayerKind::tconv: return "tconv";
    case LayerKind::relu: return "relu";
    case LayerKind::lrelu: return "lrelu";
    case LayerKind::tanh: return "tanh";
    case LayerKind::reshape: return "reshape";
    case LayerKind::phase_shuffle: return "phase_shuffle";
  }
  return "?";
}

std::string to_string(Role role) {
  switch (role) {
    case Role::generator: return "generator";
    case Role::discriminator: return "discriminator";
    case Role::autoencoder: return "autoencoder";
  }
  return "?";
}

std::string weight_name(std::size_t layer) { return std::to_string(layer) + ".weight"; }
std::string bias_name(std::size_t layer) { return std::to_string(layer) + ".bias"; }

std::vector<Shape> shape_trace(const NetworkSpec& spec) {
  if (spec.input_shape.empty()) throw ShapeError("network input shape is empty");
  if (spec.role == Role::generator && spec.input_shape != Shape{kNoiseDim}) {
    throw ShapeError("generator input must be [" + std::to_string(kNoiseDim) + "], got " +
                     to_string(spec.input_shape));
  }
  std::vector<Shape> trace{spec.input_shape};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const Shape& in = trace.back();
    Shape out = in;
    switch (l.kind) {
      case LayerKind::dense:
        if (in.size() != 1 || in[0] != l.in_channels) {
          layer_error(i, l, "expects [" + std::to_string(l.in_channels) + "], got " + to_string(in));
        }
        if (l.out_channels == 0) layer_error(i, l, "zero output features");
        out = {l.out_channels};
        break;
      case LayerKind::conv:
      case LayerKind::tconv:
        if (in.size() != 2 || in[1] != l.in_channels) {
          layer_error(i, l, "expects [L, " + std::to_string(l.in_channels) + "], got " + to_string(in));
        }
        if (l.kernel == 0 || l.kernel % 2 == 0 || l.stride == 0 || l.out_channels == 0) {
          layer_error(i, l, "needs an odd kernel, positive stride and output channels");
        }
        out = {l.kind == LayerKind::conv ? (in[0] + l.stride - 1) / l.stride : in[0] * l.stride, l.out_channels};
        break;
      case LayerKind::reshape:
        if (element_count(l.target) != element_count(in)) {
          layer_error(i, l, "cannot reshape " + to_string(in) + " to " + to_string(l.target));
        }
        out = l.target;
        break;
      case LayerKind::phase_shuffle:
        if (in.size() != 2) layer_error(i, l, "expects [L, C], got " + to_string(in));
        if (in[0] <= l.shuffle_n) {
          throw ParameterError("layer " + std::to_string(i) + " (phase_shuffle): n = " + std::to_string(l.shuffle_n) +
                               " needs length > n, got " + std::to_string(in[0]));
        }
        break;
      case LayerKind::relu:
      case LayerKind::lrelu:
      case LayerKind::tanh:
        break;
    }
    trace.push_back(out);
  }
  if (!spec.skips.empty() && spec.role != Role::autoencoder) {
    throw ShapeError("skip connections are only allowed in autoencoder networks");
  }
  for (const auto& s : spec.skips) {
    if (s.target >= spec.layers.size() || s.source > s.target) {
      throw ShapeError("skip " + std::to_string(s.source) + " -> " + std::to_string(s.target) + " is out of range");
    }
    if (trace[s.source] != trace[s.target + 1]) {
      throw ShapeError("skip " + std::to_string(s.source) + " -> " + std::to_string(s.target) + " joins " +
                       to_string(trace[s.source]) + " with " + to_string(trace[s.target + 1]));
    }
  }
  return trace;
}

Shape output_shape(const NetworkSpec& spec) { return shape_trace(spec).back(); }

NetworkSpec build_generator(std::size_t d, std::size_t z_dim) {
  check_dim(d);
  if (z_dim != kNoiseDim) throw ParameterError("generator noise dimension must be " + std::to_string(kNoiseDim));
  NetworkSpec spec;
  spec.role = Role::generator;
  spec.model_dim = d;
  spec.input_shape = {z_dim};
  LayerSpec fc;
  fc.kind = LayerKind::dense;
  fc.in_channels = z_dim;
  fc.out_channels = 16 * 16 * d;
  spec.layers.push_back(fc);
  LayerSpec rs = simple(LayerKind::reshape);
  rs.target = {16, 16 * d};
  spec.layers.push_back(rs);
  spec.layers.push_back(simple(LayerKind::relu));
  std::size_t ch = 16 * d;
  for (int i = 0; i < 5; ++i) {
    const std::size_t next = i == 4 ? 1 : ch / 2;
    spec.layers.push_back(conv_layer(LayerKind::tconv, ch, next));
    spec.layers.push_back(simple(i == 4 ? LayerKind::tanh : LayerKind::relu));
    ch = next;
  }
  shape_trace(spec);
  return spec;
}

NetworkSpec build_discriminator(std::size_t d, std::size_t shuffle_n) {
  check_dim(d);
  NetworkSpec spec;
  spec.role = Role::discriminator;
  spec.model_dim = d;
  spec.input_shape = {audio::kClipLength, 1};
  std::size_t ch = 1;
  for (int i = 0; i < 5; ++i) {
    const std::size_t next = d << i;
    spec.layers.push_back(conv_layer(LayerKind::conv, ch, next));
    LayerSpec act = simple(LayerKind::lrelu);
    act.alpha = kCriticSlope;
    spec.layers.push_back(act);
    if (i < 4 && shuffle_n > 0) {
      LayerSpec ps = simple(LayerKind::phase_shuffle);
      ps.shuffle_n = shuffle_n;
      spec.layers.push_back(ps);
    }
    ch = next;
  }
  LayerSpec rs = simple(LayerKind::reshape);
  rs.target = {16 * ch};
  spec.layers.push_back(rs);
  LayerSpec fc;
  fc.kind = LayerKind::dense;
  fc.in_channels = 16 * ch;
  fc.out_channels = 1;
  spec.layers.push_back(fc);
  shape_trace(spec);
  return spec;
}

NetworkSpec build_autoencoder(std::size_t d) {
  check_dim(d);
  NetworkSpec spec;
  spec.role = Role::autoencoder;
  spec.model_dim = d;
  spec.input_shape = {audio::kClipLength, 1};
  // Activation index feeding each encoder convolution.
  std::vector<std::size_t> conv_inputs;
  std::size_t ch = 1;
  for (int i = 0; i < 4; ++i) {
    conv_inputs.push_back(spec.layers.size());
    const std::size_t next = d << i;
    spec.layers.push_back(conv_layer(LayerKind::conv, ch, next));
    spec.layers.push_back(simple(LayerKind::relu));
    ch = next;
  }
  for (int i = 0; i < 4; ++i) {
    const std::size_t next = i == 3 ? 1 : ch / 2;
    spec.skips.push_back({conv_inputs[3 - i], spec.layers.size()});
    spec.layers.push_back(conv_layer(LayerKind::tconv, ch, next));
    spec.layers.push_back(simple(i == 3 ? LayerKind::tanh : LayerKind::relu));
    ch = next;
  }
  shape_trace(spec);
  return spec;
}

ModelParams init_params(const NetworkSpec& spec, Rng& rng) {
  shape_trace(spec);
  ModelParams params;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.has_params()) continue;
    Tensor w(param_shape(l, true));
    for (auto& v : w.data()) v = static_cast<float>(rng.normal(0.0, kInitStd));
    params.emplace(weight_name(i), std::move(w));
    params.emplace(bias_name(i), Tensor(param_shape(l, false)));
  }
  return params;
}

void check_params(const NetworkSpec& spec, const ModelParams& params) {
  std::size_t expected = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (!l.has_params()) continue;
    for (bool weight : {true, false}) {
      const auto name = weight ? weight_name(i) : bias_name(i);
      auto it = params.find(name);
      if (it == params.end()) throw ShapeError("missing parameter " + name);
      if (it->second.shape() != param_shape(l, weight)) {
        throw ShapeError("parameter " + name + " has shape " + to_string(it->second.shape()) + ", expected " +
                         to_string(param_shape(l, weight)));
      }
      ++expected;
    }
  }
  if (params.size() != expected) {
    for (const auto& [name, _] : params) {
      const auto dot = name.find('.');
      bool known = false;
      if (dot != std::string::npos) {
        try {
          const auto idx = std::stoul(name.substr(0, dot));
          const auto field = name.substr(dot + 1);
          known = idx < spec.layers.size() && spec.layers[idx].has_params() && (field == "weight" || field == "bias");
        } catch (const std::exception&) {
        }
      }
      if (!known) throw ShapeError("unexpected parameter " + name);
    }
  }
}

BoundParams bind_params(const ModelParams& params, ad::Tape* tape) {
  BoundParams out;
  for (const auto& [name, t] : params) out.emplace(name, tape ? tape->leaf(t) : ad::Var(t));
  return out;
}

ad::Var phase_shuffle(const ad::Var& x, std::size_t n, Rng& rng) {
  if (x.value().rank() != 3) throw ShapeError("phase_shuffle: input must be [B,L,C], got " + to_string(x.shape()));
  if (x.shape()[1] <= n) {
    throw ParameterError("phase_shuffle: n = " + std::to_string(n) + " needs length > n, got " +
                         std::to_string(x.shape()[1]));
  }
  if (n == 0) return x;
  const int k = static_cast<int>(n);
  auto shifts = std::make_shared<std::vector<int>>(x.shape()[0] * x.shape()[2]);
  for (auto& s : *shifts) s = static_cast<int>(rng.uniform_int(-k, k));
  return ad::shift_mirror(x, std::move(shifts));
}

ad::Var forward(const NetworkSpec& spec, const BoundParams& params, const ad::Var& input, Rng* rng) {
  const auto trace = shape_trace(spec);
  if (input.value().rank() == 0 || input.shape()[0] == 0 ||
      Shape(input.shape().begin() + 1, input.shape().end()) != spec.input_shape) {
    throw ShapeError("network input must be [B, " + to_string(spec.input_shape) + "...], got " +
                     to_string(input.shape()));
  }
  const std::size_t batch = input.shape()[0];
  auto param = [&](const std::string& name) -> const ad::Var& {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("missing parameter " + name);
    return it->second;
  };

  std::vector<ad::Var> acts{input};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const ad::Var& x = acts.back();
    ad::Var y;
    try {
      switch (l.kind) {
        case LayerKind::dense: y = ad::dense(x, param(weight_name(i)), param(bias_name(i))); break;
        case LayerKind::conv:
          y = ad::add_bias(ad::conv1d(x, param(weight_name(i)), l.stride), param(bias_name(i)));
          break;
        case LayerKind::tconv:
          y = ad::add_bias(ad::conv1d_transpose(x, param(weight_name(i)), l.stride), param(bias_name(i)));
          break;
        case LayerKind::relu: y = ad::relu(x); break;
        case LayerKind::lrelu: y = ad::lrelu(x, l.alpha); break;
        case LayerKind::tanh: y = ad::tanh_act(x); break;
        case LayerKind::reshape: y = ad::reshape(x, with_batch(batch, l.target)); break;
        case LayerKind::phase_shuffle: y = rng ? phase_shuffle(x, l.shuffle_n, *rng) : x; break;
      }
      for (const auto& s : spec.skips) {
        if (s.target == i) y = ad::add(y, acts[s.source]);
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + to_string(l.kind) + "): " + e.what());
    }
    acts.push_back(std::move(y));
  }
  return acts.back();
}

Tensor evaluate(const NetworkSpec& spec, const ModelParams& params, const Tensor& input, Rng* rng) {
  return forward(spec, bind_params(params, nullptr), ad::Var(input), rng).value();
}

std::string to_text(const NetworkSpec& spec) {
  std::ostringstream out;
  out << "role " << to_string(spec.role) << '\n';
  out << "model_dim " << spec.model_dim << '\n';
  out << "input";
  for (auto d : spec.input_shape) out << ' ' << d;
  out << '\n';
  for (const auto& l : spec.layers) {
    out << "layer " << to_string(l.kind);
    switch (l.kind) {
      case LayerKind::dense: out << ' ' << l.in_channels << ' ' << l.out_channels; break;
      case LayerKind::conv:
      case LayerKind::tconv:
        out << ' ' << l.kernel << ' ' << l.stride << ' ' << l.in_channels << ' ' << l.out_channels;
        break;
      case LayerKind::lrelu: {
        std::ostringstream a;
        a.precision(9);
        a << l.alpha;
        out << ' ' << a.str();
        break;
      }
      case LayerKind::reshape:
        for (auto d : l.target) out << ' ' << d;
        break;
      case LayerKind::phase_shuffle: out << ' ' << l.shuffle_n; break;
      case LayerKind::relu:
      case LayerKind::tanh: break;
    }
    out << '\n';
  }
  for (const auto& s : spec.skips) out << "skip " << s.source << ' ' << s.target << '\n';
  return out.str();
}

NetworkSpec network_from_text(const std::string& text) {
  NetworkSpec spec;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool have_role = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    auto fail = [&](const std::string& what) -> void {
      throw FormatError("network spec line " + std::to_string(lineno) + ": " + what);
    };
    auto read_sizes = [&]() {
      std::vector<std::size_t> v;
      std::size_t x;
      while (ls >> x) v.push_back(x);
      if (!ls.eof()) fail("expected unsigned integers in '" + line + "'");
      return v;
    };
    if (key == "role") {
      std::string r;
      ls >> r;
      spec.role = role_from(r);
      have_role = true;
    } else if (key == "model_dim") {
      auto v = read_sizes();
      if (v.size() != 1) fail("model_dim takes one value");
      spec.model_dim = v[0];
    } else if (key == "input") {
      spec.input_shape = read_sizes();
    } else if (key == "layer") {
      std::string k;
      ls >> k;
      LayerSpec l;
      l.kind = kind_from(k);
      if (l.kind == LayerKind::lrelu) {
        if (!(ls >> l.alpha)) fail("lrelu needs a slope");
      } else {
        auto v = read_sizes();
        switch (l.kind) {
          case LayerKind::dense:
            if (v.size() != 2) fail("dense takes in and out features");
            l.in_channels = v[0];
            l.out_channels = v[1];
            break;
          case LayerKind::conv:
          case LayerKind::tconv:
            if (v.size() != 4) fail(k + " takes kernel, stride, in and out channels");
            l.kernel = v[0];
            l.stride = v[1];
            l.in_channels = v[2];
            l.out_channels = v[3];
            break;
          case LayerKind::reshape: l.target = v; break;
          case LayerKind::phase_shuffle:
            if (v.size() != 1) fail("phase_shuffle takes n");
            l.shuffle_n = v[0];
            break;
          default:
            if (!v.empty()) fail(k + " takes no arguments");
        }
      }
      spec.layers.push_back(l);
    } else if (key == "skip") {
      auto v = read_sizes();
      if (v.size() != 2) fail("skip takes source and target");
      spec.skips.push_back({v[0], v[1]});
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  if (!have_role) throw FormatError("network spec has no role line");
  shape_trace(spec);
  return spec;
}

Pipeline::Pipeline(std::vector<Stage> stages) : stages_(std::move(stages)) {
  if (stages_.empty()) throw ParameterError("pipeline needs at least one stage");
  if (stages_.front().spec.role != Role::generator) throw ShapeError("pipeline stage 0 must be a generator");
  Shape prev;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const auto& st = stages_[i];
    const auto out = output_shape(st.spec);
    check_params(st.spec, st.params);
    if (i > 0 && st.spec.input_shape != prev) {
      throw ShapeError("pipeline stage " + std::to_string(i) + " expects " + to_string(st.spec.input_shape) +
                       " but stage " + std::to_string(i - 1) + " produces " + to_string(prev));
    }
    prev = out;
  }
}

std::vector<Tensor> Pipeline::run_all(const Tensor& z) const {
  std::vector<Tensor> outs;
  Tensor cur = z;
  for (const auto& st : stages_) {
    cur = evaluate(st.spec, st.params, cur);
    outs.push_back(cur);
  }
  return outs;
}

Tensor Pipeline::run(const Tensor& z) const { return run_all(z).back(); }

}  // namespace prowave::models
