#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "prowave/config.hpp"
#include "prowave/error.hpp"

namespace prowave::train {
namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

std::string format_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
T parse_unsigned(const std::string& v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw std::invalid_argument("expected a non-negative integer");
  return out;
}

double parse_double(const std::string& v) {
  double out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a finite number");
  }
  return out;
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"lambda_gp", [](TrainConfig& c, const std::string& v) { c.lambda_gp = parse_double(v); }},
      {"n_critic", [](TrainConfig& c, const std::string& v) { c.n_critic = parse_unsigned<std::size_t>(v); }},
      {"adam_alpha", [](TrainConfig& c, const std::string& v) { c.adam.alpha = parse_double(v); }},
      {"adam_beta1", [](TrainConfig& c, const std::string& v) { c.adam.beta1 = parse_double(v); }},
      {"adam_beta2", [](TrainConfig& c, const std::string& v) { c.adam.beta2 = parse_double(v); }},
      {"adam_epsilon", [](TrainConfig& c, const std::string& v) { c.adam.epsilon = parse_double(v); }},
      {"batch_size", [](TrainConfig& c, const std::string& v) { c.batch_size = parse_unsigned<std::size_t>(v); }},
      {"stage1_iters", [](TrainConfig& c, const std::string& v) { c.stage1_iters = parse_unsigned<std::size_t>(v); }},
      {"stage2_iters", [](TrainConfig& c, const std::string& v) { c.stage2_iters = parse_unsigned<std::size_t>(v); }},
      {"model_dim", [](TrainConfig& c, const std::string& v) { c.model_dim = parse_unsigned<std::size_t>(v); }},
      {"shuffle_n", [](TrainConfig& c, const std::string& v) { c.shuffle_n = parse_unsigned<std::size_t>(v); }},
      {"noise_range",
       [](TrainConfig& c, const std::string& v) {
         if (v == "unit_signed") {
           c.noise_range = NoiseRange::unit_signed;
         } else if (v == "unit_positive") {
           c.noise_range = NoiseRange::unit_positive;
         } else {
           throw std::invalid_argument("expected unit_signed or unit_positive");
         }
       }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_unsigned<std::uint64_t>(v); }},
      {"identity_weight", [](TrainConfig& c, const std::string& v) { c.identity_weight = parse_double(v); }},
      {"metrics_every", [](TrainConfig& c, const std::string& v) { c.metrics_every = parse_unsigned<std::size_t>(v); }},
      {"checkpoint_every",
       [](TrainConfig& c, const std::string& v) { c.checkpoint_every = parse_unsigned<std::size_t>(v); }},
  };
  return table;
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ParameterError("config field '" + field + "': " + what);
  };
  if (!(lambda_gp >= 0.0)) fail("lambda_gp", "must be >= 0");
  if (n_critic < 1) fail("n_critic", "must be >= 1");
  if (batch_size < 2) fail("batch_size", "must be >= 2");
  if (model_dim < 1) fail("model_dim", "must be >= 1");
  if (!(adam.alpha > 0.0)) fail("adam_alpha", "must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
  if (!(adam.epsilon > 0.0)) fail("adam_epsilon", "must be > 0");
  if (!(identity_weight >= 0.0)) fail("identity_weight", "must be >= 0");
}

std::string to_string(NoiseRange range) {
  return range == NoiseRange::unit_signed ? "unit_signed" : "unit_positive";
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const auto where = "config line " + std::to_string(lineno);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = setters().find(key);
    if (it == setters().end()) throw FormatError(where + ", field '" + key + "': unknown key");
    if (auto prev = seen.find(key); prev != seen.end()) {
      throw FormatError(where + ", field '" + key + "': already set on line " + std::to_string(prev->second));
    }
    seen.emplace(key, lineno);
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw FormatError(where + ", field '" + key + "': " + e.what() + ", got '" + value + "'");
    }
    // Every constraint involves a single field, so a failure here is this line's.
    try {
      cfg.validate();
    } catch (const ParameterError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_config(text.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string to_text(const TrainConfig& c) {
  std::ostringstream out;
  out << "lambda_gp = " << format_double(c.lambda_gp) << '\n'
      << "n_critic = " << c.n_critic << '\n'
      << "adam_alpha = " << format_double(c.adam.alpha) << '\n'
      << "adam_beta1 = " << format_double(c.adam.beta1) << '\n'
      << "adam_beta2 = " << format_double(c.adam.beta2) << '\n'
      << "adam_epsilon = " << format_double(c.adam.epsilon) << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "stage1_iters = " << c.stage1_iters << '\n'
      << "stage2_iters = " << c.stage2_iters << '\n'
      << "model_dim = " << c.model_dim << '\n'
      << "shuffle_n = " << c.shuffle_n << '\n'
      << "noise_range = " << to_string(c.noise_range) << '\n'
      << "seed = " << c.seed << '\n'
      << "identity_weight = " << format_double(c.identity_weight) << '\n'
      << "metrics_every = " << c.metrics_every << '\n'
      << "checkpoint_every = " << c.checkpoint_every << '\n';
  return out.str();
}

}  // namespace prowave::train
