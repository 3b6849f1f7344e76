#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prowave/error.hpp"
#include "prowave/evaluation.hpp"

namespace prowave::eval {
namespace {

constexpr double kSilenceEnergy = 1e-4;

std::string required_string(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw FormatError(std::string("rating field '") + key + "' is missing");
  if (!it->is_string()) throw FormatError(std::string("rating field '") + key + "' must be a string");
  if (it->get_ref<const std::string&>().empty()) throw FormatError(std::string("rating field '") + key + "' is empty");
  return it->get<std::string>();
}

}  // namespace

std::string to_string(System s) { return s == System::baseline ? "baseline" : "proposed"; }

System system_from_string(const std::string& s) {
  if (s == "baseline") return System::baseline;
  if (s == "proposed") return System::proposed;
  throw FormatError("unknown system '" + s + "' (expected baseline or proposed)");
}

std::string display_name(System s) { return s == System::baseline ? "WaveGAN" : "Proposed Approach"; }

RatingRecord parse_rating(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("rating is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("rating must be a JSON object");
  RatingRecord r;
  r.participant = required_string(j, "participant");
  r.sample = required_string(j, "sample");
  r.system = system_from_string(required_string(j, "system"));
  auto score = j.find("score");
  if (score == j.end()) throw FormatError("rating field 'score' is missing");
  if (!score->is_number_integer()) throw FormatError("rating field 'score' must be an integer");
  const auto value = score->get<long long>();
  if (value < kMinScore || value > kMaxScore) {
    throw FormatError("rating score " + std::to_string(value) + " is outside 1..7");
  }
  r.score = static_cast<int>(value);
  if (auto ts = j.find("ts"); ts != j.end() && !ts->is_null()) r.timestamp = ts->is_string() ? ts->get<std::string>() : ts->dump();
  return r;
}

std::string to_json_line(const RatingRecord& r) {
  nlohmann::ordered_json j;
  j["participant"] = r.participant;
  j["sample"] = r.sample;
  j["system"] = to_string(r.system);
  j["score"] = r.score;
  j["ts"] = r.timestamp;
  return j.dump();
}

RatingsFile parse_ratings(const std::string& text) {
  RatingsFile out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.records.push_back(parse_rating(line));
    } catch (const FormatError& e) {
      out.skipped.push_back({lineno, e.what()});
    }
  }
  return out;
}

RatingsFile read_ratings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open ratings file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_ratings(text.str());
}

SystemStats make_stats(System system, std::span<const int> scores) {
  if (scores.empty()) throw ParameterError("no ratings for system " + to_string(system));
  // Integer sums keep the statistics independent of rating order.
  long long sum = 0, sum_sq = 0;
  for (int s : scores) {
    sum += s;
    sum_sq += static_cast<long long>(s) * s;
  }
  const auto n = static_cast<long long>(scores.size());
  SystemStats st;
  st.system = system;
  st.n = scores.size();
  st.mean = static_cast<double>(sum) / static_cast<double>(n);
  if (n > 1) {
    const double centered = static_cast<double>(n * sum_sq - sum * sum) / static_cast<double>(n);
    st.std_dev = std::sqrt(std::max(0.0, centered / static_cast<double>(n - 1)));
  }
  return st;
}

std::map<System, SystemStats> aggregate(std::span<const RatingRecord> ratings) {
  if (ratings.empty()) throw ParameterError("aggregate: no ratings");
  std::map<System, std::vector<int>> scores;
  for (const auto& r : ratings) {
    if (r.score < kMinScore || r.score > kMaxScore) {
      throw ParameterError("rating score " + std::to_string(r.score) + " is outside 1..7");
    }
    scores[r.system].push_back(r.score);
  }
  std::map<System, SystemStats> out;
  for (const auto& [sys, v] : scores) out.emplace(sys, make_stats(sys, v));
  return out;
}

double cohens_d(const SystemStats& a, const SystemStats& b) {
  const double pooled = std::sqrt((a.std_dev * a.std_dev + b.std_dev * b.std_dev) / 2.0);
  if (!(pooled > 0.0)) throw DomainError("Cohen's d is undefined: both standard deviations are zero");
  return (b.mean - a.mean) / pooled;
}

std::string to_string(EffectBand band) {
  switch (band) {
    case EffectBand::negligible: return "negligible";
    case EffectBand::small: return "small";
    case EffectBand::medium: return "medium";
    case EffectBand::large: return "large";
  }
  return "?";
}

EffectBand effect_band(double d) {
  const double m = std::abs(d);
  if (m < 0.2) return EffectBand::negligible;
  if (m < 0.5) return EffectBand::small;
  if (m < 0.8) return EffectBand::medium;
  return EffectBand::large;
}

Report make_report(std::span<const RatingRecord> ratings) {
  const auto stats = aggregate(ratings);
  if (!stats.count(System::baseline) || !stats.count(System::proposed)) {
    throw ParameterError("need ratings for both baseline and proposed systems");
  }
  Report r;
  r.baseline = stats.at(System::baseline);
  r.proposed = stats.at(System::proposed);
  r.d = cohens_d(r.baseline, r.proposed);
  r.band = effect_band(r.d);
  return r;
}

std::string table_csv(const Report& r) {
  std::string out = "Network,Mean Score,Std. Dev,Cohen's d\n";
  char buf[128];
  for (const auto& s : {r.baseline, r.proposed}) {
    std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.2f\n", display_name(s.system).c_str(), s.mean, s.std_dev, r.d);
    out += buf;
  }
  return out;
}

std::string format_report(const Report& r) {
  std::string out;
  char buf[160];
  for (const auto& s : {r.baseline, r.proposed}) {
    std::snprintf(buf, sizeof buf, "%-18s n=%-5zu mean=%.4f std=%.4f\n", display_name(s.system).c_str(), s.n, s.mean,
                  s.std_dev);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "Cohen's d = %.4f (%s effect)\n", r.d, to_string(r.band).c_str());
  return out + buf;
}

ClipDiagnostics clip_diagnostics(const audio::AudioClip& clip) {
  ClipDiagnostics d;
  if (clip.samples.empty()) return d;
  double sum = 0, sum_sq = 0;
  for (float s : clip.samples) {
    d.peak = std::max(d.peak, static_cast<double>(std::abs(s)));
    sum += s;
    sum_sq += static_cast<double>(s) * s;
  }
  const auto n = static_cast<double>(clip.samples.size());
  d.dc_offset = sum / n;
  d.rms = std::sqrt(sum_sq / n);
  const auto energy = audio::short_term_energy(clip, audio::TrimConfig{});
  const auto quiet = std::count_if(energy.begin(), energy.end(), [](double e) { return e < kSilenceEnergy; });
  d.silence_ratio = static_cast<double>(quiet) / static_cast<double>(energy.size());
  return d;
}

std::vector<ClipDiagnostics> clip_diagnostics(std::span<const audio::AudioClip> clips) {
  std::vector<ClipDiagnostics> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(clip_diagnostics(c));
  return out;
}

}  // namespace prowave::eval
