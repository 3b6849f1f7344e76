#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prowave/audio.hpp"

namespace prowave::eval {

enum class System { baseline, proposed };
std::string to_string(System s);
// Accepts "baseline" and "proposed".
System system_from_string(const std::string& s);
// Row label used in the results table.
std::string display_name(System s);

inline constexpr int kMinScore = 1;
inline constexpr int kMaxScore = 7;

struct RatingRecord {
  std::string participant;
  std::string sample;
  System system = System::baseline;
  int score = kMinScore;
  std::string timestamp;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

// One JSON object: {"participant","sample","system","score","ts"}. Throws
// FormatError for malformed JSON, missing fields, or a score outside 1..7.
RatingRecord parse_rating(const std::string& json_line);
std::string to_json_line(const RatingRecord& r);

struct SkippedLine {
  std::size_t line = 0;
  std::string reason;
};

struct RatingsFile {
  std::vector<RatingRecord> records;
  std::vector<SkippedLine> skipped;
};

// Reads JSON lines; blank lines are ignored and malformed ones recorded
// with their line number. A missing file throws FormatError.
RatingsFile read_ratings(const std::filesystem::path& path);
RatingsFile parse_ratings(const std::string& text);

struct SystemStats {
  System system = System::baseline;
  std::size_t n = 0;
  double mean = 0;
  // Sample standard deviation; 0 for a single score.
  double std_dev = 0;

  friend bool operator==(const SystemStats&, const SystemStats&) = default;
};

SystemStats make_stats(System system, std::span<const int> scores);

// Per-system statistics. Throws ParameterError on an empty list.
std::map<System, SystemStats> aggregate(std::span<const RatingRecord> ratings);

// (b.mean - a.mean) / sqrt((a.std^2 + b.std^2) / 2). Throws DomainError
// when the pooled deviation is zero.
double cohens_d(const SystemStats& a, const SystemStats& b);

enum class EffectBand { negligible, small, medium, large };
std::string to_string(EffectBand band);
// |d| < 0.2 negligible, < 0.5 small, < 0.8 medium, otherwise large.
EffectBand effect_band(double d);

struct Report {
  SystemStats baseline;
  SystemStats proposed;
  double d = 0;
  EffectBand band = EffectBand::negligible;
};

// Needs ratings for both systems; throws ParameterError otherwise.
Report make_report(std::span<const RatingRecord> ratings);
// Network,Mean Score,Std. Dev,Cohen's d
std::string table_csv(const Report& r);
// Human-readable summary.
std::string format_report(const Report& r);

struct ClipDiagnostics {
  double peak = 0;
  double rms = 0;
  double dc_offset = 0;
  // Fraction of 512-sample frames (hop 256) with mean energy below 1e-4.
  double silence_ratio = 0;
};

ClipDiagnostics clip_diagnostics(const audio::AudioClip& clip);
std::vector<ClipDiagnostics> clip_diagnostics(std::span<const audio::AudioClip> clips);

}  // namespace prowave::eval
