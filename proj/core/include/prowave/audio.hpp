#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "prowave/error.hpp"

namespace prowave::audio {

inline constexpr std::uint32_t kCanonicalRate = 16000;
inline constexpr std::size_t kClipLength = 16384;

// Mono waveform in [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  std::uint32_t sample_rate = kCanonicalRate;
  std::optional<std::string> label;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
  // Throws ParameterError when a sample leaves [-1, 1] or the rate is zero.
  void validate() const;
};

// Raised by trim_onset when the clip has no nonzero energy.
class NoSpeechError : public Error {
 public:
  using Error::Error;
};

// ---- WAV ----------------------------------------------------------------

// Parses RIFF/WAVE, PCM format 1, mono, 16-bit. Samples are value/32768.
AudioClip read_wav(std::span<const std::uint8_t> bytes);
// 16-bit PCM mono with a canonical 44-byte header; samples are clamped to
// [-1, 1] and rounded half away from zero.
std::vector<std::uint8_t> write_wav(const AudioClip& clip);

AudioClip load_wav(const std::filesystem::path& path);
void save_wav(const std::filesystem::path& path, const AudioClip& clip);

// ---- Silence trimming ---------------------------------------------------

struct TrimConfig {
  std::size_t frame_length = 512;
  std::size_t hop = 256;
  // Fraction of the clip's loudest frame energy that marks speech.
  double threshold_fraction = 0.05;
  bool tail_trim = true;

  void validate() const;
};

// energy[f] = sum(x[f*hop + i]^2 for i < frame_length) / frame_length, the
// final frames zero-padded; ceil(len / hop) frames.
std::vector<double> short_term_energy(const AudioClip& clip, const TrimConfig& cfg);

// Drops the samples before the first frame whose energy reaches
// threshold_fraction * max energy, and (tail_trim) the samples after the last
// such frame.
AudioClip trim_onset(const AudioClip& clip, const TrimConfig& cfg);

// Truncates or right-pads with zeros to exactly n samples.
AudioClip fit_length(const AudioClip& clip, std::size_t n = kClipLength);

// ---- Datasets -----------------------------------------------------------

struct DatasetSummary {
  std::size_t clip_count = 0;
  double mean_duration = 0.0;
  // Sample standard deviation; 0 for a single clip.
  double std_duration = 0.0;
  std::map<std::string, std::size_t> per_label_counts;
};

DatasetSummary summarize_durations(std::span<const AudioClip> clips);

struct IngestOptions {
  // Empty means every subdirectory of the root.
  std::set<std::string> labels;
  TrimConfig trim;
  bool trim_enabled = true;
  std::size_t length = kClipLength;
};

struct IngestResult {
  // Preprocessed clips, ordered by (label, file name).
  std::vector<AudioClip> clips;
  // Durations of the files as read, before preprocessing.
  DatasetSummary summary;
  std::vector<std::filesystem::path> skipped;
  // Files kept untrimmed because trim_onset found no speech.
  std::vector<std::filesystem::path> silent;
  std::vector<std::filesystem::path> sources;
};

// Reads <root>/<label>/*.wav. Unreadable files are skipped with a warning on
// stderr; an empty result throws FormatError.
IngestResult ingest_dataset(const std::filesystem::path& root, const IngestOptions& options = {});

// ---- Synthetic fixtures -------------------------------------------------

enum class FixtureKind { tone, chirp, silence_tone };

// One second at 16 kHz, deterministic for a seed. tone and chirp peak at or
// below 0.9; silence_tone is zero before `onset` and a unit-amplitude sine
// from `onset` on.
AudioClip synth_fixture(FixtureKind kind, std::uint64_t seed, std::size_t onset = 4096);

}  // namespace prowave::audio
