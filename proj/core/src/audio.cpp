#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>

#include "prowave/audio.hpp"
#include "prowave/rng.hpp"

namespace prowave::audio {

void AudioClip::validate() const {
  if (sample_rate == 0) throw ParameterError("audio clip has a zero sample rate");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const float s = samples[i];
    if (!(s >= -1.0f && s <= 1.0f)) {
      throw ParameterError("sample " + std::to_string(i) + " = " + std::to_string(s) + " is outside [-1, 1]");
    }
  }
}

void TrimConfig::validate() const {
  if (frame_length == 0 || hop == 0 || hop > frame_length) {
    throw ParameterError("trim config needs 0 < hop <= frame_length (hop " + std::to_string(hop) + ", frame " +
                         std::to_string(frame_length) + ")");
  }
  if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0)) {
    throw ParameterError("trim threshold_fraction must lie in (0, 1], got " + std::to_string(threshold_fraction));
  }
}

std::vector<double> short_term_energy(const AudioClip& clip, const TrimConfig& cfg) {
  cfg.validate();
  if (clip.samples.empty()) throw ParameterError("short_term_energy of an empty clip");
  const std::size_t n = clip.samples.size();
  const std::size_t frames = (n + cfg.hop - 1) / cfg.hop;
  std::vector<double> energy(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t begin = f * cfg.hop;
    const std::size_t end = std::min(n, begin + cfg.frame_length);
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += double(clip.samples[i]) * clip.samples[i];
    energy[f] = acc / static_cast<double>(cfg.frame_length);
  }
  return energy;
}

AudioClip trim_onset(const AudioClip& clip, const TrimConfig& cfg) {
  const auto energy = short_term_energy(clip, cfg);
  const double peak = *std::max_element(energy.begin(), energy.end());
  if (!(peak > 0.0)) throw NoSpeechError("no speech detected: every frame has zero energy");
  const double threshold = cfg.threshold_fraction * peak;
  std::size_t first = 0;
  while (energy[first] < threshold) ++first;
  std::size_t last = energy.size() - 1;
  while (energy[last] < threshold) --last;

  const std::size_t begin = first * cfg.hop;
  const std::size_t end = cfg.tail_trim ? std::min(clip.samples.size(), last * cfg.hop + cfg.frame_length)
                                        : clip.samples.size();
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.label = clip.label;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

AudioClip fit_length(const AudioClip& clip, std::size_t n) {
  if (n == 0) throw ParameterError("fit_length: target length must be positive");
  AudioClip out = clip;
  out.samples.resize(n, 0.0f);
  return out;
}

DatasetSummary summarize_durations(std::span<const AudioClip> clips) {
  DatasetSummary s;
  s.clip_count = clips.size();
  if (clips.empty()) return s;
  double sum = 0.0;
  for (const auto& c : clips) {
    sum += c.duration_seconds();
    ++s.per_label_counts[c.label.value_or("")];
  }
  s.mean_duration = sum / static_cast<double>(clips.size());
  if (clips.size() > 1) {
    double ss = 0.0;
    for (const auto& c : clips) {
      const double d = c.duration_seconds() - s.mean_duration;
      ss += d * d;
    }
    s.std_duration = std::sqrt(ss / static_cast<double>(clips.size() - 1));
  }
  return s;
}

IngestResult ingest_dataset(const std::filesystem::path& root, const IngestOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw FormatError("dataset root " + root.string() + " is not a directory");

  std::vector<fs::path> label_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const auto name = entry.path().filename().string();
    if (options.labels.empty() || options.labels.count(name)) label_dirs.push_back(entry.path());
  }
  std::sort(label_dirs.begin(), label_dirs.end());

  IngestResult result;
  std::vector<AudioClip> originals;
  for (const auto& dir : label_dirs) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    const auto label = dir.filename().string();
    for (const auto& file : files) {
      AudioClip clip;
      try {
        clip = load_wav(file);
      } catch (const FormatError& e) {
        std::cerr << "warning: skipping " << e.what() << '\n';
        result.skipped.push_back(file);
        continue;
      }
      clip.label = label;
      originals.push_back(clip);
      AudioClip processed = clip;
      if (options.trim_enabled) {
        try {
          processed = trim_onset(clip, options.trim);
        } catch (const NoSpeechError&) {
          result.silent.push_back(file);
        }
      }
      result.clips.push_back(fit_length(processed, options.length));
      result.sources.push_back(file);
    }
  }
  if (result.clips.empty()) throw FormatError("dataset at " + root.string() + " contains no readable clips");
  result.summary = summarize_durations(originals);
  return result;
}

AudioClip synth_fixture(FixtureKind kind, std::uint64_t seed, std::size_t onset) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Rng rng(seed);
  AudioClip clip;
  clip.sample_rate = kCanonicalRate;
  clip.samples.assign(kCanonicalRate, 0.0f);
  const double rate = kCanonicalRate;
  switch (kind) {
    case FixtureKind::tone: {
      const double freq = rng.uniform(220.0, 880.0);
      const double amp = rng.uniform(0.5, 0.9);
      const double phase = rng.uniform(0.0, two_pi);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        clip.samples[i] = static_cast<float>(amp * std::sin(two_pi * freq * i / rate + phase));
      }
      break;
    }
    case FixtureKind::chirp: {
      const double f0 = rng.uniform(100.0, 300.0);
      const double f1 = rng.uniform(2000.0, 4000.0);
      const double amp = rng.uniform(0.5, 0.9);
      const double seconds = clip.samples.size() / rate;
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const double t = i / rate;
        // Linear sweep: instantaneous frequency f0 + (f1 - f0) t / T.
        const double phase = two_pi * (f0 * t + 0.5 * (f1 - f0) * t * t / seconds);
        clip.samples[i] = static_cast<float>(amp * std::sin(phase));
      }
      break;
    }
    case FixtureKind::silence_tone: {
      const double freq = rng.uniform(220.0, 880.0);
      for (std::size_t i = onset; i < clip.samples.size(); ++i) {
        clip.samples[i] = static_cast<float>(std::sin(two_pi * freq * (i - onset) / rate));
      }
      break;
    }
  }
  return clip;
}

}  // namespace prowave::audio
