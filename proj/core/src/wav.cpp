#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "prowave/audio.hpp"

namespace prowave::audio {
namespace {

std::uint16_t le16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }
std::uint32_t le32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}
void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

[[noreturn]] void bad(const std::string& field, const std::string& what) {
  throw FormatError("wav " + field + ": " + what);
}

}  // namespace

AudioClip read_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) bad("riff header", "truncated (" + std::to_string(bytes.size()) + " bytes)");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0) bad("riff.chunk_id", "expected 'RIFF'");
  if (std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) bad("riff.format", "expected 'WAVE'");

  bool have_fmt = false;
  AudioClip clip;
  std::size_t pos = 12;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 8) bad("chunk header", "truncated at byte " + std::to_string(pos));
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (size > bytes.size() - body) {
      bad(id + ".size", "declares " + std::to_string(size) + " bytes but " + std::to_string(bytes.size() - body) +
                            " remain (truncated file)");
    }
    const std::uint8_t* p = bytes.data() + body;
    if (id == "fmt ") {
      if (size < 16) bad("fmt.size", "chunk is " + std::to_string(size) + " bytes, need 16");
      const std::uint16_t format = le16(p);
      const std::uint16_t channels = le16(p + 2);
      const std::uint32_t rate = le32(p + 4);
      const std::uint16_t bits = le16(p + 14);
      if (format != 1) bad("fmt.audio_format", std::to_string(format) + " is not PCM (1)");
      if (channels != 1) bad("fmt.num_channels", std::to_string(channels) + " channels, only mono is supported");
      if (bits != 16) bad("fmt.bits_per_sample", std::to_string(bits) + " bits, only 16 is supported");
      if (rate == 0) bad("fmt.sample_rate", "is zero");
      clip.sample_rate = rate;
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) bad("data", "chunk precedes the fmt chunk");
      if (size % 2 != 0) bad("data.size", std::to_string(size) + " is not a whole number of 16-bit samples");
      clip.samples.resize(size / 2);
      for (std::size_t i = 0; i < clip.samples.size(); ++i) {
        const auto v = static_cast<std::int16_t>(le16(p + 2 * i));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) bad("fmt", "chunk missing");
  bad("data", "chunk missing");
}

std::vector<std::uint8_t> write_wav(const AudioClip& clip) {
  if (clip.sample_rate == 0) throw ParameterError("write_wav: sample rate is zero");
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  put_tag(out, "RIFF");
  put32(out, 36 + data_bytes);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put32(out, 16);
  put16(out, 1);
  put16(out, 1);
  put32(out, clip.sample_rate);
  put32(out, clip.sample_rate * 2);
  put16(out, 2);
  put16(out, 16);
  put_tag(out, "data");
  put32(out, data_bytes);
  for (float s : clip.samples) {
    const double clamped = std::isnan(s) ? 0.0 : std::clamp(static_cast<double>(s), -1.0, 1.0);
    const long q = std::clamp(std::lround(clamped * 32768.0), -32768L, 32767L);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return out;
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return read_wav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  const auto bytes = write_wav(clip);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to " + path.string());
}

}  // namespace prowave::audio
