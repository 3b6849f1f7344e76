#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "prowave/training.hpp"

namespace prowave::train {
namespace {

constexpr char kMagic[] = "PROWAVE-CKPT";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (float f : t.data()) u32(std::bit_cast<std::uint32_t>(f));
  }

  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  void need(std::size_t n, const std::string& what) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint " + what + ": truncated at byte " + std::to_string(pos_));
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(const std::string& what) {
    const auto n = u32(what);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor tensor(const std::string& entry) {
    const auto what = "entry '" + entry + "'";
    const auto rank = u32(what);
    if (rank == 0 || rank > 8) throw FormatError("checkpoint " + what + ": invalid rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = u64(what);
      if (d == 0 || d > (std::size_t{1} << 32)) throw FormatError("checkpoint " + what + ": invalid dimension");
      count *= d;
    }
    if (count > (bytes_.size() - pos_) / 4) {
      throw FormatError("checkpoint " + what + ": truncated data (" + std::to_string(count) + " floats declared)");
    }
    std::vector<float> data(count);
    for (auto& f : data) f = std::bit_cast<float>(u32(what));
    return Tensor(std::move(shape), std::move(data));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::map<std::string, std::string> parse_meta(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint meta: malformed line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::uint64_t meta_u64(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw FormatError("checkpoint meta: missing '" + key + "'");
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw FormatError("checkpoint meta: '" + key + "' is not an unsigned integer");
  }
}

void put_params(Writer& w, const std::string& prefix, const std::map<std::string, Tensor>& params) {
  for (const auto& [name, t] : params) w.tensor(prefix + "/" + name, t);
}

std::size_t count_entries(const Checkpoint& c) {
  std::size_t n = c.generator.size() + c.critic.size() + c.generator_adam.m.size() + c.generator_adam.v.size() +
                  c.critic_adam.m.size() + c.critic_adam.v.size();
  if (c.source) n += c.source->params.size();
  return n;
}

void check_group(const std::string& group, const models::NetworkSpec& spec, const models::ModelParams& params) {
  try {
    models::check_params(spec, params);
  } catch (const ShapeError& e) {
    throw FormatError("checkpoint " + group + ": " + e.what());
  }
}

void check_moments(const std::string& group, const std::map<std::string, Tensor>& moments,
                   const models::ModelParams& params) {
  for (const auto& [name, t] : moments) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape() != t.shape()) {
      throw FormatError("checkpoint entry '" + group + "/" + name + "': does not match a parameter");
    }
  }
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.bytes.insert(w.bytes.end(), kMagic, kMagic + kMagicLen);
  w.u32(kVersion);

  std::ostringstream meta;
  meta << "stage=" << to_string(c.stage) << '\n'
       << "iteration=" << c.iteration << '\n'
       << "critic_steps=" << c.critic_steps << '\n'
       << "generator_steps=" << c.generator_steps << '\n'
       << "generator_adam_step=" << c.generator_adam.step << '\n'
       << "critic_adam_step=" << c.critic_adam.step << '\n'
       << "rng=" << c.rng_state << '\n';
  std::vector<std::pair<std::string, std::string>> blocks = {
      {"config", to_text(c.config)},
      {"meta", meta.str()},
      {"generator.spec", models::to_text(c.generator_spec)},
      {"critic.spec", models::to_text(c.critic_spec)},
  };
  if (c.source) blocks.emplace_back("source.spec", models::to_text(c.source->spec));
  w.u32(static_cast<std::uint32_t>(blocks.size()));
  for (const auto& [name, text] : blocks) {
    w.str(name);
    w.str(text);
  }

  w.u32(static_cast<std::uint32_t>(count_entries(c)));
  put_params(w, "generator", c.generator);
  put_params(w, "critic", c.critic);
  put_params(w, "generator_adam.m", c.generator_adam.m);
  put_params(w, "generator_adam.v", c.generator_adam.v);
  put_params(w, "critic_adam.m", c.critic_adam.m);
  put_params(w, "critic_adam.v", c.critic_adam.v);
  if (c.source) put_params(w, "source", c.source->params);
  return std::move(w.bytes);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kMagicLen || std::memcmp(bytes.data(), kMagic, kMagicLen) != 0) {
    throw FormatError("checkpoint header: not a prowave checkpoint");
  }
  Reader r(bytes.subspan(kMagicLen));
  const auto version = r.u32("header");
  if (version != kVersion) throw FormatError("checkpoint header: unsupported version " + std::to_string(version));

  std::map<std::string, std::string> blocks;
  const auto nblocks = r.u32("block table");
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    const auto name = r.str("block name");
    blocks[name] = r.str("block '" + name + "'");
  }
  auto block = [&](const std::string& name) -> const std::string& {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw FormatError("checkpoint block '" + name + "': missing");
    return it->second;
  };
  auto parse_block = [&](const std::string& name, auto fn) {
    try {
      return fn(block(name));
    } catch (const FormatError& e) {
      throw FormatError("checkpoint block '" + name + "': " + e.what());
    } catch (const ShapeError& e) {
      throw FormatError("checkpoint block '" + name + "': " + e.what());
    }
  };

  Checkpoint c;
  c.config = parse_block("config", [](const std::string& t) { return parse_config(t); });
  const auto meta = parse_meta(block("meta"));
  const auto stage = meta.count("stage") ? meta.at("stage") : "";
  if (stage == "wavegan") {
    c.stage = StageKind::wavegan;
  } else if (stage == "audio2audio") {
    c.stage = StageKind::audio2audio;
  } else {
    throw FormatError("checkpoint meta: unknown stage '" + stage + "'");
  }
  c.iteration = meta_u64(meta, "iteration");
  c.critic_steps = meta_u64(meta, "critic_steps");
  c.generator_steps = meta_u64(meta, "generator_steps");
  c.generator_adam.step = meta_u64(meta, "generator_adam_step");
  c.critic_adam.step = meta_u64(meta, "critic_adam_step");
  if (!meta.count("rng")) throw FormatError("checkpoint meta: missing 'rng'");
  c.rng_state = meta.at("rng");
  Rng probe;
  probe.restore(c.rng_state);

  c.generator_spec = parse_block("generator.spec", [](const std::string& t) { return models::network_from_text(t); });
  c.critic_spec = parse_block("critic.spec", [](const std::string& t) { return models::network_from_text(t); });
  if (blocks.count("source.spec")) {
    c.source.emplace();
    c.source->spec = parse_block("source.spec", [](const std::string& t) { return models::network_from_text(t); });
  }

  const auto count = r.u32("tensor table");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str("entry name");
    const auto slash = name.find('/');
    if (slash == std::string::npos) throw FormatError("checkpoint entry '" + name + "': malformed name");
    const auto group = name.substr(0, slash);
    const auto key = name.substr(slash + 1);
    std::map<std::string, Tensor>* dest = nullptr;
    if (group == "generator") dest = &c.generator;
    if (group == "critic") dest = &c.critic;
    if (group == "generator_adam.m") dest = &c.generator_adam.m;
    if (group == "generator_adam.v") dest = &c.generator_adam.v;
    if (group == "critic_adam.m") dest = &c.critic_adam.m;
    if (group == "critic_adam.v") dest = &c.critic_adam.v;
    if (group == "source" && c.source) dest = &c.source->params;
    if (!dest) throw FormatError("checkpoint entry '" + name + "': unknown group");
    Tensor t = r.tensor(name);
    if (!dest->emplace(key, std::move(t)).second) throw FormatError("checkpoint entry '" + name + "': duplicated");
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after the tensor table");

  check_group("generator", c.generator_spec, c.generator);
  check_group("critic", c.critic_spec, c.critic);
  if (c.source) check_group("source", c.source->spec, c.source->params);
  check_moments("generator_adam.m", c.generator_adam.m, c.generator);
  check_moments("generator_adam.v", c.generator_adam.v, c.generator);
  check_moments("critic_adam.m", c.critic_adam.m, c.critic);
  check_moments("critic_adam.v", c.critic_adam.v, c.critic);
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace prowave::train
