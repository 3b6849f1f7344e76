#include "prowave/app/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "prowave/error.hpp"
#include "prowave/rng.hpp"

namespace prowave::app {
namespace {

using nlohmann::json;

constexpr std::size_t kMaxParticipantLength = 128;

std::string hex(std::uint64_t v, int digits) {
  static const char* kDigits = "0123456789abcdef";
  std::string s(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Reply error_reply(int status, const std::string& message) {
  return {status, json{{"error", message}}.dump(), "application/json"};
}

bool valid_participant(const std::string& p) { return !p.empty() && p.size() <= kMaxParticipantLength; }

}  // namespace

std::string results_json(const std::vector<eval::RatingRecord>& records) {
  json out;
  out["total"] = records.size();
  out["systems"] = json::object();
  out["cohens_d"] = nullptr;
  out["effect_band"] = nullptr;
  if (records.empty()) return out.dump();
  const auto stats = eval::aggregate(records);
  for (const auto& [sys, st] : stats) {
    out["systems"][eval::to_string(sys)] = {{"n", st.n}, {"mean", st.mean}, {"std_dev", st.std_dev}};
  }
  if (stats.count(eval::System::baseline) && stats.count(eval::System::proposed)) {
    try {
      const double d = eval::cohens_d(stats.at(eval::System::baseline), stats.at(eval::System::proposed));
      out["cohens_d"] = d;
      out["effect_band"] = eval::to_string(eval::effect_band(d));
    } catch (const DomainError&) {
    }
  }
  return out.dump();
}

RatingService::RatingService(ServiceOptions options) : options_(std::move(options)) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(options_.sample_dir)) {
    throw FormatError("sample directory " + options_.sample_dir.string() + " does not exist");
  }
  for (const auto& entry : fs::directory_iterator(options_.sample_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".wav") continue;
    const auto stem = entry.path().stem().string();
    SampleEntry s;
    if (stem.rfind("baseline_", 0) == 0) {
      s.system = eval::System::baseline;
    } else if (stem.rfind("proposed_", 0) == 0) {
      s.system = eval::System::proposed;
    } else {
      continue;
    }
    s.name = stem;
    s.id = hex(fnv1a("sample:" + stem), 12);
    s.path = entry.path();
    samples_.push_back(std::move(s));
  }
  if (samples_.empty()) {
    throw FormatError("no baseline_*.wav or proposed_*.wav files in " + options_.sample_dir.string());
  }
  std::sort(samples_.begin(), samples_.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (std::size_t i = 0; i < samples_.size(); ++i) by_id_.emplace(samples_[i].id, i);

  load_existing();
  fd_ = ::open(options_.ratings_path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw FormatError("cannot open ratings file " + options_.ratings_path.string() + ": " + std::strerror(errno));
  // A torn final line from an earlier crash must not swallow the next record.
  if (std::ifstream tail(options_.ratings_path, std::ios::binary | std::ios::ate); tail && tail.tellg() > 0) {
    tail.seekg(-1, std::ios::end);
    if (tail.get() != '\n' && ::write(fd_, "\n", 1) != 1) throw Error("cannot repair ratings file");
  }

  std::random_device rd;
  id_salt_ = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

RatingService::~RatingService() {
  stop();
  if (fd_ >= 0) ::close(fd_);
}

void RatingService::load_existing() {
  if (!std::filesystem::exists(options_.ratings_path)) return;
  const auto file = eval::read_ratings(options_.ratings_path);
  for (const auto& s : file.skipped) {
    std::cerr << "warning: " << options_.ratings_path.string() << " line " << s.line << ": " << s.reason << '\n';
  }
  records_ = file.records;
  for (const auto& r : records_) rated_.emplace(r.participant, r.sample);
}

const SampleEntry* RatingService::find_sample(const std::string& id) const {
  auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &samples_[it->second];
}

std::vector<std::string> RatingService::playlist(const std::string& participant) const {
  std::vector<std::string> ids;
  ids.reserve(samples_.size());
  for (const auto& s : samples_) ids.push_back(s.id);
  Rng rng(fnv1a("playlist:" + participant));
  for (std::size_t i = ids.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(ids[i - 1], ids[j]);
  }
  return ids;
}

Reply RatingService::session(const std::optional<std::string>& participant) {
  std::string id;
  if (participant) {
    if (!valid_participant(*participant)) return error_reply(400, "participant id must be 1-128 characters");
    id = *participant;
  } else {
    std::lock_guard lock(id_mutex_);
    id = hex(fnv1a(std::to_string(id_salt_) + ":" + std::to_string(id_counter_++)), 16);
  }
  const auto list = playlist(id);
  json rated = json::array();
  std::size_t cursor = list.size();
  {
    std::shared_lock lock(records_mutex_);
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (rated_.count({id, find_sample(list[i])->name})) {
        rated.push_back(list[i]);
      } else if (cursor == list.size()) {
        cursor = i;
      }
    }
  }
  json out{{"participant", id}, {"playlist", list}, {"rated", rated}, {"cursor", cursor},
           {"completed", cursor == list.size()}};
  return {200, out.dump(), "application/json"};
}

Reply RatingService::sample(const std::string& id) const {
  const auto* s = find_sample(id);
  if (!s) return error_reply(404, "unknown sample '" + id + "'");
  std::ifstream in(s->path, std::ios::binary);
  if (!in) return error_reply(404, "sample file is missing");
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return {200, bytes.str(), "audio/wav"};
}

Reply RatingService::post_rating(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error&) {
    return error_reply(400, "rating body is not valid JSON");
  }
  if (!j.is_object()) return error_reply(400, "rating body must be a JSON object");
  auto participant = j.find("participant");
  if (participant == j.end() || !participant->is_string() || !valid_participant(participant->get<std::string>())) {
    return error_reply(400, "field 'participant' must be a non-empty string");
  }
  auto sample_id = j.find("sample");
  if (sample_id == j.end() || !sample_id->is_string()) return error_reply(400, "field 'sample' must be a string");
  const auto* s = find_sample(sample_id->get<std::string>());
  if (!s) return error_reply(404, "unknown sample '" + sample_id->get<std::string>() + "'");
  auto score = j.find("score");
  if (score == j.end() || !score->is_number_integer()) return error_reply(400, "field 'score' must be an integer");
  const auto value = score->get<long long>();
  if (value < eval::kMinScore || value > eval::kMaxScore) return error_reply(400, "score must be between 1 and 7");

  eval::RatingRecord r;
  r.participant = participant->get<std::string>();
  r.sample = s->name;
  r.system = s->system;
  r.score = static_cast<int>(value);
  auto ts = j.find("ts");
  r.timestamp = ts != j.end() && ts->is_string() ? ts->get<std::string>() : utc_now();

  std::lock_guard writer(write_mutex_);
  if (rated_.count({r.participant, r.sample})) return error_reply(409, "sample already rated by this participant");
  try {
    append_durably(r);
  } catch (const Error& e) {
    return error_reply(500, e.what());
  }
  {
    std::unique_lock lock(records_mutex_);
    records_.push_back(r);
    rated_.emplace(r.participant, r.sample);
  }
  return {200, json{{"ok", true}, {"sample", s->id}, {"score", r.score}}.dump(), "application/json"};
}

void RatingService::append_durably(const eval::RatingRecord& r) {
  const std::string line = eval::to_json_line(r) + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("cannot append rating: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fdatasync(fd_) != 0) throw Error(std::string("cannot sync ratings file: ") + std::strerror(errno));
}

Reply RatingService::results() const { return {200, results_json(records()), "application/json"}; }

std::vector<eval::RatingRecord> RatingService::records() const {
  std::shared_lock lock(records_mutex_);
  return records_;
}

void RatingService::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_header("Cache-Control", "no-store");
    res.set_content(r.body, r.content_type);
  };
  server_->Get("/api/session", [this, send](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> participant;
    if (req.has_param("participant")) participant = req.get_param_value("participant");
    send(res, session(participant));
  });
  server_->Get(R"(/api/sample/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, sample(req.matches[1]));
  });
  server_->Post("/api/rating", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, post_rating(req.body));
  });
  server_->Get("/api/results", [this, send](const httplib::Request&, httplib::Response& res) { send(res, results()); });
  server_->set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, what));
  });
  if (options_.ui_dir && !server_->set_mount_point("/", options_.ui_dir->string())) {
    throw FormatError("UI directory " + options_.ui_dir->string() + " does not exist");
  }
}

bool RatingService::listen(const std::string& host, int port) {
  install_routes();
  return server_->listen(host, port);
}

int RatingService::bind_any_port(const std::string& host) {
  install_routes();
  return server_->bind_to_any_port(host);
}

bool RatingService::listen_after_bind() { return server_ && server_->listen_after_bind(); }

void RatingService::stop() {
  if (server_) server_->stop();
}

bool RatingService::running() const { return server_ && server_->is_running(); }

}  // namespace prowave::app
