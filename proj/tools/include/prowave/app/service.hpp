#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include "prowave/evaluation.hpp"

namespace httplib {
class Server;
}

namespace prowave::app {

struct ServiceOptions {
  // Directory of baseline_*.wav and proposed_*.wav files.
  std::filesystem::path sample_dir;
  // JSON-lines file; created if missing, appended to otherwise.
  std::filesystem::path ratings_path;
  // Static files served under "/" when set.
  std::optional<std::filesystem::path> ui_dir;
};

struct SampleEntry {
  std::string id;  // opaque, stable across restarts
  std::string name;  // file stem, e.g. proposed_003
  eval::System system = eval::System::baseline;
  std::filesystem::path path;
};

// Plain result of a request handler, independent of the HTTP library.
struct Reply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

// Listening-test backend. Every acknowledged rating has been written and
// flushed to the ratings file; results are computed from the same records.
class RatingService {
 public:
  explicit RatingService(ServiceOptions options);
  ~RatingService();
  RatingService(const RatingService&) = delete;
  RatingService& operator=(const RatingService&) = delete;

  const std::vector<SampleEntry>& samples() const { return samples_; }
  const SampleEntry* find_sample(const std::string& id) const;
  // Playlist of a participant: every sample id in an order seeded by the id.
  std::vector<std::string> playlist(const std::string& participant) const;

  // GET /api/session[?participant=ID]: a new anonymous id unless one is given.
  Reply session(const std::optional<std::string>& participant);
  Reply sample(const std::string& id) const;
  Reply post_rating(const std::string& body);
  Reply results() const;

  // Snapshot of the persisted records.
  std::vector<eval::RatingRecord> records() const;

  // Binds and serves until stop(); returns false when the bind fails.
  bool listen(const std::string& host, int port);
  // Binds to an ephemeral port and returns it, or -1. Serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  bool running() const;

 private:
  void load_existing();
  void append_durably(const eval::RatingRecord& r);
  void install_routes();

  ServiceOptions options_;
  std::vector<SampleEntry> samples_;
  std::map<std::string, std::size_t> by_id_;

  mutable std::shared_mutex records_mutex_;
  std::vector<eval::RatingRecord> records_;
  std::set<std::pair<std::string, std::string>> rated_;  // (participant, sample name)
  std::mutex write_mutex_;
  int fd_ = -1;

  std::mutex id_mutex_;
  std::uint64_t id_counter_ = 0;
  std::uint64_t id_salt_ = 0;

  std::unique_ptr<httplib::Server> server_;
};

// JSON body of /api/results for a set of records.
std::string results_json(const std::vector<eval::RatingRecord>& records);

}  // namespace prowave::app
