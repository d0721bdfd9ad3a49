#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "deepssn/corpus_io.hpp"
#include "deepssn/nn/checkpoint.hpp"
#include "deepssn/retrieval.hpp"

namespace deepssn {

/// Everything a request reads. Replaced wholesale on reload, never mutated.
struct ServingSnapshot {
  nn::Network<float> model;
  EmbeddingIndex index;
  std::map<std::string, SpatialScene> scenes;
};

struct HttpReply {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

inline HttpReply json_reply(int status, const nlohmann::json& body) { return {status, body.dump(), "application/json"}; }
inline HttpReply error_reply(int status, const std::string& message) { return json_reply(status, {{"error", message}}); }

inline constexpr int kDefaultPageSize = 12;

/// What the server remembers about a served sketch, for feedback checks.
struct ServedQuery {
  SketchDocument sketch;
  std::vector<std::string> returned;
};

struct FeedbackRecord {
  std::string sketch_id;
  std::vector<std::string> returned;
  std::vector<std::string> user_order;
  std::string timestamp;
  std::string session;
  SketchDocument sketch;
};

inline nlohmann::json to_json(const FeedbackRecord& r) {
  return {{"sketch_id", r.sketch_id}, {"returned", r.returned}, {"user_order", r.user_order},
          {"timestamp", r.timestamp}, {"session", r.session}, {"sketch", to_json(r.sketch)}};
}

inline FeedbackRecord feedback_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("feedback: body must be a JSON object");
  auto str_list = [&](const char* key, bool required) {
    std::vector<std::string> out;
    if (!j.contains(key)) {
      if (required) throw ValidationError(std::string("feedback: missing field '") + key + "'");
      return out;
    }
    if (!j.at(key).is_array()) throw ValidationError(std::string("feedback: '") + key + "' must be an array of ids");
    for (const auto& v : j.at(key)) {
      if (!v.is_string()) throw ValidationError(std::string("feedback: '") + key + "' must hold string ids");
      out.push_back(v.get<std::string>());
    }
    return out;
  };
  FeedbackRecord r;
  if (!j.contains("sketch_id") || !j.at("sketch_id").is_string())
    throw ValidationError("feedback: missing string field 'sketch_id'");
  r.sketch_id = j.at("sketch_id").get<std::string>();
  if (!j.contains("timestamp") || !j.at("timestamp").is_string())
    throw ValidationError("feedback: missing string field 'timestamp'");
  r.timestamp = j.at("timestamp").get<std::string>();
  r.session = j.value("session", std::string());
  r.returned = str_list("returned", false);
  r.user_order = str_list("user_order", true);
  if (j.contains("sketch")) r.sketch = sketch_from_json(j.at("sketch"));
  return r;
}

/// Append-only JSON-lines log. Each record goes out in one write() on an
/// O_APPEND descriptor, so a crash can at worst truncate the last line.
class FeedbackLog {
public:
  explicit FeedbackLog(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      try {
        const auto j = nlohmann::json::parse(line);
        keys_.insert(key(j.at("sketch_id").get<std::string>(), j.at("timestamp").get<std::string>()));
      } catch (const std::exception&) {
        // A torn trailing line from an earlier crash is skipped.
      }
    }
  }

  const std::string& path() const { return path_; }

  /// False when (sketch_id, timestamp) is already stored.
  bool append(const FeedbackRecord& r) {
    std::lock_guard lock(mu_);
    const std::string k = key(r.sketch_id, r.timestamp);
    if (keys_.contains(k)) return false;
    const std::string line = to_json(r).dump() + "\n";
    const int fd = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw std::runtime_error("feedback log '" + path_ + "': " + std::strerror(errno));
    const ssize_t n = ::write(fd, line.data(), line.size());
    const int err = errno;
    ::fsync(fd);
    ::close(fd);
    if (n != static_cast<ssize_t>(line.size()))
      throw std::runtime_error("feedback log '" + path_ + "': short write: " + std::strerror(err));
    keys_.insert(k);
    return true;
  }

private:
  static std::string key(const std::string& sketch_id, const std::string& ts) { return sketch_id + '\x1f' + ts; }

  std::string path_;
  std::mutex mu_;
  std::unordered_set<std::string> keys_;
};

/// Reads a feedback log back; torn lines are skipped.
inline std::vector<FeedbackRecord> read_feedback_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open feedback log '" + path + "'");
  std::vector<FeedbackRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(feedback_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception&) {
    }
  }
  return out;
}

/// A user-confirmed positive: the sketch and the scene ranked first, with
/// the user's full order kept as graded evidence.
struct PositiveExample {
  SpatialScene sketch_scene;
  std::string positive_id;
  std::vector<std::string> user_order;
};

inline std::vector<PositiveExample> replay_feedback(std::span<const FeedbackRecord> records) {
  std::vector<PositiveExample> out;
  for (const FeedbackRecord& r : records) {
    if (r.user_order.empty()) continue;
    out.push_back({sketch_to_scene(r.sketch), r.user_order.front(), r.user_order});
  }
  return out;
}

/// Request handlers over a swappable snapshot. Transport-independent so the
/// logic is testable without sockets.
class SearchService {
public:
  SearchService(std::shared_ptr<const ServingSnapshot> snapshot, std::string feedback_log_path)
      : snapshot_(std::move(snapshot)), log_(std::move(feedback_log_path)) {}

  std::shared_ptr<const ServingSnapshot> snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  /// Atomically replaces the snapshot; in-flight requests keep the old one.
  void swap_snapshot(std::shared_ptr<const ServingSnapshot> next) {
    std::lock_guard lock(snap_mu_);
    snapshot_ = std::move(next);
  }

  HttpReply query(const std::string& body) {
    const auto snap = snapshot();
    if (!snap) return error_reply(503, "index not loaded");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, std::string("malformed JSON: ") + e.what());
    }
    SketchDocument sketch;
    int k = kDefaultPageSize;
    SceneTensor tensor;
    try {
      sketch = sketch_from_json(j);
      if (j.contains("k")) {
        if (!j.at("k").is_number_integer() || j.at("k").get<int>() < 1)
          throw ValidationError("sketch: 'k' must be a positive integer");
        k = j.at("k").get<int>();
      }
      if (sketch.icons.empty()) throw ValidationError("empty sketch");
      tensor = sketch_to_tensor(sketch);
    } catch (const ValidationError& e) {
      return error_reply(400, e.what());
    }
    if (snap->index.empty()) return error_reply(503, "index not loaded");
    const RankedResult r = deepssn::query(snap->index, snap->model.embed(tensor), k, sketch.sketch_id);

    nlohmann::json results = nlohmann::json::array();
    ServedQuery served{sketch, {}};
    for (const RankedItem& it : r.items) {
      const IndexEntry& e = snap->index[*snap->index.find(it.scene_id)];
      results.push_back({{"scene_id", it.scene_id}, {"distance", it.distance}, {"label", e.label},
                         {"preview", "/scenes/" + it.scene_id + "/raster"}});
      served.returned.push_back(it.scene_id);
    }
    {
      std::lock_guard lock(served_mu_);
      served_[sketch.sketch_id] = std::move(served);
    }
    return json_reply(200, {{"query_id", r.query_id}, {"k", k}, {"results", std::move(results)}});
  }

  HttpReply scene(const std::string& id) const {
    const auto snap = snapshot();
    if (!snap) return error_reply(503, "index not loaded");
    auto it = snap->scenes.find(id);
    if (it == snap->scenes.end()) return error_reply(404, "unknown scene id '" + id + "'");
    const RasterConfig rc;
    return json_reply(200, {{"scene", to_json(it->second)},
                            {"dims", {rc.channel_count, rc.grid_cells, rc.grid_cells}},
                            {"raster", "/scenes/" + id + "/raster"}});
  }

  /// Channel-major grid of cell values for client-side rendering.
  HttpReply raster(const std::string& id) const {
    const auto snap = snapshot();
    if (!snap) return error_reply(503, "index not loaded");
    auto it = snap->scenes.find(id);
    if (it == snap->scenes.end()) return error_reply(404, "unknown scene id '" + id + "'");
    const SceneTensor t = rasterize(it->second);
    nlohmann::json values = nlohmann::json::array();
    for (float v : t.values()) values.push_back(v);
    return json_reply(200, {{"scene_id", id}, {"dims", {t.channels(), t.height(), t.width()}}, {"values", std::move(values)}});
  }

  HttpReply feedback(const std::string& body) {
    FeedbackRecord rec;
    try {
      rec = feedback_from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::exception& e) {
      return error_reply(400, std::string("malformed JSON: ") + e.what());
    } catch (const ValidationError& e) {
      return error_reply(400, e.what());
    }
    ServedQuery served;
    {
      std::lock_guard lock(served_mu_);
      auto it = served_.find(rec.sketch_id);
      if (it == served_.end()) return error_reply(400, "feedback: sketch '" + rec.sketch_id + "' was never served");
      served = it->second;
    }
    if (!rec.returned.empty() && rec.returned != served.returned)
      return error_reply(400, "feedback: 'returned' does not match the served result list");
    rec.returned = served.returned;
    rec.sketch = served.sketch;
    if (rec.user_order.empty()) return error_reply(400, "feedback: 'user_order' must not be empty");
    std::set<std::string> seen;
    for (const std::string& id : rec.user_order) {
      if (std::find(served.returned.begin(), served.returned.end(), id) == served.returned.end())
        return error_reply(400, "feedback: ranking references unknown id '" + id + "'");
      if (!seen.insert(id).second) return error_reply(400, "feedback: duplicate id '" + id + "' in ranking");
    }
    try {
      const bool stored = log_.append(rec);
      return json_reply(200, {{"status", stored ? "stored" : "duplicate"}});
    } catch (const std::exception& e) {
      return error_reply(500, e.what());
    }
  }

  const FeedbackLog& feedback_log() const { return log_; }

private:
  mutable std::mutex snap_mu_;
  std::shared_ptr<const ServingSnapshot> snapshot_;
  std::mutex served_mu_;
  std::map<std::string, ServedQuery> served_;
  FeedbackLog log_;
};

/// Loads checkpoint, index and scene corpus into a snapshot. The index must
/// come from this exact checkpoint.
inline std::shared_ptr<const ServingSnapshot> load_snapshot(const std::string& model_path, const std::string& index_path,
                                                            const std::string& corpus_path) {
  const std::string model_bytes = read_file(model_path);
  auto snap = std::make_shared<ServingSnapshot>();
  snap->model = nn::decode_checkpoint<float>(model_bytes);
  snap->index = load_index(index_path);
  if (snap->index.fingerprint() != model_fingerprint(model_bytes))
    throw ValidationError("index '" + index_path + "' was built from a different checkpoint");
  if (snap->index.dim() != snap->model.config().embed_dim)
    throw ValidationError("index dimension does not match the model");
  for (SpatialScene& s : read_corpus(corpus_path)) snap->scenes.emplace(s.scene_id, std::move(s));
  for (const IndexEntry& e : snap->index.entries())
    if (!snap->scenes.contains(e.scene_id))
      throw ValidationError("indexed scene '" + e.scene_id + "' is missing from the corpus");
  return snap;
}

}  // namespace deepssn
