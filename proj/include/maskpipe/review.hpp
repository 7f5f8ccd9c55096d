#pragma once

// Human relabeling workflow: a review queue over a dataset, an append-only
// JSON-lines decision log, and the HTTP API serving both.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "httplib.h"
#include "json.hpp"
#include "maskpipe/annotations.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

enum class ReviewAction { SetMask, SetNoMask, Remove, Keep };

inline constexpr std::string_view to_string(ReviewAction a) noexcept {
  switch (a) {
    case ReviewAction::SetMask: return "SetMask";
    case ReviewAction::SetNoMask: return "SetNoMask";
    case ReviewAction::Remove: return "Remove";
    case ReviewAction::Keep: return "Keep";
  }
  return "Keep";
}

inline std::optional<ReviewAction> parse_review_action(std::string_view s) noexcept {
  if (s == "SetMask") return ReviewAction::SetMask;
  if (s == "SetNoMask") return ReviewAction::SetNoMask;
  if (s == "Remove") return ReviewAction::Remove;
  if (s == "Keep") return ReviewAction::Keep;
  return std::nullopt;
}

class BadRequestError : public Error {
 public:
  using Error::Error;
};

struct DecisionRecord {
  FaceId face_id;
  ReviewAction action = ReviewAction::Keep;
  std::string reviewer;
  std::int64_t timestamp_ms = 0;

  friend bool operator==(const DecisionRecord&, const DecisionRecord&) = default;
};

inline nlohmann::json decision_to_json(const DecisionRecord& r) {
  return {{"face_id", r.face_id.str()},
          {"action", to_string(r.action)},
          {"reviewer", r.reviewer},
          {"timestamp_ms", r.timestamp_ms}};
}

inline DecisionRecord decision_from_json(const nlohmann::json& j) {
  const auto action = parse_review_action(j.at("action").get<std::string>());
  if (!action) throw BadRequestError("unknown action " + j.at("action").dump());
  return {parse_face_id(j.at("face_id").get<std::string>()), *action, j.at("reviewer").get<std::string>(),
          j.at("timestamp_ms").get<std::int64_t>()};
}

enum class ReviewStatus { Pending, Decided };

struct ReviewItem {
  FaceId face_id;
  BoundingBox box;           // annotated face box
  BoundingBox context_box;   // box padded by the context margin, clamped to the image
  MaskLabel label = MaskLabel::NoMask;  // annotated label
  ReviewStatus status = ReviewStatus::Pending;
  std::optional<ReviewAction> decision;
  std::string image_url;
};

inline nlohmann::json review_item_to_json(const ReviewItem& it) {
  auto box = [](const BoundingBox& b) { return nlohmann::json{b.x_min, b.y_min, b.x_max, b.y_max}; };
  return {{"face_id", it.face_id.str()},
          {"frame_id", it.face_id.frame_id},
          {"face_index", it.face_id.index},
          {"box", box(it.box)},
          {"crop_box", box(it.context_box)},
          {"label", to_string(it.label)},
          {"status", it.status == ReviewStatus::Pending ? "pending" : "decided"},
          {"decision", it.decision ? nlohmann::json(to_string(*it.decision)) : nlohmann::json(nullptr)},
          {"image_url", it.image_url}};
}

struct ReviewProgress {
  std::size_t pending = 0;
  std::size_t decided = 0;
  std::size_t total = 0;
};

struct DecisionAck {
  bool appended = false;  // false: identical to an existing record, nothing written
  DecisionRecord record;
};

// Review state for one dataset. The decision log is the only durable state:
// constructing a store replays it. Writes are serialised; reads may run
// concurrently. Conflicts: the record with the greatest timestamp wins, ties
// go to the record later in the log.
class ReviewStore {
 public:
  ReviewStore(Dataset dataset, std::filesystem::path log_path, double context_margin = 0.4)
      : dataset_(std::move(dataset)), log_path_(std::move(log_path)), margin_(context_margin) {
    validate_dataset(dataset_);
    for (const auto& f : dataset_.frames) {
      for (const auto& face : f.faces) {
        faces_.emplace(face.id, FaceEntry{&f, &face});
      }
    }
    replay();
    log_ = std::fopen(log_path_.c_str(), "ab");
    if (!log_) throw Error("cannot open decision log " + log_path_.string());
  }

  ~ReviewStore() {
    if (log_) std::fclose(log_);
  }
  ReviewStore(const ReviewStore&) = delete;
  ReviewStore& operator=(const ReviewStore&) = delete;

  const Dataset& dataset() const noexcept { return dataset_; }
  const std::vector<std::string>& replay_warnings() const noexcept { return replay_warnings_; }

  // Up to count pending items in (frame_id, face index) order. No cursor: the
  // same call returns the same items until decisions change.
  std::vector<ReviewItem> next_items(std::size_t count) const {
    std::shared_lock lock(mu_);
    std::vector<ReviewItem> out;
    for (const auto& [id, entry] : faces_) {
      if (out.size() >= count) break;
      if (!latest_.contains(id)) out.push_back(make_item(id, entry));
    }
    return out;
  }

  std::vector<ReviewItem> all_items(std::optional<ReviewStatus> status, std::size_t count) const {
    std::shared_lock lock(mu_);
    std::vector<ReviewItem> out;
    for (const auto& [id, entry] : faces_) {
      if (out.size() >= count) break;
      auto item = make_item(id, entry);
      if (!status || item.status == *status) out.push_back(std::move(item));
    }
    return out;
  }

  ReviewItem item(const FaceId& id) const {
    std::shared_lock lock(mu_);
    auto it = faces_.find(id);
    if (it == faces_.end()) throw NotFoundError("unknown face " + id.str());
    return make_item(id, it->second);
  }

  // Appends rec to the log (fsync'd) unless it duplicates what is already
  // there. A record with timestamp_ms == 0 is stamped with the store clock and
  // counts as a duplicate when the current winning decision has the same
  // action and reviewer.
  DecisionAck record_decision(DecisionRecord rec) {
    std::unique_lock lock(mu_);
    if (!faces_.contains(rec.face_id)) throw NotFoundError("unknown face " + rec.face_id.str());
    auto& history = history_[rec.face_id];
    if (rec.timestamp_ms == 0) {
      if (auto w = latest_.find(rec.face_id);
          w != latest_.end() && w->second.action == rec.action && w->second.reviewer == rec.reviewer)
        return {false, w->second};
      rec.timestamp_ms = std::max(now_ms(), max_timestamp_ + 1);
    } else if (std::find(history.begin(), history.end(), rec) != history.end()) {
      return {false, rec};
    }
    append_line(decision_to_json(rec).dump());
    apply(rec);
    return {true, rec};
  }

  ReviewProgress progress() const {
    std::shared_lock lock(mu_);
    return {faces_.size() - latest_.size(), latest_.size(), faces_.size()};
  }

  // Winning non-Keep decisions that change the face, in face order.
  RelabelDiff export_diff() const {
    std::shared_lock lock(mu_);
    RelabelDiff diff;
    for (const auto& [id, rec] : latest_) {
      const MaskLabel current = faces_.at(id).face->label;
      switch (rec.action) {
        case ReviewAction::Keep: break;
        case ReviewAction::Remove: diff.entries.push_back({id, RelabelAction::Remove}); break;
        case ReviewAction::SetMask:
          if (current != MaskLabel::Mask) diff.entries.push_back({id, RelabelAction::SetMask});
          break;
        case ReviewAction::SetNoMask:
          if (current != MaskLabel::NoMask) diff.entries.push_back({id, RelabelAction::SetNoMask});
          break;
      }
    }
    return diff;
  }

  std::map<FaceId, DecisionRecord> latest_decisions() const {
    std::shared_lock lock(mu_);
    return latest_;
  }

 private:
  struct FaceEntry {
    const FrameAnnotation* frame;
    const GroundTruthFace* face;
  };

  static std::int64_t now_ms() {
    using namespace std::chrono;
    return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
  }

  ReviewItem make_item(const FaceId& id, const FaceEntry& e) const {
    const auto& b = e.face->box;
    const double px = b.width() * margin_, py = b.height() * margin_;
    BoundingBox ctx = BoundingBox{b.x_min - px, b.y_min - py, b.x_max + px, b.y_max + py}.clamped(
        e.frame->image_width, e.frame->image_height);
    ReviewItem item{id, b, ctx, e.face->label, ReviewStatus::Pending, std::nullopt, "/media/" + id.frame_id};
    if (auto it = latest_.find(id); it != latest_.end()) {
      item.status = ReviewStatus::Decided;
      item.decision = it->second.action;
    }
    return item;
  }

  void apply(const DecisionRecord& rec) {
    history_[rec.face_id].push_back(rec);
    max_timestamp_ = std::max(max_timestamp_, rec.timestamp_ms);
    auto it = latest_.find(rec.face_id);
    if (it == latest_.end() || rec.timestamp_ms >= it->second.timestamp_ms) latest_[rec.face_id] = rec;
  }

  void append_line(const std::string& line) {
    const std::string data = line + "\n";
    if (std::fwrite(data.data(), 1, data.size(), log_) != data.size() || std::fflush(log_) != 0)
      throw Error("write to decision log failed");
    ::fsync(::fileno(log_));
  }

  // A torn final line (crash mid-append) is dropped; damage elsewhere is fatal.
  void replay() {
    if (!std::filesystem::exists(log_path_)) return;
    const std::string text = read_file(log_path_);
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      const bool terminated = end != std::string::npos;
      if (!terminated) end = text.size();
      const std::string line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (line.empty()) continue;
      DecisionRecord rec;
      try {
        rec = decision_from_json(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        if (!terminated) {
          replay_warnings_.push_back("dropped torn final log line " + std::to_string(line_no));
          truncate_to(text.size() - line.size());
          break;
        }
        throw ParseError("decision log " + log_path_.string() + ": " + e.what(), line_no);
      }
      if (!terminated) {
        // Complete record without newline: terminate it so the next append starts cleanly.
        std::FILE* f = std::fopen(log_path_.c_str(), "ab");
        if (f) {
          std::fputc('\n', f);
          std::fclose(f);
        }
      }
      if (!faces_.contains(rec.face_id)) {
        replay_warnings_.push_back("log line " + std::to_string(line_no) + " names unknown face " +
                                   rec.face_id.str());
        continue;
      }
      apply(rec);
    }
  }

  void truncate_to(std::size_t size) {
    std::filesystem::resize_file(log_path_, size);
  }

  Dataset dataset_;
  std::filesystem::path log_path_;
  double margin_;
  std::map<FaceId, FaceEntry> faces_;
  std::map<FaceId, DecisionRecord> latest_;
  std::map<FaceId, std::vector<DecisionRecord>> history_;
  std::int64_t max_timestamp_ = 0;
  std::vector<std::string> replay_warnings_;
  std::FILE* log_ = nullptr;
  mutable std::shared_mutex mu_;
};

// ---------------------------------------------------------------------------
// HTTP

inline constexpr std::string_view kReviewGuidance =
    "Label Mask only when a medical or pollution mask covers the nose. Use Remove for non-human faces.";

// Binds the review API onto server. images maps frame_id to the image file;
// ui_dir, when non-empty, is served at "/".
inline void mount_review_api(httplib::Server& server, ReviewStore& store,
                             std::map<std::string, std::filesystem::path> images,
                             const std::filesystem::path& ui_dir = {}) {
  auto json_reply = [](httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };
  auto error_reply = [json_reply](httplib::Response& res, int status, const std::string& msg) {
    json_reply(res, {{"error", msg}}, status);
  };

  server.set_exception_handler([error_reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const NotFoundError& e) {
      error_reply(res, 404, e.what());
    } catch (const BadRequestError& e) {
      error_reply(res, 400, e.what());
    } catch (const ParseError& e) {
      error_reply(res, 400, e.what());
    } catch (const nlohmann::json::exception& e) {
      error_reply(res, 400, e.what());
    } catch (const std::exception& e) {
      error_reply(res, 500, e.what());
    }
  });

  server.Get("/api/items", [&store, json_reply](const httplib::Request& req, httplib::Response& res) {
    std::size_t count = 50;
    if (req.has_param("count")) {
      try {
        count = std::stoul(req.get_param_value("count"));
      } catch (const std::exception&) {
        throw BadRequestError("count must be a non-negative integer");
      }
    }
    const std::string status = req.has_param("status") ? req.get_param_value("status") : "pending";
    std::vector<ReviewItem> items;
    if (status == "pending") items = store.next_items(count);
    else if (status == "decided") items = store.all_items(ReviewStatus::Decided, count);
    else if (status == "all") items = store.all_items(std::nullopt, count);
    else throw BadRequestError("status must be pending, decided or all");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& it : items) arr.push_back(review_item_to_json(it));
    json_reply(res, arr);
  });

  server.Get(R"(/api/items/([^/]+))", [&store, json_reply](const httplib::Request& req, httplib::Response& res) {
    json_reply(res, review_item_to_json(store.item(parse_face_id(req.matches[1].str()))));
  });

  server.Post(R"(/api/items/([^/]+)/decision)",
              [&store, json_reply](const httplib::Request& req, httplib::Response& res) {
                const FaceId id = parse_face_id(req.matches[1].str());
                nlohmann::json body;
                try {
                  body = nlohmann::json::parse(req.body);
                } catch (const nlohmann::json::exception&) {
                  throw BadRequestError("body must be JSON {action, reviewer}");
                }
                if (!body.is_object() || !body.contains("action") || !body["action"].is_string())
                  throw BadRequestError("missing string field 'action'");
                const auto action = parse_review_action(body["action"].get<std::string>());
                if (!action) throw BadRequestError("unknown action '" + body["action"].get<std::string>() + "'");
                DecisionRecord rec{id, *action, body.value("reviewer", std::string("anonymous")),
                                   body.value("timestamp_ms", std::int64_t{0})};
                const auto ack = store.record_decision(rec);
                const auto p = store.progress();
                json_reply(res, {{"ok", true},
                                 {"appended", ack.appended},
                                 {"record", decision_to_json(ack.record)},
                                 {"progress", {{"pending", p.pending}, {"decided", p.decided}, {"total", p.total}}}});
              });

  server.Get("/api/export", [&store](const httplib::Request&, httplib::Response& res) {
    res.set_content(serialize_relabel_diff(store.export_diff()), "text/tab-separated-values; charset=utf-8");
  });

  server.Get("/api/progress", [&store, json_reply](const httplib::Request&, httplib::Response& res) {
    const auto p = store.progress();
    json_reply(res, {{"pending", p.pending}, {"decided", p.decided}, {"total", p.total}});
  });

  server.Get("/api/guidance", [json_reply](const httplib::Request&, httplib::Response& res) {
    json_reply(res, {{"text", kReviewGuidance}});
  });

  server.Get(R"(/media/([^/]+))", [images = std::move(images)](const httplib::Request& req, httplib::Response& res) {
    auto it = images.find(req.matches[1].str());
    if (it == images.end()) throw NotFoundError("no image for frame " + req.matches[1].str());
    auto ext = it->second.extension().string();
    const char* type = ext == ".png" ? "image/png" : ext == ".bmp" ? "image/bmp" : "image/jpeg";
    res.set_content(read_file(it->second), type);
  });

  if (!ui_dir.empty()) {
    server.set_mount_point("/", ui_dir.string());
  } else {
    server.Get("/", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("<!doctype html><title>maskpipe review</title><p>Review UI bundle not installed. "
                      "The JSON API is served under /api/.</p>",
                      "text/html");
    });
  }
}

// frame_id -> image path for every image file in dir (recursing into images/ for Moxa 3K layouts).
inline std::map<std::string, std::filesystem::path> index_images(const std::filesystem::path& dir) {
  std::map<std::string, std::filesystem::path> out;
  for (const auto& d : {dir, dir / "images"}) {
    if (!std::filesystem::is_directory(d)) continue;
    for (const auto& e : std::filesystem::directory_iterator(d))
      if (e.is_regular_file() && is_image_file(e.path())) out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

}  // namespace maskpipe
