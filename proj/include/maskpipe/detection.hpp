#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/geometry.hpp"
#include "maskpipe/image.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

struct Detection {
  BoundingBox box;
  Landmarks5 landmarks;
  double score = 0.0;
  int scale_origin = 0;  // long-side size of the pass that produced it

  friend bool operator==(const Detection&, const Detection&) = default;
};

// A face detector. detect_raw resizes the image so its long side equals
// target_scale and returns boxes and landmarks in the original image frame.
// Implementations must be deterministic for identical inputs.
class DetectorBackend {
 public:
  virtual ~DetectorBackend() = default;
  virtual std::vector<Detection> detect_raw(const Frame& frame, int target_scale) = 0;
  virtual std::string name() const = 0;
  // false: the pipeline serialises calls into this backend.
  virtual bool thread_safe() const { return true; }
};

struct DetectionConfig {
  std::vector<int> scales{320, 640, 960};
  double score_threshold = 0.8;  // detector confidence, not an IOU
  double nms_iou = 0.5;

  void validate() const {
    if (scales.empty()) throw ValidationError("detection scales must not be empty");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      if (scales[i] <= 0) throw ValidationError("detection scales must be positive");
      if (i && scales[i] <= scales[i - 1])
        throw ValidationError("detection scales must be strictly increasing");
    }
    if (!(score_threshold > 0 && score_threshold < 1))
      throw ValidationError("score_threshold must lie in (0,1)");
    if (!(nms_iou > 0 && nms_iou < 1)) throw ValidationError("nms_iou must lie in (0,1)");
  }
};

inline void to_json(nlohmann::json& j, const DetectionConfig& c) {
  j = {{"scales", c.scales}, {"score_threshold", c.score_threshold}, {"nms_iou", c.nms_iou}};
}

inline void from_json(const nlohmann::json& j, DetectionConfig& c) {
  c = DetectionConfig{};
  if (j.contains("scales")) j.at("scales").get_to(c.scales);
  c.score_threshold = j.value("score_threshold", c.score_threshold);
  c.nms_iou = j.value("nms_iou", c.nms_iou);
}

// Greedy NMS. Order: score desc, then box area asc, then input position.
// A detection is dropped when its IOU with an already kept one exceeds
// iou_threshold. Output is in kept (score) order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return dets[a].box.area() < dets[b].box.area();
  });

  std::vector<bool> suppressed(dets.size(), false);
  std::vector<Detection> kept;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[i]) continue;
    const Detection& top = dets[order[i]];
    kept.push_back(top);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      if (!suppressed[j] && iou(top.box, dets[order[j]].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

// Runs the backend once per configured scale (in scale order), pools the
// results, drops those under the score threshold and applies one NMS pass.
inline std::vector<Detection> detect_multiscale(const Frame& frame, DetectorBackend& backend,
                                                const DetectionConfig& config) {
  if (frame.image.empty()) throw PipelineError("detect", "frame " + frame.frame_id + " has no image");
  config.validate();
  std::vector<Detection> pooled;
  for (int scale : config.scales) {
    std::vector<Detection> raw;
    try {
      raw = backend.detect_raw(frame, scale);
    } catch (const std::exception& e) {
      throw PipelineError("detect", "backend '" + backend.name() + "' failed at scale " +
                                        std::to_string(scale) + " on frame " + frame.frame_id +
                                        ": " + e.what());
    }
    for (auto& d : raw) {
      if (!d.box.valid() || !(d.score >= 0.0 && d.score <= 1.0))
        throw PipelineError("detect", "backend '" + backend.name() + "' returned an invalid detection at scale " +
                                          std::to_string(scale) + " on frame " + frame.frame_id);
      d.scale_origin = scale;
      if (d.score >= config.score_threshold) pooled.push_back(d);
    }
  }
  return nms(pooled, config.nms_iou);
}

// ---------------------------------------------------------------------------
// Scripted backend: detections read from a JSON fixture
//   {frame_id: {scale: [{box:[x0,y0,x1,y1], landmarks:[[x,y] x5], score: s}]}}
// A scale entry of the form {"error": "message"} makes that pass throw.

inline Detection detection_from_json(const nlohmann::json& j) {
  Detection d;
  const auto& b = j.at("box");
  if (!b.is_array() || b.size() != 4) throw ParseError("box must be [x0,y0,x1,y1]");
  d.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (j.contains("landmarks")) {
    const auto& lm = j.at("landmarks");
    if (!lm.is_array() || lm.size() != 5) throw ParseError("landmarks must hold 5 points");
    for (std::size_t i = 0; i < 5; ++i) d.landmarks[i] = {lm[i].at(0).get<double>(), lm[i].at(1).get<double>()};
  }
  d.score = j.at("score").get<double>();
  return d;
}

inline nlohmann::json detection_to_json(const Detection& d) {
  nlohmann::json lm = nlohmann::json::array();
  for (const auto& p : d.landmarks.points) lm.push_back({p.x, p.y});
  return {{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}},
          {"landmarks", lm},
          {"score", d.score}};
}

class ScriptedBackend final : public DetectorBackend {
 public:
  explicit ScriptedBackend(const nlohmann::json& fixture) {
    for (const auto& [frame_id, scales] : fixture.items()) {
      auto& per_scale = script_[frame_id];
      for (const auto& [scale_text, entry] : scales.items()) {
        const int scale = std::stoi(scale_text);
        Pass pass;
        if (entry.is_object()) {
          pass.error = entry.at("error").get<std::string>();
        } else {
          for (const auto& d : entry) pass.detections.push_back(detection_from_json(d));
        }
        per_scale[scale] = std::move(pass);
      }
    }
  }

  static ScriptedBackend from_file(const std::filesystem::path& path) {
    try {
      return ScriptedBackend(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  std::vector<Detection> detect_raw(const Frame& frame, int target_scale) override {
    auto f = script_.find(frame.frame_id);
    if (f == script_.end()) return {};
    auto s = f->second.find(target_scale);
    if (s == f->second.end()) return {};
    if (s->second.error) throw Error(*s->second.error);
    return s->second.detections;
  }

  std::string name() const override { return "scripted"; }

 private:
  struct Pass {
    std::vector<Detection> detections;
    std::optional<std::string> error;
  };
  std::map<std::string, std::map<int, Pass>> script_;
};

}  // namespace maskpipe
