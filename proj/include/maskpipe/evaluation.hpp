#pragma once

// Detection scoring: class-aware matching, precision / recall / F1, VOC
// all-point-interpolated AP and mAP.

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "maskpipe/annotations.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/geometry.hpp"

namespace maskpipe {

inline constexpr std::array<MaskLabel, 2> kAllLabels{MaskLabel::Mask, MaskLabel::NoMask};

inline constexpr std::size_t class_index(MaskLabel l) noexcept { return l == MaskLabel::Mask ? 0 : 1; }

struct Prediction {
  std::string frame_id;
  BoundingBox box;
  MaskLabel label = MaskLabel::NoMask;
  double confidence = 0.0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct ClassMatches {
  // Predictions of this class in matching order, with the ground truth each consumed.
  std::vector<std::pair<Prediction, std::optional<FaceId>>> pairs;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct MatchResult {
  std::array<ClassMatches, 2> classes;  // indexed by class_index()

  const ClassMatches& operator[](MaskLabel l) const { return classes[class_index(l)]; }
  ClassMatches& operator[](MaskLabel l) { return classes[class_index(l)]; }
};

// Greedy, class-aware matching of one frame's predictions to its ground truth.
// Per class: predictions by confidence desc (ties: higher best-IOU first, then
// input order); each takes the unmatched same-class gt of highest IOU when that
// IOU >= iou_threshold.
inline MatchResult match_detections(const std::vector<Prediction>& preds,
                                    const std::vector<GroundTruthFace>& gts, double iou_threshold = 0.5) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw UsageError("iou_threshold must lie in (0,1)");
  std::optional<std::string_view> frame;
  auto same_frame = [&](std::string_view id) {
    if (!frame) frame = id;
    else if (*frame != id) throw UsageError("match_detections given mixed frame ids: " +
                                             std::string(*frame) + " and " + std::string(id));
  };
  for (const auto& p : preds) same_frame(p.frame_id);
  for (const auto& g : gts) same_frame(g.id.frame_id);

  MatchResult result;
  for (MaskLabel cls : kAllLabels) {
    std::vector<std::size_t> gt_idx;
    for (std::size_t i = 0; i < gts.size(); ++i)
      if (gts[i].label == cls) gt_idx.push_back(i);

    struct Ranked {
      std::size_t index;
      double best_iou;
    };
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (preds[i].label != cls) continue;
      double best = 0.0;
      for (std::size_t g : gt_idx) best = std::max(best, iou(preds[i].box, gts[g].box));
      ranked.push_back({i, best});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [&](const Ranked& a, const Ranked& b) {
      if (preds[a.index].confidence != preds[b.index].confidence)
        return preds[a.index].confidence > preds[b.index].confidence;
      return a.best_iou > b.best_iou;
    });

    ClassMatches& out = result[cls];
    std::vector<bool> used(gt_idx.size(), false);
    for (const auto& r : ranked) {
      const Prediction& p = preds[r.index];
      double best = -1.0;
      std::size_t best_k = 0;
      for (std::size_t k = 0; k < gt_idx.size(); ++k) {
        if (used[k]) continue;
        const double v = iou(p.box, gts[gt_idx[k]].box);
        if (v > best) {
          best = v;
          best_k = k;
        }
      }
      if (best >= iou_threshold) {
        used[best_k] = true;
        out.pairs.emplace_back(p, gts[gt_idx[best_k]].id);
        ++out.tp;
      } else {
        out.pairs.emplace_back(p, std::nullopt);
        ++out.fp;
      }
    }
    out.fn = gt_idx.size() - out.tp;
  }
  return result;
}

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Empty denominators yield 0 rather than NaN.
inline PrecisionRecallF1 precision_recall_f1(std::size_t tp, std::size_t fp, std::size_t fn) noexcept {
  PrecisionRecallF1 r;
  r.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  r.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  r.f1 = r.precision + r.recall > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

inline std::array<PrecisionRecallF1, 2> precision_recall_f1(const MatchResult& m) noexcept {
  return {precision_recall_f1(m.classes[0].tp, m.classes[0].fp, m.classes[0].fn),
          precision_recall_f1(m.classes[1].tp, m.classes[1].fp, m.classes[1].fn)};
}

// All-point interpolated AP (VOC 2010+) for one class. Predictions are ranked
// by confidence (stable for ties) across all frames and matched greedily
// against the gt pool of their own frame. Returns nullopt when gts is empty.
inline std::optional<double> average_precision(const std::vector<Prediction>& preds,
                                               const std::vector<GroundTruthFace>& gts,
                                               double iou_threshold = 0.5) {
  if (gts.empty()) return std::nullopt;
  std::map<std::string_view, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < gts.size(); ++i) pools[gts[i].id.frame_id].push_back(i);

  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].confidence > preds[b].confidence; });

  std::vector<bool> used(gts.size(), false);
  std::vector<double> recall, precision;
  recall.reserve(order.size());
  precision.reserve(order.size());
  std::size_t tp = 0, fp = 0;
  for (std::size_t i : order) {
    const Prediction& p = preds[i];
    double best = -1.0;
    std::size_t best_g = 0;
    if (auto pool = pools.find(p.frame_id); pool != pools.end()) {
      for (std::size_t g : pool->second) {
        if (used[g]) continue;
        const double v = iou(p.box, gts[g].box);
        if (v > best) {
          best = v;
          best_g = g;
        }
      }
    }
    if (best >= iou_threshold) {
      used[best_g] = true;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / static_cast<double>(gts.size()));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
  }

  // Sentinels, then the monotone precision envelope from the right.
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);

  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Reports

struct ClassReport {
  std::size_t n_gt = 0;
  std::size_t n_pred = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> ap;  // nullopt: class has no ground truth

  friend bool operator==(const ClassReport&, const ClassReport&) = default;
};

struct EvalReport {
  double iou_threshold = 0.5;
  std::array<ClassReport, 2> classes;  // indexed by class_index()
  std::optional<double> map;           // mean of the defined class APs
  std::vector<std::string> warnings;

  const ClassReport& operator[](MaskLabel l) const { return classes[class_index(l)]; }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// P/R/F1 use the summed per-frame match counts; AP uses the global ranking.
inline EvalReport evaluate(const Dataset& gts, const std::vector<Prediction>& preds,
                           double iou_threshold = 0.5) {
  std::map<std::string_view, std::vector<const Prediction*>> by_frame;
  std::set<std::string> unknown;
  for (const auto& p : preds) {
    if (!gts.find(p.frame_id)) unknown.insert(p.frame_id);
    else by_frame[p.frame_id].push_back(&p);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
    throw UsageError("predictions reference frames missing from the dataset: " + list);
  }

  EvalReport report;
  report.iou_threshold = iou_threshold;
  std::array<std::vector<Prediction>, 2> class_preds;
  std::array<std::vector<GroundTruthFace>, 2> class_gts;
  for (const auto& frame : gts.frames) {
    std::vector<Prediction> frame_preds;
    if (auto it = by_frame.find(frame.frame_id); it != by_frame.end())
      for (const Prediction* p : it->second) frame_preds.push_back(*p);
    const MatchResult m = match_detections(frame_preds, frame.faces, iou_threshold);
    for (MaskLabel cls : kAllLabels) {
      auto& c = report.classes[class_index(cls)];
      c.tp += m[cls].tp;
      c.fp += m[cls].fp;
      c.fn += m[cls].fn;
    }
    for (const auto& f : frame.faces) class_gts[class_index(f.label)].push_back(f);
    for (auto& p : frame_preds) class_preds[class_index(p.label)].push_back(std::move(p));
  }

  double ap_sum = 0.0;
  int ap_count = 0;
  for (MaskLabel cls : kAllLabels) {
    const std::size_t k = class_index(cls);
    auto& c = report.classes[k];
    c.n_gt = class_gts[k].size();
    c.n_pred = class_preds[k].size();
    const auto prf = precision_recall_f1(c.tp, c.fp, c.fn);
    c.precision = prf.precision;
    c.recall = prf.recall;
    c.f1 = prf.f1;
    c.ap = average_precision(class_preds[k], class_gts[k], iou_threshold);
    if (c.ap) {
      ap_sum += *c.ap;
      ++ap_count;
    } else {
      report.warnings.push_back("class " + std::string(to_string(cls)) +
                                " has no ground truth; AP undefined and excluded from mAP");
    }
  }
  if (ap_count) report.map = ap_sum / ap_count;
  return report;
}

inline nlohmann::json to_json_value(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::object();
  for (MaskLabel cls : kAllLabels) {
    const auto& c = r[cls];
    classes[std::string(to_string(cls))] = {
        {"n_gt", c.n_gt},           {"n_pred", c.n_pred},       {"tp", c.tp},
        {"fp", c.fp},               {"fn", c.fn},               {"precision", c.precision},
        {"recall", c.recall},       {"f1", c.f1},
        {"ap", c.ap ? nlohmann::json(*c.ap) : nlohmann::json(nullptr)}};
  }
  return {{"iou_threshold", r.iou_threshold},
          {"classes", classes},
          {"mAP", r.map ? nlohmann::json(*r.map) : nlohmann::json(nullptr)},
          {"warnings", r.warnings}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.iou_threshold = j.at("iou_threshold").get<double>();
  for (MaskLabel cls : kAllLabels) {
    const auto& c = j.at("classes").at(std::string(to_string(cls)));
    auto& out = r.classes[class_index(cls)];
    c.at("n_gt").get_to(out.n_gt);
    c.at("n_pred").get_to(out.n_pred);
    c.at("tp").get_to(out.tp);
    c.at("fp").get_to(out.fp);
    c.at("fn").get_to(out.fn);
    c.at("precision").get_to(out.precision);
    c.at("recall").get_to(out.recall);
    c.at("f1").get_to(out.f1);
    if (!c.at("ap").is_null()) out.ap = c.at("ap").get<double>();
  }
  if (!j.at("mAP").is_null()) r.map = j.at("mAP").get<double>();
  j.at("warnings").get_to(r.warnings);
  return r;
}

// Fixed-width table, percentages: No-mask P/R/F1, Mask P/R/F1, mAP.
inline std::string eval_report_table(const EvalReport& r) {
  auto pct = [](std::optional<double> v) {
    if (!v) return std::string("-");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v * 100.0);
    return std::string(buf);
  };
  auto cell = [](const std::string& s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%11s", s.c_str());
    return std::string(buf);
  };
  const auto& nm = r[MaskLabel::NoMask];
  const auto& m = r[MaskLabel::Mask];
  std::string out;
  out += cell("No-mask") + cell("") + cell("") + cell("Mask") + cell("") + cell("") + cell("") + "\n";
  out += cell("Precision") + cell("Recall") + cell("F1-score") + cell("Precision") + cell("Recall") +
         cell("F1-score") + cell("mAP") + "\n";
  out += cell(pct(nm.precision)) + cell(pct(nm.recall)) + cell(pct(nm.f1)) + cell(pct(m.precision)) +
         cell(pct(m.recall)) + cell(pct(m.f1)) + cell(pct(r.map)) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Predictions file: JSON lines {frame_id, box, label, confidence}

inline nlohmann::json prediction_to_json(const Prediction& p) {
  return {{"frame_id", p.frame_id},
          {"box", {p.box.x_min, p.box.y_min, p.box.x_max, p.box.y_max}},
          {"label", to_string(p.label)},
          {"confidence", p.confidence}};
}

inline Prediction prediction_from_json(const nlohmann::json& j) {
  Prediction p;
  p.frame_id = j.at("frame_id").get<std::string>();
  const auto& b = j.at("box");
  if (!b.is_array() || b.size() != 4) throw ParseError("box must be [x0,y0,x1,y1]");
  p.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
  if (!p.box.valid()) throw ValidationError("prediction box is degenerate");
  p.label = parse_mask_label(j.at("label").get<std::string>());
  p.confidence = j.at("confidence").get<double>();
  if (!(p.confidence >= 0.0 && p.confidence <= 1.0)) throw ValidationError("confidence outside [0,1]");
  return p;
}

inline std::string write_predictions_jsonl(const std::vector<Prediction>& preds) {
  std::string out;
  for (const auto& p : preds) {
    out += prediction_to_json(p).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Prediction> parse_predictions_jsonl(std::string_view text) {
  std::vector<Prediction> preds;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      preds.push_back(prediction_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad prediction: ") + e.what(), line_no);
    } catch (const Error& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return preds;
}

}  // namespace maskpipe
