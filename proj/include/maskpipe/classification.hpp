#pragma once

// Mask / no-mask decision: classifier backends, the binary loss with label
// smoothing, and the recorded training configuration.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskpipe/alignment.hpp"
#include "maskpipe/annotations.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

struct MaskScore {
  double p_mask = 0.0;
};

class ClassifierBackend {
 public:
  virtual ~ClassifierBackend() = default;
  virtual MaskScore score(const FaceChip& chip) = 0;
  virtual std::string name() const = 0;
  virtual bool thread_safe() const { return true; }
};

struct ClassifierConfig {
  double decision_threshold = 0.95;
  int input_width = 224;
  int input_height = 224;

  void validate() const {
    if (!(decision_threshold > 0 && decision_threshold < 1))
      throw ValidationError("decision_threshold must lie in (0,1)");
    if (input_width <= 0 || input_height <= 0) throw ValidationError("input size must be positive");
  }
};

inline void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = {{"decision_threshold", c.decision_threshold}, {"input_size", {c.input_width, c.input_height}}};
}

inline void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c = ClassifierConfig{};
  c.decision_threshold = j.value("decision_threshold", c.decision_threshold);
  if (j.contains("input_size")) {
    c.input_width = j.at("input_size").at(0).get<int>();
    c.input_height = j.at("input_size").at(1).get<int>();
  }
}

// Inclusive boundary: p_mask == threshold is Mask.
inline MaskLabel decide_label(MaskScore s, const ClassifierConfig& cfg) noexcept {
  return s.p_mask >= cfg.decision_threshold ? MaskLabel::Mask : MaskLabel::NoMask;
}

// ---------------------------------------------------------------------------
// Losses. Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before log.

inline constexpr double kProbClamp = 1e-12;

inline double clamp_probability(double p) noexcept { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Two-class target distribution.
struct LabelTarget {
  double t_nomask = 0.0;
  double t_mask = 0.0;

  friend bool operator==(const LabelTarget&, const LabelTarget&) = default;
};

// Uniform-mixture smoothing with K = 2: (1 - eps) * onehot + eps / 2.
inline LabelTarget smooth_labels(int y, double epsilon) {
  if (y != 0 && y != 1) throw ValidationError("label must be 0 or 1");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw ValidationError("epsilon must lie in [0,1)");
  const double off = epsilon / 2.0;
  const double on = 1.0 - off;
  return y == 1 ? LabelTarget{off, on} : LabelTarget{on, off};
}

// Cross-entropy of the binary prediction y_hat = P(mask) against a target distribution.
inline double smoothed_ce_loss(LabelTarget target, double y_hat) {
  const double p = clamp_probability(y_hat);
  return -(target.t_mask * std::log(p) + target.t_nomask * std::log(1.0 - p));
}

// Binary cross-entropy; y = 1 means Mask.
inline double bce_loss(int y, double y_hat) { return smoothed_ce_loss(smooth_labels(y, 0.0), y_hat); }

// d bce / d y_hat (unclamped interior).
inline double bce_loss_grad(int y, double y_hat) noexcept {
  return -static_cast<double>(y) / y_hat + static_cast<double>(1 - y) / (1.0 - y_hat);
}

// ---------------------------------------------------------------------------
// Training record. Nothing here trains; it carries the settings alongside models.

struct TrainingConfig {
  struct Optimizer {
    std::string name = "sgd";
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double base_lr = 1e-2;
    friend bool operator==(const Optimizer&, const Optimizer&) = default;
  };
  struct Augmentation {
    bool random_resized_crop = true;
    bool color_jitter = true;  // brightness, contrast, saturation
    bool pca_noise = true;
    double horizontal_flip_p = 0.5;
    friend bool operator==(const Augmentation&, const Augmentation&) = default;
  };

  Optimizer optimizer;
  int epochs = 80;
  std::vector<int> lr_drop_epochs{20, 40, 60};
  double lr_drop_factor = 0.1;
  int batch_size = 32;
  double dropout = 0.5;
  int input_width = 224;
  int input_height = 224;
  Augmentation augmentation;
  double label_smoothing = 0.0;
  // Samples the smoothing applies to; empty means every sample.
  std::vector<std::string> hard_example_ids;

  double learning_rate_at(int epoch) const {
    double lr = optimizer.base_lr;
    for (int drop : lr_drop_epochs)
      if (epoch >= drop) lr *= lr_drop_factor;
    return lr;
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = {{"optimizer",
        {{"name", c.optimizer.name},
         {"momentum", c.optimizer.momentum},
         {"weight_decay", c.optimizer.weight_decay},
         {"base_lr", c.optimizer.base_lr}}},
       {"epochs", c.epochs},
       {"lr_drop_epochs", c.lr_drop_epochs},
       {"lr_drop_factor", c.lr_drop_factor},
       {"batch_size", c.batch_size},
       {"dropout", c.dropout},
       {"input_size", {c.input_width, c.input_height}},
       {"augmentation",
        {{"random_resized_crop", c.augmentation.random_resized_crop},
         {"color_jitter", c.augmentation.color_jitter},
         {"pca_noise", c.augmentation.pca_noise},
         {"horizontal_flip_p", c.augmentation.horizontal_flip_p}}},
       {"label_smoothing", c.label_smoothing},
       {"hard_example_ids", c.hard_example_ids}};
}

inline void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c = TrainingConfig{};
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    c.optimizer.name = o.value("name", c.optimizer.name);
    c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
    c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
    c.optimizer.base_lr = o.value("base_lr", c.optimizer.base_lr);
  }
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("lr_drop_epochs")) j.at("lr_drop_epochs").get_to(c.lr_drop_epochs);
  c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.dropout = j.value("dropout", c.dropout);
  if (j.contains("input_size")) {
    c.input_width = j.at("input_size").at(0).get<int>();
    c.input_height = j.at("input_size").at(1).get<int>();
  }
  if (j.contains("augmentation")) {
    const auto& a = j.at("augmentation");
    c.augmentation.random_resized_crop = a.value("random_resized_crop", c.augmentation.random_resized_crop);
    c.augmentation.color_jitter = a.value("color_jitter", c.augmentation.color_jitter);
    c.augmentation.pca_noise = a.value("pca_noise", c.augmentation.pca_noise);
    c.augmentation.horizontal_flip_p = a.value("horizontal_flip_p", c.augmentation.horizontal_flip_p);
  }
  c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
  if (j.contains("hard_example_ids")) j.at("hard_example_ids").get_to(c.hard_example_ids);
}

// ---------------------------------------------------------------------------
// Backends

// Weight-free stand-in scorer. Looks only at rows from start_row_fraction * H
// down: a covered lower face tends to be flat (low gradient energy) and either
// weakly or strongly saturated relative to skin. Makes no accuracy claim.
class HeuristicBackend final : public ClassifierBackend {
 public:
  // Default start row is the template nose height, so an occluded upper face is never read.
  explicit HeuristicBackend(double start_row_fraction = 71.74 / 112.0)
      : start_fraction_(std::clamp(start_row_fraction, 0.0, 1.0)) {}

  MaskScore score(const FaceChip& chip) override {
    const Image& img = chip.pixels;
    if (img.empty()) return {0.0};
    const int start = std::min(img.height() - 1, static_cast<int>(std::lround(start_fraction_ * img.height())));
    double sat_sum = 0.0, grad_sum = 0.0;
    std::size_t n = 0, ng = 0;
    for (int y = start; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        int mx = 0, mn = 255, luma = 0;
        for (int c = 0; c < Image::kChannels; ++c) {
          mx = std::max<int>(mx, img.at(x, y, c));
          mn = std::min<int>(mn, img.at(x, y, c));
          luma += img.at(x, y, c);
        }
        sat_sum += mx ? static_cast<double>(mx - mn) / mx : 0.0;
        ++n;
        if (x > 0) {
          int prev = 0;
          for (int c = 0; c < Image::kChannels; ++c) prev += img.at(x - 1, y, c);
          grad_sum += std::abs(luma - prev) / (3.0 * 255.0);
          ++ng;
        }
      }
    }
    const double saturation = sat_sum / n;
    const double texture = ng ? grad_sum / ng : 0.0;
    // Skin saturation sits around 0.2-0.5; distance from that band plus flatness reads as "mask".
    const double skin_distance = std::max(0.0, 0.2 - saturation) + std::max(0.0, saturation - 0.5);
    const double z = 8.0 * skin_distance - 25.0 * texture + 0.5;
    return {1.0 / (1.0 + std::exp(-z))};
  }

  std::string name() const override { return "heuristic"; }

 private:
  double start_fraction_;
};

// Scores read from a JSON fixture {frame_id: [p_mask per post-NMS detection index]}.
class ScriptedClassifier final : public ClassifierBackend {
 public:
  explicit ScriptedClassifier(const nlohmann::json& fixture) {
    for (const auto& [frame_id, scores] : fixture.items()) scores.get_to(script_[frame_id]);
  }

  static ScriptedClassifier from_file(const std::filesystem::path& path) {
    try {
      return ScriptedClassifier(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }

  MaskScore score(const FaceChip& chip) override {
    auto it = script_.find(chip.provenance.frame_id);
    if (it == script_.end() || chip.provenance.detection_index >= it->second.size())
      throw NotFoundError("no scripted score for " + chip.provenance.frame_id + " detection " +
                          std::to_string(chip.provenance.detection_index));
    return {it->second[chip.provenance.detection_index]};
  }

  std::string name() const override { return "scripted"; }

 private:
  std::map<std::string, std::vector<double>> script_;
};

}  // namespace maskpipe
