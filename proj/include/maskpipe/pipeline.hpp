#pragma once

// detect -> align -> classify orchestration, frame-stream processing and
// mask-wearing-rate aggregation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "maskpipe/alignment.hpp"
#include "maskpipe/annotations.hpp"
#include "maskpipe/classification.hpp"
#include "maskpipe/detection.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/evaluation.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

enum class AlignmentMode { FivePoint, EyesOnly };
enum class UpperHalfMode { Off, Noise, Zeros };
enum class ConfidenceMode { Composite, DetectorOnly };

struct BackendSpec {
  std::string type;
  std::filesystem::path fixture;  // scripted backends only
};

struct PipelineConfig {
  DetectionConfig detection;
  ClassifierConfig classifier;
  AlignmentMode alignment = AlignmentMode::FivePoint;
  UpperHalfMode upper_half = UpperHalfMode::Off;
  ConfidenceMode confidence = ConfidenceMode::Composite;
  int chip_width = 224;
  int chip_height = 224;
  std::uint64_t seed = 0;
  int workers = 1;
  std::optional<std::filesystem::path> template_path;
  BackendSpec detector{"scripted", {}};
  BackendSpec classifier_backend{"heuristic", {}};

  void validate() const {
    detection.validate();
    classifier.validate();
    if (chip_width <= 0 || chip_height <= 0) throw ValidationError("chip size must be positive");
    if (workers <= 0) throw ValidationError("workers must be positive");
  }
};

namespace detail {

template <typename E, std::size_t N>
E enum_from(const std::string& s, const std::array<std::pair<const char*, E>, N>& table, const char* what) {
  for (const auto& [name, value] : table)
    if (s == name) return value;
  throw ParseError(std::string("unknown ") + what + " '" + s + "'");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<const char*, E>, N>& table) {
  for (const auto& [name, value] : table)
    if (v == value) return name;
  return {};
}

inline constexpr std::array<std::pair<const char*, AlignmentMode>, 2> kAlignmentNames{
    {{"five_point", AlignmentMode::FivePoint}, {"eyes_only", AlignmentMode::EyesOnly}}};
inline constexpr std::array<std::pair<const char*, UpperHalfMode>, 3> kUpperHalfNames{
    {{"off", UpperHalfMode::Off}, {"noise", UpperHalfMode::Noise}, {"zeros", UpperHalfMode::Zeros}}};
inline constexpr std::array<std::pair<const char*, ConfidenceMode>, 2> kConfidenceNames{
    {{"composite", ConfidenceMode::Composite}, {"detector", ConfidenceMode::DetectorOnly}}};

}  // namespace detail

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j = {{"detection", c.detection},
                      {"classifier", c.classifier},
                      {"alignment", detail::enum_name(c.alignment, detail::kAlignmentNames)},
                      {"upper_half", detail::enum_name(c.upper_half, detail::kUpperHalfNames)},
                      {"confidence", detail::enum_name(c.confidence, detail::kConfidenceNames)},
                      {"chip_size", {c.chip_width, c.chip_height}},
                      {"seed", c.seed},
                      {"workers", c.workers},
                      {"detector_backend", {{"type", c.detector.type}, {"fixture", c.detector.fixture.string()}}},
                      {"classifier_backend",
                       {{"type", c.classifier_backend.type}, {"fixture", c.classifier_backend.fixture.string()}}}};
  if (c.template_path) j["template"] = c.template_path->string();
  return j;
}

// Relative paths in the document resolve against base_dir.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j,
                                                const std::filesystem::path& base_dir = {}) {
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  };
  PipelineConfig c;
  try {
    if (j.contains("detection")) j.at("detection").get_to(c.detection);
    if (j.contains("classifier")) j.at("classifier").get_to(c.classifier);
    c.chip_width = c.classifier.input_width;
    c.chip_height = c.classifier.input_height;
    if (j.contains("alignment"))
      c.alignment = detail::enum_from(j.at("alignment").get<std::string>(), detail::kAlignmentNames, "alignment");
    if (j.contains("upper_half"))
      c.upper_half = detail::enum_from(j.at("upper_half").get<std::string>(), detail::kUpperHalfNames, "upper_half");
    if (j.contains("confidence"))
      c.confidence = detail::enum_from(j.at("confidence").get<std::string>(), detail::kConfidenceNames, "confidence");
    if (j.contains("chip_size")) {
      c.chip_width = j.at("chip_size").at(0).get<int>();
      c.chip_height = j.at("chip_size").at(1).get<int>();
    }
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    if (j.contains("template")) c.template_path = resolve(j.at("template").get<std::string>());
    if (j.contains("detector_backend")) {
      const auto& b = j.at("detector_backend");
      c.detector = {b.value("type", std::string("scripted")), resolve(b.value("fixture", std::string()))};
    }
    if (j.contains("classifier_backend")) {
      const auto& b = j.at("classifier_backend");
      c.classifier_backend = {b.value("type", std::string("heuristic")), resolve(b.value("fixture", std::string()))};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

// Reads path, or $MASKPIPE_CONFIG when path is empty, or returns defaults.
inline PipelineConfig load_pipeline_config(std::filesystem::path path) {
  if (path.empty()) {
    if (const char* env = std::getenv("MASKPIPE_CONFIG"); env && *env) path = env;
  }
  if (path.empty()) return PipelineConfig{};
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j, path.parent_path());
}

inline std::unique_ptr<DetectorBackend> make_detector(const BackendSpec& spec) {
  if (spec.type == "scripted") return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(spec.fixture));
  throw UsageError("unknown detector backend '" + spec.type + "'");
}

inline std::unique_ptr<ClassifierBackend> make_classifier(const BackendSpec& spec) {
  if (spec.type == "heuristic") return std::make_unique<HeuristicBackend>();
  if (spec.type == "scripted")
    return std::make_unique<ScriptedClassifier>(ScriptedClassifier::from_file(spec.fixture));
  throw UsageError("unknown classifier backend '" + spec.type + "'");
}

// ---------------------------------------------------------------------------

struct MaskedFaceDetection {
  Detection detection;
  std::size_t detection_index = 0;  // position in the post-NMS list
  MaskLabel label = MaskLabel::NoMask;
  double p_mask = 0.0;
  double confidence = 0.0;

  friend bool operator==(const MaskedFaceDetection&, const MaskedFaceDetection&) = default;
};

struct PipelineOutput {
  std::vector<MaskedFaceDetection> faces;
  std::size_t n_detections = 0;
  std::size_t n_skipped = 0;
  std::vector<std::string> warnings;
};

namespace detail {

// splitmix64 finaliser.
inline std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

// Per-face noise seed: independent of worker scheduling.
inline std::uint64_t face_seed(std::uint64_t seed, std::string_view frame_id, std::size_t index) noexcept {
  return mix64(mix64(seed ^ fnv1a(frame_id)) + index);
}

}  // namespace detail

// Runs one frame through the pipeline. A face whose alignment is degenerate is
// skipped with a warning; backend failures abort with a stage-tagged error.
inline PipelineOutput run_pipeline(const Frame& frame, DetectorBackend& detector, ClassifierBackend& classifier,
                                   const PipelineConfig& cfg, const AlignmentTemplate* tmpl_override = nullptr) {
  const AlignmentTemplate tmpl = tmpl_override ? tmpl_override->resized(cfg.chip_width, cfg.chip_height)
                                               : AlignmentTemplate::for_size(cfg.chip_width, cfg.chip_height);
  PipelineOutput out;
  const auto dets = detect_multiscale(frame, detector, cfg.detection);
  out.n_detections = dets.size();
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const Detection& d = dets[i];
    SimilarityTransform t;
    try {
      if (!d.landmarks.finite()) throw GeometryError("non-finite landmarks");
      t = cfg.alignment == AlignmentMode::FivePoint
              ? estimate_similarity(d.landmarks, tmpl)
              : estimate_similarity_eyes(d.landmarks[Landmarks5::kLeftEye], d.landmarks[Landmarks5::kRightEye], tmpl);
    } catch (const GeometryError& e) {
      ++out.n_skipped;
      out.warnings.push_back("[align] frame " + frame.frame_id + " detection " + std::to_string(i) +
                             " skipped: " + e.what());
      continue;
    }
    FaceChip chip = warp_crop(frame.image, t, cfg.chip_width, cfg.chip_height, {frame.frame_id, i, t});
    if (cfg.upper_half != UpperHalfMode::Off) {
      chip = mask_upper_half(std::move(chip), nose_row(d.landmarks, t, cfg.chip_height),
                             cfg.upper_half == UpperHalfMode::Zeros ? OcclusionMode::Zeros : OcclusionMode::Noise,
                             detail::face_seed(cfg.seed, frame.frame_id, i));
    }
    MaskScore s;
    try {
      s = classifier.score(chip);
    } catch (const std::exception& e) {
      throw PipelineError("classify", "backend '" + classifier.name() + "' failed on frame " + frame.frame_id +
                                          " detection " + std::to_string(i) + ": " + e.what());
    }
    if (!(s.p_mask >= 0.0 && s.p_mask <= 1.0))
      throw PipelineError("classify", "backend '" + classifier.name() + "' returned p_mask outside [0,1]");
    MaskedFaceDetection m{d, i, decide_label(s, cfg.classifier), s.p_mask, d.score};
    if (cfg.confidence == ConfidenceMode::Composite)
      m.confidence = d.score * (m.label == MaskLabel::Mask ? s.p_mask : 1.0 - s.p_mask);
    out.faces.push_back(m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frame streams

struct FrameInput {
  std::string frame_id;
  std::filesystem::path path;
  double timestamp = 0.0;
};

struct FrameResult {
  std::string frame_id;
  double timestamp = 0.0;
  std::vector<MaskedFaceDetection> faces;
  std::size_t n_skipped = 0;
  std::vector<std::string> warnings;
};

// A still-image directory (frame_id = file stem, sorted, timestamp = position),
// or a frame-sequence directory with manifest.csv lines "frame_id,timestamp".
inline std::vector<FrameInput> list_frames(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw NotFoundError("frame directory not found: " + dir.string());
  std::map<std::string, fs::path> images;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_image_file(e.path())) images.emplace(e.path().stem().string(), e.path());

  std::vector<FrameInput> frames;
  const auto manifest = dir / "manifest.csv";
  if (!fs::exists(manifest)) {
    double t = 0.0;
    for (const auto& [stem, path] : images) frames.push_back({stem, path, t++});
    return frames;
  }
  std::istringstream in(read_file(manifest));
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#' || (line_no == 1 && line.rfind("frame_id", 0) == 0)) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw ParseError("manifest.csv: expected 'frame_id,timestamp'", line_no);
    const std::string id = line.substr(0, comma);
    double ts = 0.0;
    try {
      ts = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw ParseError("manifest.csv: bad timestamp", line_no);
    }
    auto it = images.find(id);
    if (it == images.end()) throw NotFoundError("manifest.csv line " + std::to_string(line_no) + ": no image for " + id);
    frames.push_back({id, it->second, ts});
  }
  return frames;
}

namespace detail {

// Serialises calls into a backend that declares itself single-threaded.
class GuardedDetector final : public DetectorBackend {
 public:
  explicit GuardedDetector(DetectorBackend& inner) : inner_(inner) {}
  std::vector<Detection> detect_raw(const Frame& f, int s) override {
    if (inner_.thread_safe()) return inner_.detect_raw(f, s);
    std::lock_guard lock(mu_);
    return inner_.detect_raw(f, s);
  }
  std::string name() const override { return inner_.name(); }

 private:
  DetectorBackend& inner_;
  std::mutex mu_;
};

class GuardedClassifier final : public ClassifierBackend {
 public:
  explicit GuardedClassifier(ClassifierBackend& inner) : inner_(inner) {}
  MaskScore score(const FaceChip& chip) override {
    if (inner_.thread_safe()) return inner_.score(chip);
    std::lock_guard lock(mu_);
    return inner_.score(chip);
  }
  std::string name() const override { return inner_.name(); }

 private:
  ClassifierBackend& inner_;
  std::mutex mu_;
};

}  // namespace detail

// Processes frames on cfg.workers threads. Results come back in input order;
// on failure the error of the lowest-indexed failing frame is rethrown.
inline std::vector<FrameResult> process_frames(const std::vector<FrameInput>& inputs, DetectorBackend& detector,
                                               ClassifierBackend& classifier, const PipelineConfig& cfg) {
  cfg.validate();
  std::optional<AlignmentTemplate> tmpl;
  if (cfg.template_path) tmpl = load_alignment_template(*cfg.template_path);
  detail::GuardedDetector det(detector);
  detail::GuardedClassifier cls(classifier);

  std::vector<FrameResult> results(inputs.size());
  std::vector<std::exception_ptr> errors(inputs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < inputs.size();) {
      try {
        const FrameInput& in = inputs[i];
        Frame frame{in.frame_id, load_image(in.path), in.timestamp};
        auto out = run_pipeline(frame, det, cls, cfg, tmpl ? &*tmpl : nullptr);
        results[i] = {in.frame_id, in.timestamp, std::move(out.faces), out.n_skipped, std::move(out.warnings)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const int n = std::min<int>(cfg.workers, static_cast<int>(std::max<std::size_t>(inputs.size(), 1)));
  if (n <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < n; ++w) pool.emplace_back(work);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

inline std::vector<Prediction> to_predictions(const std::vector<FrameResult>& results) {
  std::vector<Prediction> preds;
  for (const auto& r : results)
    for (const auto& f : r.faces) preds.push_back({r.frame_id, f.detection.box, f.label, f.confidence});
  return preds;
}

// ---------------------------------------------------------------------------
// Mask-wearing rate

struct MaskRatePoint {
  double window_start = 0.0;
  double window_end = 0.0;
  std::size_t n_faces = 0;
  std::size_t n_masked = 0;
  std::optional<double> rate;  // nullopt for a window with no faces

  friend bool operator==(const MaskRatePoint&, const MaskRatePoint&) = default;
};

// Tumbling windows of window_length seconds starting at the first timestamp.
// Counts are per detected face. Empty windows between busy ones are emitted.
inline std::vector<MaskRatePoint> aggregate_mask_rate(const std::vector<FrameResult>& stream, double window_length) {
  if (!(window_length > 0)) throw UsageError("window length must be positive");
  std::vector<MaskRatePoint> points;
  if (stream.empty()) return points;
  const double t0 = stream.front().timestamp;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const auto& f = stream[i];
    if (!std::isfinite(f.timestamp)) throw StreamError("frame " + f.frame_id + " has a non-finite timestamp");
    if (i && f.timestamp < stream[i - 1].timestamp)
      throw StreamError("frame " + f.frame_id + " is out of timestamp order");
    const auto k = static_cast<std::size_t>(std::floor((f.timestamp - t0) / window_length));
    while (points.size() <= k) {
      const double start = t0 + static_cast<double>(points.size()) * window_length;
      points.push_back({start, start + window_length, 0, 0, std::nullopt});
    }
    points[k].n_faces += f.faces.size();
    for (const auto& face : f.faces)
      if (face.label == MaskLabel::Mask) ++points[k].n_masked;
  }
  for (auto& p : points)
    if (p.n_faces) p.rate = static_cast<double>(p.n_masked) / static_cast<double>(p.n_faces);
  return points;
}

// ---------------------------------------------------------------------------
// Export

enum class ExportFormat { Json, Csv, Table };

inline ExportFormat parse_export_format(std::string_view s) {
  if (s == "json") return ExportFormat::Json;
  if (s == "csv") return ExportFormat::Csv;
  if (s == "table") return ExportFormat::Table;
  throw UsageError("unknown export format '" + std::string(s) + "'");
}

namespace detail {
// Shortest text that parses back to the same double.
inline std::string num(double v) { return nlohmann::json(v).dump(); }
inline std::string num(std::optional<double> v) { return v ? num(*v) : std::string(); }
}  // namespace detail

inline constexpr std::string_view kRateCsvHeader = "window_start,window_end,n_faces,n_masked,rate";
inline constexpr std::string_view kEvalCsvHeader = "class,n_gt,n_pred,tp,fp,fn,precision,recall,f1,ap";

// CSV columns: window_start,window_end,n_faces,n_masked,rate (rate blank when empty).
inline std::string export_report(const std::vector<MaskRatePoint>& points, ExportFormat format) {
  switch (format) {
    case ExportFormat::Json: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& p : points)
        arr.push_back({{"window_start", p.window_start},
                       {"window_end", p.window_end},
                       {"n_faces", p.n_faces},
                       {"n_masked", p.n_masked},
                       {"rate", p.rate ? nlohmann::json(*p.rate) : nlohmann::json(nullptr)}});
      return arr.dump(2) + "\n";
    }
    case ExportFormat::Csv: {
      std::string out(kRateCsvHeader);
      out += '\n';
      for (const auto& p : points)
        out += detail::num(p.window_start) + "," + detail::num(p.window_end) + "," + std::to_string(p.n_faces) +
               "," + std::to_string(p.n_masked) + "," + detail::num(p.rate) + "\n";
      return out;
    }
    case ExportFormat::Table: {
      std::string out;
      char buf[128];
      std::snprintf(buf, sizeof buf, "%12s %12s %8s %8s %8s\n", "start", "end", "faces", "masked", "rate");
      out += buf;
      for (const auto& p : points) {
        const std::string rate = p.rate ? (std::snprintf(buf, sizeof buf, "%.4f", *p.rate), std::string(buf)) : "empty";
        std::snprintf(buf, sizeof buf, "%12.3f %12.3f %8zu %8zu %8s\n", p.window_start, p.window_end, p.n_faces,
                      p.n_masked, rate.c_str());
        out += buf;
      }
      return out;
    }
  }
  return {};
}

inline std::vector<MaskRatePoint> parse_rate_csv(std::string_view text) {
  std::vector<MaskRatePoint> points;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line != kRateCsvHeader) throw ParseError("unexpected rate CSV header", 1);
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() == 4 && !line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 5) throw ParseError("expected 5 columns", line_no);
    MaskRatePoint p{std::stod(cells[0]), std::stod(cells[1]), std::stoull(cells[2]), std::stoull(cells[3]), {}};
    if (!cells[4].empty()) p.rate = std::stod(cells[4]);
    points.push_back(p);
  }
  return points;
}

inline std::string export_report(const EvalReport& report, ExportFormat format) {
  switch (format) {
    case ExportFormat::Json: return to_json_value(report).dump(2) + "\n";
    case ExportFormat::Table: return eval_report_table(report);
    case ExportFormat::Csv: {
      std::string out(kEvalCsvHeader);
      out += '\n';
      for (MaskLabel cls : {MaskLabel::NoMask, MaskLabel::Mask}) {
        const auto& c = report[cls];
        out += std::string(to_string(cls)) + "," + std::to_string(c.n_gt) + "," + std::to_string(c.n_pred) + "," +
               std::to_string(c.tp) + "," + std::to_string(c.fp) + "," + std::to_string(c.fn) + "," +
               detail::num(c.precision) + "," + detail::num(c.recall) + "," + detail::num(c.f1) + "," +
               detail::num(c.ap) + "\n";
      }
      out += "mAP,,,,,,,,," + detail::num(report.map) + "\n";
      return out;
    }
  }
  return {};
}

}  // namespace maskpipe
