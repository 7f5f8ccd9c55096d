#pragma once

// Shared helpers for the test suites: temp directories, fixture paths and
// the reference implementations the library is checked against. The
// references are written independently of the library code paths.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "maskpipe/maskpipe.hpp"

namespace maskpipe::testing {

#ifndef MASKPIPE_FIXTURE_DIR
#error "MASKPIPE_FIXTURE_DIR must be defined"
#endif

inline std::filesystem::path fixture_dir() { return MASKPIPE_FIXTURE_DIR; }
inline std::filesystem::path cli_path() { return MASKPIPE_CLI_PATH; }

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// Runs the maskpipe binary with args, capturing stdout and stderr.
inline CliResult run_cli(const std::vector<std::string>& args, const std::filesystem::path& scratch) {
  std::string cmd = shell_quote(cli_path().string());
  for (const auto& a : args) cmd += " " + shell_quote(a);
  const auto out = scratch / "cli.stdout", err = scratch / "cli.stderr";
  cmd += " >" + shell_quote(out.string()) + " 2>" + shell_quote(err.string());
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("maskpipe-test-" + std::to_string(gen()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Reference IOU: plain area arithmetic on corners.
inline double ref_iou(const BoundingBox& a, const BoundingBox& b) {
  const double left = a.x_min > b.x_min ? a.x_min : b.x_min;
  const double right = a.x_max < b.x_max ? a.x_max : b.x_max;
  const double top = a.y_min > b.y_min ? a.y_min : b.y_min;
  const double bottom = a.y_max < b.y_max ? a.y_max : b.y_max;
  if (right <= left || bottom <= top) return 0.0;
  const double inter = (right - left) * (bottom - top);
  const double area_a = (a.x_max - a.x_min) * (a.y_max - a.y_min);
  const double area_b = (b.x_max - b.x_min) * (b.y_max - b.y_min);
  return inter / (area_a + area_b - inter);
}

// Reference NMS: literal "take the best remaining, erase everything it covers".
inline std::vector<Detection> ref_nms(std::vector<Detection> remaining, double threshold) {
  std::vector<std::pair<std::size_t, Detection>> pool;
  for (std::size_t i = 0; i < remaining.size(); ++i) pool.emplace_back(i, remaining[i]);
  std::vector<Detection> out;
  while (!pool.empty()) {
    auto best = pool.begin();
    for (auto it = pool.begin(); it != pool.end(); ++it) {
      const auto& d = it->second;
      const auto& b = best->second;
      const double area_d = (d.box.x_max - d.box.x_min) * (d.box.y_max - d.box.y_min);
      const double area_b = (b.box.x_max - b.box.x_min) * (b.box.y_max - b.box.y_min);
      const bool better = d.score > b.score || (d.score == b.score && area_d < area_b) ||
                          (d.score == b.score && area_d == area_b && it->first < best->first);
      if (better) best = it;
    }
    const Detection keep = best->second;
    pool.erase(best);
    out.push_back(keep);
    std::vector<std::pair<std::size_t, Detection>> survivors;
    for (auto& e : pool)
      if (!(ref_iou(keep.box, e.second.box) > threshold)) survivors.push_back(e);
    pool = std::move(survivors);
  }
  return out;
}

// Reference AP: enumerates every point of the PR curve and takes, for each
// recall increase, the maximum precision over all points with recall >= it.
inline double ref_average_precision(const std::vector<Prediction>& preds, const std::vector<GroundTruthFace>& gts,
                                    double threshold) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < preds.size(); ++i) order.push_back(i);
  // insertion sort: confidence desc, stable
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && preds[order[j]].confidence > preds[order[j - 1]].confidence; --j)
      std::swap(order[j], order[j - 1]);

  std::vector<bool> taken(gts.size(), false);
  std::vector<int> hit;
  for (std::size_t i : order) {
    int best = -1;
    double best_iou = -1;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || gts[g].id.frame_id != preds[i].frame_id) continue;
      const double v = ref_iou(preds[i].box, gts[g].box);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= threshold) {
      taken[best] = true;
      hit.push_back(1);
    } else {
      hit.push_back(0);
    }
  }
  const double n = static_cast<double>(gts.size());
  std::vector<double> P, R;
  int tp = 0;
  for (std::size_t k = 0; k < hit.size(); ++k) {
    tp += hit[k];
    P.push_back(tp / static_cast<double>(k + 1));
    R.push_back(tp / n);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < R.size(); ++k) {
    if (R[k] > prev) {
      double pmax = 0.0;
      for (std::size_t j = 0; j < R.size(); ++j)
        if (R[j] >= R[k]) pmax = std::max(pmax, P[j]);
      ap += (R[k] - prev) * pmax;
      prev = R[k];
    }
  }
  return ap;
}

// Reference bilinear warp: inverts the forward 2x3 matrix by Cramer's rule and
// samples each output pixel from the four neighbours, black outside.
inline Image ref_warp(const Image& src, const SimilarityTransform::Matrix& fwd, int out_w, int out_h) {
  const double det = fwd[0] * fwd[4] - fwd[1] * fwd[3];
  Image out(out_w, out_h);
  auto px = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= src.width() || y >= src.height()) return 0.0;
    return src.at(x, y, c);
  };
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const double dx = x - fwd[2], dy = y - fwd[5];
      const double sx = (fwd[4] * dx - fwd[1] * dy) / det;
      const double sy = (-fwd[3] * dx + fwd[0] * dy) / det;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double ax = sx - x0, ay = sy - y0;
      for (int c = 0; c < 3; ++c) {
        const double top = px(x0, y0, c) * (1 - ax) + px(x0 + 1, y0, c) * ax;
        const double bottom = px(x0, y0 + 1, c) * (1 - ax) + px(x0 + 1, y0 + 1, c) * ax;
        const double v = top * (1 - ay) + bottom * ay;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::min(255.0, std::max(0.0, std::round(v))));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators

inline BoundingBox random_box(std::mt19937_64& gen, double extent = 200.0, double max_size = 60.0) {
  std::uniform_real_distribution<double> pos(0.0, extent), size(2.0, max_size);
  const double x = pos(gen), y = pos(gen);
  return {x, y, x + size(gen), y + size(gen)};
}

inline Landmarks5 landmarks_for(const BoundingBox& b) {
  const AlignmentTemplate t;
  Landmarks5 lm;
  for (std::size_t i = 0; i < 5; ++i)
    lm[i] = {b.x_min + t.points[i].x / 112.0 * b.width(), b.y_min + t.points[i].y / 112.0 * b.height()};
  return lm;
}

inline Image random_image(std::mt19937_64& gen, int w, int h) {
  Image img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(gen() >> 56);
  return img;
}

// Synthetic dataset: n_frames frames, faces_per_frame faces each, labels drawn with p(mask) = 0.5.
inline Dataset synthetic_dataset(std::mt19937_64& gen, std::size_t n_frames, std::size_t faces_per_frame) {
  Dataset d{"synthetic", Split::Test, {}};
  std::bernoulli_distribution coin(0.5);
  for (std::size_t f = 0; f < n_frames; ++f) {
    char id[32];
    std::snprintf(id, sizeof id, "frame_%04zu", f);
    FrameAnnotation frame{id, 640, 480, {}};
    for (std::size_t i = 0; i < faces_per_frame; ++i) {
      const double x = 10.0 + 60.0 * i;
      frame.faces.push_back({{id, i}, {x, 20.0, x + 40.0, 70.0}, coin(gen) ? MaskLabel::Mask : MaskLabel::NoMask});
    }
    d.frames.push_back(std::move(frame));
  }
  return d;
}

// "p/q" -> p / q as the nearest double.
inline double fraction_value(const nlohmann::json& j) {
  const auto s = j.get<std::string>();
  const auto slash = s.find('/');
  if (slash == std::string::npos) return std::stod(s);
  return std::stod(s.substr(0, slash)) / std::stod(s.substr(slash + 1));
}

// Field-by-field comparison of a report against the worksheet's expected
// report. Counts compare exactly; real fields compare exactly against the
// nearest double of each fraction. Returns the mismatching fields.
inline std::vector<std::string> worksheet_mismatches(const EvalReport& r, const nlohmann::json& expected) {
  std::vector<std::string> bad;
  auto real = [&](const std::string& name, std::optional<double> got, const nlohmann::json& want) {
    if (!got || *got != fraction_value(want))
      bad.push_back(name + ": got " + (got ? nlohmann::json(*got).dump() : "none") + ", want " + want.dump());
  };
  if (r.iou_threshold != expected.at("iou_threshold").get<double>()) bad.push_back("iou_threshold");
  for (MaskLabel cls : kAllLabels) {
    const std::string name(to_string(cls));
    const auto& e = expected.at("classes").at(name);
    const auto& c = r[cls];
    const std::pair<const char*, std::size_t> counts[] = {
        {"n_gt", c.n_gt}, {"n_pred", c.n_pred}, {"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
    for (const auto& [key, v] : counts)
      if (v != e.at(key).get<std::size_t>()) bad.push_back(name + "." + key + ": got " + std::to_string(v));
    real(name + ".precision", c.precision, e.at("precision"));
    real(name + ".recall", c.recall, e.at("recall"));
    real(name + ".f1", c.f1, e.at("f1"));
    real(name + ".ap", c.ap, e.at("ap"));
  }
  real("mAP", r.map, expected.at("mAP"));
  if (r.warnings != expected.at("warnings").get<std::vector<std::string>>()) bad.push_back("warnings");
  return bad;
}

// Frame-sequence directory for the monitoring tests: n_frames images with a
// manifest (timestamp = frame number * step), a scripted detector placing
// 0-3 separated faces per frame, and scripted classifier scores. masked[i][k]
// records which faces score at or above 0.95.
struct StreamFixture {
  std::filesystem::path dir;
  std::filesystem::path config;
  std::vector<double> timestamps;
  std::vector<std::vector<bool>> masked;
};

inline StreamFixture write_stream_fixture(const std::filesystem::path& dir, std::size_t n_frames, double step,
                                          std::mt19937_64& gen) {
  std::filesystem::create_directories(dir);
  StreamFixture fx{dir, dir / "config.json", {}, {}};
  std::uniform_int_distribution<int> n_faces(0, 3);
  const std::array<double, 5> scores{0.99, 0.95, 0.9499, 0.5, 0.02};
  std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
  nlohmann::json det = nlohmann::json::object(), cls = nlohmann::json::object();
  std::string manifest = "frame_id,timestamp\n";
  for (std::size_t i = 0; i < n_frames; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "frame_%06zu", i);
    save_image(dir / (std::string(id) + ".png"), random_image(gen, 160, 64));
    const double ts = static_cast<double>(i) * step;
    manifest += std::string(id) + "," + nlohmann::json(ts).dump() + "\n";
    fx.timestamps.push_back(ts);
    nlohmann::json faces = nlohmann::json::array(), probs = nlohmann::json::array();
    std::vector<bool> m;
    const int k = n_faces(gen);
    for (int f = 0; f < k; ++f) {
      const BoundingBox b{5.0 + 50.0 * f, 10, 45.0 + 50.0 * f, 50};
      const Landmarks5 lm = landmarks_for(b);
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& p : lm.points) pts.push_back({p.x, p.y});
      faces.push_back({{"box", {b.x_min, b.y_min, b.x_max, b.y_max}}, {"landmarks", pts}, {"score", 0.9 - 0.01 * f}});
      const double p = scores[pick(gen)];
      probs.push_back(p);
      m.push_back(p >= 0.95);
    }
    det[id] = {{"320", faces}};
    cls[id] = probs;
    fx.masked.push_back(m);
  }
  write_file(dir / "manifest.csv", manifest);
  write_file(dir / "detector.json", det.dump(1));
  write_file(dir / "classifier.json", cls.dump(1));
  write_file(fx.config, nlohmann::json{{"seed", 7},
                                       {"detector_backend", {{"type", "scripted"}, {"fixture", "detector.json"}}},
                                       {"classifier_backend", {{"type", "scripted"}, {"fixture", "classifier.json"}}}}
                            .dump(2));
  return fx;
}

}  // namespace maskpipe::testing
