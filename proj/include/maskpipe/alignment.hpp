#pragma once

// Landmark-based face alignment: similarity estimation, chip warping and
// upper-face occlusion.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>

#include "json.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/geometry.hpp"
#include "maskpipe/image.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

// x' = scale * R(rotation) * x + translation
struct SimilarityTransform {
  double scale = 1.0;
  double rotation = 0.0;  // radians, counter-clockwise in a y-up frame
  Point2 translation{};

  // Row-major 2x3 matrix [sR | t].
  using Matrix = std::array<double, 6>;

  static SimilarityTransform identity() noexcept { return {}; }

  Matrix matrix() const noexcept {
    const double a = scale * std::cos(rotation);
    const double b = scale * std::sin(rotation);
    return {a, -b, translation.x, b, a, translation.y};
  }

  static SimilarityTransform from_matrix(const Matrix& m) {
    const double a = m[0];
    const double b = m[3];
    const double tol = 1e-9 * std::max(1.0, std::hypot(a, b));
    if (std::abs(m[4] - a) > tol || std::abs(m[1] + b) > tol)
      throw GeometryError("matrix is not a similarity transform");
    const double s = std::hypot(a, b);
    if (!(s > 0.0)) throw GeometryError("similarity transform has zero scale");
    return {s, std::atan2(b, a), {m[2], m[5]}};
  }

  Point2 apply(Point2 p) const noexcept {
    const auto m = matrix();
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }

  SimilarityTransform inverse() const noexcept {
    SimilarityTransform inv{1.0 / scale, -rotation, {}};
    const Point2 t = inv.apply(translation);
    inv.translation = {-t.x, -t.y};
    return inv;
  }
};

// Canonical 5-point layout for a chip of the given size.
struct AlignmentTemplate {
  static constexpr int kBaseSize = 112;

  int width = kBaseSize;
  int height = kBaseSize;
  Landmarks5 points{{{{38.30, 51.69}, {73.53, 51.50}, {56.03, 71.74}, {41.55, 92.37}, {70.73, 92.20}}}};

  // The 112x112 frontal template scaled linearly to width x height.
  static AlignmentTemplate for_size(int width, int height) {
    AlignmentTemplate base;
    return base.resized(width, height);
  }

  AlignmentTemplate resized(int new_width, int new_height) const {
    if (new_width <= 0 || new_height <= 0) throw ValidationError("template size must be positive");
    AlignmentTemplate t{new_width, new_height, points};
    const double sx = static_cast<double>(new_width) / width;
    const double sy = static_cast<double>(new_height) / height;
    for (auto& p : t.points.points) p = {p.x * sx, p.y * sy};
    t.validate();
    return t;
  }

  void validate() const {
    for (const auto& p : points.points) {
      if (!(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height))
        throw ValidationError("template point lies outside the chip");
    }
    if (!(points[Landmarks5::kLeftEye].x < points[Landmarks5::kRightEye].x))
      throw ValidationError("template left eye must be left of the right eye");
  }
};

inline AlignmentTemplate alignment_template_from_json(const nlohmann::json& j) {
  AlignmentTemplate t;
  t.width = j.at("width").get<int>();
  t.height = j.at("height").get<int>();
  const auto& pts = j.at("points");
  if (!pts.is_array() || pts.size() != 5) throw ParseError("template needs exactly 5 points");
  for (std::size_t i = 0; i < 5; ++i) t.points[i] = {pts[i].at(0).get<double>(), pts[i].at(1).get<double>()};
  t.validate();
  return t;
}

inline AlignmentTemplate load_alignment_template(const std::filesystem::path& path) {
  try {
    return alignment_template_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

// Closed-form least-squares similarity (Umeyama, reflections excluded) mapping
// src[i] onto dst[i]. In 2-D the rotation-plus-scale part is a complex
// multiplier, so the optimum is
//   a + ib = sum(conj(p_i) q_i) / sum(|p_i|^2)
// over centred coordinates, and t = mean(q) - sR mean(p).
inline SimilarityTransform estimate_similarity(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size() || src.empty())
    throw GeometryError("need equally many source and destination points");
  const double n = static_cast<double>(src.size());
  Point2 mp{}, mq{};
  for (std::size_t i = 0; i < src.size(); ++i) {
    mp.x += src[i].x; mp.y += src[i].y;
    mq.x += dst[i].x; mq.y += dst[i].y;
  }
  mp = {mp.x / n, mp.y / n};
  mq = {mq.x / n, mq.y / n};

  double spread = 0.0, dot = 0.0, cross = 0.0, max_dist = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double px = src[i].x - mp.x, py = src[i].y - mp.y;
    const double qx = dst[i].x - mq.x, qy = dst[i].y - mq.y;
    spread += px * px + py * py;
    dot += px * qx + py * qy;
    cross += px * qy - py * qx;
    max_dist = std::max(max_dist, std::hypot(px, py));
  }
  if (max_dist <= 1e-6) throw GeometryError("degenerate landmarks: all points coincide");
  const double a = dot / spread;
  const double b = cross / spread;
  const double s = std::hypot(a, b);
  if (!(s > 0.0)) throw GeometryError("degenerate correspondence: zero scale");

  SimilarityTransform t{s, std::atan2(b, a), {}};
  const Point2 rp = t.apply(mp);
  t.translation = {mq.x - rp.x, mq.y - rp.y};
  return t;
}

// Maps detected landmarks (image frame) onto the template (chip frame).
inline SimilarityTransform estimate_similarity(const Landmarks5& src, const AlignmentTemplate& tmpl) {
  if (!src.finite()) throw GeometryError("landmarks must be finite");
  return estimate_similarity(std::span<const Point2>(src.points), std::span<const Point2>(tmpl.points.points));
}

// Exact similarity taking the two eye centres onto the template's eye centres.
inline SimilarityTransform estimate_similarity_eyes(Point2 left_eye, Point2 right_eye,
                                                    const AlignmentTemplate& tmpl) {
  const Point2 q1 = tmpl.points[Landmarks5::kLeftEye];
  const Point2 q2 = tmpl.points[Landmarks5::kRightEye];
  const double px = right_eye.x - left_eye.x, py = right_eye.y - left_eye.y;
  const double qx = q2.x - q1.x, qy = q2.y - q1.y;
  const double norm = px * px + py * py;
  if (!(std::sqrt(norm) > 1e-6)) throw GeometryError("eye centres coincide");
  // (a + ib) = (q2 - q1) / (p2 - p1)
  const double a = (qx * px + qy * py) / norm;
  const double b = (qy * px - qx * py) / norm;
  SimilarityTransform t{std::hypot(a, b), std::atan2(b, a), {}};
  const Point2 r = t.apply(left_eye);
  t.translation = {q1.x - r.x, q1.y - r.y};
  return t;
}

// Where a chip came from.
struct ChipProvenance {
  std::string frame_id;
  std::size_t detection_index = 0;
  SimilarityTransform transform;
};

struct FaceChip {
  Image pixels;
  ChipProvenance provenance;
};

// Output pixel (x, y) samples the source at transform^-1 (x, y) bilinearly.
// Neighbours outside the source contribute black.
inline FaceChip warp_crop(const Image& image, const SimilarityTransform& transform, int out_width,
                          int out_height, ChipProvenance provenance = {}) {
  if (out_width <= 0 || out_height <= 0) throw ValidationError("chip size must be positive");
  if (!(transform.scale > 0.0) || !std::isfinite(transform.scale))
    throw GeometryError("transform scale must be positive");
  provenance.transform = transform;
  FaceChip chip{Image(out_width, out_height), std::move(provenance)};
  if (image.empty()) return chip;

  const auto inv = transform.inverse().matrix();
  const int w = image.width(), h = image.height();
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      const double sx = inv[0] * x + inv[1] * y + inv[2];
      const double sy = inv[3] * x + inv[4] * y + inv[5];
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      if (fx0 < -1.0 || fy0 < -1.0 || fx0 >= w || fy0 >= h) continue;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      const double fx = sx - fx0, fy = sy - fy0;
      const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int c = 0; c < Image::kChannels; ++c) {
        double v = 0.0;
        for (int k = 0; k < 4; ++k) {
          if (xs[k] >= 0 && xs[k] < w && ys[k] >= 0 && ys[k] < h && wts[k] != 0.0)
            v += wts[k] * image.at(xs[k], ys[k], c);
        }
        chip.pixels.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return chip;
}

enum class OcclusionMode { Noise, Zeros };

// Replaces rows [0, nose_y) of the chip. Noise is uniform over 0..255 per
// channel from a mt19937_64 stream seeded with seed (top byte of each draw).
inline FaceChip mask_upper_half(FaceChip chip, int nose_y, OcclusionMode mode, std::uint64_t seed) {
  if (nose_y < 0 || nose_y > chip.pixels.height())
    throw BoundsError("nose row " + std::to_string(nose_y) + " outside [0, " +
                      std::to_string(chip.pixels.height()) + "]");
  std::mt19937_64 gen(seed);
  for (int y = 0; y < nose_y; ++y) {
    for (auto& byte : chip.pixels.row(y))
      byte = mode == OcclusionMode::Zeros ? 0 : static_cast<std::uint8_t>(gen() >> 56);
  }
  return chip;
}

// Row of the nose landmark in chip coordinates, rounded and clamped to [0, height].
inline int nose_row(const Landmarks5& landmarks, const SimilarityTransform& t, int chip_height) {
  const double y = t.apply(landmarks[Landmarks5::kNose]).y;
  if (!std::isfinite(y)) return 0;
  return static_cast<int>(std::clamp<long>(std::lround(y), 0L, chip_height));
}

}  // namespace maskpipe
