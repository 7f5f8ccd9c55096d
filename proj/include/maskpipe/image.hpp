#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "maskpipe/errors.hpp"

namespace maskpipe {

// Interleaved 8-bit RGB image, row-major.
class Image {
 public:
  static constexpr int kChannels = 3;

  Image() = default;
  Image(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height),
        pixels_(static_cast<std::size_t>(checked(width)) * checked(height) * kChannels, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int x, int y, int c) { return pixels_[offset(x, y, c)]; }
  std::uint8_t at(int x, int y, int c) const { return pixels_[offset(x, y, c)]; }

  std::span<std::uint8_t> row(int y) {
    return {pixels_.data() + offset(0, y, 0), static_cast<std::size_t>(width_) * kChannels};
  }
  std::span<const std::uint8_t> row(int y) const {
    return {pixels_.data() + offset(0, y, 0), static_cast<std::size_t>(width_) * kChannels};
  }

  std::span<const std::uint8_t> bytes() const noexcept { return pixels_; }
  std::span<std::uint8_t> bytes() noexcept { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  static int checked(int v) {
    if (v <= 0) throw ValidationError("image dimensions must be positive");
    return v;
  }
  std::size_t offset(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

// An image plus the identity the backends key their fixtures on.
struct Frame {
  std::string frame_id;
  Image image;
  double timestamp = 0.0;
};

}  // namespace maskpipe
