#pragma once

#include <cassert>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gflow {

// Dense row-major, channel-last grid. Rank is 2 for (H, W) maps and 3 for
// (H, W, C) images and flow fields.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int height, int width, int channels = 1, T fill = T{})
      : height_(height), width_(width), channels_(channels),
        rank_(channels == 1 ? 2 : 3),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {}

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  int rank() const { return rank_; }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // Rank-3 tensors with a single channel keep their declared rank on disk.
  void set_rank(int rank) { rank_ = rank; }

  T& operator()(int y, int x, int c = 0) {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  const T& operator()(int y, int x, int c = 0) const {
    assert(y >= 0 && y < height_ && x >= 0 && x < width_ && c >= 0 && c < channels_);
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool same_shape(const Grid& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }
  template <typename U>
  bool same_extent(const Grid<U>& other) const {
    return height_ == other.height() && width_ == other.width();
  }

  bool contains(int y, int x) const { return y >= 0 && y < height_ && x >= 0 && x < width_; }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.channels_ == b.channels_ &&
           a.data_ == b.data_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 1;
  int rank_ = 2;
  std::vector<T> data_;
};

// File-backed 32-bit tensor (depth maps, flow fields, images on disk).
using Tensor = Grid<float>;
// Working-precision image used by rendering and losses.
using Image = Grid<double>;
// Boolean per-pixel mask stored as bytes (0 or 1).
using Mask = Grid<std::uint8_t>;

Image to_image(const Tensor& t);
Tensor to_tensor(const Image& img);

std::size_t count(const Mask& m);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_not(const Mask& a);
double mask_iou(const Mask& a, const Mask& b);

// Bilinear lookup at continuous pixel coordinates (x = column, y = row, pixel
// centers on integers). Returns false when (x, y) lies outside the grid.
bool sample_bilinear(const Image& img, double x, double y, std::span<double> out);
bool sample_bilinear(const Tensor& img, double x, double y, std::span<double> out);

// Grayscale (Rec. 601 luma) of a 3-channel image.
Image grayscale(const Image& rgb);

}  // namespace gflow
