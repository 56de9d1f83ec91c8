#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace hfusion {

// Row-major, channel-interleaved float image with values in [0,1].
// Channel order is RGB for 3-channel images.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f);

  [[nodiscard]] bool empty() const { return data.empty(); }
  [[nodiscard]] std::size_t pixel_count() const {
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  [[nodiscard]] float& at(int y, int x, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  [[nodiscard]] float at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  [[nodiscard]] bool same_size(const Image& other) const {
    return height == other.height && width == other.width;
  }

  bool operator==(const Image&) const = default;
};

// Single-channel double-precision plane; the working type for metrics.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] double& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] double at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] std::size_t size() const { return data.size(); }
};

// Binary mask, one byte per pixel (0 or 1).
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> data;

  Mask() = default;
  Mask(int h, int w, unsigned char fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] unsigned char& at(int y, int x) {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] unsigned char at(int y, int x) const {
    return data[static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] std::size_t area() const;

  bool operator==(const Mask&) const = default;
};

// PNG I/O. 8-bit files map to [0,1]; grayscale files load with one channel.
Image load_image(const std::filesystem::path& path);
void save_image(const Image& image, const std::filesystem::path& path);

// BT.601 luma for 3-channel images; identity for one channel.
Image to_gray(const Image& image);
Image to_rgb(const Image& image);

// Luma plane scaled by `scale` (255 gives the 8-bit range used by metrics).
Plane gray_plane(const Image& image, double scale = 1.0);

Image resize(const Image& image, int height, int width);

Image apply_mask(const Image& image, const Mask& mask);

// Quantizes to 8 bits the same way save_image does.
Image quantize_8bit(const Image& image);

}  // namespace hfusion
