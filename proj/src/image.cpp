#include "hfusion/image.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "hfusion/errors.h"

namespace hfusion {

namespace {

cv::Mat to_mat(const Image& image) {
  cv::Mat mat(image.height, image.width, CV_32FC(image.channels));
  std::copy(image.data.begin(), image.data.end(), mat.ptr<float>(0));
  return mat;
}

Image from_mat(const cv::Mat& mat) {
  cv::Mat contiguous = mat.isContinuous() ? mat : mat.clone();
  Image out(contiguous.rows, contiguous.cols, contiguous.channels());
  const auto* src = contiguous.ptr<float>(0);
  std::copy(src, src + out.data.size(), out.data.begin());
  return out;
}

float to_unit(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

}  // namespace

Image::Image(int h, int w, int c, float fill)
    : height(h),
      width(w),
      channels(c),
      data(static_cast<std::size_t>(h) * w * c, fill) {}

std::size_t Mask::area() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1));
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) {
    throw IngestError("cannot decode image: " + path.string());
  }
  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: scale = 1.0; break;
    default: throw IngestError("unsupported pixel depth: " + path.string());
  }
  cv::Mat converted;
  switch (raw.channels()) {
    case 1: converted = raw; break;
    case 3: cv::cvtColor(raw, converted, cv::COLOR_BGR2RGB); break;
    case 4: cv::cvtColor(raw, converted, cv::COLOR_BGRA2RGB); break;
    default: throw IngestError("unsupported channel count: " + path.string());
  }
  cv::Mat as_float;
  converted.convertTo(as_float, CV_MAKETYPE(CV_32F, converted.channels()), scale);
  return from_mat(as_float);
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw ShapeError("save_image expects 1 or 3 channels");
  }
  cv::Mat out(image.height, image.width, CV_8UC(image.channels));
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    out.data[i] = static_cast<unsigned char>(
        std::lround(std::clamp(image.data[i], 0.0f, 1.0f) * 255.0f));
  }
  if (image.channels == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) {
    throw RuntimeFailure("cannot write image: " + path.string());
  }
}

Image to_gray(const Image& image) {
  if (image.channels == 1) return image;
  Image out(image.height, image.width, 1);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    const float* px = &image.data[p * image.channels];
    out.data[p] = 0.299f * px[0] + 0.587f * px[1] + 0.114f * px[2];
  }
  return out;
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw ShapeError("to_rgb expects 1 or 3 channels");
  Image out(image.height, image.width, 3);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    std::fill_n(&out.data[p * 3], 3, image.data[p]);
  }
  return out;
}

Plane gray_plane(const Image& image, double scale) {
  Plane out(image.height, image.width);
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (image.channels == 1) {
      out.data[p] = scale * image.data[p];
    } else {
      const float* px = &image.data[p * image.channels];
      out.data[p] = scale * (0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
  }
  return out;
}

Image resize(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  const bool shrinking = height <= image.height && width <= image.width;
  cv::Mat dst;
  cv::resize(to_mat(image), dst, cv::Size(width, height), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out = from_mat(dst.reshape(image.channels));
  for (auto& v : out.data) v = to_unit(v);
  return out;
}

Image apply_mask(const Image& image, const Mask& mask) {
  if (image.height != mask.height || image.width != mask.width) {
    throw ShapeError("mask dimensions differ from image dimensions");
  }
  Image out = image;
  for (std::size_t p = 0; p < image.pixel_count(); ++p) {
    if (mask.data[p] == 0) {
      std::fill_n(&out.data[p * image.channels], image.channels, 0.0f);
    }
  }
  return out;
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (auto& v : out.data) {
    v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }
  return out;
}

}  // namespace hfusion
