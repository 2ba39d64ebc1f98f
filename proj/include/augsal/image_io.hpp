#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "augsal/error.hpp"
#include "augsal/tensor.hpp"

namespace augsal {

inline double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

/// Snaps every value to the 8-bit grid so PNG round-trips are exact.
inline ImageTensor quantize8(const ImageTensor& img) {
  Tensor t = img.tensor();
  for (double& v : t.values()) v = quantize8(v);
  return ImageTensor(std::move(t));
}

/// Decodes PNG or JPEG (8- or 16-bit, gray or color) into an RGB image.
inline ImageTensor load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!m.empty(), ErrorCode::kIo, "cannot decode image " + path.string());
  const double scale = m.depth() == CV_16U ? 65535.0 : m.depth() == CV_8U ? 255.0 : 0.0;
  require(scale > 0.0, ErrorCode::kData, path.string() + ": unsupported bit depth");
  const int cn = m.channels();
  require(cn == 1 || cn == 3 || cn == 4, ErrorCode::kData, path.string() + ": unsupported channel count");

  Tensor t(3, static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y) {
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < 3; ++c) {
        // OpenCV stores BGR(A).
        const int src = cn == 1 ? 0 : 2 - c;
        const double raw = m.depth() == CV_16U ? m.ptr<std::uint16_t>(y)[x * cn + src]
                                               : m.ptr<std::uint8_t>(y)[x * cn + src];
        t.at(static_cast<std::size_t>(c), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = raw / scale;
      }
    }
  }
  return ImageTensor(std::move(t));
}

inline void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  cv::Mat m(static_cast<int>(img.height()), static_cast<int>(img.width()), CV_8UC3);
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      for (std::size_t c = 0; c < 3; ++c)
        m.ptr<std::uint8_t>(static_cast<int>(y))[x * 3 + (2 - c)] =
            static_cast<std::uint8_t>(std::lround(std::clamp(img.at(c, y, x), 0.0, 1.0) * 255.0));
  require(cv::imwrite(path.string(), m), ErrorCode::kIo, "cannot write " + path.string());
}

/// Grayscale saliency map; 16-bit PNGs are scaled by 1/65535, 8-bit by 1/255.
inline SaliencyMap load_saliency_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  require(!m.empty(), ErrorCode::kIo, "cannot decode saliency map " + path.string());
  require(m.channels() == 1, ErrorCode::kData, path.string() + ": saliency PNG must be grayscale");
  const bool wide = m.depth() == CV_16U;
  require(wide || m.depth() == CV_8U, ErrorCode::kData, path.string() + ": unsupported bit depth");
  Tensor t(1, static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols));
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x)
      t.at(0, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
          wide ? m.ptr<std::uint16_t>(y)[x] / 65535.0 : m.ptr<std::uint8_t>(y)[x] / 255.0;
  return SaliencyMap(std::move(t));
}

/// Writes a single-channel [0,1] map as 16-bit grayscale PNG.
inline void save_gray16_png(const Tensor& map, const std::filesystem::path& path) {
  require(map.channels() == 1, ErrorCode::kDimsMismatch, "gray PNG needs a single-channel map");
  cv::Mat m(static_cast<int>(map.height()), static_cast<int>(map.width()), CV_16UC1);
  for (std::size_t y = 0; y < map.height(); ++y)
    for (std::size_t x = 0; x < map.width(); ++x)
      m.ptr<std::uint16_t>(static_cast<int>(y))[x] =
          static_cast<std::uint16_t>(std::lround(std::clamp(map.at(0, y, x), 0.0, 1.0) * 65535.0));
  require(cv::imwrite(path.string(), m), ErrorCode::kIo, "cannot write " + path.string());
}

/// Lays out images left to right (single-channel maps are shown as gray); all must share a height.
inline ImageTensor hconcat(const std::vector<Tensor>& panels, std::size_t gap = 2) {
  require(!panels.empty(), ErrorCode::kInvalidArgument, "grid needs at least one panel");
  const std::size_t h = panels.front().height();
  std::size_t w = 0;
  for (const auto& p : panels) {
    require(p.height() == h, ErrorCode::kDimsMismatch, "grid panels must share a height");
    w += p.width() + gap;
  }
  w -= gap;
  Tensor out(3, h, w, 1.0);
  std::size_t x0 = 0;
  for (const auto& p : panels) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < p.width(); ++x)
          out.at(c, y, x0 + x) = std::clamp(p.at(p.channels() == 1 ? 0 : c, y, x), 0.0, 1.0);
    x0 += p.width() + gap;
  }
  return ImageTensor(std::move(out));
}

}  // namespace augsal
