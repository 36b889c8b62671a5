#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "lmtcnn/network.hpp"
#include "lmtcnn/tensor.hpp"
#include "lmtcnn/threading.hpp"

namespace lmtcnn {

struct EmptyImage : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct CropTooLarge : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct EmptyList : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct LengthMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Bilinear resampling to size x size, corner-aligned: output corners sample
/// input corners exactly, so resizing to the same size is the identity.
/// Values stay inside [0, 1] for inputs inside [0, 1].
template <typename T>
Tensor<T> scale_to(const Tensor<T>& image, int size) {
  if (image.rank() != 3 || image.extent(2) != 3) throw EmptyImage("scale_to: expected H x W x 3");
  const int h = image.extent(0), w = image.extent(1);
  if (h < 1 || w < 1 || size < 1) throw EmptyImage("scale_to: empty image or target");

  Tensor<T> out({size, size, 3});
  const double fy = size > 1 ? static_cast<double>(h - 1) / (size - 1) : 0.0;
  const double fx = size > 1 ? static_cast<double>(w - 1) / (size - 1) : 0.0;
  for (int y = 0; y < size; ++y) {
    const double sy = y * fy;
    const int y0 = std::min(static_cast<int>(sy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double ty = sy - y0;
    for (int x = 0; x < size; ++x) {
      const double sx = x * fx;
      const int x0 = std::min(static_cast<int>(sx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const double tx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = image(y0, x0, c), v01 = image(y0, x1, c);
        const double v10 = image(y1, x0, c), v11 = image(y1, x1, c);
        const double top = v00 + (v01 - v00) * tx;
        const double bot = v10 + (v11 - v10) * tx;
        double v = top + (bot - top) * ty;
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        out(y, x, c) = static_cast<T>(v);
      }
    }
  }
  return out;
}

/// Left-right flip (columns reversed). Pure data movement, bit-exact.
template <typename T>
Tensor<T> mirror_horizontal(const Tensor<T>& image) {
  const int h = image.extent(0), w = image.extent(1), c = image.extent(2);
  Tensor<T> out(image.shape);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int cc = 0; cc < c; ++cc) out(y, x, cc) = image(y, w - 1 - x, cc);
  return out;
}

template <typename T>
Tensor<T> crop(const Tensor<T>& image, int top, int left, int size) {
  const int h = image.extent(0), w = image.extent(1), c = image.extent(2);
  if (size > h || size > w) throw CropTooLarge("crop larger than image");
  if (top < 0 || left < 0 || top + size > h || left + size > w)
    throw CropTooLarge("crop window out of bounds");
  Tensor<T> out({size, size, c});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int cc = 0; cc < c; ++cc) out(y, x, cc) = image(top + y, left + x, cc);
  return out;
}

/// The five canonical crop anchors of an S -> c crop: four corners plus the
/// center at floor((S-c)/2).
inline std::vector<std::pair<int, int>> crop_offsets(int image_size, int crop_size) {
  const int m = image_size - crop_size;
  return {{0, 0}, {0, m}, {m, 0}, {m, m}, {m / 2, m / 2}};
}

/// Ten-crop over-sampling: the five canonical crops of the image, then the
/// five canonical crops of its horizontal mirror. The ten-crop multiset is
/// therefore closed under mirroring the input, which keeps averaged
/// predictions mirror-invariant. For the four corners, crops 5..8 coincide
/// with the mirrors of crops 1, 0, 3, 2; with an odd margin the mirrored
/// center anchor falls between pixels, so crop 9 is the center crop of the
/// mirrored image rather than the mirror of crop 4.
template <typename T>
std::vector<Tensor<T>> oversample(const Tensor<T>& image, int crop_size) {
  if (image.rank() != 3) throw EmptyImage("oversample: expected H x W x C");
  if (crop_size > image.extent(0) || crop_size > image.extent(1))
    throw CropTooLarge("oversample: crop exceeds image");
  std::vector<Tensor<T>> crops;
  crops.reserve(10);
  const auto offsets = crop_offsets(image.extent(0), crop_size);
  for (const auto& [top, left] : offsets) crops.push_back(crop(image, top, left, crop_size));
  const Tensor<T> mirrored = mirror_horizontal(image);
  for (const auto& [top, left] : offsets) crops.push_back(crop(mirrored, top, left, crop_size));
  return crops;
}

/// Elementwise mean of the probability vectors; labels re-derived from the
/// means. Accumulation order is the list order.
inline Prediction average_predictions(const std::vector<Prediction>& preds) {
  if (preds.empty()) throw EmptyList("average_predictions: no predictions");
  const std::size_t na = preds.front().age_probs.size();
  const std::size_t ng = preds.front().gender_probs.size();
  std::vector<double> age(na, 0.0), gender(ng, 0.0);
  for (const auto& p : preds) {
    if (p.age_probs.size() != na || p.gender_probs.size() != ng)
      throw LengthMismatch("average_predictions: inconsistent vector lengths");
    for (std::size_t i = 0; i < na; ++i) age[i] += p.age_probs[i];
    for (std::size_t i = 0; i < ng; ++i) gender[i] += p.gender_probs[i];
  }
  Prediction out;
  out.age_probs.resize(na);
  out.gender_probs.resize(ng);
  for (std::size_t i = 0; i < na; ++i) out.age_probs[i] = static_cast<float>(age[i] / preds.size());
  for (std::size_t i = 0; i < ng; ++i)
    out.gender_probs[i] = static_cast<float>(gender[i] / preds.size());
  out.age_label = argmax(out.age_probs);
  out.gender_label = argmax(out.gender_probs);
  return out;
}

/// Pre-crop target for a given crop size, keeping the 256:227 ratio of the
/// full-resolution protocol (227 -> 256).
inline int oversample_scale_size(int crop_size) {
  return static_cast<int>(std::lround(static_cast<double>(crop_size) * 256.0 / 227.0));
}

/// Single-view preprocessing: scale to the protocol size, take the center
/// crop at the network's input size.
template <typename T>
Tensor<T> prepare_center(const Tensor<T>& image, int input_size) {
  const int target = oversample_scale_size(input_size);
  const Tensor<T> scaled = scale_to(image, target);
  const int off = (target - input_size) / 2;
  return crop(scaled, off, off, input_size);
}

/// Full over-sampling inference: scale, take the ten crops, classify each,
/// average the scores. Crops may be evaluated concurrently; the reduction
/// order is fixed, so results do not depend on the thread count.
inline Prediction predict_oversampled(const ModelParams<float>& params,
                                      const Tensor<float>& image) {
  const int input = params.config.input_size;
  const Tensor<float> scaled = scale_to(image, oversample_scale_size(input));
  const auto crops = oversample(scaled, input);
  std::vector<Prediction> preds(crops.size());
  parallel_for(crops.size(), [&](std::size_t i) { preds[i] = predict(params, crops[i]); });
  return average_predictions(preds);
}

// --- 8-bit binary PPM (P6), the raster format used for datasets on disk ---

struct PpmError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void ppm_write(const std::string& path, const Tensor<float>& image) {
  if (image.rank() != 3 || image.extent(2) != 3) throw PpmError("ppm_write: expected H x W x 3");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw PpmError("ppm_write: cannot open " + path);
  const int h = image.extent(0), w = image.extent(1);
  f << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const long v = std::lround(static_cast<double>(image(y, x, c)) * 255.0);
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::min(255L, std::max(0L, v)));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw PpmError("ppm_write: short write to " + path);
}

/// Reads a binary PPM; samples map to [0, 1] as value / 255.
inline Tensor<float> ppm_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw PpmError("ppm_read: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw PpmError("ppm_read: not a binary PPM: " + path);
  auto next_int = [&f, &path]() {
    // skip whitespace and '#' comment lines between header fields
    int ch;
    while ((ch = f.peek()) != EOF) {
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    int v;
    if (!(f >> v)) throw PpmError("ppm_read: malformed header in " + path);
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w < 1 || h < 1 || maxval != 255) throw PpmError("ppm_read: unsupported PPM in " + path);
  f.get();  // single whitespace after maxval
  Tensor<float> image({h, w, 3});
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (f.gcount() != static_cast<std::streamsize>(buf.size()))
    throw PpmError("ppm_read: truncated pixel data in " + path);
  for (std::size_t i = 0; i < buf.size(); ++i)
    image.data[i] = static_cast<float>(buf[i]) / 255.0f;
  return image;
}

}  // namespace lmtcnn
