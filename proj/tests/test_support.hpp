// Test-only reference implementations and helpers. The naive ops here are
// written as direct loops over an explicitly materialized padded buffer and
// stay independent of the library implementations they check.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "lmtcnn/ops.hpp"
#include "lmtcnn/tensor.hpp"

namespace testref {

using lmtcnn::Padding;
using lmtcnn::Tensor;

/// Copies `img` into a zero-padded buffer (or -inf for pooling).
template <typename T>
Tensor<T> pad_hwc(const Tensor<T>& img, int pad_top, int pad_left, int pad_bottom, int pad_right,
                  T fill) {
  const int h = img.extent(0), w = img.extent(1), c = img.extent(2);
  Tensor<T> out({h + pad_top + pad_bottom, w + pad_left + pad_right, c});
  for (auto& v : out.data) v = fill;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int cc = 0; cc < c; ++cc) out(y + pad_top, x + pad_left, cc) = img(y, x, cc);
  return out;
}

struct PadPlan {
  int out_h = 0, out_w = 0, top = 0, left = 0, bottom = 0, right = 0;
};

/// Padding/output geometry mirroring the library's conventions, recomputed
/// from first principles.
template <typename T>
PadPlan plan_conv(const Tensor<T>& img, int k, int stride, Padding pad) {
  PadPlan p;
  const int h = img.extent(0), w = img.extent(1);
  if (pad == Padding::kValid) {
    p.out_h = (h - k) / stride + 1;
    p.out_w = (w - k) / stride + 1;
    return p;
  }
  // same: output ceil(in/stride), shortfall split floor-before
  p.out_h = (h + stride - 1) / stride;
  p.out_w = (w + stride - 1) / stride;
  const int need_h = std::max((p.out_h - 1) * stride + k - h, 0);
  const int need_w = std::max((p.out_w - 1) * stride + k - w, 0);
  p.top = need_h / 2;
  p.left = need_w / 2;
  p.bottom = need_h - p.top;
  p.right = need_w - p.left;
  return p;
}

template <typename T>
Tensor<T> naive_conv2d(const Tensor<T>& img, const Tensor<T>& kernel, const Tensor<T>& bias,
                       int stride, Padding pad) {
  const int k = kernel.extent(0), ci = kernel.extent(2), co = kernel.extent(3);
  const auto plan = plan_conv(img, k, stride, pad);
  const auto padded = pad_hwc(img, plan.top, plan.left, plan.bottom, plan.right, T(0));
  Tensor<T> out({plan.out_h, plan.out_w, co});
  for (int y = 0; y < plan.out_h; ++y)
    for (int x = 0; x < plan.out_w; ++x)
      for (int o = 0; o < co; ++o) {
        T acc = bias.data[static_cast<std::size_t>(o)];
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            for (int c = 0; c < ci; ++c)
              acc += padded(y * stride + dy, x * stride + dx, c) * kernel(dy, dx, c, o);
        out(y, x, o) = acc;
      }
  return out;
}

template <typename T>
Tensor<T> naive_depthwise(const Tensor<T>& img, const Tensor<T>& kernel, const Tensor<T>& bias,
                          int stride, Padding pad, int multiplier) {
  const int k = kernel.extent(0), c = img.extent(2);
  const auto plan = plan_conv(img, k, stride, pad);
  const auto padded = pad_hwc(img, plan.top, plan.left, plan.bottom, plan.right, T(0));
  Tensor<T> out({plan.out_h, plan.out_w, c * multiplier});
  for (int y = 0; y < plan.out_h; ++y)
    for (int x = 0; x < plan.out_w; ++x)
      for (int cc = 0; cc < c; ++cc)
        for (int j = 0; j < multiplier; ++j) {
          const int q = cc * multiplier + j;
          T acc = bias.data[static_cast<std::size_t>(q)];
          for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx)
              acc += padded(y * stride + dy, x * stride + dx, cc) * kernel(dy, dx, q);
          out(y, x, q) = acc;
        }
  return out;
}

template <typename T>
Tensor<T> naive_pointwise(const Tensor<T>& img, const Tensor<T>& kernel, const Tensor<T>& bias) {
  const int h = img.extent(0), w = img.extent(1), ci = img.extent(2), co = kernel.extent(1);
  Tensor<T> out({h, w, co});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int o = 0; o < co; ++o) {
        T acc = bias.data[static_cast<std::size_t>(o)];
        for (int c = 0; c < ci; ++c) acc += img(y, x, c) * kernel(c, o);
        out(y, x, o) = acc;
      }
  return out;
}

template <typename T>
Tensor<T> naive_maxpool(const Tensor<T>& img, int window, int stride, int out_h, int out_w) {
  const int h = img.extent(0), w = img.extent(1), c = img.extent(2);
  Tensor<T> out({out_h, out_w, c});
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      for (int cc = 0; cc < c; ++cc) {
        T best = -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < window; ++dy)
          for (int dx = 0; dx < window; ++dx) {
            const int iy = y * stride + dy, ix = x * stride + dx;
            if (iy < h && ix < w) best = std::max(best, img(iy, ix, cc));
          }
        out(y, x, cc) = best;
      }
  return out;
}

template <typename T>
Tensor<T> naive_lrn(const Tensor<T>& img, const lmtcnn::LrnSpec& spec) {
  const int h = img.extent(0), w = img.extent(1), c = img.extent(2);
  Tensor<T> out(img.shape);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int cc = 0; cc < c; ++cc) {
        T sumsq = T(0);
        for (int k = cc - spec.radius; k <= cc + spec.radius; ++k)
          if (k >= 0 && k < c) sumsq += img(y, x, k) * img(y, x, k);
        out(y, x, cc) = img(y, x, cc) /
                        std::pow(static_cast<T>(spec.bias) + static_cast<T>(spec.alpha) * sumsq,
                                 static_cast<T>(spec.beta));
      }
  return out;
}

template <typename T>
Tensor<T> naive_fully_connected(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& b) {
  const int n = in.extent(0), m = w.extent(1);
  Tensor<T> out({m});
  for (int j = 0; j < m; ++j) {
    T acc = b.data[static_cast<std::size_t>(j)];
    for (int i = 0; i < n; ++i) acc += in.data[static_cast<std::size_t>(i)] * w(i, j);
    out.data[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

// --- Instrumented multiply counters -----------------------------------------
// Convolutions evaluated over an output map with the input's spatial size
// (stride 1, padding materialized as zeros) while counting one unit per
// multiplication actually performed, padded taps included.

struct CountedConv {
  Tensor<float> output;
  std::uint64_t multiplies = 0;
};

inline CountedConv counted_general_conv(const Tensor<float>& img, const Tensor<float>& kernel) {
  const int k = kernel.extent(0), ci = kernel.extent(2), co = kernel.extent(3);
  const int h = img.extent(0), w = img.extent(1);
  const int before = (k - 1) / 2;
  const auto padded = pad_hwc(img, before, before, k - 1 - before, k - 1 - before, 0.0f);
  CountedConv r;
  r.output = Tensor<float>({h, w, co});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int o = 0; o < co; ++o) {
        float acc = 0.0f;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            for (int c = 0; c < ci; ++c) {
              acc += padded(y + dy, x + dx, c) * kernel(dy, dx, c, o);
              ++r.multiplies;
            }
        r.output(y, x, o) = acc;
      }
  return r;
}

inline CountedConv counted_depthwise_conv(const Tensor<float>& img, const Tensor<float>& kernel) {
  const int k = kernel.extent(0), c = img.extent(2);
  const int h = img.extent(0), w = img.extent(1);
  const int before = (k - 1) / 2;
  const auto padded = pad_hwc(img, before, before, k - 1 - before, k - 1 - before, 0.0f);
  CountedConv r;
  r.output = Tensor<float>({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int cc = 0; cc < c; ++cc) {
        float acc = 0.0f;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) {
            acc += padded(y + dy, x + dx, cc) * kernel(dy, dx, cc);
            ++r.multiplies;
          }
        r.output(y, x, cc) = acc;
      }
  return r;
}

inline CountedConv counted_pointwise_conv(const Tensor<float>& img, const Tensor<float>& kernel) {
  const int h = img.extent(0), w = img.extent(1), ci = img.extent(2), co = kernel.extent(1);
  CountedConv r;
  r.output = Tensor<float>({h, w, co});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int o = 0; o < co; ++o) {
        float acc = 0.0f;
        for (int c = 0; c < ci; ++c) {
          acc += img(y, x, c) * kernel(c, o);
          ++r.multiplies;
        }
        r.output(y, x, o) = acc;
      }
  return r;
}

// --- Finite differences ------------------------------------------------------

inline bool rel_close(double analytic, double numeric, double tol) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom < tol;
}

/// Central difference of a scalar-valued function with respect to one entry
/// of a tensor it reads.
template <typename F>
double central_diff(F&& f, lmtcnn::Tensor<double>& t, std::size_t i, double h = 1e-4) {
  const double orig = t.data[i];
  t.data[i] = orig + h;
  const double fp = f();
  t.data[i] = orig - h;
  const double fm = f();
  t.data[i] = orig;
  return (fp - fm) / (2.0 * h);
}

// --- Misc --------------------------------------------------------------------

template <typename T>
Tensor<T> random_tensor(lmtcnn::Rng& rng, const std::vector<int>& shape, double lo = -1.0,
                        double hi = 1.0) {
  return lmtcnn::rng_uniform<T>(rng, shape, lo, hi);
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testref
