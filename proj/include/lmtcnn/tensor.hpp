#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmtcnn {

struct ZeroOrNegativeExtent : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ShapeMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct EmptyRange : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dense n-dimensional array, row-major. The last extent varies fastest.
/// Treated as an immutable value once an operation has produced it; ops
/// return fresh tensors instead of mutating their inputs.
template <typename T = float>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(checked_numel(shape), T(0));
  }

  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }
  std::size_t numel() const { return data.size(); }

  template <typename... Ix>
  T& operator()(Ix... ix) {
    return data[flat_index({static_cast<int>(ix)...})];
  }
  template <typename... Ix>
  const T& operator()(Ix... ix) const {
    return data[flat_index({static_cast<int>(ix)...})];
  }

  /// Row-major offset of a full coordinate tuple.
  std::size_t flat_index(std::initializer_list<int> coords) const {
    std::size_t idx = 0;
    auto it = coords.begin();
    for (int axis = 0; axis < rank(); ++axis, ++it) {
      idx = idx * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(*it);
    }
    return idx;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  static std::size_t checked_numel(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
      if (e < 1) throw ZeroOrNegativeExtent("tensor extent must be >= 1, got " + std::to_string(e));
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }
};

template <typename T = float>
Tensor<T> zeros(const std::vector<int>& shape) {
  return Tensor<T>(shape);
}

/// Elementwise combine of two tensors with identical shape.
template <typename T, typename F>
Tensor<T> map2(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (!a.same_shape(b)) throw ShapeMismatch("map2: operand shapes differ");
  Tensor<T> out(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) out.data[i] = f(a.data[i], b.data[i]);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return map2(a, b, [](T x, T y) { return x + y; });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return map2(a, b, [](T x, T y) { return x * y; });
}

/// xoshiro256++ seeded through splitmix64. Fixed algorithm: the same seed
/// produces the same stream on every platform, which the golden tests pin.
/// Single-owner; never share one instance across concurrent tasks.
struct Rng {
  std::array<std::uint64_t, 4> state{};

  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state) {
      // splitmix64 step
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      s = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    auto rotl = [](std::uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    const std::uint64_t result = rotl(state[0] + state[3], 23) + state[0];
    const std::uint64_t t = state[1] << 17;
    state[2] ^= state[0];
    state[3] ^= state[1];
    state[1] ^= state[2];
    state[0] ^= state[3];
    state[2] ^= t;
    state[3] = rotl(state[3], 45);
    return result;
  }

  /// Uniform double in [0, 1), 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }
};

/// Tensor of i.i.d. uniform values in [lo, hi). Advances the generator by
/// exactly numel draws.
template <typename T = float>
Tensor<T> rng_uniform(Rng& rng, const std::vector<int>& shape, double lo, double hi) {
  if (!(lo < hi)) throw EmptyRange("rng_uniform: lo must be < hi");
  Tensor<T> out(shape);
  for (auto& v : out.data) v = static_cast<T>(lo + rng.next_double() * (hi - lo));
  return out;
}

}  // namespace lmtcnn
