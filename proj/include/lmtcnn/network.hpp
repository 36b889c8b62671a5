#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "lmtcnn/ops.hpp"
#include "lmtcnn/tensor.hpp"

namespace lmtcnn {

struct InvalidMultiplier : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct InputTooSmall : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Exact width multiplier. Kept as written (not reduced) so a saved model
/// restores the identical configuration.
struct Rational {
  std::uint32_t num = 1;
  std::uint32_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

/// Scales `base` by `r`, rounding half up. The result must stay >= 1.
inline int scale_channels(int base, const Rational& r) {
  if (r.num == 0 || r.den == 0) throw InvalidMultiplier("width multiplier must be positive");
  const std::uint64_t scaled =
      (2ULL * static_cast<std::uint64_t>(base) * r.num + r.den) / (2ULL * r.den);
  if (scaled < 1) throw InvalidMultiplier("width multiplier collapses a layer to zero channels");
  return static_cast<int>(scaled);
}

/// The five-stage topology: one strided general convolution, two
/// depthwise-separable blocks (each a depthwise pass followed by a pointwise
/// channel mix), then two fully connected layers feeding the age and gender
/// heads. alpha1/alpha2 scale the pointwise output widths of blocks 1 and 2.
struct NetworkConfig {
  int input_size = 227;
  Rational alpha1{1, 1};
  Rational alpha2{1, 1};
  int conv1_kernel = 7;
  int conv1_stride = 4;
  int conv1_channels = 96;
  int ds_kernel = 3;
  int pw1_base = 256;
  int pw2_base = 384;
  int fc_width = 512;
  int age_classes = 8;
  int gender_classes = 2;

  int pw1_channels() const { return scale_channels(pw1_base, alpha1); }
  int pw2_channels() const { return scale_channels(pw2_base, alpha2); }
};

// Fixed pieces of the architecture (not configuration).
inline constexpr int kPoolWindow = 3;
inline constexpr int kPool1Stride = 2;
inline constexpr int kPool2Stride = 2;
inline constexpr int kPool3Stride = 3;  // non-overlapping final pool
inline constexpr double kDropoutRate = 0.5;
inline const LrnSpec kLrnSpec{};

struct LayerShape {
  std::string name;
  std::array<int, 3> in;   // H, W, C ({N,1,1} for vectors)
  std::array<int, 3> out;
};

/// Per-layer shape chain for a configuration. Throws InputTooSmall or
/// InvalidMultiplier when the configuration cannot produce a valid network.
inline std::vector<LayerShape> shape_table(const NetworkConfig& cfg) {
  if (cfg.input_size < cfg.conv1_kernel)
    throw InputTooSmall("input size " + std::to_string(cfg.input_size) +
                        " is smaller than the first kernel " + std::to_string(cfg.conv1_kernel));
  const int pw1 = cfg.pw1_channels();
  const int pw2 = cfg.pw2_channels();

  std::vector<LayerShape> t;
  int s = cfg.input_size;
  auto push = [&t](const std::string& name, std::array<int, 3> in, std::array<int, 3> out) {
    t.push_back({name, in, out});
  };

  int c1 = conv_output_extent(s, cfg.conv1_kernel, cfg.conv1_stride, Padding::kValid);
  push("conv1", {s, s, 3}, {c1, c1, cfg.conv1_channels});
  int p1 = pool_output_extent(c1, kPoolWindow, kPool1Stride, Padding::kCeil);
  push("pool1", {c1, c1, cfg.conv1_channels}, {p1, p1, cfg.conv1_channels});
  push("lrn1", {p1, p1, cfg.conv1_channels}, {p1, p1, cfg.conv1_channels});
  push("dw1", {p1, p1, cfg.conv1_channels}, {p1, p1, cfg.conv1_channels});
  push("pw1", {p1, p1, cfg.conv1_channels}, {p1, p1, pw1});
  int p2 = pool_output_extent(p1, kPoolWindow, kPool2Stride, Padding::kCeil);
  push("pool2", {p1, p1, pw1}, {p2, p2, pw1});
  push("dw2", {p2, p2, pw1}, {p2, p2, pw1});
  push("pw2", {p2, p2, pw1}, {p2, p2, pw2});
  int p3 = pool_output_extent(p2, kPoolWindow, kPool3Stride, Padding::kCeil);
  push("pool3", {p2, p2, pw2}, {p3, p3, pw2});
  const int trunk = p3 * p3 * pw2;
  push("fc1", {trunk, 1, 1}, {cfg.fc_width, 1, 1});
  push("fc2", {cfg.fc_width, 1, 1}, {cfg.fc_width, 1, 1});
  push("head_age", {cfg.fc_width, 1, 1}, {cfg.age_classes, 1, 1});
  push("head_gender", {cfg.fc_width, 1, 1}, {cfg.gender_classes, 1, 1});
  return t;
}

/// Every parameter tensor of one network instance, in definition order.
/// The same struct doubles as a gradient/velocity container since those are
/// shaped identically.
template <typename T = float>
struct ModelParams {
  NetworkConfig config;
  Tensor<T> conv1_w, conv1_b;
  Tensor<T> dw1_w, dw1_b;
  Tensor<T> pw1_w, pw1_b;
  Tensor<T> dw2_w, dw2_b;
  Tensor<T> pw2_w, pw2_b;
  Tensor<T> fc1_w, fc1_b;
  Tensor<T> fc2_w, fc2_b;
  Tensor<T> head_age_w, head_age_b;
  Tensor<T> head_gender_w, head_gender_b;
};

/// Visits (name, tensor) pairs in the fixed serialization order.
/// P is ModelParams<T> or const ModelParams<T>.
template <typename P, typename F>
void for_each_tensor(P& params, F&& f) {
  f("conv1_w", params.conv1_w);
  f("conv1_b", params.conv1_b);
  f("dw1_w", params.dw1_w);
  f("dw1_b", params.dw1_b);
  f("pw1_w", params.pw1_w);
  f("pw1_b", params.pw1_b);
  f("dw2_w", params.dw2_w);
  f("dw2_b", params.dw2_b);
  f("pw2_w", params.pw2_w);
  f("pw2_b", params.pw2_b);
  f("fc1_w", params.fc1_w);
  f("fc1_b", params.fc1_b);
  f("fc2_w", params.fc2_w);
  f("fc2_b", params.fc2_b);
  f("head_age_w", params.head_age_w);
  f("head_age_b", params.head_age_b);
  f("head_gender_w", params.head_gender_w);
  f("head_gender_b", params.head_gender_b);
}

namespace detail {

template <typename T>
Tensor<T> glorot_uniform(Rng& rng, const std::vector<int>& shape, int fan_in, int fan_out) {
  const double b = std::sqrt(6.0 / (static_cast<double>(fan_in) + static_cast<double>(fan_out)));
  return rng_uniform<T>(rng, shape, -b, b);
}

}  // namespace detail

/// Allocates and initializes parameters for a configuration: weights drawn
/// uniformly from [-b, b] with b = sqrt(6/(fan_in+fan_out)), biases zero.
/// Draw order equals tensor definition order, so a fixed seed fixes the model.
template <typename T = float>
ModelParams<T> build_network(const NetworkConfig& cfg, Rng& rng) {
  const auto table = shape_table(cfg);  // validates the configuration
  const int trunk = table[10].in[0];
  const int k1 = cfg.conv1_kernel, kd = cfg.ds_kernel;
  const int c1 = cfg.conv1_channels, pw1 = cfg.pw1_channels(), pw2 = cfg.pw2_channels();

  ModelParams<T> p;
  p.config = cfg;
  p.conv1_w = detail::glorot_uniform<T>(rng, {k1, k1, 3, c1}, k1 * k1 * 3, k1 * k1 * c1);
  p.conv1_b = zeros<T>({c1});
  p.dw1_w = detail::glorot_uniform<T>(rng, {kd, kd, c1}, kd * kd, kd * kd);
  p.dw1_b = zeros<T>({c1});
  p.pw1_w = detail::glorot_uniform<T>(rng, {c1, pw1}, c1, pw1);
  p.pw1_b = zeros<T>({pw1});
  p.dw2_w = detail::glorot_uniform<T>(rng, {kd, kd, pw1}, kd * kd, kd * kd);
  p.dw2_b = zeros<T>({pw1});
  p.pw2_w = detail::glorot_uniform<T>(rng, {pw1, pw2}, pw1, pw2);
  p.pw2_b = zeros<T>({pw2});
  p.fc1_w = detail::glorot_uniform<T>(rng, {trunk, cfg.fc_width}, trunk, cfg.fc_width);
  p.fc1_b = zeros<T>({cfg.fc_width});
  p.fc2_w = detail::glorot_uniform<T>(rng, {cfg.fc_width, cfg.fc_width}, cfg.fc_width, cfg.fc_width);
  p.fc2_b = zeros<T>({cfg.fc_width});
  p.head_age_w = detail::glorot_uniform<T>(rng, {cfg.fc_width, cfg.age_classes}, cfg.fc_width,
                                           cfg.age_classes);
  p.head_age_b = zeros<T>({cfg.age_classes});
  p.head_gender_w = detail::glorot_uniform<T>(rng, {cfg.fc_width, cfg.gender_classes}, cfg.fc_width,
                                              cfg.gender_classes);
  p.head_gender_b = zeros<T>({cfg.gender_classes});
  return p;
}

template <typename T = float>
ModelParams<T> build_lmtcnn(const Rational& alpha1, const Rational& alpha2, int input_size,
                            int age_classes, int gender_classes, Rng& rng) {
  NetworkConfig cfg;
  cfg.input_size = input_size;
  cfg.alpha1 = alpha1;
  cfg.alpha2 = alpha2;
  cfg.age_classes = age_classes;
  cfg.gender_classes = gender_classes;
  return build_network<T>(cfg, rng);
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& src) {
  ModelParams<T> out = src;
  for_each_tensor(out, [](const char*, Tensor<T>& t) {
    std::fill(t.data.begin(), t.data.end(), T(0));
  });
  return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& t) {
  Tensor<T> out;
  out.shape = {static_cast<int>(t.numel())};
  out.data = t.data;
  return out;
}

/// Every intermediate of one forward pass, kept for backpropagation.
template <typename T>
struct ForwardCache {
  Tensor<T> input;
  Tensor<T> conv1_out, conv1_relu, pool1_out, lrn_out;
  Tensor<T> dw1_out, pw1_out, pw1_relu, pool2_out;
  Tensor<T> dw2_out, pw2_out, pw2_relu, pool3_out;
  Tensor<T> trunk;  // pool3 flattened
  Tensor<T> fc1_out, fc1_relu;
  DropoutResult<T> drop1;
  Tensor<T> fc2_out, fc2_relu;
  DropoutResult<T> drop2;
  Tensor<T> age_logits, gender_logits;
};

inline ConvSpec conv1_spec(const NetworkConfig& cfg) {
  return ConvSpec{cfg.conv1_kernel, cfg.conv1_stride, Padding::kValid, 1};
}
inline ConvSpec ds_spec(const NetworkConfig& cfg) {
  return ConvSpec{cfg.ds_kernel, 1, Padding::kSame, 1};
}

/// Runs the shared trunk and both heads. In training mode dropout consumes
/// draws from `rng`; in inference mode the pass is a pure function.
template <typename T>
ForwardCache<T> forward_cached(const ModelParams<T>& p, const Tensor<T>& image, bool training,
                               Rng& rng) {
  const auto& cfg = p.config;
  if (image.rank() != 3 || image.extent(0) != cfg.input_size ||
      image.extent(1) != cfg.input_size || image.extent(2) != 3)
    throw ShapeMismatch("forward: image must be input_size x input_size x 3");

  ForwardCache<T> c;
  c.input = image;
  c.conv1_out = conv2d_forward(image, p.conv1_w, p.conv1_b, conv1_spec(cfg));
  c.conv1_relu = relu(c.conv1_out);
  c.pool1_out = maxpool2d(c.conv1_relu, kPoolWindow, kPool1Stride, Padding::kCeil);
  c.lrn_out = lrn(c.pool1_out, kLrnSpec);
  c.dw1_out = depthwise_conv2d_forward(c.lrn_out, p.dw1_w, p.dw1_b, ds_spec(cfg));
  c.pw1_out = pointwise_conv2d_forward(c.dw1_out, p.pw1_w, p.pw1_b);
  c.pw1_relu = relu(c.pw1_out);
  c.pool2_out = maxpool2d(c.pw1_relu, kPoolWindow, kPool2Stride, Padding::kCeil);
  c.dw2_out = depthwise_conv2d_forward(c.pool2_out, p.dw2_w, p.dw2_b, ds_spec(cfg));
  c.pw2_out = pointwise_conv2d_forward(c.dw2_out, p.pw2_w, p.pw2_b);
  c.pw2_relu = relu(c.pw2_out);
  c.pool3_out = maxpool2d(c.pw2_relu, kPoolWindow, kPool3Stride, Padding::kCeil);
  c.trunk = flatten(c.pool3_out);
  c.fc1_out = fully_connected(c.trunk, p.fc1_w, p.fc1_b);
  c.fc1_relu = relu(c.fc1_out);
  c.drop1 = dropout_with_mask(c.fc1_relu, kDropoutRate, training, rng);
  c.fc2_out = fully_connected(c.drop1.output, p.fc2_w, p.fc2_b);
  c.fc2_relu = relu(c.fc2_out);
  c.drop2 = dropout_with_mask(c.fc2_relu, kDropoutRate, training, rng);
  c.age_logits = fully_connected(c.drop2.output, p.head_age_w, p.head_age_b);
  c.gender_logits = fully_connected(c.drop2.output, p.head_gender_w, p.head_gender_b);
  return c;
}

template <typename T>
struct HeadLogits {
  Tensor<T> age;
  Tensor<T> gender;
};

template <typename T>
HeadLogits<T> forward_trunk_heads(const ModelParams<T>& p, const Tensor<T>& image, bool training,
                                  Rng& rng) {
  auto cache = forward_cached(p, image, training, rng);
  return {std::move(cache.age_logits), std::move(cache.gender_logits)};
}

template <typename T>
HeadLogits<T> forward_inference(const ModelParams<T>& p, const Tensor<T>& image) {
  Rng unused(0);
  return forward_trunk_heads(p, image, /*training=*/false, unused);
}

/// Accumulates parameter gradients (+=) into `grads` for one sample, given
/// the cached forward pass and the gradients at both head logits.
/// The image gradient is not computed; nothing upstream needs it.
template <typename T>
void network_backward(const ModelParams<T>& p, const ForwardCache<T>& c, const Tensor<T>& d_age,
                      const Tensor<T>& d_gender, ModelParams<T>& grads) {
  auto accumulate = [](Tensor<T>& dst, const Tensor<T>& src) {
    if (dst.shape.empty()) {
      dst = src;
      return;
    }
    for (std::size_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
  };

  auto g_age = fully_connected_backward(c.drop2.output, p.head_age_w, d_age);
  auto g_gender = fully_connected_backward(c.drop2.output, p.head_gender_w, d_gender);
  accumulate(grads.head_age_w, g_age.weights);
  accumulate(grads.head_age_b, g_age.bias);
  accumulate(grads.head_gender_w, g_gender.weights);
  accumulate(grads.head_gender_b, g_gender.bias);

  Tensor<T> d = add(g_age.input, g_gender.input);
  d = dropout_backward(c.drop2.mask, d);
  d = relu_backward(c.fc2_out, d);
  auto g_fc2 = fully_connected_backward(c.drop1.output, p.fc2_w, d);
  accumulate(grads.fc2_w, g_fc2.weights);
  accumulate(grads.fc2_b, g_fc2.bias);

  d = dropout_backward(c.drop1.mask, g_fc2.input);
  d = relu_backward(c.fc1_out, d);
  auto g_fc1 = fully_connected_backward(c.trunk, p.fc1_w, d);
  accumulate(grads.fc1_w, g_fc1.weights);
  accumulate(grads.fc1_b, g_fc1.bias);

  Tensor<T> d3 = g_fc1.input;
  d3.shape = c.pool3_out.shape;
  Tensor<T> dmap = maxpool2d_backward(c.pw2_relu, kPoolWindow, kPool3Stride, Padding::kCeil, d3);
  dmap = relu_backward(c.pw2_out, dmap);
  auto g_pw2 = pointwise_conv2d_backward(c.dw2_out, p.pw2_w, dmap);
  accumulate(grads.pw2_w, g_pw2.weights);
  accumulate(grads.pw2_b, g_pw2.bias);
  auto g_dw2 = depthwise_conv2d_backward(c.pool2_out, p.dw2_w, ds_spec(p.config), g_pw2.input);
  accumulate(grads.dw2_w, g_dw2.weights);
  accumulate(grads.dw2_b, g_dw2.bias);

  dmap = maxpool2d_backward(c.pw1_relu, kPoolWindow, kPool2Stride, Padding::kCeil, g_dw2.input);
  dmap = relu_backward(c.pw1_out, dmap);
  auto g_pw1 = pointwise_conv2d_backward(c.dw1_out, p.pw1_w, dmap);
  accumulate(grads.pw1_w, g_pw1.weights);
  accumulate(grads.pw1_b, g_pw1.bias);
  auto g_dw1 = depthwise_conv2d_backward(c.lrn_out, p.dw1_w, ds_spec(p.config), g_pw1.input);
  accumulate(grads.dw1_w, g_dw1.weights);
  accumulate(grads.dw1_b, g_dw1.bias);

  dmap = lrn_backward(c.pool1_out, kLrnSpec, g_dw1.input);
  dmap = maxpool2d_backward(c.conv1_relu, kPoolWindow, kPool1Stride, Padding::kCeil, dmap);
  dmap = relu_backward(c.conv1_out, dmap);
  auto g_c1 = conv2d_backward(c.input, p.conv1_w, conv1_spec(p.config), dmap,
                              /*need_input_grad=*/false);
  accumulate(grads.conv1_w, g_c1.weights);
  accumulate(grads.conv1_b, g_c1.bias);
}

/// Class probabilities for both tasks plus argmax labels (ties resolve to
/// the lower index).
struct Prediction {
  std::vector<float> age_probs;
  std::vector<float> gender_probs;
  int age_label = 0;
  int gender_label = 0;
};

inline int argmax(const std::vector<float>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline Prediction predict(const ModelParams<float>& p, const Tensor<float>& image) {
  auto logits = forward_inference(p, image);
  Prediction out;
  out.age_probs = softmax(logits.age).data;
  out.gender_probs = softmax(logits.gender).data;
  out.age_label = argmax(out.age_probs);
  out.gender_label = argmax(out.gender_probs);
  return out;
}

}  // namespace lmtcnn
