#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "lmtcnn/dataset.hpp"
#include "lmtcnn/image.hpp"
#include "lmtcnn/network.hpp"
#include "lmtcnn/threading.hpp"

namespace lmtcnn {

struct LabelOutOfRange : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct EmptyIndexSet : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
  int epochs = 1;
  double gender_loss_weight = 1.0;  // lambda
  std::uint64_t seed = 1;
};

namespace detail {

/// log(sum exp(l)) - l[label], evaluated stably; finite for any finite logits.
template <typename T>
T cross_entropy(const Tensor<T>& logits, int label) {
  if (label < 0 || label >= logits.extent(0))
    throw LabelOutOfRange("class label " + std::to_string(label) + " out of range");
  const T mx = *std::max_element(logits.data.begin(), logits.data.end());
  T sum = T(0);
  for (T v : logits.data) sum += std::exp(v - mx);
  return std::log(sum) - (logits.data[static_cast<std::size_t>(label)] - mx);
}

}  // namespace detail

/// Joint objective: age cross-entropy plus lambda times gender cross-entropy.
template <typename T>
T multitask_loss(const Tensor<T>& age_logits, const Tensor<T>& gender_logits, int age_label,
                 int gender_label, double lambda) {
  return detail::cross_entropy(age_logits, age_label) +
         static_cast<T>(lambda) * detail::cross_entropy(gender_logits, gender_label);
}

/// Gradients of multitask_loss at both heads: softmax minus one-hot, the
/// gender side scaled by lambda.
template <typename T>
HeadLogits<T> multitask_loss_backward(const Tensor<T>& age_logits, const Tensor<T>& gender_logits,
                                      int age_label, int gender_label, double lambda) {
  if (age_label < 0 || age_label >= age_logits.extent(0) || gender_label < 0 ||
      gender_label >= gender_logits.extent(0))
    throw LabelOutOfRange("class label out of range");
  HeadLogits<T> g{softmax(age_logits), softmax(gender_logits)};
  g.age.data[static_cast<std::size_t>(age_label)] -= T(1);
  for (auto& v : g.gender.data) v *= static_cast<T>(lambda);
  g.gender.data[static_cast<std::size_t>(gender_label)] -= static_cast<T>(lambda);
  return g;
}

/// Pointers to every tensor in definition order; lets parallel structures
/// (params, gradients, velocities) be walked in lockstep.
template <typename P>
auto tensor_list(P& params) {
  std::vector<decltype(&params.conv1_w)> out;
  out.reserve(18);
  for_each_tensor(params, [&out](const char*, auto& t) { out.push_back(&t); });
  return out;
}

/// Momentum SGD: v <- momentum * v - lr * g; p <- p + v, tensor by tensor.
template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, ModelParams<T>& velocity,
              const TrainConfig& cfg) {
  const T mom = static_cast<T>(cfg.momentum);
  const T lr = static_cast<T>(cfg.learning_rate);
  auto ps = tensor_list(params);
  auto gs = tensor_list(grads);
  auto vs = tensor_list(velocity);
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (!ps[t]->same_shape(*gs[t]) || !ps[t]->same_shape(*vs[t]))
      throw ShapeMismatch("sgd_step: tensor shapes differ");
    for (std::size_t i = 0; i < ps[t]->numel(); ++i) {
      vs[t]->data[i] = mom * vs[t]->data[i] - lr * gs[t]->data[i];
      ps[t]->data[i] += vs[t]->data[i];
    }
  }
}

struct EvalMetrics {
  double age_top1 = 0.0;
  double age_top2 = 0.0;   // rank-2 containment, ties broken toward lower index
  double age_1off = 0.0;   // predicted group equal or adjacent to the truth
  double gender_top1 = 0.0;
  int n = 0;
};

namespace detail {

/// 0-based rank of `label` under descending probability, ties resolved
/// toward lower indices. label is top-k iff rank < k.
inline int label_rank(const std::vector<float>& probs, int label) {
  int rank = 0;
  const float p = probs[static_cast<std::size_t>(label)];
  for (int j = 0; j < static_cast<int>(probs.size()); ++j) {
    if (probs[static_cast<std::size_t>(j)] > p) ++rank;
    else if (probs[static_cast<std::size_t>(j)] == p && j < label) ++rank;
  }
  return rank;
}

struct MetricCounts {
  int age_top1 = 0, age_top2 = 0, age_1off = 0, gender_top1 = 0, n = 0;

  void add(const Prediction& pred, int age_label, int gender_label) {
    const int r = label_rank(pred.age_probs, age_label);
    age_top1 += r == 0;
    age_top2 += r < 2;
    age_1off += std::abs(pred.age_label - age_label) <= 1;
    gender_top1 += label_rank(pred.gender_probs, gender_label) == 0;
    ++n;
  }

  EvalMetrics finish() const {
    EvalMetrics m;
    m.n = n;
    m.age_top1 = static_cast<double>(age_top1) / n;
    m.age_top2 = static_cast<double>(age_top2) / n;
    m.age_1off = static_cast<double>(age_1off) / n;
    m.gender_top1 = static_cast<double>(gender_top1) / n;
    return m;
  }
};

}  // namespace detail

/// Scores the listed records. With use_oversampling the full ten-crop
/// protocol runs per image; otherwise a single scaled center crop does.
inline EvalMetrics evaluate(const ModelParams<float>& params, const DatasetManifest& manifest,
                            const std::vector<int>& indices, bool use_oversampling) {
  if (indices.empty()) throw EmptyIndexSet("evaluate: empty index set");
  std::vector<Prediction> preds(indices.size());
  parallel_for(indices.size(), [&](std::size_t i) {
    const Tensor<float> img = record_image(manifest, static_cast<std::size_t>(indices[i]));
    preds[i] = use_oversampling
                   ? predict_oversampled(params, img)
                   : predict(params, prepare_center(img, params.config.input_size));
  });
  detail::MetricCounts counts;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& rec = manifest.records[static_cast<std::size_t>(indices[i])];
    counts.add(preds[i], rec.age_class, rec.gender_class);
  }
  return counts.finish();
}

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_age_top1 = 0.0;
  double val_age_top2 = 0.0;
  double val_gender_top1 = 0.0;

  /// `epoch,train_loss,val_age_top1,val_age_top2,val_gender_top1`
  std::string line() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f", epoch, train_loss, val_age_top1,
                  val_age_top2, val_gender_top1);
    return buf;
  }
};

/// Minibatch SGD over the train split, one log entry per epoch. Deterministic
/// for a fixed config seed: shuffles, dropout draws and update order are all
/// tied to one generator consumed in a fixed sequence.
inline std::vector<EpochLog> train(ModelParams<float>& params, const DatasetManifest& manifest,
                                   const FoldSplit& split, const TrainConfig& cfg) {
  if (split.train.empty()) throw EmptyIndexSet("train: empty train split");

  const int input = params.config.input_size;
  auto prepare = [&](const std::vector<int>& idx) {
    std::vector<Tensor<float>> out(idx.size());
    parallel_for(idx.size(), [&](std::size_t i) {
      out[i] = prepare_center(record_image(manifest, static_cast<std::size_t>(idx[i])), input);
    });
    return out;
  };
  const std::vector<Tensor<float>> train_inputs = prepare(split.train);
  const std::vector<Tensor<float>> val_inputs = prepare(split.val);

  Rng rng(cfg.seed);
  ModelParams<float> velocity = zeros_like(params);
  std::vector<int> order(split.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  std::vector<EpochLog> logs;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[rng.next_below(i + 1)]);

    double loss_sum = 0.0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t batch_end = std::min(done + static_cast<std::size_t>(cfg.batch_size), order.size());
      const std::size_t batch_n = batch_end - done;
      ModelParams<float> grads = zeros_like(params);
      for (std::size_t b = done; b < batch_end; ++b) {
        const int local = order[b];
        const auto& rec = manifest.records[static_cast<std::size_t>(split.train[static_cast<std::size_t>(local)])];
        auto cache = forward_cached(params, train_inputs[static_cast<std::size_t>(local)],
                                    /*training=*/true, rng);
        loss_sum += multitask_loss(cache.age_logits, cache.gender_logits, rec.age_class,
                                   rec.gender_class, cfg.gender_loss_weight);
        auto head_grads = multitask_loss_backward(cache.age_logits, cache.gender_logits,
                                                  rec.age_class, rec.gender_class,
                                                  cfg.gender_loss_weight);
        network_backward(params, cache, head_grads.age, head_grads.gender, grads);
      }
      const float inv = 1.0f / static_cast<float>(batch_n);
      for_each_tensor(grads, [inv](const char*, Tensor<float>& t) {
        for (auto& v : t.data) v *= inv;
      });
      sgd_step(params, grads, velocity, cfg);
      done = batch_end;
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    if (!split.val.empty()) {
      detail::MetricCounts counts;
      std::vector<Prediction> preds(val_inputs.size());
      parallel_for(val_inputs.size(), [&](std::size_t i) { preds[i] = predict(params, val_inputs[i]); });
      for (std::size_t i = 0; i < val_inputs.size(); ++i) {
        const auto& rec = manifest.records[static_cast<std::size_t>(split.val[i])];
        counts.add(preds[i], rec.age_class, rec.gender_class);
      }
      const EvalMetrics m = counts.finish();
      log.val_age_top1 = m.age_top1;
      log.val_age_top2 = m.age_top2;
      log.val_gender_top1 = m.gender_top1;
    }
    logs.push_back(log);
  }
  return logs;
}

}  // namespace lmtcnn
