#pragma once

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lmtcnn/model_io.hpp"
#include "lmtcnn/network.hpp"

namespace lmtcnn {

/// One convolution workload. Counts follow the convention that the output
/// map has the input's spatial size (stride-1, same padding, every kernel
/// tap counted), under which the closed forms below are exact.
struct CostQuery {
  std::uint64_t width = 1;
  std::uint64_t height = 1;
  std::uint64_t in_channels = 1;
  std::uint64_t kernel = 1;
  std::uint64_t out_channels = 1;
};

/// Multiplications of a general convolution: W * H * CI * K^2 * CO.
inline std::uint64_t general_conv_cost(const CostQuery& q) {
  return q.width * q.height * q.in_channels * q.kernel * q.kernel * q.out_channels;
}

/// Multiplications of the depthwise + pointwise factorization:
/// W * H * CI * (K^2 + CO).
inline std::uint64_t separable_conv_cost(const CostQuery& q) {
  return q.width * q.height * q.in_channels * (q.kernel * q.kernel + q.out_channels);
}

/// general / separable for any query with this kernel and output width:
/// K^2 * CO / (K^2 + CO). Below 1 for 1x1 kernels, grows with CO otherwise.
inline double speedup_ratio(int kernel, int out_channels) {
  const double k2 = static_cast<double>(kernel) * kernel;
  return k2 * out_channels / (k2 + out_channels);
}

struct CostRow {
  std::string layer;
  std::uint64_t multiplies = 0;
  std::uint64_t params = 0;
};

/// Separable block next to the general convolution it replaces.
struct BlockComparison {
  std::string block;
  std::uint64_t separable = 0;
  std::uint64_t general_equiv = 0;
  double ratio = 0.0;
};

struct CostReport {
  std::vector<CostRow> rows;
  std::vector<BlockComparison> blocks;
  std::uint64_t total_multiplies = 0;
  std::uint64_t total_params = 0;
  std::uint64_t size_estimate_bytes = 0;

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(14) << "layer" << std::right << std::setw(16) << "multiplies"
       << std::setw(12) << "params" << '\n';
    for (const auto& r : rows)
      os << std::left << std::setw(14) << r.layer << std::right << std::setw(16) << r.multiplies
         << std::setw(12) << r.params << '\n';
    os << std::left << std::setw(14) << "total" << std::right << std::setw(16) << total_multiplies
       << std::setw(12) << total_params << '\n';
    os << '\n'
       << std::left << std::setw(14) << "block" << std::right << std::setw(16) << "separable"
       << std::setw(16) << "general_eq" << std::setw(10) << "ratio" << '\n';
    for (const auto& b : blocks)
      os << std::left << std::setw(14) << b.block << std::right << std::setw(16) << b.separable
         << std::setw(16) << b.general_equiv << std::setw(10) << std::fixed
         << std::setprecision(4) << b.ratio << '\n';
    if (size_estimate_bytes > 0) os << "size_estimate_bytes " << size_estimate_bytes << '\n';
    return os.str();
  }

  /// One `layer,multiplies,params` row per line; the last row is the total.
  std::string to_csv() const {
    std::ostringstream os;
    for (const auto& r : rows) os << r.layer << ',' << r.multiplies << ',' << r.params << '\n';
    os << "total," << total_multiplies << ',' << total_params << '\n';
    return os.str();
  }
};

/// Analytical multiply and parameter counts for every parameterized layer of
/// a configuration, plus the separable-vs-general comparison per block.
inline CostReport network_cost(const NetworkConfig& cfg) {
  const auto table = shape_table(cfg);
  auto side = [&table](const char* layer) -> std::uint64_t {
    for (const auto& row : table)
      if (row.name == layer) return static_cast<std::uint64_t>(row.in[0]);
    throw std::logic_error("unknown layer in shape table");
  };
  const std::uint64_t s0 = static_cast<std::uint64_t>(cfg.input_size) * cfg.input_size;
  const std::uint64_t k1 = static_cast<std::uint64_t>(cfg.conv1_kernel);
  const std::uint64_t kd = static_cast<std::uint64_t>(cfg.ds_kernel);
  const std::uint64_t c1 = static_cast<std::uint64_t>(cfg.conv1_channels);
  const std::uint64_t pw1 = static_cast<std::uint64_t>(cfg.pw1_channels());
  const std::uint64_t pw2 = static_cast<std::uint64_t>(cfg.pw2_channels());
  const std::uint64_t fc = static_cast<std::uint64_t>(cfg.fc_width);
  const std::uint64_t trunk = static_cast<std::uint64_t>(table[10].in[0]);
  const std::uint64_t side1 = side("dw1");
  const std::uint64_t side2 = side("dw2");
  const std::uint64_t b1 = side1 * side1;
  const std::uint64_t b2 = side2 * side2;

  CostReport rep;
  auto row = [&rep](const std::string& name, std::uint64_t mult, std::uint64_t params) {
    rep.rows.push_back({name, mult, params});
    rep.total_multiplies += mult;
    rep.total_params += params;
  };
  row("conv1", s0 * 3 * k1 * k1 * c1, k1 * k1 * 3 * c1 + c1);
  row("dw1", b1 * c1 * kd * kd, kd * kd * c1 + c1);
  row("pw1", b1 * c1 * pw1, c1 * pw1 + pw1);
  row("dw2", b2 * pw1 * kd * kd, kd * kd * pw1 + pw1);
  row("pw2", b2 * pw1 * pw2, pw1 * pw2 + pw2);
  row("fc1", trunk * fc, trunk * fc + fc);
  row("fc2", fc * fc, fc * fc + fc);
  row("head_age", fc * cfg.age_classes, fc * cfg.age_classes + cfg.age_classes);
  row("head_gender", fc * cfg.gender_classes, fc * cfg.gender_classes + cfg.gender_classes);

  auto block = [&rep](const std::string& name, const CostQuery& q) {
    const std::uint64_t sep = separable_conv_cost(q);
    const std::uint64_t gen = general_conv_cost(q);
    rep.blocks.push_back({name, sep, gen, static_cast<double>(gen) / static_cast<double>(sep)});
  };
  block("ds_block1", {side1, side1, c1, kd, pw1});
  block("ds_block2", {side2, side2, pw1, kd, pw2});
  return rep;
}

/// Counts the parameters a model actually holds, layer by layer, and the
/// exact size its serialized file will have.
inline CostReport param_count(const ModelParams<float>& params) {
  CostReport rep = network_cost(params.config);
  // rows and tensors share the layer order: each row owns a weight + bias pair
  std::vector<std::uint64_t> counted(rep.rows.size(), 0);
  std::size_t i = 0;
  for_each_tensor(params, [&](const char*, const Tensor<float>& t) {
    counted[i / 2] += t.numel();
    ++i;
  });
  rep.total_params = 0;
  for (std::size_t r = 0; r < rep.rows.size(); ++r) {
    rep.rows[r].params = counted[r];
    rep.total_params += counted[r];
  }
  rep.size_estimate_bytes = serialized_size_bytes(params);
  return rep;
}

}  // namespace lmtcnn
