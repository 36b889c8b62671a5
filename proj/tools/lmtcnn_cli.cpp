// Command-line front end: train/eval/predict on manifests, cost + latency
// benchmarking, model inspection, and synthetic dataset generation.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <string>

#include <CLI11.hpp>

#include "lmtcnn/lmtcnn.hpp"

namespace {

constexpr int kFolds = 5;

lmtcnn::Rational parse_rational(const std::string& text) {
  const auto bad = [&text]() {
    return std::invalid_argument("cannot parse width multiplier '" + text + "'");
  };
  if (text.empty()) throw bad();
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    const unsigned long num = std::stoul(text.substr(0, slash));
    const unsigned long den = std::stoul(text.substr(slash + 1));
    if (num == 0 || den == 0) throw bad();
    return {static_cast<std::uint32_t>(num), static_cast<std::uint32_t>(den)};
  }
  const auto dot = text.find('.');
  if (dot == std::string::npos) {
    const unsigned long num = std::stoul(text);
    if (num == 0) throw bad();
    return {static_cast<std::uint32_t>(num), 1};
  }
  std::string digits = text.substr(0, dot) + text.substr(dot + 1);
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) throw bad();
  std::uint64_t num = std::stoull(digits);
  std::uint64_t den = 1;
  for (std::size_t i = 0; i < text.size() - dot - 1; ++i) den *= 10;
  if (num == 0) throw bad();
  const std::uint64_t g = std::gcd(num, den);
  return {static_cast<std::uint32_t>(num / g), static_cast<std::uint32_t>(den / g)};
}

double median_ms(std::vector<double>& samples) {
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

template <typename F>
double time_ms(F&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void print_prediction(const lmtcnn::Prediction& pred) {
  std::printf("age_label,%d\n", pred.age_label);
  std::printf("age_group,%s\n", lmtcnn::age_group_names()[static_cast<std::size_t>(pred.age_label)].c_str());
  std::printf("age_probs");
  for (float p : pred.age_probs) std::printf(",%.6f", p);
  std::printf("\ngender_label,%d\n", pred.gender_label);
  std::printf("gender_name,%s\n", lmtcnn::gender_names()[static_cast<std::size_t>(pred.gender_label)].c_str());
  std::printf("gender_probs");
  for (float p : pred.gender_probs) std::printf(",%.6f", p);
  std::printf("\n");
}

struct CommonNetFlags {
  std::string alpha1 = "2";
  std::string alpha2 = "1";
  int input_size = 227;
};

void add_net_flags(CLI::App* cmd, CommonNetFlags& flags) {
  cmd->add_option("--alpha1", flags.alpha1, "width multiplier of separable block 1 (int, decimal or num/den)");
  cmd->add_option("--alpha2", flags.alpha2, "width multiplier of separable block 2");
  cmd->add_option("--input-size", flags.input_size, "square network input size in pixels")
      ->check(CLI::PositiveNumber);
}

int run_train(const CommonNetFlags& net, const std::string& manifest_path, int synth_n,
              const lmtcnn::TrainConfig& tc, int fold, const std::string& out_path) {
  lmtcnn::DatasetManifest manifest = synth_n > 0
                                         ? lmtcnn::synth_dataset(synth_n, net.input_size, tc.seed)
                                         : lmtcnn::read_manifest(manifest_path);
  const auto splits = lmtcnn::kfold_split(manifest, kFolds, tc.seed);
  if (fold < 0 || fold >= kFolds) throw std::invalid_argument("--fold must lie in [0,5)");

  lmtcnn::Rng rng(tc.seed);
  auto params = lmtcnn::build_lmtcnn(parse_rational(net.alpha1), parse_rational(net.alpha2),
                                     net.input_size, 8, 2, rng);
  const auto logs = lmtcnn::train(params, manifest, splits[static_cast<std::size_t>(fold)], tc);
  for (const auto& log : logs) std::printf("%s\n", log.line().c_str());
  lmtcnn::save_model(params, out_path);
  return 0;
}

int run_eval(const std::string& manifest_path, const std::string& model_path, int fold,
             bool oversample, std::uint64_t seed) {
  const auto params = lmtcnn::load_model(model_path);
  const auto manifest = lmtcnn::read_manifest(manifest_path);
  const auto splits = lmtcnn::kfold_split(manifest, kFolds, seed);
  if (fold < 0 || fold >= kFolds) throw std::invalid_argument("--fold must lie in [0,5)");
  const auto m = lmtcnn::evaluate(params, manifest, splits[static_cast<std::size_t>(fold)].test,
                                  oversample);
  std::printf("%.6f,%.6f,%.6f,%.6f,%d\n", m.age_top1, m.age_top2, m.age_1off, m.gender_top1, m.n);
  return 0;
}

int run_predict(const std::string& model_path, const std::string& image_path, bool oversample) {
  const auto params = lmtcnn::load_model(model_path);
  const auto image = lmtcnn::ppm_read(image_path);
  const auto pred = oversample
                        ? lmtcnn::predict_oversampled(params, image)
                        : lmtcnn::predict(params, lmtcnn::prepare_center(image, params.config.input_size));
  print_prediction(pred);
  return 0;
}

int run_bench(const CommonNetFlags& net, int repeats, bool csv) {
  lmtcnn::NetworkConfig cfg;
  cfg.input_size = net.input_size;
  cfg.alpha1 = parse_rational(net.alpha1);
  cfg.alpha2 = parse_rational(net.alpha2);
  const auto report = lmtcnn::network_cost(cfg);
  std::fputs((csv ? report.to_csv() : report.to_table()).c_str(), stdout);

  lmtcnn::Rng rng(42);
  const auto params = lmtcnn::build_network<float>(cfg, rng);
  const auto image = lmtcnn::rng_uniform<float>(rng, {cfg.input_size, cfg.input_size, 3}, 0.0, 1.0);
  (void)lmtcnn::predict(params, image);  // warm-up
  std::vector<double> single, ten;
  for (int r = 0; r < repeats; ++r)
    single.push_back(time_ms([&] { (void)lmtcnn::predict(params, image); }));
  for (int r = 0; r < repeats; ++r)
    ten.push_back(time_ms([&] { (void)lmtcnn::predict_oversampled(params, image); }));
  std::printf("single_crop_ms,%.3f\n", median_ms(single));
  std::printf("ten_crop_ms,%.3f\n", median_ms(ten));
  return 0;
}

int run_inspect(const std::string& model_path) {
  const auto params = lmtcnn::load_model(model_path);
  const auto report = lmtcnn::param_count(params);
  const auto& cfg = params.config;
  std::printf("format_version,%u\n", static_cast<unsigned>(lmtcnn::kModelFormatVersion));
  std::printf("input_size,%d\n", cfg.input_size);
  std::printf("alpha1,%u/%u\n", cfg.alpha1.num, cfg.alpha1.den);
  std::printf("alpha2,%u/%u\n", cfg.alpha2.num, cfg.alpha2.den);
  std::printf("conv1,%dx%d stride %d channels %d\n", cfg.conv1_kernel, cfg.conv1_kernel,
              cfg.conv1_stride, cfg.conv1_channels);
  std::printf("separable_kernel,%d\n", cfg.ds_kernel);
  std::printf("pw1_channels,%d\npw2_channels,%d\n", cfg.pw1_channels(), cfg.pw2_channels());
  std::printf("fc_width,%d\n", cfg.fc_width);
  std::printf("heads,%d age classes + %d gender classes\n", cfg.age_classes, cfg.gender_classes);
  lmtcnn::for_each_tensor(params, [](const char* name, const lmtcnn::Tensor<float>& t) {
    std::string shape;
    for (int i = 0; i < t.rank(); ++i) shape += (i ? "x" : "") + std::to_string(t.extent(i));
    std::printf("tensor,%s,%s,%zu\n", name, shape.c_str(), t.numel());
  });
  std::printf("total_params,%llu\n", static_cast<unsigned long long>(report.total_params));
  std::printf("file_bytes,%llu\n",
              static_cast<unsigned long long>(std::filesystem::file_size(model_path)));
  return 0;
}

int run_synth(int n, int size, std::uint64_t seed, const std::string& out_dir) {
  const auto manifest = lmtcnn::synth_dataset(n, size, seed);
  const auto path = lmtcnn::save_dataset(manifest, out_dir);
  std::printf("%s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LMTCNN: joint age and gender estimation with depthwise separable convolutions"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap (1 keeps runs fully sequential)")
      ->check(CLI::PositiveNumber);

  // train
  auto* train_cmd = app.add_subcommand("train", "train on one cross-validation fold");
  CommonNetFlags train_net;
  add_net_flags(train_cmd, train_net);
  std::string train_manifest;
  int synth_n = 0;
  auto* src = train_cmd->add_option_group("data source");
  src->add_option("--manifest", train_manifest, "dataset manifest CSV")->check(CLI::ExistingFile);
  src->add_option("--synth", synth_n, "use an in-memory synthetic dataset of N images")
      ->check(CLI::PositiveNumber);
  src->require_option(1);
  lmtcnn::TrainConfig tc;
  tc.epochs = 10;
  int train_fold = 0;
  std::string out_path;
  train_cmd->add_option("--epochs", tc.epochs, "training epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", tc.learning_rate, "SGD learning rate");
  train_cmd->add_option("--momentum", tc.momentum, "SGD momentum");
  train_cmd->add_option("--batch", tc.batch_size, "minibatch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lambda", tc.gender_loss_weight, "gender loss weight");
  train_cmd->add_option("--seed", tc.seed, "seed for init, shuffles and dropout");
  train_cmd->add_option("--fold", train_fold, "cross-validation fold used as test set");
  train_cmd->add_option("--out", out_path, "model file to write")->required();

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a model on one fold's test set");
  std::string eval_manifest, eval_model;
  int eval_fold = 0;
  bool eval_oversample = false;
  std::uint64_t eval_seed = 1;
  eval_cmd->add_option("--manifest", eval_manifest, "dataset manifest CSV")
      ->required()
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--model", eval_model, "model file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--fold", eval_fold, "fold whose test set is scored");
  eval_cmd->add_flag("--oversample", eval_oversample, "use the ten-crop protocol");
  eval_cmd->add_option("--seed", eval_seed, "shuffle seed for manifests without preset folds");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "classify a single image");
  std::string predict_model, predict_image;
  bool predict_oversample = false;
  predict_cmd->add_option("--model", predict_model, "model file")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--image", predict_image, "PPM image")->required()->check(CLI::ExistingFile);
  predict_cmd->add_flag("--oversample", predict_oversample, "use the ten-crop protocol");

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "print the cost report and measure latency");
  CommonNetFlags bench_net;
  add_net_flags(bench_cmd, bench_net);
  int repeats = 5;
  bool bench_csv = false;
  bench_cmd->add_option("--repeats", repeats, "latency samples per path (median reported)")
      ->check(CLI::PositiveNumber);
  bench_cmd->add_flag("--csv", bench_csv, "machine-readable layer,multiplies,params rows");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "describe a model file");
  std::string inspect_model;
  inspect_cmd->add_option("--model", inspect_model, "model file")->required()->check(CLI::ExistingFile);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "materialize a synthetic dataset");
  int synth_count = 256, synth_size = 64;
  std::uint64_t synth_seed = 1;
  std::string synth_dir;
  synth_cmd->add_option("--n", synth_count, "record count")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_size, "image side in pixels")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--out", synth_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    lmtcnn::set_worker_threads(threads);
    if (*train_cmd)
      return run_train(train_net, train_manifest, synth_n, tc, train_fold, out_path);
    if (*eval_cmd) return run_eval(eval_manifest, eval_model, eval_fold, eval_oversample, eval_seed);
    if (*predict_cmd) return run_predict(predict_model, predict_image, predict_oversample);
    if (*bench_cmd) return run_bench(bench_net, repeats, bench_csv);
    if (*inspect_cmd) return run_inspect(inspect_model);
    if (*synth_cmd) return run_synth(synth_count, synth_size, synth_seed, synth_dir);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
