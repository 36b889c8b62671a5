#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lmtcnn/image.hpp"
#include "lmtcnn/tensor.hpp"

namespace lmtcnn {

struct TooFewRecords : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kTwoPi = 6.283185307179586476925286766559;

/// One labeled face image, carried either in memory or as a path relative
/// to the manifest.
struct ImageRecord {
  std::string path;            // empty for in-memory records
  Tensor<float> image;         // empty when backed by a file
  int age_class = 0;           // [0, 8)
  int gender_class = 0;        // [0, 2)
  int fold = 0;

  bool in_memory() const { return !image.shape.empty(); }
};

inline const std::vector<std::string>& age_group_names() {
  static const std::vector<std::string> names{"0-2",   "4-6",   "8-13",  "15-20",
                                              "25-32", "38-43", "48-53", "60+"};
  return names;
}
inline const std::vector<std::string>& gender_names() {
  static const std::vector<std::string> names{"f", "m"};
  return names;
}

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::string base_dir;  // directory image paths are relative to
};

inline Tensor<float> record_image(const DatasetManifest& manifest, std::size_t index) {
  const auto& rec = manifest.records[index];
  if (rec.in_memory()) return rec.image;
  const auto full = std::filesystem::path(manifest.base_dir) / rec.path;
  return ppm_read(full.string());
}

/// Train/validation/test index sets of one cross-validation split.
struct FoldSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

namespace detail {

inline bool has_preset_folds(const DatasetManifest& m, int k) {
  std::set<int> seen;
  for (const auto& r : m.records) {
    if (r.fold < 0 || r.fold >= k) return false;
    seen.insert(r.fold);
  }
  return static_cast<int>(seen.size()) == k;
}

}  // namespace detail

/// k splits where each fold serves once as the test set, fold (i+1) mod k as
/// validation, and the rest as training data. Records carrying a usable
/// fold assignment (every id in [0,k), all k present) are honored verbatim;
/// otherwise records are shuffled by `seed` and partitioned near-evenly.
inline std::vector<FoldSplit> kfold_split(const DatasetManifest& manifest, int k,
                                          std::uint64_t seed) {
  const int n = static_cast<int>(manifest.records.size());
  if (k < 2 || n < k) throw TooFewRecords("kfold_split: need at least k records and k >= 2");

  std::vector<int> fold_of(static_cast<std::size_t>(n));
  if (detail::has_preset_folds(manifest, k)) {
    for (int i = 0; i < n; ++i) fold_of[static_cast<std::size_t>(i)] = manifest.records[static_cast<std::size_t>(i)].fold;
  } else {
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(seed);
    for (int i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(i) + 1))]);
    // first n % k parts take one extra record
    int pos = 0;
    for (int f = 0; f < k; ++f) {
      const int size = n / k + (f < n % k ? 1 : 0);
      for (int j = 0; j < size; ++j) fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = f;
    }
  }

  std::vector<FoldSplit> splits(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const int val_fold = (i + 1) % k;
    auto& s = splits[static_cast<std::size_t>(i)];
    for (int r = 0; r < n; ++r) {
      const int f = fold_of[static_cast<std::size_t>(r)];
      if (f == i)
        s.test.push_back(r);
      else if (f == val_fold)
        s.val.push_back(r);
      else
        s.train.push_back(r);
    }
  }
  return splits;
}

/// Reads back the labels a synthetic image encodes; the exact inverse of
/// synth_dataset's generator. Gender is the sign of the right-minus-left
/// intensity difference; age is the column frequency with the most energy.
inline std::pair<int, int> synth_labels(const Tensor<float>& image) {
  const int h = image.extent(0), w = image.extent(1);
  std::vector<double> col(static_cast<std::size_t>(w), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) col[static_cast<std::size_t>(x)] += image(y, x, c);
  double mean = 0.0;
  for (double v : col) mean += v;
  mean /= w;

  double left = 0.0, right = 0.0;
  for (int x = 0; x < w / 2; ++x) left += col[static_cast<std::size_t>(x)];
  for (int x = w - w / 2; x < w; ++x) right += col[static_cast<std::size_t>(x)];
  const int gender = right > left ? 1 : 0;

  int best_age = 0;
  double best_power = -1.0;
  for (int a = 0; a < 8; ++a) {
    const double f = 2.0 * (a + 1);
    double re = 0.0, im = 0.0;
    for (int x = 0; x < w; ++x) {
      const double phase = kTwoPi * f * x / w;
      re += (col[static_cast<std::size_t>(x)] - mean) * std::cos(phase);
      im += (col[static_cast<std::size_t>(x)] - mean) * std::sin(phase);
    }
    const double power = re * re + im * im;
    if (power > best_power) {
      best_power = power;
      best_age = a;
    }
  }
  return {best_age, gender};
}

/// Deterministic synthetic dataset. Age class a paints 2*(a+1) sinusoid
/// cycles across the width; the gender class tilts intensity toward the left
/// or right half. Labels round-robin so every class and fold is populated,
/// and synth_labels recovers them exactly from the pixels.
inline DatasetManifest synth_dataset(int n, int size, std::uint64_t seed) {
  if (n < 1) throw TooFewRecords("synth_dataset: need at least one record");
  Rng rng(seed);
  DatasetManifest m;
  m.records.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ImageRecord rec;
    rec.age_class = i % 8;
    rec.gender_class = (i / 8) % 2;
    rec.fold = i % 5;
    const double phase = rng.next_double() * kTwoPi;
    const double amp = 0.2 + 0.1 * rng.next_double();
    const double tilt = 0.15 + 0.1 * rng.next_double();
    const double freq = 2.0 * (rec.age_class + 1);
    const double sign = rec.gender_class == 1 ? 1.0 : -1.0;

    rec.image = Tensor<float>({size, size, 3});
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double wave = amp * std::sin(kTwoPi * freq * x / size + phase);
        const double ramp = sign * tilt * (static_cast<double>(x) / (size - 1) - 0.5);
        double v = 0.5 + wave + ramp;
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        for (int c = 0; c < 3; ++c) rec.image(y, x, c) = static_cast<float>(v);
      }
    }
    m.records.push_back(std::move(rec));
  }
  return m;
}

// --- manifest file: `path,age,gender,fold` CSV with a header line ---

inline void write_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);  // binary keeps LF endings
  if (!f) throw ManifestError("cannot write manifest " + path);
  f << "path,age,gender,fold\n";
  for (const auto& r : manifest.records)
    f << r.path << ',' << r.age_class << ',' << r.gender_class << ',' << r.fold << '\n';
}

inline DatasetManifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ManifestError("cannot read manifest " + path);
  DatasetManifest m;
  m.base_dir = std::filesystem::path(path).parent_path().string();
  std::string line;
  if (!std::getline(f, line) || line != "path,age,gender,fold")
    throw ManifestError("manifest " + path + " lacks the `path,age,gender,fold` header");
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    ImageRecord rec;
    std::string field;
    if (!std::getline(ss, rec.path, ',')) throw ManifestError("bad manifest line " + std::to_string(lineno));
    auto int_field = [&ss, &field, lineno]() {
      if (!std::getline(ss, field, ',')) throw ManifestError("bad manifest line " + std::to_string(lineno));
      return std::stoi(field);
    };
    rec.age_class = int_field();
    rec.gender_class = int_field();
    rec.fold = int_field();
    if (rec.age_class < 0 || rec.age_class >= 8 || rec.gender_class < 0 || rec.gender_class >= 2 ||
        rec.fold < 0)
      throw ManifestError("labels out of range on manifest line " + std::to_string(lineno));
    m.records.push_back(std::move(rec));
  }
  if (m.records.empty()) throw ManifestError("manifest " + path + " has no records");
  return m;
}

/// Materializes an in-memory dataset as PPM files plus manifest.csv under
/// `dir`; returns the manifest path.
inline std::string save_dataset(const DatasetManifest& manifest, const std::string& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest on_disk;
  on_disk.base_dir = dir;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& rec = manifest.records[i];
    char name[32];
    std::snprintf(name, sizeof name, "img_%05zu.ppm", i);
    const auto full = std::filesystem::path(dir) / name;
    ppm_write(full.string(), rec.in_memory() ? rec.image : record_image(manifest, i));
    ImageRecord copy;
    copy.path = name;
    copy.age_class = rec.age_class;
    copy.gender_class = rec.gender_class;
    copy.fold = rec.fold;
    on_disk.records.push_back(std::move(copy));
  }
  const auto mpath = (std::filesystem::path(dir) / "manifest.csv").string();
  write_manifest(on_disk, mpath);
  return mpath;
}

}  // namespace lmtcnn
