#ifndef DROPNAS_IO_DATASET_HPP
#define DROPNAS_IO_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dropnas/core/errors.hpp"
#include "dropnas/core/rng.hpp"
#include "dropnas/core/tensor.hpp"

namespace dropnas {

struct DatasetSpec {
  std::string kind = "synthetic-spirals";  // synthetic-blobs | synthetic-spirals | cifar10-binary
  std::string path;                        // cifar10-binary directory
  int classes = 3;
  int train_count = 320;
  int test_count = 160;
  int image_size = 12;
  int channels = 2;
  int subset = 0;  // cifar: first N records per file; 0 = all
  std::vector<Real> normalize_mean;  // per channel; empty = no normalization
  std::vector<Real> normalize_std;
};

struct Dataset {
  int count = 0, channels = 0, size = 0, classes = 0;
  std::vector<Real> images;  // [count, channels, size, size]
  std::vector<int> labels;

  long image_numel() const { return static_cast<long>(channels) * size * size; }
};

struct DatasetPair {
  Dataset train, test;
};

// Copy the selected samples into an untracked batch tensor.
inline Tensor make_batch(const Dataset& ds, const std::vector<int>& indices,
                         std::vector<int>& labels_out) {
  const long img = ds.image_numel();
  Tensor x = Tensor::zeros({static_cast<int>(indices.size()), ds.channels, ds.size, ds.size});
  labels_out.resize(indices.size());
  for (size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    std::copy(ds.images.data() + idx * img, ds.images.data() + (idx + 1) * img,
              x.v().data() + static_cast<long>(i) * img);
    labels_out[i] = ds.labels[static_cast<size_t>(idx)];
  }
  return x;
}

namespace detail {

inline void splat(std::vector<Real>& img, int size, int channel, double px, double py,
                  double amp) {
  // bilinear splat of a unit mass at (px, py)
  const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
  const double fx = px - x0, fy = py - y0;
  auto put = [&](int x, int y, double w) {
    if (x < 0 || x >= size || y < 0 || y >= size) return;
    img[static_cast<size_t>((channel * size + y) * size + x)] += static_cast<Real>(amp * w);
  };
  put(x0, y0, (1 - fx) * (1 - fy));
  put(x0 + 1, y0, fx * (1 - fy));
  put(x0, y0 + 1, (1 - fx) * fy);
  put(x0 + 1, y0 + 1, fx * fy);
}

// round-robin labels keep classes balanced
inline int balanced_label(int i, int classes) { return i % classes; }

inline void gen_spiral_image(std::vector<Real>& img, int size, int channels, int label,
                             int classes, RngStream& rng) {
  // a compact spiral arm with class-specific winding, drawn at a random
  // position and rotation: the local curve shape is the class signal, its
  // placement is a nuisance only translation-invariant features absorb
  const double rot = rng.uniform(0.0, 6.283185307179586);
  const double span = 0.30 * size;
  const double cx = size / 2.0 + rng.uniform(-span, span);
  const double cy = size / 2.0 + rng.uniform(-span, span);
  const int pts = 3 * size;
  const double theta_max = 4.2;
  const double winding = 1.0 + 0.6 * label;  // class k curls progressively tighter
  for (int t = 0; t < pts; ++t) {
    const double theta = theta_max * (t + 0.5) / pts;
    const double radius = (0.04 + 0.20 * theta / theta_max) * size;
    const double a = winding * theta + rot;
    const double nx = rng.normal() * 0.18, ny = rng.normal() * 0.18;
    const double px = cx + radius * std::cos(a) + nx;
    const double py = cy + radius * std::sin(a) + ny;
    splat(img, size, 0, px, py, 0.8);
    if (channels > 1) splat(img, size, 1, px, py, 0.8 * theta / theta_max);
  }
  for (Real& v : img) v += static_cast<Real>(rng.normal() * 0.03);
  (void)classes;
}

inline void gen_blob_image(std::vector<Real>& img, int size, int channels, int label,
                           int classes, RngStream& rng) {
  // class-specific blob centers per channel (fixed layout per class)
  for (int c = 0; c < channels; ++c) {
    RngStream proto(static_cast<std::uint64_t>(label * 131 + c), "blob-proto");
    const int blobs = 2;
    for (int b = 0; b < blobs; ++b) {
      const double bx = proto.uniform(0.2, 0.8) * size + rng.normal() * 0.6;
      const double by = proto.uniform(0.2, 0.8) * size + rng.normal() * 0.6;
      const double amp = 1.0 + 0.2 * rng.normal();
      for (int dy = -2; dy <= 2; ++dy)
        for (int dx = -2; dx <= 2; ++dx)
          splat(img, size, c, bx + dx * 0.7, by + dy * 0.7,
                amp * std::exp(-0.5 * (dx * dx + dy * dy) / 1.2));
    }
  }
  for (Real& v : img) v += static_cast<Real>(rng.normal() * 0.02);
  (void)classes;
}

inline Dataset gen_synthetic(const DatasetSpec& spec, std::uint64_t seed, bool train) {
  Dataset ds;
  ds.count = train ? spec.train_count : spec.test_count;
  ds.channels = spec.channels;
  ds.size = spec.image_size;
  ds.classes = spec.classes;
  ds.images.assign(static_cast<size_t>(ds.count) * ds.image_numel(), Real(0));
  ds.labels.resize(static_cast<size_t>(ds.count));
  const bool spirals = spec.kind == "synthetic-spirals";
  const char* purpose = train ? "data-train" : "data-test";
  for (int i = 0; i < ds.count; ++i) {
    RngStream rng(seed, purpose, static_cast<std::uint64_t>(i));
    const int label = balanced_label(i, spec.classes);
    ds.labels[static_cast<size_t>(i)] = label;
    std::vector<Real> img(static_cast<size_t>(ds.image_numel()), Real(0));
    if (spirals)
      gen_spiral_image(img, ds.size, ds.channels, label, ds.classes, rng);
    else
      gen_blob_image(img, ds.size, ds.channels, label, ds.classes, rng);
    std::copy(img.begin(), img.end(), ds.images.begin() + i * ds.image_numel());
  }
  return ds;
}

}  // namespace detail

// Standard CIFAR-10 binary record layout: 1 label byte + 3072 pixel bytes
// (3 planes of 32x32, row-major). Pixels scaled to [0,1]; per-channel
// normalization is applied afterwards by apply_normalization().
inline void load_cifar10_file(const std::string& file, Dataset& ds, int subset) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 file: " + file);
  constexpr long kRecord = 3073;
  constexpr long kPixels = 3072;
  std::vector<unsigned char> rec(kRecord);
  long offset = 0;
  int loaded = 0;
  while (true) {
    if (subset > 0 && loaded >= subset) break;
    in.read(reinterpret_cast<char*>(rec.data()), kRecord);
    const long got = in.gcount();
    if (got == 0) break;
    if (got != kRecord)
      throw IoError("CIFAR-10 format error in " + file + ": short record (" +
                    std::to_string(got) + " bytes) at byte offset " + std::to_string(offset));
    const int label = rec[0];
    if (label > 9)
      throw IoError("CIFAR-10 format error in " + file + ": label " + std::to_string(label) +
                    " out of range at byte offset " + std::to_string(offset));
    ds.labels.push_back(label);
    for (long i = 0; i < kPixels; ++i)
      ds.images.push_back(static_cast<Real>(rec[static_cast<size_t>(1 + i)]) / Real(255));
    ++ds.count;
    ++loaded;
    offset += kRecord;
  }
}

inline void apply_normalization(Dataset& ds, const std::vector<Real>& mean,
                                const std::vector<Real>& stddev) {
  if (mean.empty()) return;
  if (static_cast<int>(mean.size()) != ds.channels ||
      static_cast<int>(stddev.size()) != ds.channels)
    throw ConfigError("normalization constants do not match channel count");
  const long plane = static_cast<long>(ds.size) * ds.size;
  for (int i = 0; i < ds.count; ++i)
    for (int c = 0; c < ds.channels; ++c) {
      Real* p = ds.images.data() + (static_cast<long>(i) * ds.channels + c) * plane;
      for (long k = 0; k < plane; ++k)
        p[k] = (p[k] - mean[static_cast<size_t>(c)]) / stddev[static_cast<size_t>(c)];
    }
}

inline DatasetPair load_cifar10_binary(const DatasetSpec& spec) {
  namespace fs = std::filesystem;
  DatasetPair pair;
  pair.train.channels = pair.test.channels = 3;
  pair.train.size = pair.test.size = 32;
  pair.train.classes = pair.test.classes = 10;
  std::vector<std::string> train_files;
  for (int i = 1; i <= 5; ++i) {
    fs::path p = fs::path(spec.path) / ("data_batch_" + std::to_string(i) + ".bin");
    if (fs::exists(p)) train_files.push_back(p.string());
  }
  if (train_files.empty())
    throw IoError("no data_batch_*.bin files under " + spec.path);
  for (const std::string& f : train_files) load_cifar10_file(f, pair.train, spec.subset);
  fs::path test = fs::path(spec.path) / "test_batch.bin";
  if (fs::exists(test))
    load_cifar10_file(test.string(), pair.test, spec.subset);
  apply_normalization(pair.train, spec.normalize_mean, spec.normalize_std);
  apply_normalization(pair.test, spec.normalize_mean, spec.normalize_std);
  return pair;
}

inline DatasetPair make_dataset(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "cifar10-binary") return load_cifar10_binary(spec);
  if (spec.kind != "synthetic-blobs" && spec.kind != "synthetic-spirals")
    throw ConfigError("unknown dataset kind '" + spec.kind + "'");
  DatasetPair pair;
  pair.train = detail::gen_synthetic(spec, seed, true);
  pair.test = detail::gen_synthetic(spec, seed, false);
  apply_normalization(pair.train, spec.normalize_mean, spec.normalize_std);
  apply_normalization(pair.test, spec.normalize_mean, spec.normalize_std);
  return pair;
}

}  // namespace dropnas

#endif
