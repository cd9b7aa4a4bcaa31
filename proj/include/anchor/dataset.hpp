#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

// Image classification dataset. Pixel values live in [0,1]; every transform
// preserves N, shapes, num_classes and the value range, and appends one entry
// to the provenance chain.
struct Dataset {
  Tensor images;  // [N,C,H,W]
  std::vector<int> labels;
  int num_classes = 0;
  std::string name;
  std::vector<std::string> provenance;
  // Synthetic-generator metadata: class ids [num_classes, num_classes +
  // reserved_classes) are reserved for anomaly holdout sets.
  int reserved_classes = 0;

  std::int64_t n() const { return images.dim(0); }
  std::int64_t channels() const { return images.dim(1); }
  std::int64_t height() const { return images.dim(2); }
  std::int64_t width() const { return images.dim(3); }

  // Copies of the rows named by `indices`, labels included.
  Dataset subset(const std::vector<std::int64_t>& indices) const;
  Tensor gather_images(const std::vector<std::int64_t>& indices) const;
  void validate() const;
};

enum class CorruptionKind {
  gaussian_noise,
  impulse_noise,
  gaussian_blur,
  contrast,
  brightness,
  pixelate,
};

const std::vector<CorruptionKind>& all_corruption_kinds();
std::string corruption_kind_name(CorruptionKind kind);
CorruptionKind corruption_kind_from_name(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // in [1,5]
  std::uint64_t seed = 0;
};

// Severity parameter tables (index severity-1).
double corruption_parameter(CorruptionKind kind, int severity);

// CIFAR-10 binary format: 3073-byte records, 1 label byte then 3072 pixel
// bytes as three 32x32 row-major channel planes; pixels divided by 255.
Dataset load_cifar10_file(const std::filesystem::path& file);
void save_cifar10_file(const Dataset& ds, const std::filesystem::path& file);

struct Cifar10 {
  Dataset train;
  Dataset test;
};
// Loads data_batch_{1..5}.bin and test_batch.bin from `dir`.
Cifar10 load_cifar10(const std::filesystem::path& dir);

// Synthetic desk-scale task: class c is a 3-channel sinusoidal grating with
// orientation pi*c/num_classes and frequency 2 + (c mod 3) cycles, plus
// per-sample Gaussian pixel jitter and integer translation, clamped to [0,1].
Dataset gen_synthetic(int num_classes, std::int64_t n, int height, int width,
                      std::uint64_t seed, double jitter_sigma = 0.05,
                      int max_translation = 2, int reserved_classes = 2);

Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec);

// Exposed severity-free transforms backing `corrupt`; useful for the
// degenerate parameter checks (e.g. sigma = 0 is the identity).
void apply_gaussian_noise(std::vector<double>& pixels, double sigma, Rng& rng);
void apply_impulse_noise(std::vector<double>& pixels, double flip_prob, Rng& rng);
void apply_gaussian_blur(std::vector<double>& pixels, std::int64_t c,
                         std::int64_t h, std::int64_t w, double sigma);
void apply_contrast(std::vector<double>& pixels, double scale);
void apply_brightness(std::vector<double>& pixels, double delta);
void apply_pixelate(std::vector<double>& pixels, std::int64_t c, std::int64_t h,
                    std::int64_t w, double factor);

// Flips exactly round(fraction*N) distinct labels, each reassigned uniformly
// among the other num_classes-1 classes. Images untouched.
Dataset inject_label_noise(const Dataset& ds, double fraction, std::uint64_t seed);

enum class AnomalyKind { uniform_noise, class_holdout };
std::string anomaly_kind_name(AnomalyKind kind);
AnomalyKind anomaly_kind_from_name(const std::string& name);

// uniform_noise: i.i.d. U[0,1] images. class_holdout: synthetic samples from
// the reserved class ids the base dataset never used for training.
Dataset make_anomaly_set(AnomalyKind kind, const Dataset& base, std::int64_t n,
                         std::uint64_t seed);

// Simple persistent container: header (magic, version, N, C, H, W,
// num_classes, provenance JSON) followed by little-endian float32 pixels and
// int32 labels.
void save_dataset(const Dataset& ds, const std::filesystem::path& file);
Dataset load_dataset(const std::filesystem::path& file);

}  // namespace anchor
