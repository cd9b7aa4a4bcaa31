#include "anchor/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace anchor {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

std::uint64_t sample_sub_seed(std::uint64_t seed, std::int64_t index) {
  // sample i uses seed ^ hash(i); draws for one sample never depend on the
  // others, so shard order does not matter.
  return splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(index)));
}

void write_exact(std::ofstream& os, const void* data, std::size_t len) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
}

template <typename T>
void write_le(std::ofstream& os, T v) {
  static_assert(std::is_integral_v<T>);
  std::array<unsigned char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  }
  write_exact(os, buf.data(), buf.size());
}

template <typename T>
T read_le(std::ifstream& is) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), sizeof(T));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  }
  return static_cast<T>(v);
}

}  // namespace

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw ValidationError("dataset images must be [N,C,H,W], got " +
                          shape_str(images.shape()));
  }
  if (static_cast<std::int64_t>(labels.size()) != n()) {
    throw ValidationError("dataset has " + std::to_string(n()) + " images but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes + reserved_classes) {
      throw ValidationError("label " + std::to_string(y) + " out of range for " +
                            std::to_string(num_classes) + " classes");
    }
  }
}

Tensor Dataset::gather_images(const std::vector<std::int64_t>& indices) const {
  const std::int64_t row = channels() * height() * width();
  std::vector<double> out(indices.size() * static_cast<std::size_t>(row));
  const auto& src = images.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::int64_t idx = indices[i];
    if (idx < 0 || idx >= n()) {
      throw ValidationError("dataset index " + std::to_string(idx) + " out of range");
    }
    std::copy_n(src.begin() + idx * row, row, out.begin() + static_cast<std::int64_t>(i) * row);
  }
  return Tensor(Shape{static_cast<std::int64_t>(indices.size()), channels(),
                      height(), width()},
                std::move(out));
}

Dataset Dataset::subset(const std::vector<std::int64_t>& indices) const {
  Dataset out;
  out.images = gather_images(indices);
  out.labels.reserve(indices.size());
  for (auto idx : indices) out.labels.push_back(labels[static_cast<std::size_t>(idx)]);
  out.num_classes = num_classes;
  out.name = name;
  out.provenance = provenance;
  out.provenance.push_back("subset(n=" + std::to_string(indices.size()) + ")");
  out.reserved_classes = reserved_classes;
  return out;
}

const std::vector<CorruptionKind>& all_corruption_kinds() {
  static const std::vector<CorruptionKind> kinds = {
      CorruptionKind::gaussian_noise, CorruptionKind::impulse_noise,
      CorruptionKind::gaussian_blur,  CorruptionKind::contrast,
      CorruptionKind::brightness,     CorruptionKind::pixelate,
  };
  return kinds;
}

std::string corruption_kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::impulse_noise: return "impulse_noise";
    case CorruptionKind::gaussian_blur: return "gaussian_blur";
    case CorruptionKind::contrast: return "contrast";
    case CorruptionKind::brightness: return "brightness";
    case CorruptionKind::pixelate: return "pixelate";
  }
  throw ValidationError("unknown corruption kind");
}

CorruptionKind corruption_kind_from_name(const std::string& name) {
  for (auto kind : all_corruption_kinds()) {
    if (corruption_kind_name(kind) == name) return kind;
  }
  throw ValidationError("unknown corruption kind '" + name + "'");
}

double corruption_parameter(CorruptionKind kind, int severity) {
  if (severity < 1 || severity > 5) {
    throw ValidationError("corruption severity must be in [1,5], got " +
                          std::to_string(severity));
  }
  static const double gaussian_noise[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
  static const double impulse_noise[5] = {0.01, 0.03, 0.06, 0.10, 0.17};
  static const double gaussian_blur[5] = {0.4, 0.6, 0.9, 1.3, 1.8};
  static const double contrast[5] = {0.75, 0.60, 0.45, 0.30, 0.20};
  static const double brightness[5] = {0.05, 0.10, 0.15, 0.20, 0.30};
  static const double pixelate[5] = {1.25, 1.5, 2.0, 2.5, 3.0};
  const int i = severity - 1;
  switch (kind) {
    case CorruptionKind::gaussian_noise: return gaussian_noise[i];
    case CorruptionKind::impulse_noise: return impulse_noise[i];
    case CorruptionKind::gaussian_blur: return gaussian_blur[i];
    case CorruptionKind::contrast: return contrast[i];
    case CorruptionKind::brightness: return brightness[i];
    case CorruptionKind::pixelate: return pixelate[i];
  }
  throw ValidationError("unknown corruption kind");
}

namespace {

constexpr std::int64_t kCifarHw = 32;
constexpr std::int64_t kCifarRecordBytes = 1 + 3 * kCifarHw * kCifarHw;

}  // namespace

Dataset load_cifar10_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open CIFAR-10 file: " + file.string());
  is.seekg(0, std::ios::end);
  const std::int64_t size = static_cast<std::int64_t>(is.tellg());
  is.seekg(0);
  if (size <= 0 || size % kCifarRecordBytes != 0) {
    throw FormatError("CIFAR-10 file " + file.string() +
                      ": expected a multiple of " + std::to_string(kCifarRecordBytes) +
                      " bytes, found " + std::to_string(size));
  }
  const std::int64_t n = size / kCifarRecordBytes;
  std::vector<unsigned char> raw(static_cast<std::size_t>(size));
  is.read(reinterpret_cast<char*>(raw.data()), size);
  if (!is) throw FormatError("short read on " + file.string());

  Dataset ds;
  std::vector<double> pixels(static_cast<std::size_t>(n * 3 * kCifarHw * kCifarHw));
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const unsigned char* rec = raw.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) {
      throw FormatError("CIFAR-10 record " + std::to_string(i) + " has label byte " +
                        std::to_string(rec[0]) + ", expected 0..9");
    }
    ds.labels[static_cast<std::size_t>(i)] = rec[0];
    double* dst = pixels.data() + i * 3 * kCifarHw * kCifarHw;
    for (std::int64_t j = 0; j < 3 * kCifarHw * kCifarHw; ++j) {
      dst[j] = static_cast<double>(rec[1 + j]) / 255.0;
    }
  }
  ds.images = Tensor(Shape{n, 3, kCifarHw, kCifarHw}, std::move(pixels));
  ds.num_classes = 10;
  ds.name = "cifar10";
  ds.provenance = {"cifar10_binary(" + file.filename().string() + ")"};
  return ds;
}

void save_cifar10_file(const Dataset& ds, const std::filesystem::path& file) {
  if (ds.channels() != 3 || ds.height() != kCifarHw || ds.width() != kCifarHw) {
    throw FormatError("CIFAR-10 writer requires [N,3,32,32] images, got " +
                      shape_str(ds.images.shape()));
  }
  std::ofstream os(file, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + file.string());
  const auto& pix = ds.images.values();
  std::vector<unsigned char> rec(static_cast<std::size_t>(kCifarRecordBytes));
  for (std::int64_t i = 0; i < ds.n(); ++i) {
    rec[0] = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(i)]);
    const double* src = pix.data() + i * 3 * kCifarHw * kCifarHw;
    for (std::int64_t j = 0; j < 3 * kCifarHw * kCifarHw; ++j) {
      rec[static_cast<std::size_t>(1 + j)] =
          static_cast<unsigned char>(std::llround(src[j] * 255.0));
    }
    write_exact(os, rec.data(), rec.size());
  }
}

Cifar10 load_cifar10(const std::filesystem::path& dir) {
  Cifar10 out;
  Dataset train;
  for (int b = 1; b <= 5; ++b) {
    Dataset batch = load_cifar10_file(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    if (b == 1) {
      train = std::move(batch);
    } else {
      auto& dst = train.images.mutable_values();
      const auto& src = batch.images.values();
      dst.insert(dst.end(), src.begin(), src.end());
      train.labels.insert(train.labels.end(), batch.labels.begin(), batch.labels.end());
    }
  }
  const std::int64_t n = static_cast<std::int64_t>(train.labels.size());
  train.images = Tensor(Shape{n, 3, kCifarHw, kCifarHw},
                        std::move(train.images.mutable_values()));
  train.name = "cifar10_train";
  train.provenance = {"cifar10_binary(" + dir.string() + ")"};
  out.train = std::move(train);
  out.test = load_cifar10_file(dir / "test_batch.bin");
  out.test.name = "cifar10_test";
  out.test.provenance = {"cifar10_binary(" + dir.string() + ")"};
  return out;
}

namespace {

// Renders one 3-channel grating for class id `c` under the orientation
// formula pi*c/num_classes; class ids >= num_classes give patterns outside
// the training family, which is what the holdout anomaly set uses.
void render_grating(double* img, int c, int num_classes, int height, int width,
                    Rng& rng, double jitter_sigma, int max_translation) {
  const double theta = kPi * c / num_classes;
  const double freq = 2.0 + static_cast<double>(c % 3);
  const double ct = std::cos(theta), st = std::sin(theta);
  int dx = 0, dy = 0;
  if (max_translation > 0) {
    dx = static_cast<int>(rng.uniform_int(2 * max_translation + 1)) - max_translation;
    dy = static_cast<int>(rng.uniform_int(2 * max_translation + 1)) - max_translation;
  }
  for (int k = 0; k < 3; ++k) {
    const double phase = 2.0 * kPi * k / 3.0;
    double* plane = img + static_cast<std::int64_t>(k) * height * width;
    for (int v = 0; v < height; ++v) {
      for (int u = 0; u < width; ++u) {
        const double coord = ((u + dx) * ct + (v + dy) * st) / width;
        double val = 0.5 + 0.5 * std::sin(2.0 * kPi * freq * coord + phase);
        if (jitter_sigma > 0.0) val += rng.normal(0.0, jitter_sigma);
        plane[v * width + u] = clamp01(val);
      }
    }
  }
}

}  // namespace

Dataset gen_synthetic(int num_classes, std::int64_t n, int height, int width,
                      std::uint64_t seed, double jitter_sigma, int max_translation,
                      int reserved_classes) {
  if (num_classes < 2) throw ValidationError("gen_synthetic: num_classes must be >= 2");
  if (n < 1) throw ValidationError("gen_synthetic: n must be >= 1");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.reserved_classes = reserved_classes;
  ds.name = "synthetic";
  ds.provenance = {"synthetic(classes=" + std::to_string(num_classes) +
                   ",n=" + std::to_string(n) + ",seed=" + std::to_string(seed) + ")"};

  // Balanced labels, order shuffled so batches mix classes.
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    ds.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % num_classes);
  }
  Rng shuffle_rng(derive_seed(seed, "label_order"));
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::swap(ds.labels[static_cast<std::size_t>(i)],
              ds.labels[static_cast<std::size_t>(shuffle_rng.uniform_int(i + 1))]);
  }

  std::vector<double> pixels(static_cast<std::size_t>(n) * 3 * height * width);
  for (std::int64_t i = 0; i < n; ++i) {
    Rng rng(sample_sub_seed(seed, i));
    render_grating(pixels.data() + i * 3 * height * width,
                   ds.labels[static_cast<std::size_t>(i)], num_classes, height,
                   width, rng, jitter_sigma, max_translation);
  }
  ds.images = Tensor(Shape{n, 3, height, width}, std::move(pixels));
  return ds;
}

void apply_gaussian_noise(std::vector<double>& pixels, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (double& v : pixels) v = clamp01(v + rng.normal(0.0, sigma));
}

void apply_impulse_noise(std::vector<double>& pixels, double flip_prob, Rng& rng) {
  if (flip_prob == 0.0) return;
  for (double& v : pixels) {
    if (rng.uniform() < flip_prob) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  }
}

void apply_gaussian_blur(std::vector<double>& pixels, std::int64_t c,
                         std::int64_t h, std::int64_t w, double sigma) {
  if (sigma == 0.0) return;
  // 5-tap separable kernel, edge-replicate padding.
  std::array<double, 5> k{};
  double norm = 0.0;
  for (int i = -2; i <= 2; ++i) {
    k[static_cast<std::size_t>(i + 2)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += k[static_cast<std::size_t>(i + 2)];
  }
  for (double& v : k) v /= norm;

  std::vector<double> tmp(static_cast<std::size_t>(h * w));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double* plane = pixels.data() + ch * h * w;
    // horizontal pass
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) {
          const std::int64_t xi = std::clamp<std::int64_t>(x + i, 0, w - 1);
          acc += k[static_cast<std::size_t>(i + 2)] * plane[y * w + xi];
        }
        tmp[static_cast<std::size_t>(y * w + x)] = acc;
      }
    }
    // vertical pass
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = -2; i <= 2; ++i) {
          const std::int64_t yi = std::clamp<std::int64_t>(y + i, 0, h - 1);
          acc += k[static_cast<std::size_t>(i + 2)] * tmp[static_cast<std::size_t>(yi * w + x)];
        }
        plane[y * w + x] = clamp01(acc);
      }
    }
  }
}

void apply_contrast(std::vector<double>& pixels, double scale) {
  double mean = 0.0;
  for (double v : pixels) mean += v;
  mean /= static_cast<double>(pixels.size());
  for (double& v : pixels) v = clamp01(mean + scale * (v - mean));
}

void apply_brightness(std::vector<double>& pixels, double delta) {
  for (double& v : pixels) v = clamp01(v + delta);
}

void apply_pixelate(std::vector<double>& pixels, std::int64_t c, std::int64_t h,
                    std::int64_t w, double factor) {
  if (factor <= 1.0) return;
  const std::int64_t h2 = std::max<std::int64_t>(1, std::llround(h / factor));
  const std::int64_t w2 = std::max<std::int64_t>(1, std::llround(w / factor));
  std::vector<double> small(static_cast<std::size_t>(h2 * w2));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double* plane = pixels.data() + ch * h * w;
    // nearest-neighbor down
    for (std::int64_t y = 0; y < h2; ++y) {
      const std::int64_t sy = std::min<std::int64_t>(h - 1, (y * h + h / 2) / h2);
      for (std::int64_t x = 0; x < w2; ++x) {
        const std::int64_t sx = std::min<std::int64_t>(w - 1, (x * w + w / 2) / w2);
        small[static_cast<std::size_t>(y * w2 + x)] = plane[sy * w + sx];
      }
    }
    // nearest-neighbor up
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = std::min<std::int64_t>(h2 - 1, y * h2 / h);
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = std::min<std::int64_t>(w2 - 1, x * w2 / w);
        plane[y * w + x] = small[static_cast<std::size_t>(sy * w2 + sx)];
      }
    }
  }
}

Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec) {
  const double param = corruption_parameter(spec.kind, spec.severity);
  Dataset out;
  out.labels = ds.labels;
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  out.reserved_classes = ds.reserved_classes;
  out.provenance = ds.provenance;
  out.provenance.push_back("corrupted(" + corruption_kind_name(spec.kind) + "," +
                           std::to_string(spec.severity) + ")");

  const std::int64_t c = ds.channels(), h = ds.height(), w = ds.width();
  const std::int64_t row = c * h * w;
  std::vector<double> pixels = ds.images.values();
  std::vector<double> sample(static_cast<std::size_t>(row));
  for (std::int64_t i = 0; i < ds.n(); ++i) {
    Rng rng(sample_sub_seed(spec.seed, i));
    std::copy_n(pixels.begin() + i * row, row, sample.begin());
    switch (spec.kind) {
      case CorruptionKind::gaussian_noise: apply_gaussian_noise(sample, param, rng); break;
      case CorruptionKind::impulse_noise: apply_impulse_noise(sample, param, rng); break;
      case CorruptionKind::gaussian_blur: apply_gaussian_blur(sample, c, h, w, param); break;
      case CorruptionKind::contrast: apply_contrast(sample, param); break;
      case CorruptionKind::brightness: apply_brightness(sample, param); break;
      case CorruptionKind::pixelate: apply_pixelate(sample, c, h, w, param); break;
    }
    std::copy_n(sample.begin(), row, pixels.begin() + i * row);
  }
  out.images = Tensor(ds.images.shape(), std::move(pixels));
  return out;
}

Dataset inject_label_noise(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) {
    throw ValidationError("label-noise fraction must be in [0,1], got " +
                          std::to_string(fraction));
  }
  Dataset out;
  out.images = ds.images;
  out.labels = ds.labels;
  out.num_classes = ds.num_classes;
  out.name = ds.name;
  out.reserved_classes = ds.reserved_classes;
  out.provenance = ds.provenance;
  out.provenance.push_back("label_noised(" + std::to_string(fraction) + ")");

  const std::int64_t n = ds.n();
  const std::int64_t count = std::llround(fraction * static_cast<double>(n));
  if (count == 0) return out;

  Rng rng(derive_seed(seed, "label_noise"));
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  // Partial Fisher-Yates: the first `count` entries are a uniform
  // without-replacement draw.
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t j = i + rng.uniform_int(n - i);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  for (std::int64_t i = 0; i < count; ++i) {
    const auto idx = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
    const int old = out.labels[idx];
    int k = static_cast<int>(rng.uniform_int(ds.num_classes - 1));
    if (k >= old) ++k;
    out.labels[idx] = k;
  }
  return out;
}

std::string anomaly_kind_name(AnomalyKind kind) {
  switch (kind) {
    case AnomalyKind::uniform_noise: return "uniform_noise";
    case AnomalyKind::class_holdout: return "class_holdout";
  }
  throw ValidationError("unknown anomaly kind");
}

AnomalyKind anomaly_kind_from_name(const std::string& name) {
  if (name == "uniform_noise") return AnomalyKind::uniform_noise;
  if (name == "class_holdout") return AnomalyKind::class_holdout;
  throw ValidationError("unknown anomaly kind '" + name + "'");
}

Dataset make_anomaly_set(AnomalyKind kind, const Dataset& base, std::int64_t n,
                         std::uint64_t seed) {
  if (n < 1) throw ValidationError("anomaly set size must be >= 1");
  const std::int64_t c = base.channels(), h = base.height(), w = base.width();
  if (kind == AnomalyKind::uniform_noise) {
    Dataset out;
    std::vector<double> pixels(static_cast<std::size_t>(n * c * h * w));
    for (std::int64_t i = 0; i < n; ++i) {
      Rng rng(sample_sub_seed(seed, i));
      double* img = pixels.data() + i * c * h * w;
      for (std::int64_t j = 0; j < c * h * w; ++j) img[j] = rng.uniform();
    }
    out.images = Tensor(Shape{n, c, h, w}, std::move(pixels));
    out.labels.assign(static_cast<std::size_t>(n), 0);
    out.num_classes = base.num_classes;
    out.name = "uniform_noise";
    out.provenance = {"anomaly(uniform_noise,n=" + std::to_string(n) + ")"};
    return out;
  }

  // class_holdout: gratings from the reserved class ids, same generator and
  // same orientation formula as the base dataset, so the patterns are from
  // (orientation, frequency) combinations training never saw.
  if (base.reserved_classes < 2) {
    throw ConfigError("class_holdout requires a base dataset generated with >= 2 "
                      "reserved classes, found " + std::to_string(base.reserved_classes));
  }
  const int base_classes = base.num_classes;
  const int reserved = base.reserved_classes;
  const std::uint64_t gen_seed = derive_seed(seed, "class_holdout");
  Dataset out;
  std::vector<double> pixels(static_cast<std::size_t>(n * c * h * w));
  out.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int cls = base_classes + static_cast<int>(i % reserved);
    out.labels[static_cast<std::size_t>(i)] = cls;
    Rng rng(sample_sub_seed(gen_seed, i));
    render_grating(pixels.data() + i * c * h * w, cls, base_classes,
                   static_cast<int>(h), static_cast<int>(w), rng, 0.05, 2);
  }
  out.images = Tensor(Shape{n, c, h, w}, std::move(pixels));
  out.num_classes = base_classes;
  out.reserved_classes = reserved;
  out.name = "class_holdout";
  out.provenance = {"anomaly(class_holdout,n=" + std::to_string(n) + ")"};
  return out;
}

namespace {
constexpr char kDatasetMagic[8] = {'A', 'N', 'C', 'D', 'S', 'E', 'T', '1'};
}

void save_dataset(const Dataset& ds, const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw FormatError("cannot open for write: " + file.string());
  write_exact(os, kDatasetMagic, sizeof(kDatasetMagic));
  write_le<std::uint32_t>(os, 1);  // version
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ds.n()));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ds.channels()));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ds.height()));
  write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ds.width()));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes));
  nlohmann::ordered_json prov;
  prov["name"] = ds.name;
  prov["chain"] = ds.provenance;
  prov["reserved_classes"] = ds.reserved_classes;
  const std::string prov_str = prov.dump();
  write_le<std::uint64_t>(os, prov_str.size());
  write_exact(os, prov_str.data(), prov_str.size());
  for (double v : ds.images.values()) {
    const auto f = static_cast<float>(v);
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    write_le<std::uint32_t>(os, bits);
  }
  for (int y : ds.labels) write_le<std::int32_t>(os, y);
}

Dataset load_dataset(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset file: " + file.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kDatasetMagic, sizeof(magic)) != 0) {
    throw FormatError("bad dataset magic in " + file.string());
  }
  const auto version = read_le<std::uint32_t>(is);
  if (version != 1) {
    throw FormatError("unsupported dataset version " + std::to_string(version) +
                      ", expected 1");
  }
  const auto n = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
  const auto c = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
  const auto h = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
  const auto w = static_cast<std::int64_t>(read_le<std::uint64_t>(is));
  const auto num_classes = static_cast<int>(read_le<std::uint32_t>(is));
  const auto prov_len = read_le<std::uint64_t>(is);
  std::string prov_str(prov_len, '\0');
  is.read(prov_str.data(), static_cast<std::streamsize>(prov_len));
  Dataset ds;
  ds.num_classes = num_classes;
  const auto prov = nlohmann::json::parse(prov_str, nullptr, false);
  if (prov.is_discarded()) throw FormatError("bad provenance JSON in " + file.string());
  ds.name = prov.value("name", "");
  ds.reserved_classes = prov.value("reserved_classes", 0);
  if (prov.contains("chain")) {
    for (const auto& e : prov["chain"]) ds.provenance.push_back(e.get<std::string>());
  }
  std::vector<double> pixels(static_cast<std::size_t>(n * c * h * w));
  for (auto& v : pixels) {
    const auto bits = read_le<std::uint32_t>(is);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    v = static_cast<double>(f);
  }
  ds.labels.resize(static_cast<std::size_t>(n));
  for (auto& y : ds.labels) y = static_cast<int>(read_le<std::int32_t>(is));
  if (!is) throw FormatError("short read on dataset file " + file.string());
  ds.images = Tensor(Shape{n, c, h, w}, std::move(pixels));
  return ds;
}

}  // namespace anchor
