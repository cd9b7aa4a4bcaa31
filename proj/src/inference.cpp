#include "anchor/inference.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

namespace anchor {

void ResidualStore::offer(const double* residual, std::int64_t dim, Rng& rng) {
  if (dim_ == 0) dim_ = dim;
  if (dim != dim_) {
    throw ContractError("residual store: dimension changed from " +
                        std::to_string(dim_) + " to " + std::to_string(dim));
  }
  ++seen_;
  if (static_cast<std::int64_t>(rows_.size()) < capacity_) {
    rows_.emplace_back(residual, residual + dim);
    return;
  }
  const std::int64_t j = rng.uniform_int(seen_);
  if (j < capacity_) {
    rows_[static_cast<std::size_t>(j)].assign(residual, residual + dim);
  }
}

namespace {
constexpr char kStoreMagic[8] = {'A', 'N', 'C', 'R', 'S', 'T', 'R', '1'};
}

void ResidualStore::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open residual store for write: " + path.string());
  os.write(kStoreMagic, sizeof(kStoreMagic));
  const std::uint64_t header[4] = {static_cast<std::uint64_t>(capacity_),
                                   static_cast<std::uint64_t>(dim_),
                                   static_cast<std::uint64_t>(seen_),
                                   static_cast<std::uint64_t>(rows_.size())};
  for (std::uint64_t v : header) {
    std::array<unsigned char, 8> b{};
    for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = (v >> (8 * i)) & 0xff;
    os.write(reinterpret_cast<const char*>(b.data()), 8);
  }
  for (const auto& row : rows_) {
    for (double d : row) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      std::array<unsigned char, 8> b{};
      for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = (bits >> (8 * i)) & 0xff;
      os.write(reinterpret_cast<const char*>(b.data()), 8);
    }
  }
}

ResidualStore ResidualStore::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open residual store: " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0) {
    throw FormatError("bad residual store magic in " + path.string());
  }
  auto read_u64 = [&is]() {
    std::array<unsigned char, 8> b{};
    is.read(reinterpret_cast<char*>(b.data()), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[static_cast<std::size_t>(i)]) << (8 * i);
    return v;
  };
  ResidualStore store(static_cast<std::int64_t>(read_u64()));
  store.dim_ = static_cast<std::int64_t>(read_u64());
  store.seen_ = static_cast<std::int64_t>(read_u64());
  const auto count = read_u64();
  store.rows_.resize(count);
  for (auto& row : store.rows_) {
    row.resize(static_cast<std::size_t>(store.dim_));
    for (auto& d : row) {
      const std::uint64_t bits = read_u64();
      std::memcpy(&d, &bits, sizeof(d));
    }
  }
  if (!is) throw FormatError("short read on residual store " + path.string());
  return store;
}

namespace {

Tensor broadcast_reference(const Tensor& reference, std::int64_t n) {
  if (reference.dim(0) != 1) {
    throw DimensionError("expected a single reference [1,C,H,W], got " +
                         shape_str(reference.shape()));
  }
  const std::int64_t row = reference.size();
  std::vector<double> out(static_cast<std::size_t>(n * row));
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(reference.values().begin(), row, out.begin() + i * row);
  }
  Shape shape = reference.shape();
  shape[0] = n;
  return Tensor(std::move(shape), std::move(out));
}

void check_anchored(const Model& model, const char* where) {
  if (!model.spec().anchored) {
    throw ContractError(std::string(where) + " requires an anchored model");
  }
}

}  // namespace

InferenceResult predict_single(const Model& model, const Tensor& x,
                               const Tensor& reference) {
  check_anchored(model, "predict_single");
  const std::int64_t n = x.dim(0);
  Tensor refs = reference.dim(0) == n ? reference : broadcast_reference(reference, n);
  AnchoredBatch batch = anchor(x, refs);
  InferenceResult result;
  Tensor logits = model.forward(batch.joint);
  result.logits = logits;
  result.probs = softmax(logits);
  return result;
}

InferenceResult predict_marginalized(const Model& model, const Tensor& x,
                                     const ReferenceSet& ref_set, int k, Rng& rng) {
  check_anchored(model, "predict_marginalized");
  if (k < 1) throw ValidationError("predict_marginalized: K must be >= 1");
  const std::int64_t n = x.dim(0);
  const std::int64_t c = model.spec().num_classes;

  std::vector<std::vector<double>> prob_draws;
  std::vector<std::vector<double>> logit_draws;
  prob_draws.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Tensor refs = sample_references(ref_set, n, rng);
    AnchoredBatch batch = anchor(x, refs);
    Tensor logits = model.forward(batch.joint);
    prob_draws.push_back(softmax(logits).values());
    logit_draws.push_back(logits.values());
  }

  // Two-pass mean / population standard deviation over the K draws.
  std::vector<double> mean(static_cast<std::size_t>(n * c), 0.0);
  std::vector<double> mean_logits(static_cast<std::size_t>(n * c), 0.0);
  for (int i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < mean.size(); ++j) {
      mean[j] += prob_draws[static_cast<std::size_t>(i)][j];
      mean_logits[j] += logit_draws[static_cast<std::size_t>(i)][j];
    }
  }
  const double inv_k = 1.0 / static_cast<double>(k);
  for (std::size_t j = 0; j < mean.size(); ++j) {
    mean[j] *= inv_k;
    mean_logits[j] *= inv_k;
  }
  std::vector<double> var(static_cast<std::size_t>(n * c), 0.0);
  for (int i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < var.size(); ++j) {
      const double d = prob_draws[static_cast<std::size_t>(i)][j] - mean[j];
      var[j] += d * d;
    }
  }
  for (double& v : var) v = std::sqrt(v * inv_k);

  InferenceResult result;
  result.probs = Tensor(Shape{n, c}, std::move(mean));
  result.logits = Tensor(Shape{n, c}, std::move(mean_logits));
  result.epistemic_std = Tensor(Shape{n, c}, std::move(var));
  return result;
}

std::string blt_criterion_name(BltCriterion c) {
  return c == BltCriterion::max_confidence ? "max_confidence" : "nearest_residual";
}

BltCriterion blt_criterion_from_name(const std::string& name) {
  if (name == "max_confidence") return BltCriterion::max_confidence;
  if (name == "nearest_residual") return BltCriterion::nearest_residual;
  throw ValidationError("unknown BLT criterion '" + name + "'");
}

InferenceResult predict_blt(const Model& model, const Tensor& x,
                            const Tensor& candidate_refs, BltCriterion criterion,
                            const ResidualStore& store) {
  check_anchored(model, "predict_blt");
  const std::int64_t s = candidate_refs.dim(0);
  if (s < 1) throw ValidationError("predict_blt: need at least one candidate");
  if (criterion == BltCriterion::nearest_residual && store.size() == 0) {
    throw ConfigError("predict_blt: nearest_residual requires a non-empty residual store");
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t c = model.spec().num_classes;
  const std::int64_t row = x.size() / n;

  // Scores to MINIMIZE per (sample, candidate); ties go to the lowest index.
  std::vector<double> best_score(static_cast<std::size_t>(n),
                                 std::numeric_limits<double>::infinity());
  std::vector<int> best_idx(static_cast<std::size_t>(n), 0);
  std::vector<double> best_probs(static_cast<std::size_t>(n * c), 0.0);
  std::vector<double> best_logits(static_cast<std::size_t>(n * c), 0.0);

  std::vector<double> store_sqnorm;
  if (criterion == BltCriterion::nearest_residual) {
    store_sqnorm.reserve(static_cast<std::size_t>(store.size()));
    for (const auto& r : store.rows()) {
      double acc = 0.0;
      for (double v : r) acc += v * v;
      store_sqnorm.push_back(acc);
    }
  }

  for (std::int64_t si = 0; si < s; ++si) {
    std::vector<double> cand(candidate_refs.values().begin() + si * row,
                             candidate_refs.values().begin() + (si + 1) * row);
    Shape cand_shape = x.shape();
    cand_shape[0] = 1;
    Tensor refs = broadcast_reference(Tensor(cand_shape, std::move(cand)), n);
    AnchoredBatch batch = anchor(x, refs);
    Tensor logits = model.forward(batch.joint);
    Tensor probs = softmax(logits);

    for (std::int64_t i = 0; i < n; ++i) {
      double score;
      if (criterion == BltCriterion::max_confidence) {
        double conf = 0.0;
        for (std::int64_t j = 0; j < c; ++j) conf = std::max(conf, probs[i * c + j]);
        score = -conf;
      } else {
        const double* res = batch.residual.values().data() + i * row;
        double res_sq = 0.0;
        for (std::int64_t j = 0; j < row; ++j) res_sq += res[j] * res[j];
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < store.rows().size(); ++t) {
          const auto& srow = store.rows()[t];
          double dot = 0.0;
          for (std::int64_t j = 0; j < row; ++j) dot += res[j] * srow[static_cast<std::size_t>(j)];
          best_d = std::min(best_d, res_sq - 2.0 * dot + store_sqnorm[t]);
        }
        score = best_d;
      }
      if (score < best_score[static_cast<std::size_t>(i)]) {
        best_score[static_cast<std::size_t>(i)] = score;
        best_idx[static_cast<std::size_t>(i)] = static_cast<int>(si);
        std::copy_n(probs.values().begin() + i * c, c, best_probs.begin() + i * c);
        std::copy_n(logits.values().begin() + i * c, c, best_logits.begin() + i * c);
      }
    }
  }

  InferenceResult result;
  result.probs = Tensor(Shape{n, c}, std::move(best_probs));
  result.logits = Tensor(Shape{n, c}, std::move(best_logits));
  result.chosen_reference_index = std::move(best_idx);
  return result;
}

std::string protocol_name(Protocol p) {
  switch (p) {
    case Protocol::single: return "single";
    case Protocol::k_random: return "k_random";
    case Protocol::blt: return "blt";
  }
  throw ValidationError("unknown protocol");
}

Protocol protocol_from_name(const std::string& name) {
  if (name == "single") return Protocol::single;
  if (name == "k_random") return Protocol::k_random;
  if (name == "blt") return Protocol::blt;
  throw ValidationError("unknown protocol '" + name + "'");
}

InferenceResult run_protocol(const ProtocolSpec& spec, const Model& model,
                             const Tensor& x, const ReferenceSet& ref_set,
                             const ResidualStore& store, Rng& rng) {
  switch (spec.kind) {
    case Protocol::single:
      return predict_single(model, x, mean_reference(ref_set));
    case Protocol::k_random:
      return predict_marginalized(model, x, ref_set, spec.k, rng);
    case Protocol::blt: {
      const auto s = std::min<std::int64_t>(spec.blt_candidates, ref_set.size());
      Tensor candidates = sample_references(ref_set, s, rng);
      return predict_blt(model, x, candidates, spec.criterion, store);
    }
  }
  throw ValidationError("unknown protocol");
}

double time_protocol(const ProtocolSpec& spec, const Model& model,
                     const Dataset& dataset, const ReferenceSet& ref_set,
                     const ResidualStore& store, std::int64_t n,
                     std::uint64_t rng_seed) {
  if (n < 100) throw ValidationError("time_protocol: need n >= 100 samples");
  if (n > dataset.n()) n = dataset.n();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Tensor x = dataset.gather_images(idx);
  Rng rng(derive_seed(rng_seed, "timing"));
  const auto start = std::chrono::steady_clock::now();
  (void)run_protocol(spec, model, x, ref_set, store, rng);
  const auto stop = std::chrono::steady_clock::now();
  const double seconds = std::chrono::duration<double>(stop - start).count();
  return seconds * 1000.0 / static_cast<double>(n);
}

}  // namespace anchor
