#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "anchor/anchoring.hpp"
#include "anchor/model.hpp"
#include "anchor/rng.hpp"

namespace anchor {

struct InferenceResult {
  Tensor probs;  // [N,C], rows sum to 1
  std::optional<Tensor> logits;  // [N,C], protocol-representative logits
  std::optional<Tensor> epistemic_std;  // [N,C], only for K-marginalization
  std::optional<std::vector<int>> chosen_reference_index;  // only for BLT
  double wall_seconds_per_1000 = 0.0;
};

// Seeded subsample of flattened training residuals, the empirical stand-in
// for the residual distribution used by nearest-residual BLT. Filled by
// reservoir sampling from tuples actually formed during training.
class ResidualStore {
 public:
  explicit ResidualStore(std::int64_t capacity = 512) : capacity_(capacity) {}

  void offer(const double* residual, std::int64_t dim, Rng& rng);
  std::int64_t size() const { return static_cast<std::int64_t>(rows_.size()); }
  std::int64_t dim() const { return dim_; }
  std::int64_t capacity() const { return capacity_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }

  void save(const std::filesystem::path& path) const;
  static ResidualStore load(const std::filesystem::path& path);

 private:
  std::int64_t capacity_ = 512;
  std::int64_t dim_ = 0;
  std::int64_t seen_ = 0;
  std::vector<std::vector<double>> rows_;
};

// 1-Random protocol: one shared reference (default: mean of the reference
// set), broadcast across the batch.
InferenceResult predict_single(const Model& model, const Tensor& x,
                               const Tensor& reference);

// K-Random protocol: averages softmax outputs over K per-sample reference
// draws; the per-class population standard deviation over the K predictions
// is reported as epistemic uncertainty.
InferenceResult predict_marginalized(const Model& model, const Tensor& x,
                                     const ReferenceSet& ref_set, int k, Rng& rng);

enum class BltCriterion { max_confidence, nearest_residual };
std::string blt_criterion_name(BltCriterion c);
BltCriterion blt_criterion_from_name(const std::string& name);

// BLT protocol: evaluates every candidate reference per sample and keeps the
// one optimizing the criterion (ties to the lowest candidate index).
InferenceResult predict_blt(const Model& model, const Tensor& x,
                            const Tensor& candidate_refs, BltCriterion criterion,
                            const ResidualStore& store);

enum class Protocol { single, k_random, blt };
std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& name);

struct ProtocolSpec {
  Protocol kind = Protocol::single;
  int k = 10;
  int blt_candidates = 50;
  BltCriterion criterion = BltCriterion::max_confidence;
};

// Runs `spec` over the first n samples of the dataset and reports wall
// seconds per 1000 samples. Single-worker by design so timings compare.
double time_protocol(const ProtocolSpec& spec, const Model& model,
                     const Dataset& dataset, const ReferenceSet& ref_set,
                     const ResidualStore& store, std::int64_t n,
                     std::uint64_t rng_seed = 0);

// Protocol dispatch used by evaluation paths; draws BLT candidates and
// K-random references from `rng` so runs stay deterministic.
InferenceResult run_protocol(const ProtocolSpec& spec, const Model& model,
                             const Tensor& x, const ReferenceSet& ref_set,
                             const ResidualStore& store, Rng& rng);

}  // namespace anchor
