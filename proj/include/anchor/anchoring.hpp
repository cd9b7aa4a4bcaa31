#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "anchor/dataset.hpp"
#include "anchor/model.hpp"
#include "anchor/rng.hpp"
#include "anchor/tensor.hpp"

namespace anchor {

enum class DiversityPolicy { uniform_random, class_balanced };
std::string diversity_policy_name(DiversityPolicy policy);
DiversityPolicy diversity_policy_from_name(const std::string& name);

// Seeded subset of the training split that references are drawn from. Labels
// are carried for bookkeeping only; tuple construction never reads them.
struct ReferenceSet {
  Tensor samples;  // [M,C,H,W]
  std::vector<int> labels;
  std::vector<std::int64_t> indices;  // positions in the source dataset
  std::uint64_t construction_seed = 0;
  DiversityPolicy policy = DiversityPolicy::uniform_random;
  std::int64_t source_size = 0;

  std::int64_t size() const { return samples.dim(0); }
};

ReferenceSet build_reference_set(const Dataset& train_data, std::int64_t size,
                                 DiversityPolicy policy, std::uint64_t seed);

// Uniform with replacement; deterministic given the rng state.
Tensor sample_references(const ReferenceSet& ref_set, std::int64_t n, Rng& rng);

// Arithmetic mean over the set -> [1,C,H,W].
Tensor mean_reference(const ReferenceSet& ref_set);

// One anchored batch: joint channels [0,C) hold the reference and [C,2C) the
// residual x - reference, so reference + residual reconstructs x exactly
// while the batch is unmasked.
struct AnchoredBatch {
  Tensor reference;  // [N,C,H,W]
  Tensor residual;   // [N,C,H,W]
  Tensor joint;      // [N,2C,H,W]
  std::vector<int> labels;
  bool masked = false;
};

AnchoredBatch anchor(const Tensor& x, const Tensor& refs);

// Zeroes the reference channels and keeps the residual bit-identical,
// yielding the [0, x - r] tuple the regularizer trains toward the uniform
// prior. Masking twice is a contract error.
AnchoredBatch mask(const AnchoredBatch& batch);

enum class MaskSchedule { periodic, bernoulli };
enum class MaskMode { replace, augment };
std::string mask_schedule_name(MaskSchedule s);
MaskSchedule mask_schedule_from_name(const std::string& name);
std::string mask_mode_name(MaskMode m);
MaskMode mask_mode_from_name(const std::string& name);

struct MaskingConfig {
  double alpha = 0.25;  // in [0,1]; fraction of batches masked
  MaskSchedule schedule = MaskSchedule::periodic;
  MaskMode mode = MaskMode::augment;
  std::uint64_t seed = 0;
  // Weight on the masked-tuple loss when both terms are present (augment).
  double mask_loss_weight = 1.0;

  void validate() const;
};

// periodic: true iff (batch_index+1) mod round(1/alpha) == 0 (alpha=0 never,
// alpha=1 always). bernoulli: true with probability alpha from the masking
// stream. The stream is consumed only by the bernoulli schedule.
bool should_mask(std::int64_t batch_index, const MaskingConfig& cfg, Rng& rng);

struct StepReport {
  std::optional<double> task_loss;
  std::optional<double> mask_loss;
  bool masked = false;
};

class ResidualStore;  // defined in inference.hpp

// One optimizer step on one batch: draws per-sample references, anchors,
// applies the masking schedule, backpropagates and updates the parameters.
// When `store` is given, the batch residuals are offered to it (reservoir).
StepReport anchored_training_step(Model& model, const Tensor& x,
                                  const std::vector<int>& labels,
                                  const ReferenceSet& ref_set,
                                  const MaskingConfig& cfg, SgdState& opt,
                                  std::int64_t batch_index, Rng& reference_rng,
                                  Rng& masking_rng, ResidualStore* store = nullptr,
                                  Rng* store_rng = nullptr);

// Soft-target helpers used by the training objectives.
Tensor one_hot_targets(const std::vector<int>& labels, int num_classes);
Tensor uniform_targets(std::int64_t n, int num_classes);

}  // namespace anchor
