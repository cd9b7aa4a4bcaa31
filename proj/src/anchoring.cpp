#include "anchor/anchoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "anchor/inference.hpp"

namespace anchor {

std::string diversity_policy_name(DiversityPolicy policy) {
  switch (policy) {
    case DiversityPolicy::uniform_random: return "uniform_random";
    case DiversityPolicy::class_balanced: return "class_balanced";
  }
  throw ValidationError("unknown diversity policy");
}

DiversityPolicy diversity_policy_from_name(const std::string& name) {
  if (name == "uniform_random") return DiversityPolicy::uniform_random;
  if (name == "class_balanced") return DiversityPolicy::class_balanced;
  throw ValidationError("unknown diversity policy '" + name + "'");
}

ReferenceSet build_reference_set(const Dataset& train_data, std::int64_t size,
                                 DiversityPolicy policy, std::uint64_t seed) {
  const std::int64_t n = train_data.n();
  if (size < 1 || size > n) {
    throw ValidationError("reference set size " + std::to_string(size) +
                          " out of range [1," + std::to_string(n) + "]");
  }
  Rng rng(derive_seed(seed, "reference_set"));
  std::vector<std::int64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(size));

  if (policy == DiversityPolicy::uniform_random) {
    // Partial Fisher-Yates: uniform draw without replacement.
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (std::int64_t i = 0; i < size; ++i) {
      const std::int64_t j = i + rng.uniform_int(n - i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      chosen.push_back(order[static_cast<std::size_t>(i)]);
    }
  } else {
    // Round-robin over shuffled per-class pools maximizes class coverage:
    // per-class counts differ by at most one.
    std::vector<std::vector<std::int64_t>> pools(
        static_cast<std::size_t>(train_data.num_classes));
    for (std::int64_t i = 0; i < n; ++i) {
      pools[static_cast<std::size_t>(train_data.labels[static_cast<std::size_t>(i)])]
          .push_back(i);
    }
    for (auto& pool : pools) {
      for (std::int64_t i = static_cast<std::int64_t>(pool.size()) - 1; i > 0; --i) {
        std::swap(pool[static_cast<std::size_t>(i)],
                  pool[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
      }
    }
    std::vector<int> class_order(static_cast<std::size_t>(train_data.num_classes));
    std::iota(class_order.begin(), class_order.end(), 0);
    for (std::int64_t i = train_data.num_classes - 1; i > 0; --i) {
      std::swap(class_order[static_cast<std::size_t>(i)],
                class_order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    }
    std::size_t round = 0;
    while (static_cast<std::int64_t>(chosen.size()) < size) {
      bool any = false;
      for (int cls : class_order) {
        auto& pool = pools[static_cast<std::size_t>(cls)];
        if (round < pool.size()) {
          chosen.push_back(pool[round]);
          any = true;
          if (static_cast<std::int64_t>(chosen.size()) == size) break;
        }
      }
      if (!any) break;
      ++round;
    }
  }

  ReferenceSet set;
  set.indices = chosen;
  set.samples = train_data.gather_images(chosen);
  set.labels.reserve(chosen.size());
  for (auto idx : chosen) set.labels.push_back(train_data.labels[static_cast<std::size_t>(idx)]);
  set.construction_seed = seed;
  set.policy = policy;
  set.source_size = n;
  return set;
}

Tensor sample_references(const ReferenceSet& ref_set, std::int64_t n, Rng& rng) {
  if (ref_set.size() < 1) throw ValidationError("reference set is empty");
  const std::int64_t row = ref_set.samples.size() / ref_set.size();
  std::vector<double> out(static_cast<std::size_t>(n * row));
  const auto& src = ref_set.samples.values();
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t pick = rng.uniform_int(ref_set.size());
    std::copy_n(src.begin() + pick * row, row, out.begin() + i * row);
  }
  Shape shape = ref_set.samples.shape();
  shape[0] = n;
  return Tensor(std::move(shape), std::move(out));
}

Tensor mean_reference(const ReferenceSet& ref_set) {
  if (ref_set.size() < 1) throw ValidationError("reference set is empty");
  const std::int64_t m = ref_set.size();
  const std::int64_t row = ref_set.samples.size() / m;
  std::vector<double> out(static_cast<std::size_t>(row), 0.0);
  const auto& src = ref_set.samples.values();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* p = src.data() + i * row;
    for (std::int64_t j = 0; j < row; ++j) out[static_cast<std::size_t>(j)] += p[j];
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : out) v *= inv;
  Shape shape = ref_set.samples.shape();
  shape[0] = 1;
  return Tensor(std::move(shape), std::move(out));
}

AnchoredBatch anchor(const Tensor& x, const Tensor& refs) {
  if (x.shape() != refs.shape()) {
    throw DimensionError("anchor: shape mismatch " + shape_str(x.shape()) +
                         " vs " + shape_str(refs.shape()));
  }
  if (x.rank() != 4) {
    throw DimensionError("anchor: expected [N,C,H,W], got " + shape_str(x.shape()));
  }
  const std::int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  AnchoredBatch batch;
  batch.reference = refs;
  std::vector<double> residual(static_cast<std::size_t>(x.size()));
  std::vector<double> joint(static_cast<std::size_t>(2 * x.size()));
  const auto& xs = x.values();
  const auto& rs = refs.values();
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t base = i * c * hw;
    double* jref = joint.data() + 2 * base;
    double* jres = jref + c * hw;
    for (std::int64_t j = 0; j < c * hw; ++j) {
      const double d = xs[static_cast<std::size_t>(base + j)] -
                       rs[static_cast<std::size_t>(base + j)];
      residual[static_cast<std::size_t>(base + j)] = d;
      jref[j] = rs[static_cast<std::size_t>(base + j)];
      jres[j] = d;
    }
  }
  batch.residual = Tensor(x.shape(), std::move(residual));
  batch.joint = Tensor(Shape{n, 2 * c, x.dim(2), x.dim(3)}, std::move(joint));
  batch.masked = false;
  return batch;
}

AnchoredBatch mask(const AnchoredBatch& batch) {
  if (batch.masked) throw ContractError("mask: batch is already masked");
  const std::int64_t n = batch.joint.dim(0);
  const std::int64_t c2 = batch.joint.dim(1);
  const std::int64_t hw = batch.joint.dim(2) * batch.joint.dim(3);
  AnchoredBatch out;
  out.reference = Tensor(batch.reference.shape(), 0.0);
  out.residual = batch.residual;  // bit-identical by construction
  std::vector<double> joint = batch.joint.values();
  for (std::int64_t i = 0; i < n; ++i) {
    double* jref = joint.data() + i * c2 * hw;
    std::fill_n(jref, (c2 / 2) * hw, 0.0);
  }
  out.joint = Tensor(batch.joint.shape(), std::move(joint));
  out.labels = batch.labels;
  out.masked = true;
  return out;
}

std::string mask_schedule_name(MaskSchedule s) {
  return s == MaskSchedule::periodic ? "periodic" : "bernoulli";
}

MaskSchedule mask_schedule_from_name(const std::string& name) {
  if (name == "periodic") return MaskSchedule::periodic;
  if (name == "bernoulli") return MaskSchedule::bernoulli;
  throw ValidationError("unknown masking schedule '" + name + "'");
}

std::string mask_mode_name(MaskMode m) {
  return m == MaskMode::replace ? "replace" : "augment";
}

MaskMode mask_mode_from_name(const std::string& name) {
  if (name == "replace") return MaskMode::replace;
  if (name == "augment") return MaskMode::augment;
  throw ValidationError("unknown masking mode '" + name + "'");
}

void MaskingConfig::validate() const {
  if (alpha < 0.0 || alpha > 1.0) {
    throw ValidationError("masking alpha must be in [0,1], got " + std::to_string(alpha));
  }
  if (mask_loss_weight < 0.0) {
    throw ValidationError("mask_loss_weight must be >= 0");
  }
}

bool should_mask(std::int64_t batch_index, const MaskingConfig& cfg, Rng& rng) {
  cfg.validate();
  if (cfg.schedule == MaskSchedule::bernoulli) {
    // Always consume one draw so the stream stays aligned across alphas.
    const double u = rng.uniform();
    return cfg.alpha > 0.0 && u < cfg.alpha;
  }
  if (cfg.alpha == 0.0) return false;
  const auto period = static_cast<std::int64_t>(std::llround(1.0 / cfg.alpha));
  return (batch_index + 1) % std::max<std::int64_t>(period, 1) == 0;
}

Tensor one_hot_targets(const std::vector<int>& labels, int num_classes) {
  const auto n = static_cast<std::int64_t>(labels.size());
  std::vector<double> t(static_cast<std::size_t>(n * num_classes), 0.0);
  for (std::int64_t i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes) {
      throw ValidationError("label " + std::to_string(y) + " out of range");
    }
    t[static_cast<std::size_t>(i * num_classes + y)] = 1.0;
  }
  return Tensor(Shape{n, num_classes}, std::move(t));
}

Tensor uniform_targets(std::int64_t n, int num_classes) {
  return Tensor(Shape{n, num_classes}, 1.0 / static_cast<double>(num_classes));
}

StepReport anchored_training_step(Model& model, const Tensor& x,
                                  const std::vector<int>& labels,
                                  const ReferenceSet& ref_set,
                                  const MaskingConfig& cfg, SgdState& opt,
                                  std::int64_t batch_index, Rng& reference_rng,
                                  Rng& masking_rng, ResidualStore* store,
                                  Rng* store_rng) {
  if (2 * x.dim(1) != model.spec().first_layer_channels()) {
    throw DimensionError("anchored_training_step: model expects " +
                         std::to_string(model.spec().first_layer_channels()) +
                         " channels but the joint tuple has " +
                         std::to_string(2 * x.dim(1)));
  }
  const std::int64_t n = x.dim(0);
  const int num_classes = model.spec().num_classes;

  Tensor refs = sample_references(ref_set, n, reference_rng);
  AnchoredBatch batch = anchor(x, refs);
  batch.labels = labels;

  if (store && store_rng) {
    const std::int64_t dim = batch.residual.size() / n;
    const double* res = batch.residual.values().data();
    for (std::int64_t i = 0; i < n; ++i) store->offer(res + i * dim, dim, *store_rng);
  }

  StepReport report;
  report.masked = should_mask(batch_index, cfg, masking_rng);

  Tape tape;
  Tensor loss;
  if (!report.masked) {
    Tensor logits = model.forward(batch.joint, &tape);
    loss = cross_entropy_soft(logits, one_hot_targets(labels, num_classes), &tape);
    report.task_loss = loss[0];
  } else if (cfg.mode == MaskMode::replace) {
    AnchoredBatch masked_batch = mask(batch);
    Tensor logits = model.forward(masked_batch.joint, &tape);
    loss = cross_entropy_soft(logits, uniform_targets(n, num_classes), &tape);
    report.mask_loss = loss[0];
  } else {
    Tensor task_logits = model.forward(batch.joint, &tape);
    Tensor task_loss =
        cross_entropy_soft(task_logits, one_hot_targets(labels, num_classes), &tape);
    AnchoredBatch masked_batch = mask(batch);
    Tensor mask_logits = model.forward(masked_batch.joint, &tape);
    Tensor mask_loss =
        cross_entropy_soft(mask_logits, uniform_targets(n, num_classes), &tape);
    loss = add(task_loss, scale(mask_loss, cfg.mask_loss_weight, &tape), &tape);
    report.task_loss = task_loss[0];
    report.mask_loss = mask_loss[0];
  }

  model.reset_grads();
  backward(loss, tape);
  sgd_step(model.params(), opt);
  model.reset_grads();
  return report;
}

}  // namespace anchor
