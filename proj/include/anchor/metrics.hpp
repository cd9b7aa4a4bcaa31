#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "anchor/tensor.hpp"

namespace anchor {

// Fraction of rows whose argmax matches the label; argmax ties break to the
// lowest class index.
double top1_accuracy(const Tensor& probs, const std::vector<int>& labels);

struct BinStats {
  double accuracy = 0.0;
  double confidence = 0.0;
  std::int64_t count = 0;
};

struct CalibrationReport {
  double binned_ece = 0.0;
  double smoothed_ece = 0.0;
  int bins = 15;
  double bandwidth = 0.05;
  std::vector<BinStats> table;
};

// Classical ECE with equal-width right-inclusive bins on (0,1]:
//   ECE = sum_k (|B_k|/N) * |acc(B_k) - conf(B_k)|, confidence = max prob.
double binned_ece(const Tensor& probs, const std::vector<int>& labels, int bins = 15);

// Binning-free calibration error: Nadaraya-Watson regression of correctness
// on confidence with a Gaussian kernel reflected at the [0,1] boundaries,
// integrated as  int |r(t) - t| density(t) dt  on a 512-point grid.
double smoothed_ece(const Tensor& probs, const std::vector<int>& labels,
                    double bandwidth = 0.05);

CalibrationReport calibration_report(const Tensor& probs,
                                     const std::vector<int>& labels,
                                     int bins = 15, double bandwidth = 0.05);

// Free-energy anomaly score E(x) = -T * logsumexp(logits / T); lower means
// more in-distribution.
std::vector<double> energy_score(const Tensor& logits, double temperature = 1.0);

// Rank-based AUROC with OOD as the positive class:
//   (#pairs ood > id + 0.5 * #ties) / (n * m).
double auroc(const std::vector<double>& id_scores,
             const std::vector<double>& ood_scores);

struct AnomalyReport {
  double auroc = 0.0;
  std::vector<double> id_scores;
  std::vector<double> ood_scores;
  std::string score_kind = "energy";
};

AnomalyReport anomaly_report(const std::vector<double>& id_scores,
                             const std::vector<double>& ood_scores);

}  // namespace anchor
