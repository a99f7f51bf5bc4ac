#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cast/common.hpp"
#include "cast/error.hpp"

namespace cast {

/// Contiguous split of L layers into k phases. cut_points are the first layer
/// of every phase after the first: phases are [0, c1), [c1, c2), ..., [c_{k-1}, L).
struct PhasePartition {
  std::vector<Index> cut_points;
  double objective_value = 0.0;
  std::vector<double> per_phase_mean_cka;

  Index num_phases() const { return static_cast<Index>(cut_points.size()) + 1; }
};

inline constexpr Index kMaxPhases = 4;

/// Reporting labels for the default three-phase split.
inline std::vector<std::string> phase_labels(Index k) {
  if (k == 3) return {"feature_extraction", "compression", "specialization"};
  std::vector<std::string> out;
  for (Index p = 0; p < k; ++p) out.push_back("phase_" + std::to_string(p));
  return out;
}

/// mean(within-block entries) - mean(cross-block entries), over all ordered
/// (a, b) pairs; within-block pairs include the diagonal.
inline double partition_objective(const Eigen::Ref<const Matrix>& cka, const std::vector<Index>& cuts,
                                  std::vector<double>* per_phase = nullptr) {
  const Index n = cka.rows();
  std::vector<Index> bounds{0};
  bounds.insert(bounds.end(), cuts.begin(), cuts.end());
  bounds.push_back(n);
  std::vector<Index> block(static_cast<std::size_t>(n));
  for (std::size_t p = 0; p + 1 < bounds.size(); ++p)
    for (Index a = bounds[p]; a < bounds[p + 1]; ++a) block[static_cast<std::size_t>(a)] = static_cast<Index>(p);

  const std::size_t k = bounds.size() - 1;
  std::vector<double> sum_block(k, 0.0);
  std::vector<double> count_block(k, 0.0);
  double within = 0.0, cross = 0.0, n_within = 0.0, n_cross = 0.0;
  for (Index a = 0; a < n; ++a) {
    for (Index b = 0; b < n; ++b) {
      const auto ba = static_cast<std::size_t>(block[static_cast<std::size_t>(a)]);
      if (ba == static_cast<std::size_t>(block[static_cast<std::size_t>(b)])) {
        within += cka(a, b);
        n_within += 1.0;
        sum_block[ba] += cka(a, b);
        count_block[ba] += 1.0;
      } else {
        cross += cka(a, b);
        n_cross += 1.0;
      }
    }
  }
  if (per_phase) {
    per_phase->assign(k, 0.0);
    for (std::size_t p = 0; p < k; ++p) (*per_phase)[p] = sum_block[p] / count_block[p];
  }
  return within / n_within - (n_cross > 0.0 ? cross / n_cross : 0.0);
}

/// Exhaustive search over all cut placements. Ties resolve to the
/// lexicographically smallest cut vector.
inline PhasePartition segment_phases(const Eigen::Ref<const Matrix>& cka, Index k = 3) {
  const Index n = cka.rows();
  if (cka.cols() != n) throw Error(ErrorCode::ShapeMismatch, "CKA matrix must be square");
  if (k < 2 || k > kMaxPhases) {
    throw Error(ErrorCode::InvalidArgument, "phase count must be in [2, " + std::to_string(kMaxPhases) + "]");
  }
  if (n < k) {
    throw Error(ErrorCode::TooFewLayers, std::to_string(n) + " layers cannot form " + std::to_string(k) + " phases");
  }
  require_finite(cka, "CKA matrix");

  PhasePartition best;
  best.objective_value = -std::numeric_limits<double>::infinity();
  std::vector<Index> cuts;
  // Enumerates cut vectors in lexicographic order; strict improvement keeps
  // the first (smallest) optimum.
  std::function<void(Index)> place = [&](Index from) {
    if (static_cast<Index>(cuts.size()) == k - 1) {
      const double value = partition_objective(cka, cuts);
      if (value > best.objective_value) {
        best.objective_value = value;
        best.cut_points = cuts;
      }
      return;
    }
    const Index remaining = k - 1 - static_cast<Index>(cuts.size());
    for (Index c = from; c <= n - remaining; ++c) {
      cuts.push_back(c);
      place(c + 1);
      cuts.pop_back();
    }
  };
  place(1);
  best.objective_value = partition_objective(cka, best.cut_points, &best.per_phase_mean_cka);
  return best;
}

}  // namespace cast
