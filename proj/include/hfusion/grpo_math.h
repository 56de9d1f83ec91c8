#pragma once

#include <span>
#include <vector>

#include "hfusion/image.h"

// Scalar reference forms of the group-relative quantities. The training loop
// uses the tensor forms in grpo.h; these stay independent of libtorch.
namespace hfusion::grpo {

struct GroupAdvantage {
  std::vector<double> scores;
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> advantages;
};

// A_k = (s_k - mean) / (std + eps_adv).
GroupAdvantage group_advantage(std::span<const double> scores, double eps_adv = 1e-8);

inline constexpr double kRatioDenominatorGuard = 1e-8;

// r_k = 1 + alpha * |(F_new - F_old) . M|_1 / |F_old . M|_1 over masked pixels
// and all channels; 1 when the old region's L1 mass is below the guard.
double region_ratio(const Image& f_new, const Image& f_old, const Mask& mask,
                    double alpha = 1.0);

// min(r * A, clip(r, 1 - eps, 1 + eps) * A)
double clipped_surrogate_term(double ratio, double advantage, double eps_clip);

}  // namespace hfusion::grpo
