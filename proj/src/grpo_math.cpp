#include "hfusion/grpo_math.h"

#include <algorithm>
#include <cmath>

#include "hfusion/errors.h"

namespace hfusion::grpo {

GroupAdvantage group_advantage(std::span<const double> scores, double eps_adv) {
  if (scores.empty()) throw RangeError("group advantage needs at least one score");
  GroupAdvantage g;
  g.scores.assign(scores.begin(), scores.end());
  const double k = static_cast<double>(scores.size());
  double sum = 0.0;
  for (double s : scores) sum += s;
  g.mean = sum / k;
  double var = 0.0;
  for (double s : scores) var += (s - g.mean) * (s - g.mean);
  g.std = std::sqrt(var / k);
  g.advantages.reserve(scores.size());
  for (double s : scores) g.advantages.push_back((s - g.mean) / (g.std + eps_adv));
  return g;
}

double region_ratio(const Image& f_new, const Image& f_old, const Mask& mask, double alpha) {
  if (!f_new.same_size(f_old) || f_new.channels != f_old.channels ||
      f_new.height != mask.height || f_new.width != mask.width) {
    throw ShapeError("region_ratio inputs must share dimensions");
  }
  double change = 0.0;
  double mass = 0.0;
  const int c = f_new.channels;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (!mask.data[p]) continue;
    for (int ch = 0; ch < c; ++ch) {
      const double o = f_old.data[p * c + ch];
      change += std::abs(static_cast<double>(f_new.data[p * c + ch]) - o);
      mass += std::abs(o);
    }
  }
  if (mass < kRatioDenominatorGuard) return 1.0;
  return 1.0 + alpha * change / mass;
}

double clipped_surrogate_term(double ratio, double advantage, double eps_clip) {
  const double clipped = std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
  return std::min(ratio * advantage, clipped * advantage);
}

}  // namespace hfusion::grpo
