#include "hfusion/metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "hfusion/errors.h"

namespace hfusion::metrics {

namespace {

void require_same(const Plane& a, const Plane& b) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError("metric inputs must share dimensions");
  }
}

double mse(const Plane& a, const Plane& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow * kWindow> w{};
  const int half = kWindow / 2;
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    for (int j = 0; j < kWindow; ++j) {
      const double d2 = (i - half) * (i - half) + (j - half) * (j - half);
      w[i * kWindow + j] = std::exp(-d2 / (2.0 * kWindowSigma * kWindowSigma));
      sum += w[i * kWindow + j];
    }
  }
  for (auto& v : w) v /= sum;
  return w;
}

struct Gradient {
  Plane magnitude;
  Plane orientation;
};

Gradient sobel(const Plane& p) {
  Gradient g{Plane(p.height, p.width), Plane(p.height, p.width)};
  auto px = [&](int y, int x) {
    y = std::clamp(y, 0, p.height - 1);
    x = std::clamp(x, 0, p.width - 1);
    return p.at(y, x);
  };
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const double gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
      g.magnitude.at(y, x) = std::sqrt(gx * gx + gy * gy);
      g.orientation.at(y, x) = gx == 0.0 ? std::numbers::pi / 2.0 : std::atan(gy / gx);
    }
  }
  return g;
}

double preservation(double g_src, double a_src, double g_fused, double a_fused,
                    const QabfParams& k) {
  const double strength =
      g_src == g_fused ? 1.0 : std::min(g_src, g_fused) / std::max(g_src, g_fused);
  // Edge orientations are defined modulo pi.
  double d = std::abs(a_src - a_fused);
  d = std::min(d, std::numbers::pi - d);
  const double orient = 1.0 - d / (std::numbers::pi / 2.0);
  const double qg = k.gamma_g / (1.0 + std::exp(k.kappa_g * (strength - k.sigma_g)));
  const double qa = k.gamma_a / (1.0 + std::exp(k.kappa_a * (orient - k.sigma_a)));
  return qg * qa;
}

}  // namespace

double pearson(const Plane& a, const Plane& b) {
  require_same(a, b);
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data[i];
    mb += b.data[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data[i] - ma;
    const double db = b.data[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double cc(const Plane& fused, const Plane& visible, const Plane& infrared) {
  return 0.5 * (pearson(fused, visible) + pearson(fused, infrared));
}

double psnr(const Plane& fused, const Plane& visible, const Plane& infrared, double peak,
            double cap) {
  require_same(fused, visible);
  require_same(fused, infrared);
  const double m = 0.5 * (mse(fused, visible) + mse(fused, infrared));
  if (m == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / m));
}

double ssim_pair(const Plane& a, const Plane& b, double peak) {
  require_same(a, b);
  if (a.height < kWindow || a.width < kWindow) {
    throw ShapeError("SSIM needs images of at least 11x11 pixels");
  }
  static const auto window = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0.0;
  const int out_h = a.height - kWindow + 1;
  const int out_w = a.width - kWindow + 1;
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      double mu_a = 0, mu_b = 0, e_aa = 0, e_bb = 0, e_ab = 0;
      for (int i = 0; i < kWindow; ++i) {
        for (int j = 0; j < kWindow; ++j) {
          const double w = window[i * kWindow + j];
          const double va = a.at(y + i, x + j);
          const double vb = b.at(y + i, x + j);
          mu_a += w * va;
          mu_b += w * vb;
          e_aa += w * va * va;
          e_bb += w * vb * vb;
          e_ab += w * va * vb;
        }
      }
      const double var_a = e_aa - mu_a * mu_a;
      const double var_b = e_bb - mu_b * mu_b;
      const double cov = e_ab - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    }
  }
  return total / (static_cast<double>(out_h) * out_w);
}

double ssim(const Plane& fused, const Plane& visible, const Plane& infrared, double peak) {
  return 0.5 * (ssim_pair(fused, visible, peak) + ssim_pair(fused, infrared, peak));
}

double qabf(const Plane& fused, const Plane& visible, const Plane& infrared,
            const QabfParams& params) {
  require_same(fused, visible);
  require_same(fused, infrared);
  const Gradient gf = sobel(fused);
  const Gradient ga = sobel(visible);
  const Gradient gb = sobel(infrared);
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    const double wa = ga.magnitude.data[i];
    const double wb = gb.magnitude.data[i];
    num += wa * preservation(wa, ga.orientation.data[i], gf.magnitude.data[i],
                             gf.orientation.data[i], params);
    num += wb * preservation(wb, gb.orientation.data[i], gf.magnitude.data[i],
                             gf.orientation.data[i], params);
    den += wa + wb;
  }
  if (den == 0.0) return 0.0;
  return std::clamp(num / den, 0.0, 1.0);
}

double qabf_self_fusion_ceiling(const QabfParams& k) {
  return k.gamma_g / (1.0 + std::exp(k.kappa_g * (1.0 - k.sigma_g))) * k.gamma_a /
         (1.0 + std::exp(k.kappa_a * (1.0 - k.sigma_a)));
}

MetricRow evaluate_triplet(const std::string& triplet_id, const Image& fused,
                           const Image& visible, const Image& infrared,
                           const MetricOptions& options) {
  const Plane f = gray_plane(fused, options.peak);
  const Plane v = gray_plane(visible, options.peak);
  const Plane i = gray_plane(infrared, options.peak);
  MetricRow row;
  row.triplet_id = triplet_id;
  row.values["CC"] = cc(f, v, i);
  row.values["PSNR"] = psnr(f, v, i, options.peak, options.psnr_cap);
  row.values["Qabf"] = qabf(f, v, i);
  row.values["SSIM"] = ssim(f, v, i, options.peak);
  return row;
}

MetricReport evaluate_manifest(const data::Manifest& manifest, const MetricOptions& options) {
  MetricReport report;
  for (const auto& t : manifest.triplets) {
    report.rows.push_back(evaluate_triplet(t.triplet_id, load_image(t.fused_path),
                                           load_image(t.visible_path),
                                           load_image(t.infrared_path), options));
  }
  for (const char* name : kColumnOrder) {
    double sum = 0.0;
    for (const auto& r : report.rows) sum += r.values.at(name);
    report.means[name] = report.rows.empty() ? 0.0 : sum / report.rows.size();
  }
  return report;
}

std::string report_csv(const MetricReport& report) {
  std::ostringstream out;
  out.precision(10);
  out << "triplet_id";
  for (const char* name : kColumnOrder) out << ',' << name;
  out << '\n';
  for (const auto& r : report.rows) {
    out << r.triplet_id;
    for (const char* name : kColumnOrder) out << ',' << r.values.at(name);
    out << '\n';
  }
  out << "mean";
  for (const char* name : kColumnOrder) out << ',' << report.means.at(name);
  out << '\n';
  return out.str();
}

}  // namespace hfusion::metrics
