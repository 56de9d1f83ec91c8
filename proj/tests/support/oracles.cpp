#include "oracles.h"

#include <cmath>
#include <numbers>

namespace hfusion::testing {

Plane disk_oracle(const std::vector<annotation::CircleAnnotation>& shapes, int h, int w) {
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (const auto& c : shapes) {
        const double dx = x - c.center.x;
        const double dy = y - c.center.y;
        const double rx = c.rim_point.x - c.center.x;
        const double ry = c.rim_point.y - c.center.y;
        if (dx * dx + dy * dy <= rx * rx + ry * ry) out.at(y, x) = 1.0;
      }
    }
  }
  return out;
}

namespace {

struct Grad {
  std::vector<double> g;
  std::vector<double> a;
};

Grad sobel_padded(const Plane& p) {
  const int h = p.height, w = p.width;
  std::vector<double> pad(static_cast<std::size_t>(h + 2) * (w + 2));
  for (int y = -1; y <= h; ++y) {
    for (int x = -1; x <= w; ++x) {
      const int sy = y < 0 ? 0 : (y >= h ? h - 1 : y);
      const int sx = x < 0 ? 0 : (x >= w ? w - 1 : x);
      pad[static_cast<std::size_t>(y + 1) * (w + 2) + (x + 1)] = p.at(sy, sx);
    }
  }
  static const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
  static const int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
  Grad out{std::vector<double>(p.size()), std::vector<double>(p.size())};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double sx = 0.0, sy = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const double v = pad[static_cast<std::size_t>(y + i) * (w + 2) + (x + j)];
          sx += kx[i][j] * v;
          sy += ky[i][j] * v;
        }
      }
      const std::size_t k = static_cast<std::size_t>(y) * w + x;
      out.g[k] = std::hypot(sx, sy);
      out.a[k] = sx == 0.0 ? std::numbers::pi / 2 : std::atan(sy / sx);
    }
  }
  return out;
}

double edge_q(double gs, double as, double gf, double af) {
  double s = 1.0;
  if (gs > gf) s = gf / gs;
  if (gf > gs) s = gs / gf;
  double diff = std::fabs(as - af);
  if (diff > std::numbers::pi / 2) diff = std::numbers::pi - diff;
  const double o = 1.0 - diff * 2.0 / std::numbers::pi;
  const double qg = 0.9994 / (1.0 + std::exp(-15.0 * (s - 0.5)));
  const double qa = 0.9879 / (1.0 + std::exp(-22.0 * (o - 0.8)));
  return qg * qa;
}

}  // namespace

double qabf_oracle(const Plane& fused, const Plane& visible, const Plane& infrared) {
  const Grad f = sobel_padded(fused);
  const Grad a = sobel_padded(visible);
  const Grad b = sobel_padded(infrared);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < fused.size(); ++k) {
    num += a.g[k] * edge_q(a.g[k], a.a[k], f.g[k], f.a[k]) +
           b.g[k] * edge_q(b.g[k], b.a[k], f.g[k], f.a[k]);
    den += a.g[k] + b.g[k];
  }
  return den == 0.0 ? 0.0 : num / den;
}

double pearson_oracle(const Plane& a, const Plane& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a.data[i];
    sb += b.data[i];
    saa += a.data[i] * a.data[i];
    sbb += b.data[i] * b.data[i];
    sab += a.data[i] * b.data[i];
  }
  const double cov = sab - sa * sb / n;
  return cov / std::sqrt((saa - sa * sa / n) * (sbb - sb * sb / n));
}

std::set<std::set<std::string>> closure_oracle(const std::vector<data::EmbeddingVector>& e,
                                               double threshold) {
  const std::size_t n = e.size();
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  std::vector<std::vector<bool>> reach(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      reach[i][j] = i == j || dot(e[i].vector, e[j].vector) >= threshold;
    }
  }
  for (std::size_t k = 0; k < n; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (reach[i][k] && reach[k][j]) reach[i][j] = true;
      }
    }
  }
  std::set<std::set<std::string>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::string> g;
    for (std::size_t j = 0; j < n; ++j) {
      if (reach[i][j]) g.insert(e[j].pair_id);
    }
    groups.insert(g);
  }
  return groups;
}

std::set<std::set<std::string>> as_sets(const std::vector<data::SceneCluster>& clusters) {
  std::set<std::set<std::string>> out;
  for (const auto& c : clusters) out.insert({c.member_ids.begin(), c.member_ids.end()});
  return out;
}

}  // namespace hfusion::testing
