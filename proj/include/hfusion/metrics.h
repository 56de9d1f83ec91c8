#pragma once

#include <map>
#include <string>
#include <vector>

#include "hfusion/data_pipeline.h"
#include "hfusion/image.h"

// Reference-based fusion metrics. All functions take grayscale planes on the
// same scale as `peak` (255 for 8-bit data) and average the fused-vs-visible
// and fused-vs-infrared comparisons where the metric is pairwise.
namespace hfusion::metrics {

struct QabfParams {
  double gamma_g = 0.9994;
  double kappa_g = -15.0;
  double sigma_g = 0.5;
  double gamma_a = 0.9879;
  double kappa_a = -22.0;
  double sigma_a = 0.8;
};

// Pearson correlation; 0 if either input is constant.
double pearson(const Plane& a, const Plane& b);

double cc(const Plane& fused, const Plane& visible, const Plane& infrared);

double psnr(const Plane& fused, const Plane& visible, const Plane& infrared,
            double peak = 255.0, double cap = 100.0);

// Single-pair SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
// mean over valid window positions.
double ssim_pair(const Plane& a, const Plane& b, double peak = 255.0);

double ssim(const Plane& fused, const Plane& visible, const Plane& infrared,
            double peak = 255.0);

// Edge-preservation score: Sobel strength/orientation retention weighted by
// source gradient magnitude. Replicated borders; orientation differences are
// taken modulo pi; 0 when all sources are flat.
double qabf(const Plane& fused, const Plane& visible, const Plane& infrared,
            const QabfParams& params = {});

// Value of qabf when the fused image reproduces every source gradient exactly.
double qabf_self_fusion_ceiling(const QabfParams& params = {});

inline constexpr const char* kColumnOrder[] = {"CC", "PSNR", "Qabf", "SSIM"};

struct MetricRow {
  std::string triplet_id;
  std::map<std::string, double> values;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::map<std::string, double> means;
};

struct MetricOptions {
  double peak = 255.0;
  double psnr_cap = 100.0;
};

MetricRow evaluate_triplet(const std::string& triplet_id, const Image& fused,
                           const Image& visible, const Image& infrared,
                           const MetricOptions& options = {});

MetricReport evaluate_manifest(const data::Manifest& manifest, const MetricOptions& options = {});

// Columns CC, PSNR, Qabf, SSIM; a final "mean" row carries the aggregates.
std::string report_csv(const MetricReport& report);

}  // namespace hfusion::metrics
