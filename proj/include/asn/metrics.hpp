#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "asn/frame.hpp"

namespace asn::metrics {

inline constexpr double kPsnrCap = 100.0;

double mse(const FramePlane& a, const FramePlane& b);
// 10 log10(255^2 / MSE); identical rasters give kPsnrCap.
double psnr(const FramePlane& a, const FramePlane& b);

struct DeltaPsnrReport {
  std::vector<double> baseline_psnr;
  std::vector<double> processed_psnr;
  std::vector<double> delta;
  double mean_delta = 0.0;
};

DeltaPsnrReport delta_psnr_report(std::span<const FramePlane> baseline, std::span<const FramePlane> processed,
                                  std::span<const FramePlane> originals);

struct RdPoint {
  double rate_bits = 0.0;
  double psnr_db = 0.0;
};

struct RdCurve {
  std::vector<RdPoint> points;
  // Positive, strictly increasing rates and finite PSNRs.
  void validate() const;
};

// Least-squares polynomial, coefficients lowest order first.
std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree);
double polyval(std::span<const double> coeffs, double x);

// Bjontegaard delta rate in percent (negative = saving) from cubic fits of
// log10(rate) against PSNR over the common PSNR interval. Both curves must
// have exactly 4 points.
double bd_rate(const RdCurve& anchor, const RdCurve& test);

// Adds `bits_per_patch` signalling bits per patch to every rate.
RdCurve with_flag_overhead(const RdCurve& curve, std::span<const std::size_t> patch_counts, double bits_per_patch = 2.0);

struct ReportRow {
  std::string sequence;
  int qp = 0;
  double baseline_psnr = 0.0;
  double method_psnr = 0.0;
  double delta_psnr() const { return method_psnr - baseline_psnr; }
};

// Tab-separated: sequence, qp, baseline_psnr, method_psnr, delta_psnr.
void write_report(const std::filesystem::path& path, std::span<const ReportRow> rows);
std::vector<ReportRow> read_report(const std::filesystem::path& path);

// gnuplot data: one "iteration gain" row per entry after a '#' header.
void write_gain_curve(const std::filesystem::path& path, std::span<const double> gains, const std::string& label);

}  // namespace asn::metrics
