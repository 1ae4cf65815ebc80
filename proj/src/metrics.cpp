#include "asn/metrics.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "asn/error.hpp"

namespace asn::metrics {

double mse(const FramePlane& a, const FramePlane& b) {
  require(a.width() == b.width() && a.height() == b.height(), "psnr: frame dimensions differ");
  require(!a.empty(), "psnr: empty frame");
  double sse = 0.0;
  const auto sa = a.samples();
  const auto sb = b.samples();
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = double(sa[i]) - double(sb[i]);
    sse += d * d;
  }
  return sse / static_cast<double>(sa.size());
}

double psnr(const FramePlane& a, const FramePlane& b) {
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
}

DeltaPsnrReport delta_psnr_report(std::span<const FramePlane> baseline, std::span<const FramePlane> processed,
                                  std::span<const FramePlane> originals) {
  require(baseline.size() == processed.size() && baseline.size() == originals.size(),
          "delta_psnr_report: frame counts differ");
  require(!baseline.empty(), "delta_psnr_report: no frames");
  DeltaPsnrReport r;
  double sum = 0.0;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    r.baseline_psnr.push_back(psnr(baseline[i], originals[i]));
    r.processed_psnr.push_back(psnr(processed[i], originals[i]));
    r.delta.push_back(r.processed_psnr.back() - r.baseline_psnr.back());
    sum += r.delta.back();
  }
  r.mean_delta = sum / static_cast<double>(baseline.size());
  return r;
}

void RdCurve::validate() const {
  require(!points.empty(), "RD curve: no points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    require(points[i].rate_bits > 0.0 && std::isfinite(points[i].rate_bits), "RD curve: rates must be positive");
    require(std::isfinite(points[i].psnr_db), "RD curve: PSNR must be finite");
    if (i > 0) require(points[i].rate_bits > points[i - 1].rate_bits, "RD curve: rates must strictly increase");
  }
}

std::vector<double> polyfit(std::span<const double> x, std::span<const double> y, int degree) {
  require(x.size() == y.size(), "polyfit: x and y differ in length");
  require(degree >= 0 && x.size() > static_cast<std::size_t>(degree), "polyfit: too few points for the degree");
  const auto n = static_cast<Eigen::Index>(x.size());
  Eigen::MatrixXd v(n, degree + 1);
  Eigen::VectorXd rhs(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double p = 1.0;
    for (int j = 0; j <= degree; ++j, p *= x[static_cast<std::size_t>(i)]) v(i, j) = p;
    rhs(i) = y[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd c = v.colPivHouseholderQr().solve(rhs);
  return {c.data(), c.data() + c.size()};
}

double polyval(std::span<const double> coeffs, double x) {
  double acc = 0.0;
  for (std::size_t i = coeffs.size(); i-- > 0;) acc = acc * x + coeffs[i];
  return acc;
}

namespace {

// Integral of the polynomial over [a, b].
double polyint(std::span<const double> c, double a, double b) {
  double s = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double e = static_cast<double>(i + 1);
    s += c[i] * (std::pow(b, e) - std::pow(a, e)) / e;
  }
  return s;
}

std::vector<double> log_rate_fit(const RdCurve& curve) {
  std::vector<double> x, y;
  for (const auto& p : curve.points) {
    x.push_back(p.psnr_db);
    y.push_back(std::log10(p.rate_bits));
  }
  return polyfit(x, y, 3);
}

std::pair<double, double> psnr_range(const RdCurve& c) {
  double lo = c.points.front().psnr_db, hi = lo;
  for (const auto& p : c.points) {
    lo = std::min(lo, p.psnr_db);
    hi = std::max(hi, p.psnr_db);
  }
  return {lo, hi};
}

}  // namespace

double bd_rate(const RdCurve& anchor, const RdCurve& test) {
  anchor.validate();
  test.validate();
  require(anchor.points.size() == 4 && test.points.size() == 4, "bd_rate: each curve needs exactly 4 points");
  const auto [alo, ahi] = psnr_range(anchor);
  const auto [tlo, thi] = psnr_range(test);
  const double lo = std::max(alo, tlo);
  const double hi = std::min(ahi, thi);
  require(hi > lo, "bd_rate: the curves' PSNR ranges do not overlap");
  const auto fa = log_rate_fit(anchor);
  const auto ft = log_rate_fit(test);
  const double avg = (polyint(ft, lo, hi) - polyint(fa, lo, hi)) / (hi - lo);
  return (std::pow(10.0, avg) - 1.0) * 100.0;
}

RdCurve with_flag_overhead(const RdCurve& curve, std::span<const std::size_t> patch_counts, double bits_per_patch) {
  require(patch_counts.size() == curve.points.size(), "with_flag_overhead: one patch count per RD point");
  RdCurve out = curve;
  for (std::size_t i = 0; i < out.points.size(); ++i)
    out.points[i].rate_bits += bits_per_patch * static_cast<double>(patch_counts[i]);
  return out;
}

void write_report(const std::filesystem::path& path, std::span<const ReportRow> rows) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "sequence\tqp\tbaseline_psnr\tmethod_psnr\tdelta_psnr\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) {
    require(r.sequence.find_first_of("\t\n") == std::string::npos, "write_report: sequence name contains a tab");
    out << r.sequence << '\t' << r.qp << '\t' << r.baseline_psnr << '\t' << r.method_psnr << '\t' << r.delta_psnr()
        << '\n';
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

std::vector<ReportRow> read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("sequence\tqp", 0) != 0) throw FormatError(path.string() + ": no header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    ReportRow r;
    std::string qp, base, method, d;
    if (!std::getline(ss, r.sequence, '\t') || !std::getline(ss, qp, '\t') || !std::getline(ss, base, '\t') ||
        !std::getline(ss, method, '\t') || !std::getline(ss, d))
      throw FormatError(path.string() + ": bad row '" + line + "'");
    try {
      r.qp = std::stoi(qp);
      r.baseline_psnr = std::stod(base);
      r.method_psnr = std::stod(method);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": bad number in '" + line + "'");
    }
    rows.push_back(r);
  }
  return rows;
}

void write_gain_curve(const std::filesystem::path& path, std::span<const double> gains, const std::string& label) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "# iteration gain_db (" << label << ")\n" << std::fixed << std::setprecision(6);
  for (std::size_t i = 0; i < gains.size(); ++i) out << i << ' ' << gains[i] << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace asn::metrics
