#include "asn/features.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "asn/codec.hpp"
#include "asn/dataset.hpp"
#include "asn/error.hpp"

namespace asn::ensemble {

std::vector<int> zigzag_order(int n) {
  require(n > 0, "zigzag_order: n must be positive");
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n) * n);
  for (int s = 0; s <= 2 * (n - 1); ++s) {
    if (s % 2 == 0) {
      for (int r = std::min(s, n - 1); r >= 0 && s - r < n; --r) order.push_back(r * n + (s - r));
    } else {
      for (int r = std::max(0, s - n + 1); r <= s && r < n; ++r) order.push_back(r * n + (s - r));
    }
  }
  return order;
}

std::vector<double> zigzag(std::span<const double> block, int n) {
  require(block.size() == static_cast<std::size_t>(n) * n, "zigzag: block is not n x n");
  std::vector<double> out;
  out.reserve(block.size());
  for (int i : zigzag_order(n)) out.push_back(block[static_cast<std::size_t>(i)]);
  return out;
}

std::vector<double> compute_feature_vector(const FramePlane& decoded, const FramePlane& original) {
  constexpr int n = dataset::kPatchSize;
  require(decoded.width() == n && decoded.height() == n && original.width() == n && original.height() == n,
          "compute_feature_vector: patches must both be 64x64");
  std::vector<double> diff(static_cast<std::size_t>(n) * n);
  for (std::size_t i = 0; i < diff.size(); ++i)
    diff[i] = std::abs(double(decoded.samples()[i]) - double(original.samples()[i]));
  return zigzag(codec::dct2d(diff, n), n);
}

Projection Projection::fit(const std::vector<std::vector<double>>& rows, int dims) {
  require(!rows.empty(), "Projection::fit: no rows");
  require(dims > 0, "Projection::fit: dims must be positive");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto d = static_cast<Eigen::Index>(rows.front().size());
  require(d >= dims, "Projection::fit: more output dims than input dims");
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    require(static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) == d,
            "Projection::fit: rows differ in length");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;

  // Leading eigenvectors of the covariance. With fewer rows than columns the
  // small Gram matrix gives the same axes for less work.
  Eigen::MatrixXd axes(d, dims);
  Eigen::VectorXd values(dims);
  if (n < d) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x * x.transpose());
    const double top = std::max(0.0, eig.eigenvalues()(n - 1));
    for (int k = 0; k < dims; ++k) {
      const Eigen::Index col = n - 1 - k;
      values(k) = col >= 0 ? std::max(0.0, eig.eigenvalues()(col)) : 0.0;
      // Directions outside the data's span carry no variance; leave them zero
      // rather than normalizing round-off into a spurious axis.
      if (values(k) <= 1e-12 * top || top == 0.0) {
        values(k) = 0.0;
        axes.col(k).setZero();
        continue;
      }
      const Eigen::VectorXd v = x.transpose() * eig.eigenvectors().col(col);
      axes.col(k) = v / v.norm();
    }
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x);
    for (int k = 0; k < dims; ++k) {
      values(k) = std::max(0.0, eig.eigenvalues()(d - 1 - k));
      axes.col(k) = eig.eigenvectors().col(d - 1 - k);
    }
  }

  Projection p;
  p.mean_.assign(mean.data(), mean.data() + d);
  for (int k = 0; k < dims; ++k) {
    // Eigenvector signs are arbitrary; make the largest entry positive.
    Eigen::Index arg = 0;
    axes.col(k).cwiseAbs().maxCoeff(&arg);
    if (axes(arg, k) < 0.0) axes.col(k) = -axes.col(k);
    p.axes_.emplace_back(axes.col(k).data(), axes.col(k).data() + d);
    p.variances_.push_back(values(k) / static_cast<double>(n));
  }
  return p;
}

std::vector<double> Projection::apply(std::span<const double> row) const {
  require(row.size() == mean_.size(), "Projection::apply: row length does not match the fit");
  std::vector<double> out(axes_.size(), 0.0);
  for (std::size_t k = 0; k < axes_.size(); ++k)
    for (std::size_t j = 0; j < row.size(); ++j) out[k] += (row[j] - mean_[j]) * axes_[k][j];
  return out;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

int nearest(const std::vector<double>& p, const std::vector<std::vector<double>>& centroids) {
  int best = 0;
  double best_d = sq_dist(p, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = sq_dist(p, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int max_iters) {
  require(k > 0, "kmeans: k must be positive");
  require(points.size() >= static_cast<std::size_t>(k), "kmeans: fewer points than clusters");
  std::set<std::vector<double>> distinct(points.begin(), points.end());
  if (distinct.size() < static_cast<std::size_t>(k))
    throw NumericError("kmeans: only " + std::to_string(distinct.size()) + " distinct points for " +
                       std::to_string(k) + " clusters");

  std::mt19937_64 rng(seed);
  KMeansResult r;
  r.centroids.push_back(points[rng() % points.size()]);
  std::vector<double> d2(points.size());
  while (r.centroids.size() < static_cast<std::size_t>(k)) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      d2[i] = sq_dist(points[i], r.centroids[static_cast<std::size_t>(nearest(points[i], r.centroids))]);
      total += d2[i];
    }
    const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
    double acc = 0.0;
    std::size_t pick = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (d2[i] == 0.0) continue;
      pick = i;
      acc += d2[i];
      if (acc >= target) break;
    }
    r.centroids.push_back(points[pick]);
  }

  r.assignment.assign(points.size(), -1);
  for (r.iterations = 0; r.iterations < max_iters; ++r.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < points.size(); ++i) {
      const int c = nearest(points[i], r.centroids);
      if (c != r.assignment[i]) {
        r.assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    const std::size_t dims = points.front().size();
    std::vector<std::vector<double>> sums(static_cast<std::size_t>(k), std::vector<double>(dims, 0.0));
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto c = static_cast<std::size_t>(r.assignment[i]);
      ++counts[c];
      for (std::size_t j = 0; j < dims; ++j) sums[c][j] += points[i][j];
    }
    // An emptied cluster keeps its previous centroid.
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < dims; ++j) r.centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
  }
  return r;
}

std::vector<int> cluster_features(const std::vector<std::vector<double>>& features, std::span<const double> psnr,
                                  std::uint64_t seed, int k, int dims) {
  require(features.size() == psnr.size(), "cluster_features: one PSNR per feature vector required");
  require(features.size() >= static_cast<std::size_t>(k), "cluster_features: fewer patches than classes");
  const Projection proj = Projection::fit(features, dims);
  std::vector<std::vector<double>> reduced;
  reduced.reserve(features.size());
  for (const auto& f : features) reduced.push_back(proj.apply(f));
  KMeansResult km;
  try {
    km = kmeans(reduced, k, seed);
  } catch (const NumericError& e) {
    throw NumericError(std::string("cluster-based init: features are degenerate (") + e.what() +
                       "); use PSNR-based init instead");
  }

  std::vector<double> mean(static_cast<std::size_t>(k), 0.0);
  std::vector<std::size_t> count(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < psnr.size(); ++i) {
    mean[static_cast<std::size_t>(km.assignment[i])] += psnr[i];
    ++count[static_cast<std::size_t>(km.assignment[i])];
  }
  for (std::size_t c = 0; c < mean.size(); ++c)
    mean[c] = count[c] ? mean[c] / static_cast<double>(count[c]) : std::numeric_limits<double>::infinity();
  std::vector<int> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return mean[a] < mean[b]; });
  std::vector<int> rank(static_cast<std::size_t>(k));
  for (int r = 0; r < k; ++r) rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;

  std::vector<int> labels(features.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = rank[static_cast<std::size_t>(km.assignment[i])];
  return labels;
}

}  // namespace asn::ensemble
