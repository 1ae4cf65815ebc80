#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "asn/frame.hpp"

// Residual features used by cluster-based label initialization.
namespace asn::ensemble {

// Row-major positions of an n x n block in zigzag scan order:
// (0,0), (0,1), (1,0), (2,0), (1,1), (0,2), ...
std::vector<int> zigzag_order(int n);
std::vector<double> zigzag(std::span<const double> block, int n);

// Zigzag(DCT(|decoded - original|)) over a 64x64 patch; 4096 values.
std::vector<double> compute_feature_vector(const FramePlane& decoded, const FramePlane& original);

// Linear projection onto the leading principal axes of a training set.
class Projection {
 public:
  static Projection fit(const std::vector<std::vector<double>>& rows, int dims = 2);

  std::vector<double> apply(std::span<const double> row) const;
  int input_dims() const { return static_cast<int>(mean_.size()); }
  int output_dims() const { return static_cast<int>(axes_.size()); }
  // Variance captured by each axis.
  std::span<const double> variances() const { return variances_; }

 private:
  std::vector<double> mean_;
  std::vector<std::vector<double>> axes_;
  std::vector<double> variances_;
};

struct KMeansResult {
  std::vector<int> assignment;
  std::vector<std::vector<double>> centroids;
  int iterations = 0;
};

// Lloyd iterations from k-means++ seeding; stops when no assignment changes
// or after max_iters. Distance ties go to the lower cluster index.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k, std::uint64_t seed, int max_iters = 100);

// Project to `dims` principal axes, cluster into k groups, and number the
// clusters by ascending mean of `psnr` over their members. Throws
// NumericError when the features cannot be split into k groups.
std::vector<int> cluster_features(const std::vector<std::vector<double>>& features, std::span<const double> psnr,
                                  std::uint64_t seed, int k = 3, int dims = 2);

}  // namespace asn::ensemble
