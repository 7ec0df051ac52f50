#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qvae/data.hpp"
#include "qvae/models.hpp"
#include "qvae/tensor.hpp"

namespace qvae {

// Mean over all elements of (a-b)^2, accumulated in double. Exactly symmetric.
double mse(const Tensor& a, const Tensor& b);

struct GaussianStats {
  int d = 0;
  int64_t count = 0;
  std::vector<double> mean;  // d
  std::vector<double> cov;   // d*d row-major, symmetric, N-1 divisor
};

// rows: n*d row-major feature matrix. Requires n >= 2.
GaussianStats fit_gaussian(const std::vector<double>& rows, int n, int d);

// Cyclic Jacobi rotations on a symmetric matrix. Either output may be null.
// Satisfies M = V diag(lambda) V^T within 1e-8; eigenvalues come back in
// ascending order and eigenvectors are the matching columns of V.
void sym_eigen(const std::vector<double>& m, int d, std::vector<double>* eigenvalues,
               std::vector<double>* eigenvectors);

// |mu1-mu2|^2 + tr(S1) + tr(S2) - 2 tr((S2^1/2 S1 S2^1/2)^1/2), clamped at 0.
// Negative eigenvalues from numerical noise are clipped before each root.
double frechet_distance(const GaussianStats& s1, const GaussianStats& s2);

// Small digit classifier whose 64-wide penultimate layer stands in for the
// usual embedding behind the Frechet metric at this scale. Absolute values are
// not comparable with published scores; orderings across identically trained
// models are the point.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(uint64_t seed);

  struct TrainSummary {
    double test_accuracy = 0.0;
    double accuracy_floor = 0.0;
    bool reached_floor = false;
    int epochs = 0;
    uint64_t seed = 0;
  };

  // Softmax cross-entropy with Adam. Floor: 0.95 on mnist, 0.90 on usps;
  // missing it is reported in the summary, not fatal.
  TrainSummary fit(const PreparedDataset& train, const PreparedDataset& test,
                   int epochs = 5, int batch = 128, float lr = 0.001f);

  Tensor features(const Tensor& images) const;  // [B,64], detached
  double accuracy(const PreparedDataset& ds, int batch = 256) const;
  std::vector<Tensor> parameters() const;
  uint64_t seed() const { return seed_; }

 private:
  Tensor logits_graph(const Tensor& images) const;
  Tensor features_graph(const Tensor& images) const;

  uint64_t seed_;
  Tensor conv1_w_, conv1_b_;  // 1 -> 8, k3, p1
  Tensor conv2_w_, conv2_b_;  // 8 -> 16, k3, p1
  Tensor fc_w_, fc_b_;        // 1024 -> 64 feature layer
  Tensor head_w_, head_b_;    // 64 -> 10
};

struct FidResult {
  double value = 0.0;
  std::string warning;  // set when a side has too few samples for stable stats
};

// Embeds both [N,1,32,32] sets, fits Gaussian stats, returns their distance.
FidResult fid_report(const Tensor& real, const Tensor& generated,
                     const FeatureExtractor& fx);

struct GmmModel {
  int k = 0, d = 0;
  std::vector<double> weights;   // simplex
  std::vector<double> means;     // k*d
  std::vector<double> vars;      // k*d diagonal, each >= 1e-6
  std::vector<double> ll_trace;  // log-likelihood after every EM iteration
  int iterations = 0;

  std::vector<double> responsibilities(const double* x) const;  // length k
};

// Diagonal-covariance EM with a k-means++ style seeded initialization. Stops
// when the log-likelihood gain drops below 1e-6 or after 200 iterations.
GmmModel gmm_fit(const std::vector<double>& rows, int n, int d, int k, uint64_t seed);

// CSV `label,mu_0..mu_15`, one row per sample, encoder means (not sampled z).
void export_latents(const VaeModel& model, const PreparedDataset& ds,
                    const std::string& path, int batch = 256);

// Binary PGM (P5, maxval 255) tiling with 2-pixel white separators.
void image_grid_pgm(const Tensor& images, int columns, const std::string& path);

}  // namespace qvae
