#include "qvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "qvae/adam.hpp"
#include "qvae/error.hpp"
#include "qvae/filters.hpp"
#include "qvae/ops.hpp"

namespace qvae {

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("mse: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const auto av = a.data(), bv = b.data();
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  return acc / static_cast<double>(av.size());
}

GaussianStats fit_gaussian(const std::vector<double>& rows, int n, int d) {
  if (n < 2) throw ValueError("fit_gaussian: need at least 2 samples");
  if (rows.size() != static_cast<size_t>(n) * d)
    throw ShapeError("fit_gaussian: buffer does not match n*d");
  GaussianStats s;
  s.d = d;
  s.count = n;
  s.mean.assign(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) s.mean[j] += rows[static_cast<size_t>(i) * d + j];
  for (double& m : s.mean) m /= n;
  s.cov.assign(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < n; ++i) {
    const double* row = rows.data() + static_cast<size_t>(i) * d;
    for (int a = 0; a < d; ++a) {
      const double da = row[a] - s.mean[a];
      for (int b = a; b < d; ++b)
        s.cov[static_cast<size_t>(a) * d + b] += da * (row[b] - s.mean[b]);
    }
  }
  for (int a = 0; a < d; ++a) {
    for (int b = a; b < d; ++b) {
      const double v = s.cov[static_cast<size_t>(a) * d + b] / (n - 1);
      s.cov[static_cast<size_t>(a) * d + b] = v;
      s.cov[static_cast<size_t>(b) * d + a] = v;
    }
  }
  return s;
}

void sym_eigen(const std::vector<double>& m, int d, std::vector<double>* eigenvalues,
               std::vector<double>* eigenvectors) {
  if (m.size() != static_cast<size_t>(d) * d)
    throw ShapeError("sym_eigen: buffer does not match d*d");
  double frob = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = i + 1; j < d; ++j) {
      const double a = m[static_cast<size_t>(i) * d + j];
      const double b = m[static_cast<size_t>(j) * d + i];
      if (std::abs(a - b) > 1e-9 * std::max(1.0, std::abs(a) + std::abs(b)))
        throw ValueError("sym_eigen: input not symmetric");
    }
    for (int j = 0; j < d; ++j) {
      const double v = m[static_cast<size_t>(i) * d + j];
      frob += v * v;
    }
  }
  frob = std::sqrt(frob);

  std::vector<double> a(m);
  // Symmetrize exactly so the rotations see one consistent value per pair.
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double v = (a[static_cast<size_t>(i) * d + j] +
                        a[static_cast<size_t>(j) * d + i]) / 2.0;
      a[static_cast<size_t>(i) * d + j] = v;
      a[static_cast<size_t>(j) * d + i] = v;
    }
  std::vector<double> v(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;

  // The absolute target plus a rounding-noise floor for large-norm matrices.
  const double tol = std::max(1e-12, 64.0 * std::numeric_limits<double>::epsilon() * frob);
  auto at = [&a, d](int i, int j) -> double& { return a[static_cast<size_t>(i) * d + j]; };
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += 2.0 * at(p, q) * at(p, q);
    if (std::sqrt(off) < tol) break;
    for (int p = 0; p < d - 1; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        const double app = at(p, p), aqq = at(q, q);
        at(p, p) = app - t * apq;
        at(q, q) = aqq + t * apq;
        at(p, q) = 0.0;
        at(q, p) = 0.0;
        for (int i = 0; i < d; ++i) {
          if (i == p || i == q) continue;
          const double aip = at(i, p), aiq = at(i, q);
          at(i, p) = c * aip - s * aiq;
          at(p, i) = at(i, p);
          at(i, q) = s * aip + c * aiq;
          at(q, i) = at(i, q);
        }
        for (int i = 0; i < d; ++i) {
          const double vip = v[static_cast<size_t>(i) * d + p];
          const double viq = v[static_cast<size_t>(i) * d + q];
          v[static_cast<size_t>(i) * d + p] = c * vip - s * viq;
          v[static_cast<size_t>(i) * d + q] = s * vip + c * viq;
        }
      }
    }
  }
  // Report eigenvalues ascending; eigenvector columns follow the same order.
  std::vector<int> perm(d);
  for (int i = 0; i < d; ++i) perm[i] = i;
  std::sort(perm.begin(), perm.end(),
            [&at](int x, int y) { return at(x, x) < at(y, y); });
  if (eigenvalues) {
    eigenvalues->resize(d);
    for (int i = 0; i < d; ++i) (*eigenvalues)[i] = at(perm[i], perm[i]);
  }
  if (eigenvectors) {
    eigenvectors->assign(static_cast<size_t>(d) * d, 0.0);
    for (int e = 0; e < d; ++e)
      for (int i = 0; i < d; ++i)
        (*eigenvectors)[static_cast<size_t>(i) * d + e] =
            v[static_cast<size_t>(i) * d + static_cast<size_t>(perm[e])];
  }
}

namespace {

// B = V diag(sqrt(max(lambda, 0))) V^T
std::vector<double> psd_sqrt(const std::vector<double>& m, int d) {
  std::vector<double> evals, evecs;
  sym_eigen(m, d, &evals, &evecs);
  std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
  for (int e = 0; e < d; ++e) {
    const double r = std::sqrt(std::max(evals[e], 0.0));
    if (r == 0.0) continue;
    for (int i = 0; i < d; ++i) {
      const double vi = evecs[static_cast<size_t>(i) * d + e] * r;
      for (int j = 0; j < d; ++j)
        out[static_cast<size_t>(i) * d + j] += vi * evecs[static_cast<size_t>(j) * d + e];
    }
  }
  return out;
}

std::vector<double> matmul_dd(const std::vector<double>& a, const std::vector<double>& b,
                              int d) {
  std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      const double av = a[static_cast<size_t>(i) * d + k];
      for (int j = 0; j < d; ++j)
        c[static_cast<size_t>(i) * d + j] += av * b[static_cast<size_t>(k) * d + j];
    }
  return c;
}

}  // namespace

double frechet_distance(const GaussianStats& s1, const GaussianStats& s2) {
  if (s1.d != s2.d) {
    throw ShapeError("frechet_distance: dimension mismatch " + std::to_string(s1.d) +
                     " vs " + std::to_string(s2.d));
  }
  const int d = s1.d;
  double dist = 0.0;
  for (int i = 0; i < d; ++i) {
    const double dm = s1.mean[i] - s2.mean[i];
    dist += dm * dm;
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < d; ++i) {
    tr1 += s1.cov[static_cast<size_t>(i) * d + i];
    tr2 += s2.cov[static_cast<size_t>(i) * d + i];
  }
  const std::vector<double> root2 = psd_sqrt(s2.cov, d);
  std::vector<double> inner = matmul_dd(matmul_dd(root2, s1.cov, d), root2, d);
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      const double v = (inner[static_cast<size_t>(i) * d + j] +
                        inner[static_cast<size_t>(j) * d + i]) / 2.0;
      inner[static_cast<size_t>(i) * d + j] = v;
      inner[static_cast<size_t>(j) * d + i] = v;
    }
  std::vector<double> evals;
  sym_eigen(inner, d, &evals, nullptr);
  double tr_root = 0.0;
  for (double e : evals) tr_root += std::sqrt(std::max(e, 0.0));
  return std::max(0.0, dist + tr1 + tr2 - 2.0 * tr_root);
}

FeatureExtractor::FeatureExtractor(uint64_t seed) : seed_(seed) {
  Rng rng = Rng(seed).derive("fx-init");
  auto init = [&rng](Shape shape, int fan_in) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    const double bound = std::sqrt(1.0 / fan_in);
    for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
  };
  conv1_w_ = init({8, 1, 3, 3}, 9);
  conv1_b_ = Tensor::zeros({8}, true);
  conv2_w_ = init({16, 8, 3, 3}, 72);
  conv2_b_ = Tensor::zeros({16}, true);
  fc_w_ = init({1024, 64}, 1024);
  fc_b_ = Tensor::zeros({64}, true);
  head_w_ = init({64, 10}, 64);
  head_b_ = Tensor::zeros({10}, true);
}

Tensor FeatureExtractor::features_graph(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != 32 ||
      images.dim(3) != 32) {
    throw ShapeError("feature extractor expects [B,1,32,32], got " +
                     shape_str(images.shape()));
  }
  const int b = images.dim(0);
  Tensor h1 = maxpool2d(relu(add_channel_bias(conv2d(images, conv1_w_, 1, 1), conv1_b_)), 2, 2);
  Tensor h2 = maxpool2d(relu(add_channel_bias(conv2d(h1, conv2_w_, 1, 1), conv2_b_)), 2, 2);
  Tensor flat = reshape(h2, {b, 1024});
  return relu(add_row_bias(matmul(flat, fc_w_), fc_b_));
}

Tensor FeatureExtractor::logits_graph(const Tensor& images) const {
  return add_row_bias(matmul(features_graph(images), head_w_), head_b_);
}

Tensor FeatureExtractor::features(const Tensor& images) const {
  NoGradGuard guard;
  return features_graph(images);
}

std::vector<Tensor> FeatureExtractor::parameters() const {
  return {conv1_w_, conv1_b_, conv2_w_, conv2_b_, fc_w_, fc_b_, head_w_, head_b_};
}

FeatureExtractor::TrainSummary FeatureExtractor::fit(const PreparedDataset& train,
                                                     const PreparedDataset& test,
                                                     int epochs, int batch, float lr) {
  Adam opt(parameters(), lr);
  Batcher batches(train, batch, true);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    batches.shuffle(seed_ + static_cast<uint64_t>(epoch));
    for (int b = 0; b < batches.num_batches(); ++b) {
      Tensor x = batches.batch_images(b);
      Tensor loss = softmax_cross_entropy_mean(logits_graph(x), batches.batch_labels(b));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  TrainSummary s;
  s.epochs = epochs;
  s.seed = seed_;
  s.test_accuracy = accuracy(test);
  s.accuracy_floor = test.source == "usps" ? 0.90 : 0.95;
  s.reached_floor = s.test_accuracy >= s.accuracy_floor;
  return s;
}

double FeatureExtractor::accuracy(const PreparedDataset& ds, int batch) const {
  NoGradGuard guard;
  Batcher batches(ds, batch, false);
  int64_t correct = 0;
  for (int b = 0; b < batches.num_batches(); ++b) {
    const std::vector<int> pred = argmax_rows(logits_graph(batches.batch_images(b)));
    const std::vector<int> truth = batches.batch_labels(b);
    for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  }
  return static_cast<double>(correct) / ds.n;
}

namespace {

// Embed a [N,1,32,32] tensor in slices, returning an n x 64 double matrix.
std::vector<double> embed_all(const Tensor& images, const FeatureExtractor& fx) {
  const int n = images.dim(0);
  std::vector<double> rows(static_cast<size_t>(n) * 64);
  const auto iv = images.data();
  constexpr int kSlice = 256;
  for (int start = 0; start < n; start += kSlice) {
    const int bs = std::min(kSlice, n - start);
    Tensor slice = Tensor::zeros({bs, 1, 32, 32});
    std::copy_n(iv.data() + static_cast<size_t>(start) * 1024,
                static_cast<size_t>(bs) * 1024, slice.data().data());
    Tensor f = fx.features(slice);
    const auto fv = f.data();
    for (int i = 0; i < bs; ++i)
      for (int j = 0; j < 64; ++j)
        rows[static_cast<size_t>(start + i) * 64 + j] =
            fv[static_cast<size_t>(i) * 64 + j];
  }
  return rows;
}

}  // namespace

FidResult fid_report(const Tensor& real, const Tensor& generated,
                     const FeatureExtractor& fx) {
  if (real.rank() != 4 || generated.rank() != 4) {
    throw ShapeError("fid_report expects [N,1,32,32] batches");
  }
  FidResult out;
  const int n1 = real.dim(0), n2 = generated.dim(0);
  if (n1 < 2 || n2 < 2) throw ValueError("fid_report: need at least 2 images per side");
  constexpr int kWarnThreshold = 500;
  if (n1 < kWarnThreshold || n2 < kWarnThreshold) {
    out.warning = "fewer than " + std::to_string(kWarnThreshold) +
                  " samples on a side; covariance estimates may be unstable";
  }
  const GaussianStats s1 = fit_gaussian(embed_all(real, fx), n1, 64);
  const GaussianStats s2 = fit_gaussian(embed_all(generated, fx), n2, 64);
  out.value = frechet_distance(s1, s2);
  return out;
}

std::vector<double> GmmModel::responsibilities(const double* x) const {
  std::vector<double> logp(k);
  for (int c = 0; c < k; ++c) {
    double acc = std::log(weights[c]);
    for (int j = 0; j < d; ++j) {
      const double var = vars[static_cast<size_t>(c) * d + j];
      const double diff = x[j] - means[static_cast<size_t>(c) * d + j];
      acc -= 0.5 * (diff * diff / var + std::log(2.0 * 3.141592653589793 * var));
    }
    logp[c] = acc;
  }
  const double m = *std::max_element(logp.begin(), logp.end());
  double z = 0.0;
  for (double& l : logp) {
    l = std::exp(l - m);
    z += l;
  }
  for (double& l : logp) l /= z;
  return logp;
}

GmmModel gmm_fit(const std::vector<double>& rows, int n, int d, int k, uint64_t seed) {
  if (k < 1) throw ValueError("gmm_fit: k must be >= 1");
  if (d < 1) throw ValueError("gmm_fit: d must be >= 1");
  if (n < k) throw ValueError("gmm_fit: fewer samples than components");
  if (rows.size() != static_cast<size_t>(n) * d)
    throw ShapeError("gmm_fit: buffer does not match n*d");
  constexpr double kVarFloor = 1e-6;
  GmmModel gm;
  gm.k = k;
  gm.d = d;
  gm.weights.assign(k, 1.0 / k);
  gm.means.assign(static_cast<size_t>(k) * d, 0.0);
  gm.vars.assign(static_cast<size_t>(k) * d, 0.0);

  Rng rng = Rng(seed).derive("gmm-init");
  auto row = [&rows, d](int i) { return rows.data() + static_cast<size_t>(i) * d; };

  // k-means++ seeding: distance-weighted draws after a uniform first pick.
  std::vector<double> d2(n, 0.0);
  {
    const int first = static_cast<int>(rng.uniform_index(n));
    std::copy_n(row(first), d, gm.means.data());
    for (int i = 0; i < n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = row(i)[j] - gm.means[j];
        acc += diff * diff;
      }
      d2[i] = acc;
    }
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (double v : d2) total += v;
      int pick;
      if (total <= 0.0) {
        pick = static_cast<int>(rng.uniform_index(n));
      } else {
        const double target = rng.uniform() * total;
        double run = 0.0;
        pick = n - 1;
        for (int i = 0; i < n; ++i) {
          run += d2[i];
          if (run >= target) {
            pick = i;
            break;
          }
        }
      }
      std::copy_n(row(pick), d, gm.means.data() + static_cast<size_t>(c) * d);
      for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
          const double diff = row(i)[j] - gm.means[static_cast<size_t>(c) * d + j];
          acc += diff * diff;
        }
        d2[i] = std::min(d2[i], acc);
      }
    }
  }
  {
    // Global per-dimension variance as the initial spread.
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mean[j] += row(i)[j];
    for (double& m : mean) m /= n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) {
        const double diff = row(i)[j] - mean[j];
        var[j] += diff * diff;
      }
    for (int j = 0; j < d; ++j) {
      const double v = std::max(var[j] / n, kVarFloor);
      for (int c = 0; c < k; ++c) gm.vars[static_cast<size_t>(c) * d + j] = v;
    }
  }

  constexpr double kLog2Pi = 1.8378770664093453;
  std::vector<double> resp(static_cast<size_t>(n) * k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 200; ++iter) {
    // E-step in log space.
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double* r = resp.data() + static_cast<size_t>(i) * k;
      double m = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double acc = std::log(gm.weights[c]);
        for (int j = 0; j < d; ++j) {
          const double var = gm.vars[static_cast<size_t>(c) * d + j];
          const double diff = row(i)[j] - gm.means[static_cast<size_t>(c) * d + j];
          acc -= 0.5 * (diff * diff / var + std::log(var) + kLog2Pi);
        }
        r[c] = acc;
        m = std::max(m, acc);
      }
      double z = 0.0;
      for (int c = 0; c < k; ++c) z += std::exp(r[c] - m);
      ll += m + std::log(z);
      for (int c = 0; c < k; ++c) r[c] = std::exp(r[c] - m) / z;
    }
    gm.ll_trace.push_back(ll);
    gm.iterations = iter + 1;
    if (ll - prev_ll < 1e-6 && iter > 0) break;
    prev_ll = ll;

    // M-step.
    for (int c = 0; c < k; ++c) {
      double nk = 0.0;
      for (int i = 0; i < n; ++i) nk += resp[static_cast<size_t>(i) * k + c];
      gm.weights[c] = nk / n;
      double* mu = gm.means.data() + static_cast<size_t>(c) * d;
      double* var = gm.vars.data() + static_cast<size_t>(c) * d;
      std::fill(mu, mu + d, 0.0);
      for (int i = 0; i < n; ++i) {
        const double r = resp[static_cast<size_t>(i) * k + c];
        for (int j = 0; j < d; ++j) mu[j] += r * row(i)[j];
      }
      const double denom = std::max(nk, 1e-300);
      for (int j = 0; j < d; ++j) mu[j] /= denom;
      std::fill(var, var + d, 0.0);
      for (int i = 0; i < n; ++i) {
        const double r = resp[static_cast<size_t>(i) * k + c];
        for (int j = 0; j < d; ++j) {
          const double diff = row(i)[j] - mu[j];
          var[j] += r * diff * diff;
        }
      }
      for (int j = 0; j < d; ++j) var[j] = std::max(var[j] / denom, kVarFloor);
    }
  }
  return gm;
}

void export_latents(const VaeModel& model, const PreparedDataset& ds,
                    const std::string& path, int batch) {
  NoGradGuard guard;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "label";
  for (int j = 0; j < VaeModel::kLatentDim; ++j) f << ",mu_" << j;
  f << "\n";
  Batcher batches(ds, batch, false);
  char buf[32];
  for (int b = 0; b < batches.num_batches(); ++b) {
    Tensor x = batches.batch_images(b);
    auto [mu, logvar] = model.encode(x);
    const auto mv = mu.data();
    const std::vector<int> labels = batches.batch_labels(b);
    for (size_t i = 0; i < labels.size(); ++i) {
      f << labels[i];
      for (int j = 0; j < VaeModel::kLatentDim; ++j) {
        std::snprintf(buf, sizeof buf, ",%.9g",
                      static_cast<double>(mv[i * VaeModel::kLatentDim + j]));
        f << buf;
      }
      f << "\n";
    }
  }
  if (!f) throw IoError("write failed for " + path);
}

void image_grid_pgm(const Tensor& images, int columns, const std::string& path) {
  if (images.rank() != 4 || images.dim(1) != 1) {
    throw ShapeError("image_grid_pgm expects [N,1,H,W], got " + shape_str(images.shape()));
  }
  if (columns < 1) throw ValueError("image_grid_pgm: columns must be >= 1");
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const int cols = std::min(columns, n);
  const int rows = (n + cols - 1) / cols;
  constexpr int kSep = 2;
  const int width = cols * w + (cols - 1) * kSep;
  const int height = rows * h + (rows - 1) * kSep;
  std::vector<uint8_t> canvas(static_cast<size_t>(width) * height, 255);
  const auto iv = images.data();
  for (int i = 0; i < n; ++i) {
    const int gy = (i / cols) * (h + kSep), gx = (i % cols) * (w + kSep);
    const float* img = iv.data() + static_cast<size_t>(i) * h * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const float v = std::clamp(img[static_cast<size_t>(y) * w + x], 0.0f, 1.0f);
        canvas[static_cast<size_t>(gy + y) * width + gx + x] =
            static_cast<uint8_t>(std::lround(255.0 * v));
      }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(canvas.data()),
          static_cast<std::streamsize>(canvas.size()));
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace qvae
