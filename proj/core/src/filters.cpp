#include "qvae/filters.hpp"

#include <cmath>
#include <string>

#include "qvae/error.hpp"

namespace qvae {

double quantum_expectation(double theta) {
  const double a0 = std::cos(theta / 2.0);
  const double a1 = std::sin(theta / 2.0);
  return a0 * a0 - a1 * a1;
}

double quantum_encode_grad(double theta) { return -std::sin(theta); }

Tensor window_pool_first(const Tensor& img) {
  if (img.rank() != 4) {
    throw ShapeError("window_pool_first requires rank-4 input, got " +
                     shape_str(img.shape()));
  }
  const int b = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("window_pool_first: odd spatial extents " + std::to_string(h) +
                     "x" + std::to_string(w));
  }
  const int oh = h / 2, ow = w / 2;
  Tensor out = Tensor::zeros({b, c, oh, ow});
  const float* x = img.data().data();
  float* o = out.data().data();
  for (int bc = 0; bc < b * c; ++bc) {
    const float* plane = x + static_cast<int64_t>(bc) * h * w;
    float* oplane = o + static_cast<int64_t>(bc) * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xo = 0; xo < ow; ++xo)
        oplane[static_cast<int64_t>(y) * ow + xo] =
            plane[static_cast<int64_t>(2 * y) * w + 2 * xo];
  }
  if (grad_enabled() && img.requires_grad()) {
    auto xs = img.storage();
    detail::Storage* os = out.storage().get();
    auto node = std::make_shared<detail::Node>();
    node->inputs = {xs};
    node->backprop = [xs, os, b, c, h, w, oh, ow]() {
      for (int bc = 0; bc < b * c; ++bc) {
        float* gplane = xs->grad.data() + static_cast<int64_t>(bc) * h * w;
        const float* goplane = os->grad.data() + static_cast<int64_t>(bc) * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int xo = 0; xo < ow; ++xo)
            gplane[static_cast<int64_t>(2 * y) * w + 2 * xo] +=
                goplane[static_cast<int64_t>(y) * ow + xo];
      }
    };
    auto& s = *out.storage();
    s.requires_grad = true;
    s.grad.assign(s.data.size(), 0.0f);
    s.node = std::move(node);
  }
  return out;
}

namespace {
void check_pixel_range(const Tensor& pooled) {
  for (float v : pooled.data()) {
    if (v < -1e-6f || v > 1.0f + 1e-6f) {
      throw ValueError("quantum_encode: pixel " + std::to_string(v) +
                       " outside [0,1]");
    }
  }
}
}  // namespace

Tensor quantum_encode(const Tensor& pooled, double angle_scale) {
  check_pixel_range(pooled);
  Tensor out = Tensor::zeros(pooled.shape());
  const auto pv = pooled.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i)
    ov[i] = static_cast<float>(quantum_expectation(angle_scale * pv[i]));
  if (grad_enabled() && pooled.requires_grad()) {
    auto ps = pooled.storage();
    detail::Storage* os = out.storage().get();
    auto node = std::make_shared<detail::Node>();
    node->inputs = {ps};
    node->backprop = [ps, os, angle_scale]() {
      for (size_t i = 0; i < os->grad.size(); ++i) {
        const double theta = angle_scale * ps->data[i];
        ps->grad[i] += os->grad[i] *
                       static_cast<float>(angle_scale * quantum_encode_grad(theta));
      }
    };
    auto& s = *out.storage();
    s.requires_grad = true;
    s.grad.assign(s.data.size(), 0.0f);
    s.node = std::move(node);
  }
  return out;
}

Tensor quantum_encode_sampled(const Tensor& pooled, double angle_scale, int shots,
                              Rng& rng) {
  if (shots < 1) throw ValueError("quantum_encode_sampled: shots must be >= 1");
  check_pixel_range(pooled);
  Tensor out = Tensor::zeros(pooled.shape());
  const auto pv = pooled.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) {
    const double theta = angle_scale * pv[i];
    // (1 + cos(theta)) / 2 equals cos^2(theta/2) and is exact at theta in {0, pi},
    // so the deterministic endpoints sample to exactly +/-1.
    const double p_plus = (1.0 + std::cos(theta)) / 2.0;
    int64_t acc = 0;
    for (int s = 0; s < shots; ++s) acc += rng.uniform() < p_plus ? 1 : -1;
    ov[i] = static_cast<float>(static_cast<double>(acc) / shots);
  }
  return out;
}

}  // namespace qvae
