#include "qvae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

namespace qvae {

namespace detail {

void mm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<size_t>(i) * k;
    float* crow = c + static_cast<size_t>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const float av = arow[kk];
      const float* brow = b + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

namespace {
// Scratch transpose so every product runs through the cache-friendly mm_nn.
std::vector<float> transposed(const float* a, int rows, int cols) {
  std::vector<float> t(static_cast<size_t>(rows) * cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      t[static_cast<size_t>(j) * rows + i] = a[static_cast<size_t>(i) * cols + j];
  return t;
}
}  // namespace

void mm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  std::vector<float> bt = transposed(b, n, k);  // [n,k] -> [k,n]
  mm_nn(a, bt.data(), c, m, k, n);
}

void mm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  std::vector<float> at = transposed(a, k, m);  // [k,m] -> [m,k]
  mm_nn(at.data(), b, c, m, k, n);
}

}  // namespace detail

namespace {

using detail::Node;
using detail::Storage;

bool wants_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void attach_node(Tensor& out, std::vector<std::shared_ptr<Storage>> inputs,
                 std::function<void()> backprop) {
  auto& s = *out.storage();
  s.requires_grad = true;
  s.grad.assign(s.data.size(), 0.0f);
  auto node = std::make_shared<Node>();
  node->inputs = std::move(inputs);
  node->backprop = std::move(backprop);
  s.node = std::move(node);
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (wants_grad({&a, &b})) {
    auto as = a.storage(), bs = b.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as, bs}, [as, bs, os]() {
      const auto& g = os->grad;
      if (as->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i];
      if (bs->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bs->grad[i] += g[i];
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (wants_grad({&a, &b})) {
    auto as = a.storage(), bs = b.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as, bs}, [as, bs, os]() {
      const auto& g = os->grad;
      if (as->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i];
      if (bs->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bs->grad[i] -= g[i];
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data(), bv = b.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (wants_grad({&a, &b})) {
    auto as = a.storage(), bs = b.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as, bs}, [as, bs, os]() {
      const auto& g = os->grad;
      if (as->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) as->grad[i] += g[i] * bs->data[i];
      if (bs->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) bs->grad[i] += g[i] * as->data[i];
    });
  }
  return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0f); }

Tensor add_scalar(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i];
    });
  }
  return out;
}

Tensor mul_scalar(const Tensor& a, float c) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * c;
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os, c]() {
      for (size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i] * c;
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::exp(av[i]);
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i] * os->data[i];
    });
  }
  return out;
}

Tensor log(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::log(av[i]);
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i] / as->data[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0f ? av[i] : 0.0f;
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i)
        if (as->data[i] > 0.0f) as->grad[i] += os->grad[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) {
    // Evaluate the saturating branch to avoid exp overflow.
    const float x = av[i];
    if (x >= 0.0f) {
      const float e = std::exp(-x);
      ov[i] = 1.0f / (1.0f + e);
    } else {
      const float e = std::exp(x);
      ov[i] = e / (1.0f + e);
    }
  }
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i) {
        const float y = os->data[i];
        as->grad[i] += os->grad[i] * y * (1.0f - y);
      }
    });
  }
  return out;
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  Tensor out = Tensor::zeros(a.shape());
  const auto av = a.data();
  auto ov = out.data();
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(std::max(av[i], lo), hi);
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os, lo, hi]() {
      for (size_t i = 0; i < os->grad.size(); ++i) {
        const float x = as->data[i];
        if (x >= lo && x <= hi) as->grad[i] += os->grad[i];
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul requires rank-2 operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw ShapeError("matmul inner dimension mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  detail::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  if (wants_grad({&a, &b})) {
    auto as = a.storage(), bs = b.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as, bs}, [as, bs, os, m, k, n]() {
      const float* g = os->grad.data();
      if (as->requires_grad)  // dA = dC . B^T
        detail::mm_nt(g, bs->data.data(), as->grad.data(), m, n, k);
      if (bs->requires_grad)  // dB = A^T . dC
        detail::mm_tn(as->data.data(), g, bs->grad.data(), k, m, n);
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_row_bias: incompatible shapes " + shape_str(x.shape()) +
                     " vs " + shape_str(bias.shape()));
  }
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data(), bv = bias.data();
  auto ov = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      ov[static_cast<size_t>(i) * n + j] = xv[static_cast<size_t>(i) * n + j] + bv[j];
  if (wants_grad({&x, &bias})) {
    auto xs = x.storage(), bs = bias.storage();
    Storage* os = out.storage().get();
    attach_node(out, {xs, bs}, [xs, bs, os, m, n]() {
      const auto& g = os->grad;
      if (xs->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) xs->grad[i] += g[i];
      if (bs->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) bs->grad[j] += g[static_cast<size_t>(i) * n + j];
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 4 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw ShapeError("add_channel_bias: incompatible shapes " + shape_str(x.shape()) +
                     " vs " + shape_str(bias.shape()));
  }
  const int b = x.dim(0), c = x.dim(1);
  const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
  Tensor out = Tensor::zeros(x.shape());
  const auto xv = x.data(), bv = bias.data();
  auto ov = out.data();
  size_t idx = 0;
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int64_t i = 0; i < hw; ++i, ++idx) ov[idx] = xv[idx] + bv[ci];
  if (wants_grad({&x, &bias})) {
    auto xs = x.storage(), bs = bias.storage();
    Storage* os = out.storage().get();
    attach_node(out, {xs, bs}, [xs, bs, os, b, c, hw]() {
      const auto& g = os->grad;
      if (xs->requires_grad)
        for (size_t i = 0; i < g.size(); ++i) xs->grad[i] += g[i];
      if (bs->requires_grad) {
        size_t idx2 = 0;
        for (int bi = 0; bi < b; ++bi)
          for (int ci = 0; ci < c; ++ci)
            for (int64_t i = 0; i < hw; ++i, ++idx2) bs->grad[ci] += g[idx2];
      }
    });
  }
  return out;
}

namespace {

struct ConvGeom {
  int channels, height, width;  // image side of the lowering
  int k, stride, pad;
  int out_h, out_w;  // window-grid side
};

// Gather image patches into a [C*k*k, out_h*out_w] matrix.
void im2col(const float* img, const ConvGeom& g, float* cols) {
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        float* row = cols + ((static_cast<int64_t>(c) * g.k + ky) * g.k + kx) * ohw;
        for (int y = 0; y < g.out_h; ++y) {
          const int sy = y * g.stride + ky - g.pad;
          if (sy < 0 || sy >= g.height) {
            std::memset(row + static_cast<int64_t>(y) * g.out_w, 0,
                        sizeof(float) * g.out_w);
            continue;
          }
          const float* src = img + (static_cast<int64_t>(c) * g.height + sy) * g.width;
          float* dst = row + static_cast<int64_t>(y) * g.out_w;
          for (int x = 0; x < g.out_w; ++x) {
            const int sx = x * g.stride + kx - g.pad;
            dst[x] = (sx >= 0 && sx < g.width) ? src[sx] : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add the adjoint of im2col: cols [C*k*k, out_h*out_w] back onto the image.
void col2im_add(const float* cols, const ConvGeom& g, float* img) {
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const float* row = cols + ((static_cast<int64_t>(c) * g.k + ky) * g.k + kx) * ohw;
        for (int y = 0; y < g.out_h; ++y) {
          const int sy = y * g.stride + ky - g.pad;
          if (sy < 0 || sy >= g.height) continue;
          float* dst = img + (static_cast<int64_t>(c) * g.height + sy) * g.width;
          const float* src = row + static_cast<int64_t>(y) * g.out_w;
          for (int x = 0; x < g.out_w; ++x) {
            const int sx = x * g.stride + kx - g.pad;
            if (sx >= 0 && sx < g.width) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, int stride, int padding) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv2d requires rank-4 input and weight, got " +
                     shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) throw ValueError("conv2d: stride must be >=1, padding >=0");
  const int batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs weight " + shape_str(weight.shape()));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d kernel must be square, got " + shape_str(weight.shape()));
  if (k > h + 2 * padding || k > w + 2 * padding) {
    throw ValueError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(h + 2 * padding) + "x" + std::to_string(w + 2 * padding));
  }
  ConvGeom g{cin, h, w, k, stride, padding,
             (h + 2 * padding - k) / stride + 1, (w + 2 * padding - k) / stride + 1};
  const int ckk = cin * k * k;
  const int64_t ohw = static_cast<int64_t>(g.out_h) * g.out_w;

  Tensor out = Tensor::zeros({batch, cout, g.out_h, g.out_w});
  std::vector<float> cols(static_cast<size_t>(ckk) * ohw);
  const float* x = input.data().data();
  const float* wp = weight.data().data();
  float* o = out.data().data();
  const int64_t in_stride = static_cast<int64_t>(cin) * h * w;
  const int64_t out_stride = static_cast<int64_t>(cout) * ohw;
  for (int b = 0; b < batch; ++b) {
    im2col(x + b * in_stride, g, cols.data());
    detail::mm_nn(wp, cols.data(), o + b * out_stride, cout, ckk, static_cast<int>(ohw));
  }

  if (wants_grad({&input, &weight})) {
    auto xs = input.storage(), ws = weight.storage();
    Storage* os = out.storage().get();
    attach_node(out, {xs, ws},
                [xs, ws, os, g, batch, cout, ckk, ohw, in_stride, out_stride]() {
      std::vector<float> cols_scratch(static_cast<size_t>(ckk) * ohw);
      const float* gout = os->grad.data();
      if (ws->requires_grad) {  // dW = sum_b dOut_b . cols_b^T
        for (int b = 0; b < batch; ++b) {
          im2col(xs->data.data() + b * in_stride, g, cols_scratch.data());
          detail::mm_nt(gout + b * out_stride, cols_scratch.data(), ws->grad.data(),
                        cout, static_cast<int>(ohw), ckk);
        }
      }
      if (xs->requires_grad) {  // dX_b = col2im(W^T . dOut_b)
        for (int b = 0; b < batch; ++b) {
          std::fill(cols_scratch.begin(), cols_scratch.end(), 0.0f);
          detail::mm_tn(ws->data.data(), gout + b * out_stride, cols_scratch.data(),
                        ckk, cout, static_cast<int>(ohw));
          col2im_add(cols_scratch.data(), g, xs->grad.data() + b * in_stride);
        }
      }
    });
  }
  return out;
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, int stride,
                        int padding) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw ShapeError("conv_transpose2d requires rank-4 input and weight, got " +
                     shape_str(input.shape()) + " and " + shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0)
    throw ValueError("conv_transpose2d: stride must be >=1, padding >=0");
  const int batch = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin) {
    throw ShapeError("conv_transpose2d channel mismatch: input " + shape_str(input.shape()) +
                     " vs weight " + shape_str(weight.shape()));
  }
  if (weight.dim(3) != k)
    throw ShapeError("conv_transpose2d kernel must be square, got " + shape_str(weight.shape()));
  const int out_h = (h - 1) * stride - 2 * padding + k;
  const int out_w = (w - 1) * stride - 2 * padding + k;
  if (out_h <= 0 || out_w <= 0) {
    throw ValueError("conv_transpose2d: non-positive output extent " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));
  }
  // The lowering reuses conv geometry with roles swapped: the convT *output*
  // is the padded image and the convT *input* sits on the window grid.
  ConvGeom g{cout, out_h, out_w, k, stride, padding, h, w};
  const int okk = cout * k * k;
  const int64_t ihw = static_cast<int64_t>(h) * w;
  const int64_t in_stride = static_cast<int64_t>(cin) * ihw;
  const int64_t out_stride = static_cast<int64_t>(cout) * out_h * out_w;

  Tensor out = Tensor::zeros({batch, cout, out_h, out_w});
  std::vector<float> cols(static_cast<size_t>(okk) * ihw);
  const float* x = input.data().data();
  const float* wp = weight.data().data();
  float* o = out.data().data();
  for (int b = 0; b < batch; ++b) {
    std::fill(cols.begin(), cols.end(), 0.0f);
    // cols = W^T(okk x cin) . X_b(cin x h*w)
    detail::mm_tn(wp, x + b * in_stride, cols.data(), okk, cin, static_cast<int>(ihw));
    col2im_add(cols.data(), g, o + b * out_stride);
  }

  if (wants_grad({&input, &weight})) {
    auto xs = input.storage(), ws = weight.storage();
    Storage* os = out.storage().get();
    attach_node(out, {xs, ws},
                [xs, ws, os, g, batch, cin, okk, ihw, in_stride, out_stride]() {
      std::vector<float> cols_scratch(static_cast<size_t>(okk) * ihw);
      const float* gout = os->grad.data();
      for (int b = 0; b < batch; ++b) {
        im2col(gout + b * out_stride, g, cols_scratch.data());
        if (xs->requires_grad)  // dX_b = W(cin x okk) . im2col(dY_b)
          detail::mm_nn(ws->data.data(), cols_scratch.data(),
                        xs->grad.data() + b * in_stride, cin, okk, static_cast<int>(ihw));
        if (ws->requires_grad)  // dW = sum_b X_b . im2col(dY_b)^T
          detail::mm_nt(xs->data.data() + b * in_stride, cols_scratch.data(),
                        ws->grad.data(), cin, static_cast<int>(ihw), okk);
      }
    });
  }
  return out;
}

Tensor maxpool2d(const Tensor& input, int k, int s) {
  if (input.rank() != 4) {
    throw ShapeError("maxpool2d requires rank-4 input, got " + shape_str(input.shape()));
  }
  if (k < 1 || s != k) throw ValueError("maxpool2d supports stride == window only");
  const int batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % k != 0 || w % k != 0) {
    throw ShapeError("maxpool2d: extents " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(k));
  }
  const int oh = h / k, ow = w / k;
  Tensor out = Tensor::zeros({batch, c, oh, ow});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.data().size());
  const float* x = input.data().data();
  float* o = out.data().data();
  int64_t oi = 0;
  for (int b = 0; b < batch; ++b) {
    for (int ci = 0; ci < c; ++ci) {
      const float* plane = x + (static_cast<int64_t>(b) * c + ci) * h * w;
      const int64_t plane_off = (static_cast<int64_t>(b) * c + ci) * h * w;
      for (int y = 0; y < oh; ++y) {
        for (int xo = 0; xo < ow; ++xo, ++oi) {
          float best = plane[static_cast<int64_t>(y) * k * w + xo * k];
          int64_t best_idx = static_cast<int64_t>(y) * k * w + xo * k;
          for (int dy = 0; dy < k; ++dy) {
            for (int dx = 0; dx < k; ++dx) {
              const int64_t idx = (static_cast<int64_t>(y) * k + dy) * w + xo * k + dx;
              if (plane[idx] > best) {  // ties keep the first index
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          o[oi] = best;
          (*argmax)[oi] = plane_off + best_idx;
        }
      }
    }
  }
  if (wants_grad({&input})) {
    auto xs = input.storage();
    Storage* os = out.storage().get();
    attach_node(out, {xs}, [xs, os, argmax]() {
      for (size_t i = 0; i < os->grad.size(); ++i)
        xs->grad[(*argmax)[i]] += os->grad[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor out = Tensor::from_vector(std::move(shape),
                                   std::vector<float>(a.data().begin(), a.data().end()));
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      for (size_t i = 0; i < os->grad.size(); ++i) as->grad[i] += os->grad[i];
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os]() {
      const float g = os->grad[0];
      for (size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.size());
  double acc = 0.0;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc / n));
  if (wants_grad({&a})) {
    auto as = a.storage();
    Storage* os = out.storage().get();
    attach_node(out, {as}, [as, os, n]() {
      const float g = static_cast<float>(os->grad[0] / n);
      for (size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += g;
    });
  }
  return out;
}

Tensor bce_sum(const Tensor& prediction, const Tensor& target) {
  check_same_shape(prediction, target, "bce_sum");
  const auto pv = prediction.data(), tv = target.data();
  double acc = 0.0;
  for (size_t i = 0; i < pv.size(); ++i) {
    const double p = std::min(std::max(static_cast<double>(pv[i]),
                                       static_cast<double>(kProbEps)),
                              1.0 - static_cast<double>(kProbEps));
    const double t = tv[i];
    acc -= t * std::log(p) + (1.0 - t) * std::log1p(-p);
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (wants_grad({&prediction})) {
    auto ps = prediction.storage(), ts = target.storage();
    Storage* os = out.storage().get();
    attach_node(out, {ps, ts}, [ps, ts, os]() {
      if (!ps->requires_grad) return;
      const float g = os->grad[0];
      for (size_t i = 0; i < ps->data.size(); ++i) {
        const float raw = ps->data[i];
        if (raw < kProbEps || raw > 1.0f - kProbEps) continue;  // flat clamp region
        const double p = raw;
        const double t = ts->data[i];
        ps->grad[i] += static_cast<float>(g * (p - t) / (p * (1.0 - p)));
      }
    });
  }
  return out;
}

Tensor softmax_cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw ShapeError("softmax_cross_entropy_mean requires [B,C] logits, got " +
                     shape_str(logits.shape()));
  }
  const int b = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw ShapeError("softmax_cross_entropy_mean: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(b));
  }
  for (int l : labels)
    if (l < 0 || l >= c) throw ValueError("label out of range: " + std::to_string(l));
  const auto lv = logits.data();
  double acc = 0.0;
  for (int i = 0; i < b; ++i) {
    const float* row = lv.data() + static_cast<size_t>(i) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - m);
    acc += m + std::log(z) - row[labels[i]];
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / b));
  if (wants_grad({&logits})) {
    auto ls = logits.storage();
    Storage* os = out.storage().get();
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    attach_node(out, {ls}, [ls, os, labels_copy, b, c]() {
      const float g = os->grad[0];
      for (int i = 0; i < b; ++i) {
        const float* row = ls->data.data() + static_cast<size_t>(i) * c;
        double m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, static_cast<double>(row[j]));
        double z = 0.0;
        for (int j = 0; j < c; ++j) z += std::exp(row[j] - m);
        float* grow = ls->grad.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double soft = std::exp(row[j] - m) / z;
          const double onehot = (j == (*labels_copy)[i]) ? 1.0 : 0.0;
          grow[j] += static_cast<float>(g * (soft - onehot) / b);
        }
      }
    });
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw ShapeError("argmax_rows requires [B,C], got " + shape_str(logits.shape()));
  }
  const int b = logits.dim(0), c = logits.dim(1);
  const auto lv = logits.data();
  std::vector<int> out(static_cast<size_t>(b));
  for (int i = 0; i < b; ++i) {
    const float* row = lv.data() + static_cast<size_t>(i) * c;
    int best = 0;
    for (int j = 1; j < c; ++j)
      if (row[j] > row[best]) best = j;
    out[i] = best;
  }
  return out;
}

}  // namespace qvae
