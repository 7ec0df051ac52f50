#include "qvae/models.hpp"

#include <cmath>

#include "qvae/error.hpp"
#include "qvae/filters.hpp"
#include "qvae/ops.hpp"

namespace qvae {

Variant variant_from_string(const std::string& s) {
  if (s == "c") return Variant::kC;
  if (s == "cdp") return Variant::kCdp;
  if (s == "q") return Variant::kQ;
  throw ValueError("variant must be c|cdp|q, got '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kC: return "c";
    case Variant::kCdp: return "cdp";
    case Variant::kQ: return "q";
  }
  throw ValueError("bad variant tag");
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng) {
  if (mu.shape() != logvar.shape()) {
    throw ShapeError("reparameterize: mu " + shape_str(mu.shape()) + " vs logvar " +
                     shape_str(logvar.shape()));
  }
  Tensor eps = Tensor::zeros(mu.shape());
  for (float& v : eps.data()) v = static_cast<float>(rng.normal());
  return mu + exp(mul_scalar(logvar, 0.5f)) * eps;
}

ElboTerms elbo_loss(const Tensor& x, const Tensor& xhat, const Tensor& mu,
                    const Tensor& logvar) {
  ElboTerms out;
  out.reconstruction = bce_sum(xhat, x);
  Tensor inner = add_scalar(sub(sub(logvar, mul(mu, mu)), exp(logvar)), 1.0f);
  out.kl = mul_scalar(sum(inner), -0.5f);
  out.total = out.reconstruction + out.kl;
  return out;
}

namespace {

Tensor init_weight(Shape shape, int fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double bound = std::sqrt(1.0 / fan_in);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Tensor init_bias(int n) { return Tensor::zeros({n}, true); }

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_row_bias(matmul(x, w), b);
}

}  // namespace

VaeModel::VaeModel(Variant variant, double angle_scale, uint64_t seed)
    : variant_(variant), angle_scale_(angle_scale) {
  if (angle_scale <= 0.0) throw ValueError("angle scale must be positive");
  Rng rng = Rng(seed).derive("init");
  if (variant_ == Variant::kC) {
    enc_pre_ = Dense{init_weight({1024, 256}, 1024, rng), init_bias(256)};
  }
  enc_hidden_ = Dense{init_weight({256, 128}, 256, rng), init_bias(128)};
  enc_mu_ = Dense{init_weight({128, kLatentDim}, 128, rng), init_bias(kLatentDim)};
  enc_logvar_ = Dense{init_weight({128, kLatentDim}, 128, rng), init_bias(kLatentDim)};
  dec_fc_ = Dense{init_weight({kLatentDim, 1024}, kLatentDim, rng), init_bias(1024)};
  dec_w1_ = init_weight({64, 32, 4, 4}, 64 * 16, rng);
  dec_b1_ = init_bias(32);
  dec_w2_ = init_weight({32, 16, 4, 4}, 32 * 16, rng);
  dec_b2_ = init_bias(16);
  dec_w3_ = init_weight({16, 1, 4, 4}, 16 * 16, rng);
  dec_b3_ = init_bias(1);

  if (enc_pre_) {
    named_.push_back({"enc.pre.weight", enc_pre_->w});
    named_.push_back({"enc.pre.bias", enc_pre_->b});
  }
  named_.push_back({"enc.hidden.weight", enc_hidden_.w});
  named_.push_back({"enc.hidden.bias", enc_hidden_.b});
  named_.push_back({"enc.mu.weight", enc_mu_.w});
  named_.push_back({"enc.mu.bias", enc_mu_.b});
  named_.push_back({"enc.logvar.weight", enc_logvar_.w});
  named_.push_back({"enc.logvar.bias", enc_logvar_.b});
  named_.push_back({"dec.fc.weight", dec_fc_.w});
  named_.push_back({"dec.fc.bias", dec_fc_.b});
  named_.push_back({"dec.deconv1.weight", dec_w1_});
  named_.push_back({"dec.deconv1.bias", dec_b1_});
  named_.push_back({"dec.deconv2.weight", dec_w2_});
  named_.push_back({"dec.deconv2.bias", dec_b2_});
  named_.push_back({"dec.deconv3.weight", dec_w3_});
  named_.push_back({"dec.deconv3.bias", dec_b3_});
}

Tensor VaeModel::encoder_hidden(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != 32 || x.dim(3) != 32) {
    throw ShapeError("encoder expects [B,1,32,32], got " + shape_str(x.shape()));
  }
  const int b = x.dim(0);
  Tensor h;
  switch (variant_) {
    case Variant::kC: {
      Tensor flat = reshape(x, {b, 1024});
      Tensor h1 = relu(dense_forward(flat, enc_pre_->w, enc_pre_->b));
      h = relu(dense_forward(h1, enc_hidden_.w, enc_hidden_.b));
      break;
    }
    case Variant::kCdp: {
      Tensor flat = reshape(window_pool_first(x), {b, 256});
      h = relu(dense_forward(flat, enc_hidden_.w, enc_hidden_.b));
      break;
    }
    case Variant::kQ: {
      Tensor q = quantum_encode(window_pool_first(x), angle_scale_);
      Tensor flat = reshape(q, {b, 256});
      h = relu(dense_forward(flat, enc_hidden_.w, enc_hidden_.b));
      break;
    }
  }
  return h;
}

std::pair<Tensor, Tensor> VaeModel::encode(const Tensor& x) const {
  Tensor h = encoder_hidden(x);
  Tensor mu = dense_forward(h, enc_mu_.w, enc_mu_.b);
  Tensor logvar = clamp(dense_forward(h, enc_logvar_.w, enc_logvar_.b), -10.0f, 10.0f);
  return {mu, logvar};
}

Tensor VaeModel::decode(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != kLatentDim) {
    throw ShapeError("decoder expects [B,16] latents, got " + shape_str(z.shape()));
  }
  const int b = z.dim(0);
  Tensor h = relu(reshape(dense_forward(z, dec_fc_.w, dec_fc_.b), {b, 64, 4, 4}));
  Tensor d1 = relu(add_channel_bias(conv_transpose2d(h, dec_w1_, 2, 1), dec_b1_));
  Tensor d2 = relu(add_channel_bias(conv_transpose2d(d1, dec_w2_, 2, 1), dec_b2_));
  Tensor d3 = add_channel_bias(conv_transpose2d(d2, dec_w3_, 2, 1), dec_b3_);
  // Keep the output strictly inside (0,1); float sigmoid saturates to 0 and 1.
  return clamp(sigmoid(d3), kProbEps, 1.0f - kProbEps);
}

VaeModel::Forward VaeModel::forward(const Tensor& x, Rng& rng) const {
  Forward f;
  std::tie(f.mu, f.logvar) = encode(x);
  f.z = reparameterize(f.mu, f.logvar, rng);
  f.xhat = decode(f.z);
  return f;
}

std::vector<Tensor> VaeModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(named_.size());
  for (const NamedParam& p : named_) out.push_back(p.tensor);
  return out;
}

ParamCount VaeModel::param_count() const {
  ParamCount c;
  for (const NamedParam& p : named_) {
    if (p.name.rfind("enc.", 0) == 0) {
      c.encoder += p.tensor.size();
    } else {
      c.decoder += p.tensor.size();
    }
  }
  c.total = c.encoder + c.decoder;
  return c;
}

}  // namespace qvae
