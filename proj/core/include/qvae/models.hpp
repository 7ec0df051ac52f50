#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qvae/rng.hpp"
#include "qvae/tensor.hpp"

namespace qvae {

enum class Variant { kC, kCdp, kQ };

Variant variant_from_string(const std::string& s);  // "c" | "cdp" | "q"
std::string to_string(Variant v);

struct NamedParam {
  std::string name;
  Tensor tensor;
};

// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I). Differentiable in mu, logvar.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, Rng& rng);

struct ElboTerms {
  Tensor reconstruction;  // BCE summed over batch and pixels
  Tensor kl;              // -1/2 sum(1 + logvar - mu^2 - exp(logvar))
  Tensor total;
};

ElboTerms elbo_loss(const Tensor& x, const Tensor& xhat, const Tensor& mu,
                    const Tensor& logvar);

struct ParamCount {
  int64_t encoder = 0, decoder = 0, total = 0;
};

// One VAE bundle. The decoder is structurally identical across variants; the
// variant picks the encoder front-end (none | pool | pool + quantum readout).
class VaeModel {
 public:
  VaeModel(Variant variant, double angle_scale, uint64_t seed);

  Variant variant() const { return variant_; }
  double angle_scale() const { return angle_scale_; }

  // x: [B,1,32,32] in [0,1] -> (mu [B,16], logvar [B,16] clamped to [-10,10]).
  std::pair<Tensor, Tensor> encode(const Tensor& x) const;

  // z: [B,16] -> [B,1,32,32], every pixel strictly inside (0,1).
  Tensor decode(const Tensor& z) const;

  struct Forward {
    Tensor mu, logvar, z, xhat;
  };
  Forward forward(const Tensor& x, Rng& rng) const;

  std::vector<Tensor> parameters() const;
  const std::vector<NamedParam>& named_parameters() const { return named_; }
  ParamCount param_count() const;

  static constexpr int kLatentDim = 16;

 private:
  struct Dense {
    Tensor w, b;  // w is [in, out]
  };

  Tensor encoder_hidden(const Tensor& x) const;

  Variant variant_;
  double angle_scale_;
  std::optional<Dense> enc_pre_;  // 1024 -> 256, C variant only
  Dense enc_hidden_;              // 256 -> 128
  Dense enc_mu_, enc_logvar_;     // 128 -> 16
  Dense dec_fc_;                  // 16 -> 1024
  Tensor dec_w1_, dec_b1_;        // conv_transpose 64 -> 32
  Tensor dec_w2_, dec_b2_;        // conv_transpose 32 -> 16
  Tensor dec_w3_, dec_b3_;        // conv_transpose 16 -> 1
  std::vector<NamedParam> named_;
};

}  // namespace qvae
