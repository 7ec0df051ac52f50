#pragma once

#include <cstdint>
#include <vector>

#include "qvae/tensor.hpp"

namespace qvae {

// Adam with bias correction. Moment state is kept and updated in double so a
// reloaded optimizer replays bit-identically on the same gradient sequence.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, float lr, float beta1 = 0.9f,
                float beta2 = 0.999f, float eps = 1e-8f);

  // Applies one update from the gradients currently stored on the parameters.
  // A zero learning rate must leave every parameter untouched.
  void step();
  void zero_grad();

  float lr() const { return lr_; }
  void set_lr(float lr) { lr_ = lr; }
  int64_t step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  float lr_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace qvae
