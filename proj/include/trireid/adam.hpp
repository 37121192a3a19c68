#pragma once

#include <iosfwd>
#include <vector>

#include "trireid/nn.hpp"

namespace trireid {

/// Bias-corrected adaptive-moment optimizer with global-norm gradient
/// clipping and optional L2 penalty folded into the gradient.
class Adam {
 public:
  Adam(ParamStore& ps, double beta1, double beta2, double eps,
       double weight_decay);

  /// Consumes the gradients currently stored on the parameters.
  void step(double lr, double clip_norm);

  int64_t steps_taken() const { return t_; }

  /// Raw moment state, for checkpoints.
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  ParamStore& ps_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace trireid
