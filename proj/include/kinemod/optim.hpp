#pragma once

#include <cstddef>

#include "kinemod/encoder.hpp"

namespace kinemod {

// Momentum SGD with L2 weight decay folded into the gradient:
//   v <- mu * v + (g + wd * p);  p <- p - lr * v
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(EncoderParams& params, const EncoderParams& grad, double lr);
  void step(std::vector<double>& params, const std::vector<double>& grad, std::vector<double>& velocity,
            double lr) const;

 private:
  double momentum_;
  double weight_decay_;
  EncoderParams velocity_;
  bool initialized_ = false;
};

// Step schedule: base * decay once epoch >= step_epoch (step_epoch 0 disables the drop).
struct LrSchedule {
  double base = 0.1;
  double decay = 0.1;
  std::size_t step_epoch = 0;

  double at(std::size_t epoch) const { return step_epoch > 0 && epoch >= step_epoch ? base * decay : base; }
};

}  // namespace kinemod
