#include "kinemod/optim.hpp"

namespace kinemod {

void Sgd::step(std::vector<double>& params, const std::vector<double>& grad, std::vector<double>& velocity,
               double lr) const {
  if (velocity.size() != params.size()) velocity.assign(params.size(), 0.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    velocity[i] = momentum_ * velocity[i] + grad[i] + weight_decay_ * params[i];
    params[i] -= lr * velocity[i];
  }
}

void Sgd::step(EncoderParams& params, const EncoderParams& grad, double lr) {
  if (!initialized_) {
    velocity_ = params.zeros_like();
    initialized_ = true;
  }
  std::vector<std::vector<double>*> ps, vs;
  std::vector<const std::vector<double>*> gs;
  EncoderParams::visit(params, [&](const std::string&, std::vector<double>& v) { ps.push_back(&v); });
  EncoderParams::visit(grad, [&](const std::string&, const std::vector<double>& v) { gs.push_back(&v); });
  EncoderParams::visit(velocity_, [&](const std::string&, std::vector<double>& v) { vs.push_back(&v); });
  for (std::size_t i = 0; i < ps.size(); ++i) step(*ps[i], *gs[i], *vs[i], lr);
}

}  // namespace kinemod
