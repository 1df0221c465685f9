#include "basup/nn/optim.hpp"

#include <cmath>

namespace basup::nn {

Adam::Adam(std::vector<Parameter<float>*> params, AdamOptions options)
    : Optimizer(std::move(params)), opt_(options) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const auto b1 = static_cast<float>(opt_.beta1);
  const auto b2 = static_cast<float>(opt_.beta2);
  const auto step_size = static_cast<float>(opt_.lr / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(opt_.eps);
  const auto wd = static_cast<float>(opt_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.storage();
    const auto& grad = params_[k]->grad.storage();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = grad[i] + wd * value[i];
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
    }
  }
}

MomentumSgd::MomentumSgd(std::vector<Parameter<float>*> params, SgdOptions options)
    : Optimizer(std::move(params)), opt_(options) {
  for (auto* p : params_) velocity_.emplace_back(p->value.size(), 0.0f);
}

void MomentumSgd::step() {
  const auto lr = static_cast<float>(opt_.lr);
  const auto mu = static_cast<float>(opt_.momentum);
  const auto wd = static_cast<float>(opt_.weight_decay);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& value = params_[k]->value.storage();
    const auto& grad = params_[k]->grad.storage();
    auto& vel = velocity_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      vel[i] = mu * vel[i] + grad[i] + wd * value[i];
      value[i] -= lr * vel[i];
    }
  }
}

}  // namespace basup::nn
