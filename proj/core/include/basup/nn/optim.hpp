#pragma once

#include <memory>
#include <string>
#include <vector>

#include "basup/nn/tensor.hpp"

namespace basup::nn {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step() = 0;
  virtual std::string name() const = 0;
  void zero_grad() { zero_grads(params_); }

 protected:
  explicit Optimizer(std::vector<Parameter<float>*> params) : params_(std::move(params)) {}
  std::vector<Parameter<float>*> params_;
};

struct AdamOptions {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Parameter<float>*> params, AdamOptions options);
  void step() override;
  std::string name() const override { return "adam"; }

 private:
  AdamOptions opt_;
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  long t_ = 0;
};

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

class MomentumSgd final : public Optimizer {
 public:
  MomentumSgd(std::vector<Parameter<float>*> params, SgdOptions options);
  void step() override;
  std::string name() const override { return "momentum_sgd"; }

 private:
  SgdOptions opt_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace basup::nn
