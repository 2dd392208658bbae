#include "langtyp/optim.hpp"

#include <cmath>

#include "langtyp/error.hpp"

namespace langtyp {

void Adam::step(ParameterSet& params) {
  if (!(config_.lr > 0.0)) throw ValidationError("adam: learning rate must be positive");
  auto all = params.all();
  for (const Parameter* p : all)
    for (double g : p->grad.values())
      if (!std::isfinite(g)) throw RuntimeFailure("adam: non-finite gradient in parameter " + p->name);

  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (Parameter* p : all) {
    auto [it, inserted] = state_.try_emplace(p->name);
    Moments& s = it->second;
    if (inserted) {
      s.m = Tensor(p->value.shape(), 0.0);
      s.v = Tensor(p->value.shape(), 0.0);
    }
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
      s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
      const double m_hat = s.m[i] / c1;
      const double v_hat = s.v[i] / c2;
      p->value[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace langtyp
