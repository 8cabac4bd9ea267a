#include "warmstart/adam.hpp"

#include <cmath>

namespace warmstart {

template <class T>
void Adam<T>::step(std::span<const ParamPtr<T>> params, double learning_rate) {
  for (const auto& p : params) {
    if (p->frozen) continue;
    if (p->grad.shape() != p->value.shape()) {
      throw Error(ErrorCode::dimension, "gradient of " + p->name + " has shape " + shape_string(p->grad.shape()));
    }
    if (!p->grad.all_finite()) throw Error(ErrorCode::divergence, "non-finite gradient in " + p->name);
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (const auto& p : params) {
    if (p->frozen) continue;
    auto [it, inserted] = moments_.try_emplace(p.get());
    Moments& mom = it->second;
    if (inserted) {
      mom.m = Tensor<T>(p->value.shape());
      mom.v = Tensor<T>(p->value.shape());
    }
    auto value = p->value.data();
    auto grad = p->grad.data();
    auto m = mom.m.data();
    auto v = mom.v.data();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double gi = grad[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = learning_rate * (mi / correction1) / (std::sqrt(vi / correction2) + config_.epsilon);
      value[i] = static_cast<T>(value[i] - update);
    }
  }
}

template <class T>
const Tensor<T>* Adam<T>::first_moment(const Parameter<T>& p) const {
  auto it = moments_.find(&p);
  return it == moments_.end() ? nullptr : &it->second.m;
}

template <class T>
const Tensor<T>* Adam<T>::second_moment(const Parameter<T>& p) const {
  auto it = moments_.find(&p);
  return it == moments_.end() ? nullptr : &it->second.v;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace warmstart
