#include "trireid/adam.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace trireid {

Adam::Adam(ParamStore& ps, double beta1, double beta2, double eps,
           double weight_decay)
    : ps_(ps),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      weight_decay_(weight_decay) {
  for (const auto& [name, var] : ps.entries()) {
    m_.emplace_back(static_cast<size_t>(var->value.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(var->value.numel()), 0.0);
  }
}

void Adam::step(double lr, double clip_norm) {
  double sq = 0.0;
  for (const auto& [name, var] : ps_.entries()) {
    if (!var->has_grad()) continue;
    for (double g : var->grad.data) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));

  const auto& entries = ps_.entries();
  for (size_t p = 0; p < entries.size(); ++p) {
    Var var = entries[p].second;
    var->ensure_grad();
    auto& m = m_[p];
    auto& v = v_[p];
    for (size_t i = 0; i < m.size(); ++i) {
      const double g =
          var->grad.data[i] * scale + weight_decay_ * var->value.data[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      var->value.data[i] -=
          lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

void Adam::save(std::ostream& os) const {
  os.write(reinterpret_cast<const char*>(&t_), sizeof t_);
  for (size_t p = 0; p < m_.size(); ++p) {
    os.write(reinterpret_cast<const char*>(m_[p].data()),
             static_cast<std::streamsize>(m_[p].size() * sizeof(double)));
    os.write(reinterpret_cast<const char*>(v_[p].data()),
             static_cast<std::streamsize>(v_[p].size() * sizeof(double)));
  }
}

void Adam::load(std::istream& is) {
  is.read(reinterpret_cast<char*>(&t_), sizeof t_);
  for (size_t p = 0; p < m_.size(); ++p) {
    is.read(reinterpret_cast<char*>(m_[p].data()),
            static_cast<std::streamsize>(m_[p].size() * sizeof(double)));
    is.read(reinterpret_cast<char*>(v_[p].data()),
            static_cast<std::streamsize>(v_[p].size() * sizeof(double)));
  }
  if (!is) throw std::runtime_error("optimizer state truncated");
}

}  // namespace trireid
