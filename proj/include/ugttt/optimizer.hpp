#pragma once

// AdamW with decoupled weight decay over one adapter's tensors.

#include "ugttt/policy.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ugttt {

struct AdamWSettings {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  /// Added to sqrt(v_hat). Zero keeps the update invariant to gradient
  /// scale; coordinates with v_hat == 0 then receive no moment update.
  double eps = 0.0;
  double weight_decay = 0.01;
};

struct OptimizerState {
  AdapterTensors m;
  AdapterTensors v;
  std::size_t step = 0;

  static OptimizerState zeros(const PolicyArchitecture& arch) {
    return {AdapterTensors::zeros(arch), AdapterTensors::zeros(arch), 0};
  }
};

namespace detail {

inline void adamw_matrix(Matrix& p, const Matrix& g, Matrix& m, Matrix& v, const AdamWSettings& s, double bc1,
                         double bc2) {
  if (p.rows() != g.rows() || p.cols() != g.cols() || m.rows() != p.rows() || m.cols() != p.cols())
    throw std::invalid_argument("adamw_step: shape mismatch");
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    double& pi = p.data()[i];
    const double gi = g.data()[i];
    double& mi = m.data()[i];
    double& vi = v.data()[i];
    pi *= 1.0 - s.lr * s.weight_decay;
    mi = s.beta1 * mi + (1.0 - s.beta1) * gi;
    vi = s.beta2 * vi + (1.0 - s.beta2) * gi * gi;
    const double m_hat = mi / bc1;
    const double denom = std::sqrt(vi / bc2) + s.eps;
    if (denom > 0.0) pi -= s.lr * m_hat / denom;
  }
}

}  // namespace detail

/// One AdamW step in place. Throws on a non-finite gradient, naming the step.
inline void adamw_step(AdapterTensors& params, const AdapterTensors& grads, OptimizerState& state,
                       const AdamWSettings& s) {
  if (params.a.size() != grads.a.size() || params.b.size() != grads.b.size() || state.m.a.size() != params.a.size())
    throw std::invalid_argument("adamw_step: layer count mismatch");
  if (!grads.all_finite())
    throw std::runtime_error("adamw_step: non-finite gradient at optimizer step " + std::to_string(state.step + 1));
  if (s.lr < 0.0 || s.weight_decay < 0.0 || s.eps < 0.0) throw std::invalid_argument("adamw_step: negative setting");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(s.beta1, t);
  const double bc2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t l = 0; l < params.a.size(); ++l) {
    detail::adamw_matrix(params.a[l], grads.a[l], state.m.a[l], state.v.a[l], s, bc1, bc2);
    detail::adamw_matrix(params.b[l], grads.b[l], state.m.b[l], state.v.b[l], s, bc1, bc2);
  }
}

}  // namespace ugttt
