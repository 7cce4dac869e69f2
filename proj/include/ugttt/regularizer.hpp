#pragma once

// Nuclear-norm maximization over the per-layer stack of adapter
// down-projections W_l = [A_l^(1); ...; A_l^(K)]. Applied to A only.

#include "ugttt/linalg.hpp"
#include "ugttt/policy.hpp"

#include <cstddef>
#include <vector>

namespace ugttt {

inline Matrix stack_blocks(const AdapterEnsemble& ens, std::size_t layer) {
  if (layer >= ens.layers()) throw std::out_of_range("stack_blocks: layer index");
  const auto r = static_cast<Eigen::Index>(ens.arch().adapter_rank);
  Matrix w(r * static_cast<Eigen::Index>(ens.size()), static_cast<Eigen::Index>(ens.arch().layer_width()));
  for (std::size_t k = 0; k < ens.size(); ++k) w.middleRows(static_cast<Eigen::Index>(k) * r, r) = ens.adapter(k).a[layer];
  return w;
}

/// Row block k of a stacked projection.
inline Matrix unstack_block(const Matrix& stacked, std::size_t k, std::size_t rank) {
  const auto r = static_cast<Eigen::Index>(rank);
  return stacked.middleRows(static_cast<Eigen::Index>(k) * r, r);
}

/// -(1/L) sum_l ||W_l||_*. Never positive.
inline double nnm_loss(const AdapterEnsemble& ens) {
  double total = 0.0;
  for (std::size_t l = 0; l < ens.layers(); ++l) total += nuclear_norm(stack_blocks(ens, l));
  return -total / static_cast<double>(ens.layers());
}

struct NnmGradients {
  std::vector<AdapterTensors> per_adapter;  // B entries are always zero
  bool nonunique = false;
};

/// Gradient of nnm_coef * nnm_loss with respect to every A_l^(k), from the
/// U·Vᵀ subgradient of each stacked W_l.
inline NnmGradients nnm_gradients(const AdapterEnsemble& ens, double nnm_coef) {
  if (nnm_coef < 0.0) throw std::invalid_argument("nnm_gradients: coefficient must be >= 0");
  NnmGradients out;
  out.per_adapter.assign(ens.size(), AdapterTensors::zeros(ens.arch()));
  if (nnm_coef == 0.0) return out;
  const double scale = -nnm_coef / static_cast<double>(ens.layers());
  for (std::size_t l = 0; l < ens.layers(); ++l) {
    const NuclearSubgradient sg = nuclear_norm_subgradient(stack_blocks(ens, l));
    out.nonunique = out.nonunique || sg.nonunique;
    for (std::size_t k = 0; k < ens.size(); ++k)
      out.per_adapter[k].a[l] = scale * unstack_block(sg.gradient, k, ens.arch().adapter_rank);
  }
  return out;
}

/// Mean over layers and adapter pairs of the cosine between flattened A
/// blocks. 1 means tied down-projections.
inline double mean_pairwise_block_cosine(const AdapterEnsemble& ens) {
  if (ens.size() < 2) return 1.0;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t l = 0; l < ens.layers(); ++l)
    for (std::size_t i = 0; i < ens.size(); ++i)
      for (std::size_t j = i + 1; j < ens.size(); ++j) {
        const Matrix& a = ens.adapter(i).a[l];
        const Matrix& b = ens.adapter(j).a[l];
        const double denom = a.norm() * b.norm();
        total += denom > 0.0 ? a.cwiseProduct(b).sum() / denom : 0.0;
        ++count;
      }
  return total / static_cast<double>(count);
}

}  // namespace ugttt
