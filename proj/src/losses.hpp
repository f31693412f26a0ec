#ifndef CLUST3_LOSSES_HPP
#define CLUST3_LOSSES_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "autodiff.hpp"
#include "common.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace clust3 {

// Plain (non-autodiff) entropy statistics of a row-stochastic matrix.
struct ImStats {
  double h_cond = 0.0;  // H(Z|X)
  double h_marg = 0.0;  // H(Z)
  double im_loss = 0.0; // H(Z|X) - H(Z) = -I(X;Z)
};

template <class T>
ImStats im_stats(const Tensor<T>& z, double row_tol = 1e-4) {
  if (z.shape.size() != 2) throw DimensionError("im_stats: want 2-D matrix");
  const int n = z.shape[0], k = z.shape[1];
  std::vector<double> marg(static_cast<std::size_t>(k), 0.0);
  double h_cond = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < k; ++j) {
      const double v = static_cast<double>(z.at2(i, j));
      s += v;
      marg[static_cast<std::size_t>(j)] += v;
      h_cond -= v * std::log(std::max(v, 1e-12));
    }
    if (std::abs(s - 1.0) > row_tol) throw ContractError("im_stats: row does not sum to 1");
  }
  h_cond /= n;
  double h_marg = 0.0;
  for (int j = 0; j < k; ++j) {
    marg[static_cast<std::size_t>(j)] /= n;
    h_marg -= marg[static_cast<std::size_t>(j)] * std::log(std::max(marg[static_cast<std::size_t>(j)], 1e-12));
  }
  return {h_cond, h_marg, h_cond - h_marg};
}

// Per-forward loss decomposition.
template <class T>
struct LossReport {
  T ce = T(0);
  std::vector<std::pair<std::pair<int, int>, T>> im_terms;  // ((layer, head), L_IM)
  T im_sum = T(0);            // weighted sum entering the total
  T mean_h_cond = T(0);
  T mean_h_marg = T(0);
  Var<T> total;               // L_CE + sum_l lambda_l sum_c L_IM^{l,c}
};

// Combined loss: cross-entropy plus per-layer weighted sums of head IM losses.
template <class T>
LossReport<T> total_loss(Tape<T>& tape, const Var<T>& ce,
                         const std::vector<ProjectorOutput<T>>& projections,
                         const std::map<int, T>& layer_lambda = {}) {
  LossReport<T> rep;
  rep.ce = ce->value.data[0];
  Var<T> total = ce;
  double hc = 0.0, hm = 0.0;
  for (const auto& proj : projections) {
    ImParts<T> parts;
    Var<T> lim = im_loss(tape, proj.z, &parts);
    auto it = layer_lambda.find(proj.layer);
    const T lambda = it == layer_lambda.end() ? T(1) : it->second;
    rep.im_terms.push_back({{proj.layer, proj.head}, lim->value.data[0]});
    rep.im_sum += lambda * lim->value.data[0];
    hc += static_cast<double>(parts.h_cond);
    hm += static_cast<double>(parts.h_marg);
    total = add(tape, total, lambda == T(1) ? lim : scale(tape, lim, lambda));
  }
  if (!projections.empty()) {
    rep.mean_h_cond = static_cast<T>(hc / static_cast<double>(projections.size()));
    rep.mean_h_marg = static_cast<T>(hm / static_cast<double>(projections.size()));
  }
  rep.total = total;
  return rep;
}

struct Lemma1Bounds {
  double lower = 0.0;
  double upper = 0.0;
};

// max_c H(Z_c) - sum_c H(Z_c|X)  <=  I(X; Z_1..Z_C)  <=  sum_c I(X; Z_c)
template <class T>
Lemma1Bounds lemma1_bounds(const std::vector<Tensor<T>>& z_list) {
  if (z_list.empty()) throw ContractError("lemma1_bounds: need at least one assignment");
  const int n = z_list[0].shape[0];
  double max_marg = 0.0, sum_cond = 0.0, sum_mi = 0.0;
  for (const auto& z : z_list) {
    if (z.shape[0] != n) throw ContractError("lemma1_bounds: mismatched N across heads");
    const ImStats s = im_stats(z);
    max_marg = std::max(max_marg, s.h_marg);
    sum_cond += s.h_cond;
    sum_mi += s.h_marg - s.h_cond;
  }
  return {max_marg - sum_cond, sum_mi};
}

// Exact joint mutual information I(X; Z_1..Z_C) with X uniform over the N rows
// and the heads conditionally independent given X. Enumerates the full joint
// outcome space; test-only oracle.
template <class T>
double joint_mi_bruteforce(const std::vector<Tensor<T>>& z_list, std::int64_t max_outcomes = 1000000) {
  if (z_list.empty()) throw ContractError("joint_mi_bruteforce: need at least one assignment");
  const int n = z_list[0].shape[0];
  const int c_heads = static_cast<int>(z_list.size());
  std::int64_t outcomes = 1;
  for (const auto& z : z_list) {
    if (z.shape[0] != n) throw ContractError("joint_mi_bruteforce: mismatched N across heads");
    outcomes *= z.shape[1];
    if (outcomes > max_outcomes) throw ContractError("joint_mi_bruteforce: outcome space too large");
  }

  // H(Z_1..Z_C | X) = sum_c H(Z_c|X) by conditional independence.
  double h_cond_joint = 0.0;
  for (const auto& z : z_list) h_cond_joint += im_stats(z).h_cond;

  // Joint marginal over the product outcome space, mixed-radix enumeration.
  double h_joint = 0.0;
  std::vector<int> idx(static_cast<std::size_t>(c_heads), 0);
  for (std::int64_t o = 0; o < outcomes; ++o) {
    double p = 0.0;
    for (int i = 0; i < n; ++i) {
      double pi = 1.0;
      for (int c = 0; c < c_heads; ++c)
        pi *= static_cast<double>(z_list[static_cast<std::size_t>(c)].at2(i, idx[static_cast<std::size_t>(c)]));
      p += pi;
    }
    p /= n;
    h_joint -= p * std::log(std::max(p, 1e-300));
    for (int c = c_heads - 1; c >= 0; --c) {
      if (++idx[static_cast<std::size_t>(c)] < z_list[static_cast<std::size_t>(c)].shape[1]) break;
      idx[static_cast<std::size_t>(c)] = 0;
    }
  }
  return h_joint - h_cond_joint;
}

}  // namespace clust3

#endif
