#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <span>
#include <vector>

#include "synthrank/ranker.hpp"

namespace synthrank::testing {

/// InfoNCE loss evaluated from scratch through the public scoring path.
inline double direct_loss(const RankerParams& params, std::span<const FeatureVector> features) {
  std::vector<double> negs;
  for (std::size_t j = 1; j < features.size(); ++j) negs.push_back(score_features(params, features[j]));
  return infonce_loss(score_features(params, features[0]), negs);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central finite differences over every head weight, the bias, and every
/// coordinate of each embedding row the features touch.
inline GradCheck check_gradient(const RankerParams& params, std::span<const FeatureVector> features,
                                double step = 1e-5) {
  const auto analytic = infonce_grad(params, features).gradient;
  GradCheck out;
  auto record = [&](double a, double n) {
    const double err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
    out.max_rel_error = std::max(out.max_rel_error, err);
    ++out.coordinates;
  };
  auto numeric = [&](auto&& poke) {
    RankerParams plus = params, minus = params;
    poke(plus, step);
    poke(minus, -step);
    return (direct_loss(plus, features) - direct_loss(minus, features)) / (2 * step);
  };

  for (std::size_t i = 0; i < params.dim(); ++i) {
    record(analytic.head[i], numeric([&](RankerParams& p, double h) { p.head()[i] += h; }));
  }
  record(analytic.bias, numeric([&](RankerParams& p, double h) { p.bias() += h; }));

  std::set<std::uint64_t> slots;
  for (const auto& fv : features) {
    for (const auto& [slot, w] : fv.pooling_weights()) slots.insert(slot);
  }
  for (const auto slot : slots) {
    auto it = analytic.rows.find(slot);
    for (std::size_t i = 0; i < params.dim(); ++i) {
      const double a = it == analytic.rows.end() ? 0.0 : it->second[i];
      record(a, numeric([&](RankerParams& p, double h) { p.materialize(slot)[i] += h; }));
    }
  }
  return out;
}

}  // namespace synthrank::testing
