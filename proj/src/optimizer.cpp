#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "synthrank/error.hpp"
#include "synthrank/ranker.hpp"

namespace synthrank {

void RankerGradient::add_scaled(const RankerGradient& other, double factor) {
  if (head.size() < other.head.size()) head.resize(other.head.size(), 0.0);
  for (std::size_t i = 0; i < other.head.size(); ++i) head[i] += factor * other.head[i];
  bias += factor * other.bias;
  for (const auto& [slot, g] : other.rows) {
    auto& dst = rows[slot];
    if (dst.size() < g.size()) dst.resize(g.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
  }
}

void RankerGradient::scale(double factor) {
  for (auto& h : head) h *= factor;
  bias *= factor;
  for (auto& [slot, g] : rows) {
    for (auto& v : g) v *= factor;
  }
}

void RankerGradient::clear() {
  std::fill(head.begin(), head.end(), 0.0);
  bias = 0.0;
  rows.clear();
}

LrSchedule::LrSchedule(double base_lr, std::size_t total_steps, double warmup_fraction)
    : base_lr_(base_lr), total_steps_(total_steps) {
  if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) {
    throw Error(ErrorCode::kInvalidArgument, "base learning rate must be finite and >= 0");
  }
  if (!(warmup_fraction > 0.0 && warmup_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "warmup fraction must be in (0, 1]");
  }
  warmup_steps_ = ceil_fraction(warmup_fraction, total_steps);
}

double LrSchedule::at(std::size_t step) const {
  if (step > total_steps_) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("schedule step {} outside [0, {}]", step, total_steps_));
  }
  if (step == total_steps_) return 0.0;
  if (step <= warmup_steps_) {
    return base_lr_ * static_cast<double>(step) / static_cast<double>(warmup_steps_);
  }
  return base_lr_ * static_cast<double>(total_steps_ - step) /
         static_cast<double>(total_steps_ - warmup_steps_);
}

double lr_at_step(const LrSchedule& schedule, std::size_t step) { return schedule.at(step); }

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void AdamW::step(RankerParams& params, const RankerGradient& grad, double lr_multiplier) {
  const std::size_t dim = params.dim();
  if (!grad.head.empty() && grad.head.size() != dim) {
    throw Error(ErrorCode::kInvalidArgument, "gradient head size does not match the model");
  }
  if (!all_finite(grad.head) || !std::isfinite(grad.bias)) {
    throw Error(ErrorCode::kNumeric, "non-finite gradient in parameter group 'head'");
  }
  for (const auto& [slot, g] : grad.rows) {
    if (g.size() != dim) {
      throw Error(ErrorCode::kInvalidArgument, "gradient row size does not match the model");
    }
    if (!all_finite(g)) {
      throw Error(ErrorCode::kNumeric, "non-finite gradient in parameter group 'embeddings'");
    }
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  const double head_lr = config_.head_lr * lr_multiplier;
  const double emb_lr = config_.embedding_lr * lr_multiplier;

  auto adam_delta = [&](double g, double& m, double& v, double lr) {
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    return lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
  };

  if (head_.m.empty()) {
    head_ = {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    bias_ = {{0.0}, {0.0}};
  }
  const double head_decay = 1.0 - head_lr * config_.weight_decay;
  auto head = params.head();
  for (std::size_t i = 0; i < dim; ++i) {
    const double g = grad.head.empty() ? 0.0 : grad.head[i];
    const double delta = adam_delta(g, head_.m[i], head_.v[i], head_lr);
    head[i] = head[i] * head_decay - delta;
  }
  {
    const double delta = adam_delta(grad.bias, bias_.m[0], bias_.v[0], head_lr);
    params.bias() = params.bias() * head_decay - delta;
  }

  for (const auto& [slot, g] : grad.rows) {
    auto [it, inserted] = rows_.try_emplace(slot);
    if (inserted) it->second = {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    params.materialize(slot);
  }
  // Decay everything (including rows that were never written), then apply
  // the Adam update to rows that carry moments.
  params.scale_embeddings(1.0 - emb_lr * config_.weight_decay);
  for (auto& [slot, moments] : rows_) {
    auto row = params.materialize(slot);
    auto git = grad.rows.find(slot);
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = git == grad.rows.end() ? 0.0 : git->second[i];
      row[i] -= adam_delta(g, moments.m[i], moments.v[i], emb_lr);
    }
  }
}

void AdamW::step(RankerParams& params, const RankerGradient& grad, const LrSchedule& schedule) {
  const double lr = schedule.at(std::min(steps_, schedule.total_steps()));
  const double multiplier = schedule.base_lr() > 0.0 ? lr / schedule.base_lr() : 0.0;
  step(params, grad, multiplier);
}

}  // namespace synthrank
