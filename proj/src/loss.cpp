#include "adaptok/loss.hpp"

#include <algorithm>
#include <cmath>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

double xlogx(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

double floored_log(double p, LossDiagnostics* diagnostics) {
  if (p < kProbabilityFloor) {
    if (diagnostics)
      ++diagnostics->clamped;
    return std::log(kProbabilityFloor);
  }
  return std::log(p);
}

void check_target(const StepDistribution& step) {
  if (step.target < 0 || static_cast<std::size_t>(step.target) >= step.probabilities.size())
    throw Error("target id " + std::to_string(step.target) + " outside the distribution");
}

double static_weight(const LossConfig& config, TokenId target) {
  const auto& w = *config.static_weights;
  if (target < 0 || static_cast<std::size_t>(target) >= w.size())
    throw Error("no static weight for target id " + std::to_string(target));
  return w[static_cast<std::size_t>(target)];
}

}  // namespace

void softmax(std::span<const double> logits, std::span<double> out) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    out[j] = std::exp(logits[j] - m);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < logits.size(); ++j)
    out[j] *= inv;
}

StepDistribution StepDistribution::from_logits(std::vector<double> logits, TokenId target) {
  if (logits.empty())
    throw Error("empty logit vector");
  StepDistribution step;
  step.probabilities.resize(logits.size());
  softmax(logits, step.probabilities);
  step.logits = std::move(logits);
  step.target = target;
  return step;
}

void LossConfig::validate() const {
  if (mode == WeightingMode::static_table && !static_weights)
    throw Error("static weighting without a weight table");
  if (mode == WeightingMode::focal && !(focal_gamma > 0.0))
    throw Error("focal gamma must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw Error("label smoothing must lie in [0, 1)");
  if (!(entropy_penalty >= 0.0))
    throw Error("entropy penalty must be non-negative");
}

LossConfig LossConfig::uniform(double label_smoothing) {
  LossConfig c;
  c.label_smoothing = label_smoothing;
  return c;
}

LossConfig LossConfig::with_weights(std::shared_ptr<const std::vector<double>> weights, double label_smoothing) {
  LossConfig c;
  c.mode = WeightingMode::static_table;
  c.static_weights = std::move(weights);
  c.label_smoothing = label_smoothing;
  return c;
}

LossConfig LossConfig::focal(double gamma, bool plus_one, double label_smoothing) {
  LossConfig c;
  c.mode = WeightingMode::focal;
  c.focal_gamma = gamma;
  c.focal_plus_one = plus_one;
  c.label_smoothing = label_smoothing;
  return c;
}

double focal_weight(double p, double gamma, bool plus_one) {
  if (!(gamma > 0.0))
    throw Error("focal gamma must be positive");
  if (!(p >= 0.0 && p <= 1.0))
    throw Error("probability outside [0, 1]");
  const double w = std::pow(1.0 - p, gamma);
  return plus_one ? w + 1.0 : w;
}

double cross_entropy(std::span<const StepDistribution> steps, LossDiagnostics* diagnostics) {
  if (steps.empty())
    throw Error("cross entropy over zero steps");
  double sum = 0.0;
  for (const auto& step : steps) {
    check_target(step);
    sum += floored_log(step.probabilities[static_cast<std::size_t>(step.target)], diagnostics);
  }
  return -sum / static_cast<double>(steps.size());
}

double position_objective(std::span<const double> probabilities, TokenId target, const LossConfig& config,
                          double scale, std::span<double> grad, LossDiagnostics* diagnostics) {
  const std::size_t v = probabilities.size();
  const auto t = static_cast<std::size_t>(target);
  const double p_t = probabilities[t];
  const double eps = config.effective_label_smoothing();

  // Smoothed log-loss S = -sum_v q_v log p_v.
  double s = 0.0;
  if (eps > 0.0) {
    const double off = eps / static_cast<double>(v);
    for (std::size_t j = 0; j < v; ++j) {
      const double q = (j == t ? 1.0 - eps : 0.0) + off;
      s -= q * floored_log(probabilities[j], j == t ? diagnostics : nullptr);
    }
  } else {
    s = -floored_log(p_t, diagnostics);
  }

  double w = 1.0;
  double dw_dpt = 0.0;
  switch (config.mode) {
    case WeightingMode::uniform:
      break;
    case WeightingMode::static_table:
      w = static_weight(config, target);
      break;
    case WeightingMode::focal:
      w = focal_weight(p_t, config.focal_gamma, config.focal_plus_one);
      dw_dpt = -config.focal_gamma * std::pow(1.0 - p_t, config.focal_gamma - 1.0);
      break;
  }

  const double alpha = config.entropy_penalty;
  double n = 0.0;
  if (alpha > 0.0) {
    if (config.entropy_term == EntropyTerm::full_distribution)
      for (double p : probabilities)
        n += xlogx(p);
    else
      n = xlogx(p_t);
  }
  const double loss = w * s + alpha * n;

  if (!grad.empty()) {
    // dp_t/dz_j = p_t (delta_jt - p_j)
    const double focal_coeff = s * dw_dpt * p_t;
    const double off = eps / static_cast<double>(v);
    const double target_entropy_coeff =
        alpha > 0.0 && config.entropy_term == EntropyTerm::target_only ? alpha * (floored_log(p_t, nullptr) + 1.0) * p_t
                                                                        : 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double p = probabilities[j];
      const double q = (j == t ? 1.0 - eps : 0.0) + off;
      const double indicator = j == t ? 1.0 : 0.0;
      double g = w * (p - q) + focal_coeff * (indicator - p);
      if (alpha > 0.0) {
        if (config.entropy_term == EntropyTerm::full_distribution)
          g += alpha * (p > 0.0 ? p * (std::log(p) - n) : 0.0);
        else
          g += target_entropy_coeff * (indicator - p);
      }
      grad[j] = scale * g;
    }
  }
  return loss;
}

double weighted_cross_entropy(std::span<const StepDistribution> steps, const LossConfig& config,
                              LossDiagnostics* diagnostics) {
  if (steps.empty())
    throw Error("cross entropy over zero steps");
  config.validate();
  LossConfig no_penalty = config;
  no_penalty.entropy_penalty = 0.0;
  no_penalty.label_smoothing = config.effective_label_smoothing();
  double sum = 0.0;
  for (const auto& step : steps) {
    check_target(step);
    if (no_penalty.mode == WeightingMode::uniform && no_penalty.label_smoothing == 0.0) {
      // Same accumulation as cross_entropy so the two agree bit for bit.
      sum += floored_log(step.probabilities[static_cast<std::size_t>(step.target)], diagnostics);
      continue;
    }
    sum -= position_objective(step.probabilities, step.target, no_penalty, 1.0, {}, diagnostics);
  }
  return -sum / static_cast<double>(steps.size());
}

double entropy_penalty(std::span<const StepDistribution> steps, EntropyTerm term) {
  if (steps.empty())
    return 0.0;
  double sum = 0.0;
  for (const auto& step : steps) {
    if (term == EntropyTerm::full_distribution) {
      for (double p : step.probabilities)
        sum += xlogx(p);
    } else {
      check_target(step);
      sum += xlogx(step.probabilities[static_cast<std::size_t>(step.target)]);
    }
  }
  return sum / static_cast<double>(steps.size());
}

double objective(std::span<const StepDistribution> steps, const LossConfig& config, LossDiagnostics* diagnostics) {
  const double ce = weighted_cross_entropy(steps, config, diagnostics);
  if (config.entropy_penalty <= 0.0)
    return ce;
  return ce + config.entropy_penalty * entropy_penalty(steps, config.entropy_term);
}

std::vector<std::vector<double>> loss_gradient(std::span<const StepDistribution> steps, const LossConfig& config) {
  config.validate();
  std::vector<std::vector<double>> grads;
  grads.reserve(steps.size());
  const double scale = steps.empty() ? 0.0 : 1.0 / static_cast<double>(steps.size());
  for (const auto& step : steps) {
    check_target(step);
    std::vector<double> g(step.probabilities.size());
    position_objective(step.probabilities, step.target, config, scale, g);
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace adaptok
