#pragma once

#include <memory>
#include <span>
#include <vector>

#include "adaptok/corpus.hpp"

namespace adaptok {

// Floor applied to probabilities inside logarithms.
inline constexpr double kProbabilityFloor = 1e-12;

struct StepDistribution {
  std::vector<double> logits;
  std::vector<double> probabilities;
  TokenId target = 0;

  static StepDistribution from_logits(std::vector<double> logits, TokenId target);
};

// Numerically stable softmax into `out` (same size as logits).
void softmax(std::span<const double> logits, std::span<double> out);

enum class WeightingMode { uniform, static_table, focal };

// Which terms enter the confidence penalty: the full output distribution,
// or only the probability of the target token.
enum class EntropyTerm { full_distribution, target_only };

struct LossConfig {
  WeightingMode mode = WeightingMode::uniform;
  // Static mode: weight per target id.
  std::shared_ptr<const std::vector<double>> static_weights;
  double focal_gamma = 1.0;
  bool focal_plus_one = false;
  double label_smoothing = 0.1;
  double entropy_penalty = 0.0;  // alpha
  EntropyTerm entropy_term = EntropyTerm::full_distribution;

  void validate() const;
  // Label smoothing is switched off whenever the entropy penalty is active.
  double effective_label_smoothing() const { return entropy_penalty > 0.0 ? 0.0 : label_smoothing; }

  static LossConfig uniform(double label_smoothing = 0.0);
  static LossConfig with_weights(std::shared_ptr<const std::vector<double>> weights, double label_smoothing = 0.0);
  static LossConfig focal(double gamma, bool plus_one, double label_smoothing = 0.0);
};

struct LossDiagnostics {
  std::size_t clamped = 0;  // positions whose target probability hit the floor
};

// (1 - p)^gamma, plus one when requested.
double focal_weight(double p, double gamma, bool plus_one);

// -(1/K) sum log p(target)
double cross_entropy(std::span<const StepDistribution> steps, LossDiagnostics* diagnostics = nullptr);

// -(1/I) sum w_i log p(target_i). With label smoothing the log term becomes
// the cross entropy against (1 - eps) one_hot + eps / V.
double weighted_cross_entropy(std::span<const StepDistribution> steps, const LossConfig& config,
                              LossDiagnostics* diagnostics = nullptr);

// (1/I) sum_i sum_v p(v) log p(v); always <= 0.
double entropy_penalty(std::span<const StepDistribution> steps,
                       EntropyTerm term = EntropyTerm::full_distribution);

// weighted_cross_entropy + alpha * entropy_penalty. Minimizing it pushes
// towards higher output entropy when alpha > 0.
double objective(std::span<const StepDistribution> steps, const LossConfig& config,
                 LossDiagnostics* diagnostics = nullptr);

// d objective / d logits, one row per step.
std::vector<std::vector<double>> loss_gradient(std::span<const StepDistribution> steps, const LossConfig& config);

// Single position of the objective, unnormalized (the caller applies 1/I via
// `scale`). Writes scale * d loss / d logits into grad when it is non-empty
// and returns the unscaled per-position loss.
double position_objective(std::span<const double> probabilities, TokenId target, const LossConfig& config,
                          double scale, std::span<double> grad, LossDiagnostics* diagnostics = nullptr);

}  // namespace adaptok
