#include <doctest.h>

#include <cmath>
#include <random>

#include "adaptok/error.hpp"
#include "adaptok/loss.hpp"
#include "gradcheck.hpp"

using namespace adaptok;

namespace {

std::vector<StepDistribution> steps_from(const std::vector<std::vector<double>>& logits,
                                         const std::vector<TokenId>& targets) {
  std::vector<StepDistribution> steps;
  for (std::size_t i = 0; i < logits.size(); ++i)
    steps.push_back(StepDistribution::from_logits(logits[i], targets[i]));
  return steps;
}

// Logits whose softmax is exactly the given distribution.
StepDistribution step_with(std::vector<double> probs, TokenId target) {
  for (double& p : probs)
    p = std::log(p);
  return StepDistribution::from_logits(probs, target);
}

std::vector<LossConfig> all_configs(std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1.0, 2.718281828);
  std::vector<double> w(vocab);
  for (double& x : w)
    x = u(rng);
  auto weights = std::make_shared<const std::vector<double>>(w);
  std::vector<LossConfig> configs;
  for (double eps : {0.0, 0.1}) {
    configs.push_back(LossConfig::uniform(eps));
    configs.push_back(LossConfig::with_weights(weights, eps));
    configs.push_back(LossConfig::focal(1.0, false, eps));
    configs.push_back(LossConfig::focal(1.0, true, eps));
    configs.push_back(LossConfig::focal(2.5, false, eps));
  }
  const std::size_t base = configs.size();
  for (std::size_t i = 0; i < base; ++i) {
    for (auto term : {EntropyTerm::full_distribution, EntropyTerm::target_only}) {
      LossConfig c = configs[i];
      c.entropy_penalty = 0.1;
      c.entropy_term = term;
      configs.push_back(c);
    }
  }
  return configs;
}

}  // namespace

TEST_CASE("softmax rows sum to one") {
  std::vector<double> logits{1000.0, 999.0, -5.0};
  std::vector<double> p(3);
  softmax(logits, p);
  CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p[0] > p[1]);
}

TEST_CASE("cross entropy hand arithmetic") {
  const std::vector<StepDistribution> steps{step_with({0.5, 0.5}, 0), step_with({0.25, 0.75}, 0)};
  CHECK(std::abs(cross_entropy(steps) - 1.0397207708399179) < 1e-12);
  CHECK(cross_entropy(steps) == weighted_cross_entropy(steps, LossConfig::uniform()));
}

TEST_CASE("entropy term is sum p log p") {
  const std::vector<StepDistribution> steps{step_with({0.75, 0.25}, 0)};
  CHECK(std::abs(entropy_penalty(steps) - -0.5623351446188083) < 1e-12);
  CHECK(std::abs(entropy_penalty(steps, EntropyTerm::target_only) - 0.75 * std::log(0.75)) < 1e-12);
  LossConfig c = LossConfig::uniform();
  c.entropy_penalty = 0.1;
  CHECK(objective(steps, c) == doctest::Approx(-std::log(0.75) + 0.1 * -0.5623351446188083));
}

TEST_CASE("label smoothing is skipped while the entropy penalty is active") {
  LossConfig c = LossConfig::uniform(0.1);
  CHECK(c.effective_label_smoothing() == 0.1);
  c.entropy_penalty = 0.05;
  CHECK(c.effective_label_smoothing() == 0.0);
}

TEST_CASE("label smoothing against the mixture target") {
  const std::vector<StepDistribution> steps{step_with({0.5, 0.3, 0.2}, 1)};
  const double eps = 0.1;
  const double expected = -((eps / 3) * std::log(0.5) + (1 - eps + eps / 3) * std::log(0.3) + (eps / 3) * std::log(0.2));
  CHECK(weighted_cross_entropy(steps, LossConfig::uniform(eps)) == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("static weights scale each position") {
  auto w = std::make_shared<const std::vector<double>>(std::vector<double>{2.0, 1.0});
  const std::vector<StepDistribution> steps{step_with({0.5, 0.5}, 0), step_with({0.25, 0.75}, 1)};
  const double expected = (2.0 * -std::log(0.5) + -std::log(0.75)) / 2.0;
  CHECK(weighted_cross_entropy(steps, LossConfig::with_weights(w)) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("all-ones weight table equals plain cross entropy bit for bit") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 2.0);
  auto ones = std::make_shared<const std::vector<double>>(std::vector<double>(9, 1.0));
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> logits(7, std::vector<double>(9));
    std::vector<TokenId> targets(7);
    for (auto& row : logits)
      for (double& x : row)
        x = n(rng);
    for (auto& t : targets)
      t = static_cast<TokenId>(rng() % 9);
    const auto steps = steps_from(logits, targets);
    const double ce = cross_entropy(steps);
    CHECK(weighted_cross_entropy(steps, LossConfig::with_weights(ones)) == ce);
    CHECK(weighted_cross_entropy(steps, LossConfig::uniform()) == ce);
    CHECK(loss_gradient(steps, LossConfig::with_weights(ones)) == loss_gradient(steps, LossConfig::uniform()));
  }
}

TEST_CASE("focal weights") {
  CHECK(focal_weight(0.0, 1.0, false) == 1.0);
  CHECK(focal_weight(1.0, 1.0, false) == 0.0);
  CHECK(focal_weight(0.75, 2.0, false) == 0.0625);
  CHECK(focal_weight(0.75, 2.0, true) == 1.0625);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double p = u(rng);
    CHECK(focal_weight(p, 1.0, true) == focal_weight(p, 1.0, false) + 1.0);
  }
  CHECK_THROWS_AS(focal_weight(0.5, 0.0, false), Error);
  CHECK_THROWS_AS(focal_weight(1.5, 1.0, false), Error);
}

TEST_CASE("probability floor is counted") {
  const std::vector<StepDistribution> steps{StepDistribution::from_logits({0.0, -100.0}, 1)};
  LossDiagnostics diag;
  const double ce = cross_entropy(steps, &diag);
  CHECK(diag.clamped == 1);
  CHECK(ce == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK(std::isfinite(ce));
}

TEST_CASE("invalid configurations") {
  LossConfig c;
  c.mode = WeightingMode::static_table;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(LossConfig::uniform(1.0).validate(), Error);
  const std::vector<StepDistribution> none;
  CHECK_THROWS_AS(cross_entropy(none), Error);
  const std::vector<StepDistribution> bad{StepDistribution::from_logits({0.0, 1.0}, 5)};
  CHECK_THROWS_AS(cross_entropy(bad), Error);
}

TEST_CASE("logit gradients match central differences for every configuration") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n(0.0, 1.5);
  const std::size_t vocab = 6, positions = 4;
  const auto configs = all_configs(vocab, rng);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto& config = configs[static_cast<std::size_t>(trial) % configs.size()];
    std::vector<std::vector<double>> logits(positions, std::vector<double>(vocab));
    std::vector<TokenId> targets(positions);
    for (auto& row : logits)
      for (double& x : row)
        x = n(rng);
    for (auto& t : targets)
      t = static_cast<TokenId>(rng() % vocab);
    const auto analytic = loss_gradient(steps_from(logits, targets), config);
    const double h = 1e-5;
    for (std::size_t i = 0; i < positions; ++i)
      for (std::size_t j = 0; j < vocab; ++j) {
        auto up = logits, down = logits;
        up[i][j] += h;
        down[i][j] -= h;
        const double numeric =
            (objective(steps_from(up, targets), config) - objective(steps_from(down, targets), config)) / (2 * h);
        worst = std::max(worst, relative_error(analytic[i][j], numeric));
      }
  }
  CHECK(worst < 1e-4);
}
