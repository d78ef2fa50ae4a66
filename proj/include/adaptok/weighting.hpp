#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adaptok/corpus.hpp"

namespace adaptok {

enum class WeightForm { uniform, exponential, chi_square, linear };

std::string to_string(WeightForm form);
WeightForm parse_weight_form(std::string_view name);

// Linear weights are rescaled to mean 1 over vocabulary types by default;
// `occurrences` rescales to mean 1 over corpus token occurrences instead.
enum class LinearNormalization { types, occurrences };

struct WeightScheme {
  WeightForm form = WeightForm::uniform;
  double amplitude = 0.0;  // A; 0 means "calibrate from T"
  double temperature = 1.0;  // T
  bool normalize_by_median = true;
  LinearNormalization linear_normalization = LinearNormalization::types;

  // Throws Error on A <= 0 or T <= 0 for the exponential and chi-square forms.
  void validate() const;
  // Amplitude after calibration (A when set, otherwise calibrate_amplitude()).
  double effective_amplitude() const;
};

// The weighting argument: count / median when normalizing, else the count.
double weight_argument(std::uint64_t count, const FrequencyTable& table, bool normalize_by_median);

// A * exp(-T c) + 1
double exponential_weight(double c, double amplitude, double temperature);
// A * c^2 * exp(-T c) + 1
double chi_square_weight(double c, double amplitude, double temperature);

double weight_exponential(std::uint64_t count, const FrequencyTable& table, double amplitude,
                          double temperature, bool normalize_by_median = true);
double weight_chisquare(std::uint64_t count, const FrequencyTable& table, double amplitude,
                        double temperature, bool normalize_by_median = true);
// Raw linear weight 1 - count / max_count, before normalization.
double weight_linear(std::uint64_t count, const FrequencyTable& table);

// Amplitude that maps the form's range onto [1, e].
//   exponential: A = e - 1 (peak at c = 0)
//   chi_square:  A = (e - 1) T^2 e^2 / 4 (peak at c = 2 / T)
double calibrate_amplitude(WeightForm form, double temperature);

class WeightTable {
 public:
  WeightTable() = default;

  // Unknown tokens get weight 1.
  double weight(std::string_view token) const;
  bool contains(std::string_view token) const { return weights_.contains(std::string(token)); }
  const WeightScheme& scheme() const noexcept { return scheme_; }
  // Corpus-weighted mean of the weights over the frequency table it was built from.
  double expectation() const noexcept { return expectation_; }
  double delta() const noexcept { return expectation_ - 1.0; }
  double min_weight() const;
  double max_weight() const;
  const std::vector<std::pair<std::string, double>>& entries() const noexcept { return ordered_; }

  // Dense per-id weights; reserved and unseen ids get 1.
  std::vector<double> dense(const Vocabulary& vocab) const;

  // Header line with form, A, T, normalization flag and expectation, then
  // `token<TAB>weight` lines with 6 decimals.
  std::string to_tsv() const;
  void save_tsv(const std::filesystem::path& path) const;
  static WeightTable load_tsv(const std::filesystem::path& path);
  static WeightTable parse_tsv(const std::string& text, const std::string& name = "weights");

  // Expectation recomputed against a frequency table (types absent from
  // this table count with weight 1).
  double expectation_over(const FrequencyTable& table) const;

 private:
  friend WeightTable build_weight_table(const FrequencyTable&, const WeightScheme&);

  WeightScheme scheme_;
  std::vector<std::pair<std::string, double>> ordered_;
  std::unordered_map<std::string, double> weights_;
  double expectation_ = 1.0;
};

WeightTable build_weight_table(const FrequencyTable& table, const WeightScheme& scheme);

inline constexpr double kDefaultDeltaMax = 0.2;

struct CriteriaReport {
  bool min_ok = false;
  bool expectation_ok = false;
  double min_weight = 0.0;
  double expectation = 0.0;
  double delta = 0.0;
};

// Minimum-weight criterion (every weight >= 1 within 1e-12) and weight
// expectation range (0 <= delta <= delta_max).
CriteriaReport validate_criteria(const WeightTable& weights, double delta_max = kDefaultDeltaMax);
CriteriaReport validate_criteria(const WeightTable& weights, const FrequencyTable& table,
                                 double delta_max = kDefaultDeltaMax);

struct TemperatureCandidate {
  double temperature = 0.0;
  double amplitude = 0.0;
  double delta = 0.0;
  bool min_ok = false;
  bool pass = false;
};

// Evaluates the criteria at each T with a calibrated amplitude. Candidates
// come back sorted by delta ascending (ties by T).
std::vector<TemperatureCandidate> search_temperature(const FrequencyTable& table, WeightForm form,
                                                     std::span<const double> grid,
                                                     double delta_max = kDefaultDeltaMax,
                                                     bool normalize_by_median = true);

// The passing candidate with the largest delta, if any.
std::optional<TemperatureCandidate> widest_passing(std::span<const TemperatureCandidate> candidates);

}  // namespace adaptok
