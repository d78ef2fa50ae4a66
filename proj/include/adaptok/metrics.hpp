#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adaptok/corpus.hpp"

namespace adaptok {

struct BleuReport {
  double score = 0.0;                  // [0, 100]
  std::array<double, 4> precisions{};  // n = 1..4
  std::array<std::uint64_t, 4> matches{};
  std::array<std::uint64_t, 4> totals{};
  double brevity_penalty = 1.0;
  std::uint64_t hypothesis_length = 0;
  std::uint64_t reference_length = 0;

  // multi-bleu style one-line summary.
  std::string summary() const;
};

// Corpus-level 4-gram BLEU with clipped counts and no smoothing. An order
// with no hypothesis n-grams at all counts as precision 1; any order with
// n-grams but no matches makes the score 0.
BleuReport bleu4(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

// distinct types / tokens
double ttr(const Sentence& text);
// Sum over types of P(type drawn in a sample of sample_size tokens without
// replacement) / sample_size.
double hdd(const Sentence& text, std::size_t sample_size = 42);
// Mean of the forward and backward factor passes.
double mtld(const Sentence& text, double threshold = 0.72);
// One directional pass: text length / factor count.
double mtld_pass(const Sentence& text, double threshold = 0.72);

struct DiversityReport {
  double ttr = 0.0;
  double hdd = 0.0;
  double mtld = 0.0;
  std::size_t tokens = 0;
  std::size_t types = 0;
};

DiversityReport diversity(const Sentence& text, std::size_t hdd_sample = 42, double mtld_threshold = 0.72);
// Concatenates sentences into one token stream.
Sentence flatten(std::span<const Sentence> sentences);

struct NamedText {
  std::string name;
  Sentence tokens;
};

inline constexpr std::size_t kNumDeciles = 10;

// Observed types split into 10 equal rank slices (decile of rank r out of n
// is floor(10 r / n)); tokens not in the table fall into the last decile.
struct DistributionReport {
  std::vector<std::string> names;
  std::vector<std::array<std::uint64_t, kNumDeciles>> counts;  // per text
  std::vector<std::size_t> decile_sizes = std::vector<std::size_t>(kNumDeciles, 0);

  // decile rows; raw counts and common-log columns (log10 of 0 written as 0).
  std::string to_csv() const;
};

std::size_t decile_of(std::string_view token, const FrequencyTable& table);
DistributionReport distribution_report(std::span<const NamedText> texts, const FrequencyTable& table);

// Percentage of the text's tokens in each frequency interval; rows sum to 100.
std::vector<double> interval_proportions(const Sentence& text, const FrequencyTable& table,
                                         std::span<const double> boundaries);

}  // namespace adaptok
