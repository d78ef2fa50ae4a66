#pragma once

#include <span>
#include <vector>

#include "adaptok/corpus.hpp"

namespace adaptok {

struct RarityScore {
  double value = 0.0;
  std::size_t sentence_index = 0;
};

// -(1/I) sum_i log(Count(y_i) / total), natural log; higher = rarer.
// Tokens missing from the table are scored with count 1.
double sentence_rarity(const Sentence& target, const FrequencyTable& table);
double sentence_rarity(std::span<const TokenId> target, const Vocabulary& vocab, const FrequencyTable& table);

std::vector<RarityScore> score_corpus(const ParallelCorpus& corpus, const FrequencyTable& table);

enum class Stratum { high, middle, low };
const char* to_string(Stratum s);

// Sentence indices per stratum, each list in original corpus order.
struct Stratification {
  std::vector<std::size_t> high;
  std::vector<std::size_t> middle;
  std::vector<std::size_t> low;
  std::vector<RarityScore> scores;  // in corpus order

  const std::vector<std::size_t>& indices(Stratum s) const;
  Stratum stratum_of(std::size_t sentence_index) const;
};

// Sorts by rarity ascending (ties by index) and cuts into thirds; the
// remainder of n / 3 goes to Low.
Stratification stratify(const ParallelCorpus& test_set, const FrequencyTable& table);

// Indices of the ceil(fraction * N) highest-rarity sentences, in corpus order.
std::vector<std::size_t> rare_subset_indices(const ParallelCorpus& corpus, const FrequencyTable& table,
                                             double fraction);
ParallelCorpus select_rare_subset(const ParallelCorpus& corpus, const FrequencyTable& table, double fraction);

// rare subset repeated `factor` times, followed by the remaining sentences.
ParallelCorpus oversample_concat(const ParallelCorpus& corpus, const FrequencyTable& table, double fraction,
                                 int factor);

}  // namespace adaptok
