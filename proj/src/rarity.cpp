#include "adaptok/rarity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

double token_log_share(std::uint64_t count, double log_total) {
  return std::log(static_cast<double>(std::max<std::uint64_t>(count, 1))) - log_total;
}

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw Error("fraction must lie in (0, 1)");
}

}  // namespace

double sentence_rarity(const Sentence& target, const FrequencyTable& table) {
  if (target.empty())
    throw Error("rarity of an empty sentence");
  if (table.total() == 0)
    throw Error("rarity needs a non-empty frequency table");
  const double log_total = std::log(static_cast<double>(table.total()));
  double sum = 0.0;
  for (const auto& token : target)
    sum += token_log_share(table.count(token), log_total);
  return -sum / static_cast<double>(target.size());
}

double sentence_rarity(std::span<const TokenId> target, const Vocabulary& vocab, const FrequencyTable& table) {
  if (target.empty())
    throw Error("rarity of an empty sentence");
  if (table.total() == 0)
    throw Error("rarity needs a non-empty frequency table");
  const double log_total = std::log(static_cast<double>(table.total()));
  double sum = 0.0;
  for (TokenId id : target)
    sum += token_log_share(Vocabulary::is_reserved(id) ? 0 : table.count(vocab.token(id)), log_total);
  return -sum / static_cast<double>(target.size());
}

std::vector<RarityScore> score_corpus(const ParallelCorpus& corpus, const FrequencyTable& table) {
  std::vector<RarityScore> scores;
  scores.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    scores.push_back({sentence_rarity(corpus.pairs[i].target, *corpus.target_vocab, table), i});
  return scores;
}

const char* to_string(Stratum s) {
  switch (s) {
    case Stratum::high: return "High";
    case Stratum::middle: return "Middle";
    case Stratum::low: return "Low";
  }
  return "?";
}

const std::vector<std::size_t>& Stratification::indices(Stratum s) const {
  switch (s) {
    case Stratum::high: return high;
    case Stratum::middle: return middle;
    default: return low;
  }
}

Stratum Stratification::stratum_of(std::size_t sentence_index) const {
  if (std::binary_search(high.begin(), high.end(), sentence_index))
    return Stratum::high;
  if (std::binary_search(middle.begin(), middle.end(), sentence_index))
    return Stratum::middle;
  if (std::binary_search(low.begin(), low.end(), sentence_index))
    return Stratum::low;
  throw Error("sentence index outside the stratified set");
}

Stratification stratify(const ParallelCorpus& test_set, const FrequencyTable& table) {
  if (test_set.size() < 3)
    throw Error("stratification needs at least 3 sentences");
  Stratification out;
  out.scores = score_corpus(test_set, table);
  std::vector<RarityScore> order = out.scores;
  std::stable_sort(order.begin(), order.end(), [](const RarityScore& a, const RarityScore& b) {
    if (a.value != b.value)
      return a.value < b.value;
    return a.sentence_index < b.sentence_index;
  });
  const std::size_t third = test_set.size() / 3;
  for (std::size_t r = 0; r < order.size(); ++r) {
    auto& bucket = r < third ? out.high : (r < 2 * third ? out.middle : out.low);
    bucket.push_back(order[r].sentence_index);
  }
  std::sort(out.high.begin(), out.high.end());
  std::sort(out.middle.begin(), out.middle.end());
  std::sort(out.low.begin(), out.low.end());
  return out;
}

std::vector<std::size_t> rare_subset_indices(const ParallelCorpus& corpus, const FrequencyTable& table,
                                             double fraction) {
  check_fraction(fraction);
  auto scores = score_corpus(corpus, table);
  std::stable_sort(scores.begin(), scores.end(), [](const RarityScore& a, const RarityScore& b) {
    if (a.value != b.value)
      return a.value > b.value;
    return a.sentence_index < b.sentence_index;
  });
  const double wanted = std::ceil(fraction * static_cast<double>(corpus.size()) - 1e-9);
  const auto k = std::min(corpus.size(), static_cast<std::size_t>(std::max(0.0, wanted)));
  std::vector<std::size_t> indices;
  indices.reserve(k);
  for (std::size_t r = 0; r < k; ++r)
    indices.push_back(scores[r].sentence_index);
  std::sort(indices.begin(), indices.end());
  return indices;
}

ParallelCorpus select_rare_subset(const ParallelCorpus& corpus, const FrequencyTable& table, double fraction) {
  const auto indices = rare_subset_indices(corpus, table, fraction);
  return corpus.subset(indices);
}

ParallelCorpus oversample_concat(const ParallelCorpus& corpus, const FrequencyTable& table, double fraction,
                                 int factor) {
  if (factor < 1)
    throw Error("oversampling factor must be >= 1");
  const auto rare = rare_subset_indices(corpus, table, fraction);
  std::vector<char> is_rare(corpus.size(), 0);
  for (std::size_t i : rare)
    is_rare[i] = 1;
  std::vector<std::size_t> order;
  order.reserve(rare.size() * static_cast<std::size_t>(factor) + corpus.size() - rare.size());
  for (int k = 0; k < factor; ++k)
    order.insert(order.end(), rare.begin(), rare.end());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (!is_rare[i])
      order.push_back(i);
  return corpus.subset(order);
}

}  // namespace adaptok
