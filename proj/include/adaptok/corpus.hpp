#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace adaptok {

using TokenId = std::int32_t;
using Sentence = std::vector<std::string>;

// Token string <-> id mapping with four reserved ids at the front.
//
//   0 <pad>   1 <unk>   2 <s>   3 </s>
//
// Regular tokens start at id 4, in insertion order.
class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kBos = 2;
  static constexpr TokenId kEos = 3;
  static constexpr TokenId kNumReserved = 4;

  Vocabulary();
  // Duplicate strings are dropped (first occurrence wins).
  explicit Vocabulary(std::span<const std::string> tokens);

  // Tokens ordered by descending count then ascending string.
  static Vocabulary from_sentences(std::span<const Sentence> sentences);

  TokenId lookup(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  static bool is_reserved(TokenId id) noexcept { return id >= 0 && id < kNumReserved; }

  std::vector<TokenId> encode(const Sentence& sentence) const;
  Sentence decode(std::span<const TokenId> ids) const;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct SentencePair {
  std::vector<TokenId> source;
  std::vector<TokenId> target;
};

struct ParallelCorpus {
  std::shared_ptr<const Vocabulary> source_vocab;
  std::shared_ptr<const Vocabulary> target_vocab;
  std::vector<SentencePair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
  Sentence source_tokens(std::size_t i) const;
  Sentence target_tokens(std::size_t i) const;
  // Same vocabularies, selected pairs in the given order.
  ParallelCorpus subset(std::span<const std::size_t> indices) const;
};

// Reads a one-sentence-per-line file of space separated tokens.
// Rejects empty lines, empty tokens and invalid UTF-8, naming the line.
std::vector<Sentence> read_sentences(const std::filesystem::path& path);
void write_sentences(const std::filesystem::path& path, std::span<const Sentence> sentences);
Sentence split_tokens(std::string_view line);
std::string join_tokens(const Sentence& tokens);
bool is_valid_utf8(std::string_view text);

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path,
                           std::shared_ptr<const Vocabulary> source_vocab,
                           std::shared_ptr<const Vocabulary> target_vocab);

// Builds both vocabularies from the files themselves.
ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path);

ParallelCorpus make_corpus(std::span<const Sentence> source, std::span<const Sentence> target,
                           std::shared_ptr<const Vocabulary> source_vocab,
                           std::shared_ptr<const Vocabulary> target_vocab);

struct FrequencyEntry {
  std::string token;
  std::uint64_t count = 0;
};

// Target-side token counts. Entries are kept in rank order: count
// descending, ties broken by token string ascending. Only observed types
// (count >= 1) are stored; reserved tokens never appear.
class FrequencyTable {
 public:
  FrequencyTable() = default;
  explicit FrequencyTable(std::unordered_map<std::string, std::uint64_t> counts);

  const std::vector<FrequencyEntry>& ranked() const noexcept { return ranked_; }
  std::uint64_t count(std::string_view token) const;  // 0 when unseen
  // Rank position (0 = most frequent), or -1 when unseen.
  std::ptrdiff_t rank_of(std::string_view token) const;
  std::uint64_t total() const noexcept { return total_; }
  // Median over observed types; even cardinality takes the lower middle.
  std::uint64_t median() const noexcept { return median_; }
  std::uint64_t max_count() const noexcept { return ranked_.empty() ? 0 : ranked_.front().count; }
  std::size_t num_types() const noexcept { return ranked_.size(); }
  bool empty() const noexcept { return ranked_.empty(); }

  // Dense per-id counts for a vocabulary (0 for reserved/unseen).
  std::vector<std::uint64_t> counts_for(const Vocabulary& vocab) const;

  // TSV `token<TAB>count`, rank order, newline terminated.
  void save_tsv(const std::filesystem::path& path) const;
  std::string to_tsv() const;
  static FrequencyTable load_tsv(const std::filesystem::path& path);

  bool operator==(const FrequencyTable& other) const;

 private:
  std::vector<FrequencyEntry> ranked_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t total_ = 0;
  std::uint64_t median_ = 0;
};

// Counts the target side. With threads > 1 the corpus is sharded and the
// shard counts are merged; the result does not depend on the thread count.
FrequencyTable count_frequencies(std::span<const Sentence> target_sentences, unsigned threads = 1);
FrequencyTable count_frequencies(const ParallelCorpus& corpus, unsigned threads = 1);

struct FrequencyInterval {
  double lower_percent = 0.0;  // exclusive of previous upper bound
  double upper_percent = 0.0;
  std::vector<std::string> tokens;
  std::uint64_t total_count = 0;
  double average_count = 0.0;  // 0 if the interval is empty
};

// Splits the ranked types at the given rank percentiles. Type at rank
// position r (0-based) of n falls in the first interval whose upper bound
// satisfies (r + 1) <= ceil(upper * n / 100).
std::vector<FrequencyInterval> frequency_intervals(const FrequencyTable& table,
                                                   std::span<const double> boundaries);

}  // namespace adaptok
