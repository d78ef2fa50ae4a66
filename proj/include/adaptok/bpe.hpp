#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "adaptok/corpus.hpp"

namespace adaptok::bpe {

// Appended to the last character of every word.
inline constexpr std::string_view kEndOfWord = "</w>";

using SymbolPair = std::pair<std::string, std::string>;

struct MergeList {
  std::vector<SymbolPair> merges;  // learning order
  std::size_t merge_count = 0;     // operations requested

  std::size_t size() const noexcept { return merges.size(); }
  // The first n merges (rank order is preserved).
  MergeList prefix(std::size_t n) const;

  // One merge per line `left right`, after a version header line.
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;
  static MergeList load(const std::filesystem::path& path);
  static MergeList parse(const std::string& text);
};

// Word -> count, e.g. from word_counts().
using WordCounts = std::map<std::string, std::uint64_t>;
WordCounts word_counts(std::span<const Sentence> sentences);

// Splits a word into UTF-8 characters with kEndOfWord glued to the last one.
std::vector<std::string> initial_symbols(std::string_view word);

// Greedy pair merging: each step merges the most frequent adjacent pair,
// ties going to the lexicographically smallest (left, right). Stops early
// once no pair occurs at least twice.
MergeList learn_merges(const WordCounts& counts, std::size_t merge_count);

// Applies merges to an already segmented word: the lowest-ranked pair
// present is merged (all occurrences, left to right) until none remain.
// Ranks are taken from the position in `merges`, offset by `rank_offset`.
class Encoder {
 public:
  explicit Encoder(const MergeList& merges);

  std::vector<std::string> segment_word(std::string_view word) const;
  // Continues segmentation of symbols produced by an earlier (prefix) pass.
  void merge_symbols(std::vector<std::string>& symbols) const;
  Sentence apply(const Sentence& sentence) const;

 private:
  std::map<SymbolPair, std::size_t> ranks_;
};

Sentence apply_merges(const Sentence& sentence, const MergeList& merges);

// Inverse of apply_merges: concatenates subwords and splits at kEndOfWord.
Sentence detokenize(const Sentence& subwords);

}  // namespace adaptok::bpe
