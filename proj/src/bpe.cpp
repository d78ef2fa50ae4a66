#include "adaptok/bpe.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "adaptok/error.hpp"

namespace adaptok::bpe {

namespace {

constexpr std::string_view kMergesHeader = "#adaptok-bpe-merges v1";

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80)
    return 1;
  if ((lead & 0xE0) == 0xC0)
    return 2;
  if ((lead & 0xF0) == 0xE0)
    return 3;
  if ((lead & 0xF8) == 0xF0)
    return 4;
  return 1;
}

struct Word {
  std::vector<std::string> symbols;
  std::uint64_t count = 0;
};

using PairCounts = std::map<SymbolPair, std::int64_t>;

// Ordered by count descending, then pair ascending, so begin() is the next merge.
struct QueueOrder {
  bool operator()(const std::pair<std::int64_t, SymbolPair>& a,
                  const std::pair<std::int64_t, SymbolPair>& b) const {
    if (a.first != b.first)
      return a.first > b.first;
    return a.second < b.second;
  }
};

}  // namespace

MergeList MergeList::prefix(std::size_t n) const {
  MergeList out;
  out.merge_count = std::min(n, merge_count);
  out.merges.assign(merges.begin(), merges.begin() + static_cast<std::ptrdiff_t>(std::min(n, merges.size())));
  return out;
}

std::string MergeList::serialize() const {
  std::string out(kMergesHeader);
  out += " requested=" + std::to_string(merge_count) + "\n";
  for (const auto& [left, right] : merges)
    out += left + " " + right + "\n";
  return out;
}

void MergeList::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << serialize();
}

MergeList MergeList::parse(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line.rfind(kMergesHeader, 0) != 0)
    throw ParseError("merges", 1, "missing merges header");
  MergeList list;
  const auto req = line.find("requested=");
  std::set<SymbolPair> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    const auto space = line.find(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size() ||
        line.find(' ', space + 1) != std::string::npos)
      throw ParseError("merges", line_no, "expected 'left right'");
    SymbolPair pair{line.substr(0, space), line.substr(space + 1)};
    if (!seen.insert(pair).second)
      throw ParseError("merges", line_no, "duplicate merge");
    list.merges.push_back(std::move(pair));
  }
  list.merge_count = list.merges.size();
  if (req != std::string::npos)
    list.merge_count = std::max<std::size_t>(list.merge_count, std::stoull(text.substr(req + 10)));
  return list;
}

MergeList MergeList::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

WordCounts word_counts(std::span<const Sentence> sentences) {
  WordCounts counts;
  for (const auto& sentence : sentences)
    for (const auto& word : sentence)
      ++counts[word];
  return counts;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  std::vector<std::string> symbols;
  std::size_t i = 0;
  while (i < word.size()) {
    const std::size_t len = std::min(utf8_length(static_cast<unsigned char>(word[i])), word.size() - i);
    symbols.emplace_back(word.substr(i, len));
    i += len;
  }
  if (!symbols.empty())
    symbols.back() += kEndOfWord;
  return symbols;
}

MergeList learn_merges(const WordCounts& counts, std::size_t merge_count) {
  if (merge_count == 0)
    throw Error("merge count must be positive");
  std::vector<Word> words;
  words.reserve(counts.size());
  for (const auto& [word, count] : counts) {
    if (word.empty())
      throw Error("cannot learn merges from an empty word");
    words.push_back({initial_symbols(word), count});
  }

  PairCounts pair_counts;
  std::map<SymbolPair, std::set<std::size_t>> where;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& s = words[w].symbols;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      SymbolPair p{s[i], s[i + 1]};
      pair_counts[p] += static_cast<std::int64_t>(words[w].count);
      where[p].insert(w);
    }
  }
  std::set<std::pair<std::int64_t, SymbolPair>, QueueOrder> queue;
  for (const auto& [p, c] : pair_counts)
    queue.emplace(c, p);

  auto adjust = [&](const SymbolPair& p, std::int64_t delta) {
    auto it = pair_counts.find(p);
    std::int64_t old = it == pair_counts.end() ? 0 : it->second;
    if (old > 0)
      queue.erase({old, p});
    const std::int64_t now = old + delta;
    if (now > 0) {
      pair_counts[p] = now;
      queue.emplace(now, p);
    } else if (it != pair_counts.end()) {
      pair_counts.erase(it);
    }
  };

  MergeList result;
  result.merge_count = merge_count;
  while (result.merges.size() < merge_count && !queue.empty()) {
    const auto [best_count, best] = *queue.begin();
    if (best_count < 2)
      break;
    result.merges.push_back(best);
    const std::string merged = best.first + best.second;
    const auto affected = where[best];
    for (std::size_t w : affected) {
      auto& symbols = words[w].symbols;
      const auto c = static_cast<std::int64_t>(words[w].count);
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        adjust({symbols[i], symbols[i + 1]}, -c);
      std::vector<std::string> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == best.first && symbols[i + 1] == best.second) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(symbols[i]);
        }
      }
      symbols = std::move(next);
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        SymbolPair p{symbols[i], symbols[i + 1]};
        adjust(p, c);
        where[p].insert(w);
      }
    }
    where.erase(best);
  }
  return result;
}

Encoder::Encoder(const MergeList& merges) {
  for (std::size_t r = 0; r < merges.merges.size(); ++r)
    ranks_.emplace(merges.merges[r], r);
}

void Encoder::merge_symbols(std::vector<std::string>& symbols) const {
  while (symbols.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    const SymbolPair* best = nullptr;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks_.find({symbols[i], symbols[i + 1]});
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = &it->first;
      }
    }
    if (!best)
      break;
    std::vector<std::string> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      if (i + 1 < symbols.size() && symbols[i] == best->first && symbols[i + 1] == best->second) {
        next.push_back(best->first + best->second);
        ++i;
      } else {
        next.push_back(symbols[i]);
      }
    }
    symbols = std::move(next);
  }
}

std::vector<std::string> Encoder::segment_word(std::string_view word) const {
  auto symbols = initial_symbols(word);
  merge_symbols(symbols);
  return symbols;
}

Sentence Encoder::apply(const Sentence& sentence) const {
  Sentence out;
  for (const auto& word : sentence) {
    auto pieces = segment_word(word);
    out.insert(out.end(), std::make_move_iterator(pieces.begin()), std::make_move_iterator(pieces.end()));
  }
  return out;
}

Sentence apply_merges(const Sentence& sentence, const MergeList& merges) {
  return Encoder(merges).apply(sentence);
}

Sentence detokenize(const Sentence& subwords) {
  Sentence words;
  std::string current;
  for (const auto& piece : subwords) {
    if (piece.size() >= kEndOfWord.size() &&
        piece.compare(piece.size() - kEndOfWord.size(), kEndOfWord.size(), kEndOfWord) == 0) {
      current.append(piece, 0, piece.size() - kEndOfWord.size());
      words.push_back(std::move(current));
      current.clear();
    } else {
      current += piece;
    }
  }
  if (!current.empty())
    words.push_back(std::move(current));
  return words;
}

}  // namespace adaptok::bpe
