#include "adaptok/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

const std::string kReservedTokens[Vocabulary::kNumReserved] = {"<pad>", "<unk>", "<s>", "</s>"};

std::vector<FrequencyEntry> rank_entries(const std::unordered_map<std::string, std::uint64_t>& counts) {
  std::vector<FrequencyEntry> ranked;
  ranked.reserve(counts.size());
  for (const auto& [token, count] : counts)
    if (count > 0)
      ranked.push_back({token, count});
  std::sort(ranked.begin(), ranked.end(), [](const FrequencyEntry& a, const FrequencyEntry& b) {
    if (a.count != b.count)
      return a.count > b.count;
    return a.token < b.token;
  });
  return ranked;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& token : kReservedTokens)
    add(token);
}

Vocabulary::Vocabulary(std::span<const std::string> tokens) : Vocabulary() {
  for (const auto& token : tokens)
    add(token);
}

void Vocabulary::add(std::string token) {
  if (index_.contains(token))
    return;
  const auto id = static_cast<TokenId>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_sentences(std::span<const Sentence> sentences) {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (const auto& sentence : sentences)
    for (const auto& token : sentence)
      ++counts[token];
  std::vector<std::string> tokens;
  for (auto& entry : rank_entries(counts))
    tokens.push_back(std::move(entry.token));
  return Vocabulary(tokens);
}

TokenId Vocabulary::lookup(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw Error("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(const Sentence& sentence) const {
  std::vector<TokenId> ids;
  ids.reserve(sentence.size());
  for (const auto& token : sentence)
    ids.push_back(lookup(token));
  return ids;
}

Sentence Vocabulary::decode(std::span<const TokenId> ids) const {
  Sentence tokens;
  tokens.reserve(ids.size());
  for (TokenId id : ids)
    tokens.push_back(token(id));
  return tokens;
}

Sentence ParallelCorpus::source_tokens(std::size_t i) const {
  return source_vocab->decode(pairs.at(i).source);
}

Sentence ParallelCorpus::target_tokens(std::size_t i) const {
  return target_vocab->decode(pairs.at(i).target);
}

ParallelCorpus ParallelCorpus::subset(std::span<const std::size_t> indices) const {
  ParallelCorpus out{source_vocab, target_vocab, {}};
  out.pairs.reserve(indices.size());
  for (std::size_t i : indices)
    out.pairs.push_back(pairs.at(i));
  return out;
}

bool is_valid_utf8(std::string_view text) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n)
      return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(text[i + k]);
      if ((cc & 0xC0) != 0x80)
        return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates, out of range.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF))
      return false;
    i += len;
  }
  return true;
}

Sentence split_tokens(std::string_view line) {
  Sentence tokens;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(' ', start);
    tokens.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return tokens;
}

std::string join_tokens(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i)
      out += ' ';
    out += tokens[i];
  }
  return out;
}

std::vector<Sentence> read_sentences(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  const std::string name = path.string();
  std::vector<Sentence> sentences;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      throw ParseError(name, line_no, "empty line");
    if (!is_valid_utf8(line))
      throw ParseError(name, line_no, "invalid UTF-8");
    auto tokens = split_tokens(line);
    for (const auto& token : tokens)
      if (token.empty())
        throw ParseError(name, line_no, "empty token (tokens must be separated by single spaces)");
    sentences.push_back(std::move(tokens));
  }
  return sentences;
}

void write_sentences(const std::filesystem::path& path, std::span<const Sentence> sentences) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  for (const auto& sentence : sentences)
    out << join_tokens(sentence) << '\n';
}

ParallelCorpus make_corpus(std::span<const Sentence> source, std::span<const Sentence> target,
                           std::shared_ptr<const Vocabulary> source_vocab,
                           std::shared_ptr<const Vocabulary> target_vocab) {
  if (source.size() != target.size())
    throw Error("mismatched line counts: source has " + std::to_string(source.size()) +
                " lines, target has " + std::to_string(target.size()));
  ParallelCorpus corpus{std::move(source_vocab), std::move(target_vocab), {}};
  corpus.pairs.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (source[i].empty() || target[i].empty())
      throw ParseError("corpus", i + 1, "empty sentence");
    corpus.pairs.push_back({corpus.source_vocab->encode(source[i]), corpus.target_vocab->encode(target[i])});
  }
  return corpus;
}

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path,
                           std::shared_ptr<const Vocabulary> source_vocab,
                           std::shared_ptr<const Vocabulary> target_vocab) {
  const auto source = read_sentences(source_path);
  const auto target = read_sentences(target_path);
  if (source.size() != target.size()) {
    const std::size_t first_missing = std::min(source.size(), target.size()) + 1;
    throw ParseError(source.size() < target.size() ? source_path.string() : target_path.string(),
                     first_missing,
                     "mismatched line counts (" + std::to_string(source.size()) + " source vs " +
                         std::to_string(target.size()) + " target)");
  }
  return make_corpus(source, target, std::move(source_vocab), std::move(target_vocab));
}

ParallelCorpus load_corpus(const std::filesystem::path& source_path,
                           const std::filesystem::path& target_path) {
  const auto source = read_sentences(source_path);
  const auto target = read_sentences(target_path);
  if (source.size() != target.size())
    throw ParseError(source.size() < target.size() ? source_path.string() : target_path.string(),
                     std::min(source.size(), target.size()) + 1,
                     "mismatched line counts (" + std::to_string(source.size()) + " source vs " +
                         std::to_string(target.size()) + " target)");
  auto sv = std::make_shared<const Vocabulary>(Vocabulary::from_sentences(source));
  auto tv = std::make_shared<const Vocabulary>(Vocabulary::from_sentences(target));
  return make_corpus(source, target, std::move(sv), std::move(tv));
}

FrequencyTable::FrequencyTable(std::unordered_map<std::string, std::uint64_t> counts)
    : ranked_(rank_entries(counts)) {
  index_.reserve(ranked_.size());
  std::vector<std::uint64_t> values;
  values.reserve(ranked_.size());
  for (std::size_t i = 0; i < ranked_.size(); ++i) {
    index_.emplace(ranked_[i].token, i);
    total_ += ranked_[i].count;
    values.push_back(ranked_[i].count);
  }
  if (!values.empty()) {
    // ranked_ is descending, so the ascending lower-middle element sits at
    // (n - 1) / 2 counted from the back.
    const std::size_t n = values.size();
    median_ = values[n - 1 - (n - 1) / 2];
  }
}

std::uint64_t FrequencyTable::count(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? 0 : ranked_[it->second].count;
}

std::ptrdiff_t FrequencyTable::rank_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
}

std::vector<std::uint64_t> FrequencyTable::counts_for(const Vocabulary& vocab) const {
  std::vector<std::uint64_t> out(vocab.size(), 0);
  for (std::size_t id = Vocabulary::kNumReserved; id < vocab.size(); ++id)
    out[id] = count(vocab.tokens()[id]);
  return out;
}

std::string FrequencyTable::to_tsv() const {
  std::string out;
  for (const auto& entry : ranked_) {
    out += entry.token;
    out += '\t';
    out += std::to_string(entry.count);
    out += '\n';
  }
  return out;
}

void FrequencyTable::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << to_tsv();
}

FrequencyTable FrequencyTable::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::unordered_map<std::string, std::uint64_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line[0] == '#')
      continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw ParseError(path.string(), line_no, "expected token<TAB>count");
    const std::string token = line.substr(0, tab);
    const std::string value = line.substr(tab + 1);
    std::uint64_t count = 0;
    std::size_t used = 0;
    try {
      count = std::stoull(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != value.size() || value[0] == '-')
      throw ParseError(path.string(), line_no, "bad count '" + value + "'");
    if (!counts.emplace(token, count).second)
      throw ParseError(path.string(), line_no, "duplicate token '" + token + "'");
  }
  return FrequencyTable(std::move(counts));
}

bool FrequencyTable::operator==(const FrequencyTable& other) const {
  if (ranked_.size() != other.ranked_.size())
    return false;
  for (std::size_t i = 0; i < ranked_.size(); ++i)
    if (ranked_[i].token != other.ranked_[i].token || ranked_[i].count != other.ranked_[i].count)
      return false;
  return true;
}

FrequencyTable count_frequencies(std::span<const Sentence> target_sentences, unsigned threads) {
  if (target_sentences.empty())
    throw Error("cannot count frequencies of an empty corpus");
  const std::size_t n = target_sentences.size();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  std::vector<std::unordered_map<std::string, std::uint64_t>> shards(threads);
  auto count_shard = [&](unsigned s) {
    const std::size_t begin = n * s / threads, end = n * (s + 1) / threads;
    for (std::size_t i = begin; i < end; ++i)
      for (const auto& token : target_sentences[i])
        ++shards[s][token];
  };
  if (threads == 1) {
    count_shard(0);
  } else {
    std::vector<std::jthread> workers;
    for (unsigned s = 0; s < threads; ++s)
      workers.emplace_back(count_shard, s);
  }
  auto& merged = shards[0];
  for (unsigned s = 1; s < threads; ++s)
    for (const auto& [token, count] : shards[s])
      merged[token] += count;
  if (merged.empty())
    throw Error("cannot count frequencies of an empty corpus");
  return FrequencyTable(std::move(merged));
}

FrequencyTable count_frequencies(const ParallelCorpus& corpus, unsigned threads) {
  if (corpus.pairs.empty())
    throw Error("cannot count frequencies of an empty corpus");
  std::vector<Sentence> target;
  target.reserve(corpus.size());
  for (const auto& pair : corpus.pairs) {
    Sentence tokens;
    for (TokenId id : pair.target)
      if (!Vocabulary::is_reserved(id))
        tokens.push_back(corpus.target_vocab->token(id));
    target.push_back(std::move(tokens));
  }
  return count_frequencies(target, threads);
}

std::vector<FrequencyInterval> frequency_intervals(const FrequencyTable& table,
                                                   std::span<const double> boundaries) {
  if (boundaries.empty())
    throw Error("frequency intervals need at least one boundary");
  double previous = 0.0;
  for (double b : boundaries) {
    if (!(b > previous) || b > 100.0)
      throw Error("interval boundaries must be strictly increasing within (0, 100]");
    previous = b;
  }
  const auto& ranked = table.ranked();
  const std::size_t n = ranked.size();
  std::vector<FrequencyInterval> intervals;
  std::size_t position = 0;
  double lower = 0.0;
  for (std::size_t k = 0; k < boundaries.size(); ++k) {
    const double upper = boundaries[k];
    std::size_t end = static_cast<std::size_t>(std::ceil(upper * static_cast<double>(n) / 100.0 - 1e-9));
    if (k + 1 == boundaries.size() && upper >= 100.0)
      end = n;
    end = std::min(end, n);
    FrequencyInterval interval;
    interval.lower_percent = lower;
    interval.upper_percent = upper;
    for (; position < end; ++position) {
      interval.tokens.push_back(ranked[position].token);
      interval.total_count += ranked[position].count;
    }
    if (!interval.tokens.empty())
      interval.average_count =
          static_cast<double>(interval.total_count) / static_cast<double>(interval.tokens.size());
    intervals.push_back(std::move(interval));
    lower = upper;
  }
  // Boundaries ending below 100 leave the tail unassigned; fold it into the
  // last interval so every observed type has exactly one home.
  if (position < n) {
    auto& last = intervals.back();
    for (; position < n; ++position) {
      last.tokens.push_back(ranked[position].token);
      last.total_count += ranked[position].count;
    }
    last.average_count = static_cast<double>(last.total_count) / static_cast<double>(last.tokens.size());
  }
  return intervals;
}

}  // namespace adaptok
