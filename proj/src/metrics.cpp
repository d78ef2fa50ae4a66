#include "adaptok/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

// n-gram counts of one sentence, keyed by the joined tokens.
std::unordered_map<std::string, std::uint64_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::unordered_map<std::string, std::uint64_t> counts;
  if (s.size() < n)
    return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += s[i + k];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

std::string BleuReport::summary() const {
  char buf[256];
  const double ratio =
      reference_length ? static_cast<double>(hypothesis_length) / static_cast<double>(reference_length) : 0.0;
  std::snprintf(buf, sizeof buf,
                "BLEU = %.2f, %.1f/%.1f/%.1f/%.1f (BP=%.3f, ratio=%.3f, hyp_len=%llu, ref_len=%llu)", score,
                100 * precisions[0], 100 * precisions[1], 100 * precisions[2], 100 * precisions[3],
                brevity_penalty, ratio, static_cast<unsigned long long>(hypothesis_length),
                static_cast<unsigned long long>(reference_length));
  return buf;
}

BleuReport bleu4(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size())
    throw Error("BLEU needs one reference per hypothesis (" + std::to_string(hypotheses.size()) + " vs " +
                std::to_string(references.size()) + ")");
  if (hypotheses.empty())
    throw Error("BLEU over an empty corpus");
  BleuReport r;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    r.hypothesis_length += hypotheses[i].size();
    r.reference_length += references[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto hyp = ngram_counts(hypotheses[i], n);
      const auto ref = ngram_counts(references[i], n);
      for (const auto& [gram, count] : hyp) {
        r.totals[n - 1] += count;
        auto it = ref.find(gram);
        if (it != ref.end())
          r.matches[n - 1] += std::min(count, it->second);
      }
    }
  }
  bool zero = false;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    r.precisions[n] =
        r.totals[n] == 0 ? 1.0 : static_cast<double>(r.matches[n]) / static_cast<double>(r.totals[n]);
    if (r.precisions[n] == 0.0)
      zero = true;
    else
      log_sum += std::log(r.precisions[n]);
  }
  if (r.hypothesis_length == 0)
    r.brevity_penalty = 0.0;
  else if (r.hypothesis_length < r.reference_length)
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.reference_length) /
                                           static_cast<double>(r.hypothesis_length));
  r.score = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / 4.0);
  return r;
}

double ttr(const Sentence& text) {
  if (text.empty())
    throw Error("TTR of an empty text");
  std::unordered_set<std::string> types(text.begin(), text.end());
  return static_cast<double>(types.size()) / static_cast<double>(text.size());
}

double hdd(const Sentence& text, std::size_t sample_size) {
  if (sample_size == 0)
    throw Error("HD-D sample size must be positive");
  if (text.size() < sample_size)
    throw Error("HD-D needs at least " + std::to_string(sample_size) + " tokens, got " +
                std::to_string(text.size()));
  std::map<std::string, std::uint64_t> counts;
  for (const auto& token : text)
    ++counts[token];
  const double n_total = static_cast<double>(text.size());
  double sum = 0.0;
  for (const auto& [type, count] : counts) {
    // P(absent) = C(N - k, s) / C(N, s) = prod_{i<s} (N - k - i) / (N - i)
    double p_absent = 0.0;
    if (text.size() - count >= sample_size) {
      double log_p = 0.0;
      for (std::size_t i = 0; i < sample_size; ++i)
        log_p += std::log1p(-static_cast<double>(count) / (n_total - static_cast<double>(i)));
      p_absent = std::exp(log_p);
    }
    sum += (1.0 - p_absent) / static_cast<double>(sample_size);
  }
  return sum;
}

double mtld_pass(const Sentence& text, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw Error("MTLD threshold must lie in (0, 1)");
  double factors = 0.0;
  std::unordered_set<std::string> types;
  std::size_t tokens = 0;
  for (const auto& token : text) {
    ++tokens;
    types.insert(token);
    const double running = static_cast<double>(types.size()) / static_cast<double>(tokens);
    if (running < threshold) {
      factors += 1.0;
      types.clear();
      tokens = 0;
    }
  }
  if (tokens > 0) {
    const double running = static_cast<double>(types.size()) / static_cast<double>(tokens);
    factors += (1.0 - running) / (1.0 - threshold);
  }
  // No full factor and a remainder at TTR 1: the whole text counts as one factor.
  if (factors == 0.0)
    return static_cast<double>(text.size());
  return static_cast<double>(text.size()) / factors;
}

double mtld(const Sentence& text, double threshold) {
  if (text.size() < 10)
    throw Error("MTLD needs at least 10 tokens, got " + std::to_string(text.size()));
  Sentence reversed(text.rbegin(), text.rend());
  return 0.5 * (mtld_pass(text, threshold) + mtld_pass(reversed, threshold));
}

Sentence flatten(std::span<const Sentence> sentences) {
  Sentence out;
  for (const auto& s : sentences)
    out.insert(out.end(), s.begin(), s.end());
  return out;
}

DiversityReport diversity(const Sentence& text, std::size_t hdd_sample, double mtld_threshold) {
  DiversityReport r;
  r.tokens = text.size();
  r.types = std::unordered_set<std::string>(text.begin(), text.end()).size();
  r.ttr = ttr(text);
  r.hdd = hdd(text, hdd_sample);
  r.mtld = mtld(text, mtld_threshold);
  return r;
}

std::size_t decile_of(std::string_view token, const FrequencyTable& table) {
  const auto rank = table.rank_of(token);
  if (rank < 0)
    return kNumDeciles - 1;
  return static_cast<std::size_t>(rank) * kNumDeciles / table.num_types();
}

DistributionReport distribution_report(std::span<const NamedText> texts, const FrequencyTable& table) {
  if (table.num_types() < kNumDeciles)
    throw Error("distribution report needs at least 10 token types, table has " +
                std::to_string(table.num_types()));
  DistributionReport report;
  for (std::size_t r = 0; r < table.num_types(); ++r)
    ++report.decile_sizes[r * kNumDeciles / table.num_types()];
  for (const auto& text : texts) {
    report.names.push_back(text.name);
    std::array<std::uint64_t, kNumDeciles> counts{};
    for (const auto& token : text.tokens)
      ++counts[decile_of(token, table)];
    report.counts.push_back(counts);
  }
  return report;
}

std::string DistributionReport::to_csv() const {
  std::string out = "decile,types";
  for (const auto& name : names)
    out += "," + name + "_count," + name + "_log10";
  out += "\n";
  for (std::size_t d = 0; d < kNumDeciles; ++d) {
    out += std::to_string(d + 1) + "," + std::to_string(decile_sizes[d]);
    for (const auto& c : counts) {
      out += "," + std::to_string(c[d]) + ",";
      out += fixed6(c[d] > 0 ? std::log10(static_cast<double>(c[d])) : 0.0);
    }
    out += "\n";
  }
  return out;
}

std::vector<double> interval_proportions(const Sentence& text, const FrequencyTable& table,
                                         std::span<const double> boundaries) {
  if (text.empty())
    throw Error("interval proportions of an empty text");
  const auto intervals = frequency_intervals(table, boundaries);
  std::unordered_map<std::string, std::size_t> which;
  for (std::size_t k = 0; k < intervals.size(); ++k)
    for (const auto& token : intervals[k].tokens)
      which.emplace(token, k);
  std::vector<std::uint64_t> counts(intervals.size(), 0);
  for (const auto& token : text) {
    auto it = which.find(token);
    ++counts[it == which.end() ? intervals.size() - 1 : it->second];
  }
  std::vector<double> out;
  for (auto c : counts)
    out.push_back(100.0 * static_cast<double>(c) / static_cast<double>(text.size()));
  return out;
}

}  // namespace adaptok
