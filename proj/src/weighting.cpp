#include "adaptok/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adaptok/error.hpp"

namespace adaptok {

namespace {

constexpr double kMinWeightTolerance = 1e-12;

std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double parse_double(const std::string& text, const std::string& name, std::size_t line) {
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size())
    throw ParseError(name, line, "bad number '" + text + "'");
  return value;
}

}  // namespace

std::string to_string(WeightForm form) {
  switch (form) {
    case WeightForm::uniform: return "uniform";
    case WeightForm::exponential: return "exponential";
    case WeightForm::chi_square: return "chi_square";
    case WeightForm::linear: return "linear";
  }
  return "unknown";
}

WeightForm parse_weight_form(std::string_view name) {
  if (name == "uniform")
    return WeightForm::uniform;
  if (name == "exponential" || name == "exp")
    return WeightForm::exponential;
  if (name == "chi_square" || name == "chi-square" || name == "chisquare" || name == "k2")
    return WeightForm::chi_square;
  if (name == "linear")
    return WeightForm::linear;
  throw Error("unknown weighting form '" + std::string(name) + "'");
}

void WeightScheme::validate() const {
  if (form == WeightForm::exponential || form == WeightForm::chi_square) {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      throw Error("temperature T must be positive");
    if (amplitude < 0.0 || !std::isfinite(amplitude))
      throw Error("amplitude A must be positive");
  }
}

double WeightScheme::effective_amplitude() const {
  if (form != WeightForm::exponential && form != WeightForm::chi_square)
    return 0.0;
  return amplitude > 0.0 ? amplitude : calibrate_amplitude(form, temperature);
}

double weight_argument(std::uint64_t count, const FrequencyTable& table, bool normalize_by_median) {
  if (!normalize_by_median)
    return static_cast<double>(count);
  if (table.median() == 0)
    throw Error("frequency table has no observed tokens (median is 0)");
  return static_cast<double>(count) / static_cast<double>(table.median());
}

double exponential_weight(double c, double amplitude, double temperature) {
  if (!(amplitude > 0.0) || !(temperature > 0.0))
    throw Error("exponential weight needs A > 0 and T > 0");
  return amplitude * std::exp(-temperature * c) + 1.0;
}

double chi_square_weight(double c, double amplitude, double temperature) {
  if (!(amplitude > 0.0) || !(temperature > 0.0))
    throw Error("chi-square weight needs A > 0 and T > 0");
  return amplitude * c * c * std::exp(-temperature * c) + 1.0;
}

double weight_exponential(std::uint64_t count, const FrequencyTable& table, double amplitude,
                          double temperature, bool normalize_by_median) {
  return exponential_weight(weight_argument(count, table, normalize_by_median), amplitude, temperature);
}

double weight_chisquare(std::uint64_t count, const FrequencyTable& table, double amplitude,
                        double temperature, bool normalize_by_median) {
  return chi_square_weight(weight_argument(count, table, normalize_by_median), amplitude, temperature);
}

double weight_linear(std::uint64_t count, const FrequencyTable& table) {
  if (table.max_count() == 0)
    throw Error("linear weighting needs at least one nonzero count");
  return 1.0 - static_cast<double>(count) / static_cast<double>(table.max_count());
}

double calibrate_amplitude(WeightForm form, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error("temperature T must be positive");
  constexpr double e = std::numbers::e;
  switch (form) {
    case WeightForm::exponential:
      return e - 1.0;
    case WeightForm::chi_square:
      // max_c c^2 exp(-T c) = 4 / (T^2 e^2), reached at c = 2 / T.
      return (e - 1.0) * temperature * temperature * e * e / 4.0;
    default:
      throw Error("amplitude calibration is defined for exponential and chi_square only");
  }
}

double WeightTable::weight(std::string_view token) const {
  auto it = weights_.find(std::string(token));
  return it == weights_.end() ? 1.0 : it->second;
}

double WeightTable::min_weight() const {
  double m = 1.0;
  for (const auto& [token, w] : ordered_)
    m = std::min(m, w);
  return ordered_.empty() ? 1.0 : m;
}

double WeightTable::max_weight() const {
  double m = 1.0;
  for (const auto& [token, w] : ordered_)
    m = std::max(m, w);
  return ordered_.empty() ? 1.0 : m;
}

std::vector<double> WeightTable::dense(const Vocabulary& vocab) const {
  std::vector<double> out(vocab.size(), 1.0);
  for (std::size_t id = Vocabulary::kNumReserved; id < vocab.size(); ++id)
    out[id] = weight(vocab.tokens()[id]);
  return out;
}

double WeightTable::expectation_over(const FrequencyTable& table) const {
  if (table.total() == 0)
    throw Error("expectation over an empty frequency table");
  double weighted = 0.0;
  for (const auto& entry : table.ranked())
    weighted += static_cast<double>(entry.count) * weight(entry.token);
  return weighted / static_cast<double>(table.total());
}

std::string WeightTable::to_tsv() const {
  std::string out = "#form=" + to_string(scheme_.form) + "\tA=" + format_g17(scheme_.amplitude) +
                    "\tT=" + format_g17(scheme_.temperature) +
                    "\tnormalize_by_median=" + (scheme_.normalize_by_median ? "1" : "0") +
                    "\texpectation=" + format_g17(expectation_) + "\n";
  for (const auto& [token, w] : ordered_)
    out += token + "\t" + format_fixed6(w) + "\n";
  return out;
}

void WeightTable::save_tsv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << to_tsv();
}

WeightTable WeightTable::parse_tsv(const std::string& text, const std::string& name) {
  WeightTable table;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    if (line[0] == '#') {
      std::istringstream fields(line.substr(1));
      std::string field;
      while (std::getline(fields, field, '\t')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos)
          throw ParseError(name, line_no, "bad header field '" + field + "'");
        const std::string key = field.substr(0, eq), value = field.substr(eq + 1);
        if (key == "form")
          table.scheme_.form = parse_weight_form(value);
        else if (key == "A")
          table.scheme_.amplitude = parse_double(value, name, line_no);
        else if (key == "T")
          table.scheme_.temperature = parse_double(value, name, line_no);
        else if (key == "normalize_by_median")
          table.scheme_.normalize_by_median = value == "1" || value == "true";
        else if (key == "expectation")
          table.expectation_ = parse_double(value, name, line_no);
      }
      have_header = true;
      continue;
    }
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw ParseError(name, line_no, "expected token<TAB>weight");
    std::string token = line.substr(0, tab);
    const double w = parse_double(line.substr(tab + 1), name, line_no);
    if (!std::isfinite(w) || w < 0.0)
      throw ParseError(name, line_no, "weight must be finite and non-negative");
    if (!table.weights_.emplace(token, w).second)
      throw ParseError(name, line_no, "duplicate token '" + token + "'");
    table.ordered_.emplace_back(std::move(token), w);
  }
  if (!have_header)
    throw ParseError(name, 1, "missing weight table header");
  return table;
}

WeightTable WeightTable::load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_tsv(buffer.str(), path.string());
}

WeightTable build_weight_table(const FrequencyTable& table, const WeightScheme& scheme) {
  scheme.validate();
  if (table.empty())
    throw Error("cannot build weights from an empty frequency table");
  WeightTable out;
  out.scheme_ = scheme;
  const auto& ranked = table.ranked();
  std::vector<double> w(ranked.size(), 1.0);

  switch (scheme.form) {
    case WeightForm::uniform:
      out.scheme_.amplitude = 0.0;
      break;
    case WeightForm::exponential:
    case WeightForm::chi_square: {
      const double a = scheme.effective_amplitude();
      out.scheme_.amplitude = a;
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        const double c = weight_argument(ranked[i].count, table, scheme.normalize_by_median);
        w[i] = scheme.form == WeightForm::exponential ? exponential_weight(c, a, scheme.temperature)
                                                      : chi_square_weight(c, a, scheme.temperature);
      }
      break;
    }
    case WeightForm::linear: {
      double type_sum = 0.0, occurrence_sum = 0.0;
      for (std::size_t i = 0; i < ranked.size(); ++i) {
        w[i] = weight_linear(ranked[i].count, table);
        type_sum += w[i];
        occurrence_sum += w[i] * static_cast<double>(ranked[i].count);
      }
      const double mean = scheme.linear_normalization == LinearNormalization::types
                              ? type_sum / static_cast<double>(ranked.size())
                              : occurrence_sum / static_cast<double>(table.total());
      if (!(mean > 0.0))
        throw Error("linear weights are all zero (every type has the maximal count); "
                    "normalization is undefined");
      for (double& x : w)
        x /= mean;
      out.scheme_.amplitude = 0.0;
      break;
    }
  }

  out.ordered_.reserve(ranked.size());
  out.weights_.reserve(ranked.size());
  double weighted = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    out.ordered_.emplace_back(ranked[i].token, w[i]);
    out.weights_.emplace(ranked[i].token, w[i]);
    weighted += static_cast<double>(ranked[i].count) * w[i];
  }
  out.expectation_ = weighted / static_cast<double>(table.total());
  return out;
}

CriteriaReport validate_criteria(const WeightTable& weights, double delta_max) {
  CriteriaReport r;
  r.min_weight = weights.min_weight();
  r.min_ok = r.min_weight >= 1.0 - kMinWeightTolerance;
  r.expectation = weights.expectation();
  r.delta = r.expectation - 1.0;
  r.expectation_ok = r.delta >= 0.0 && r.delta <= delta_max;
  return r;
}

CriteriaReport validate_criteria(const WeightTable& weights, const FrequencyTable& table, double delta_max) {
  CriteriaReport r;
  r.min_weight = weights.min_weight();
  r.min_ok = r.min_weight >= 1.0 - kMinWeightTolerance;
  r.expectation = weights.expectation_over(table);
  r.delta = r.expectation - 1.0;
  r.expectation_ok = r.delta >= 0.0 && r.delta <= delta_max;
  return r;
}

std::vector<TemperatureCandidate> search_temperature(const FrequencyTable& table, WeightForm form,
                                                     std::span<const double> grid, double delta_max,
                                                     bool normalize_by_median) {
  if (grid.empty())
    throw Error("temperature grid is empty");
  if (form != WeightForm::exponential && form != WeightForm::chi_square)
    throw Error("temperature search applies to exponential and chi_square forms");
  std::vector<TemperatureCandidate> out;
  for (double t : grid) {
    WeightScheme scheme{form, calibrate_amplitude(form, t), t, normalize_by_median};
    const auto weights = build_weight_table(table, scheme);
    const auto report = validate_criteria(weights, delta_max);
    out.push_back({t, scheme.amplitude, report.delta, report.min_ok, report.min_ok && report.expectation_ok});
  }
  std::stable_sort(out.begin(), out.end(), [](const TemperatureCandidate& a, const TemperatureCandidate& b) {
    if (a.delta != b.delta)
      return a.delta < b.delta;
    return a.temperature < b.temperature;
  });
  return out;
}

std::optional<TemperatureCandidate> widest_passing(std::span<const TemperatureCandidate> candidates) {
  std::optional<TemperatureCandidate> best;
  for (const auto& c : candidates)
    if (c.pass && (!best || c.delta > best->delta))
      best = c;
  return best;
}

}  // namespace adaptok
