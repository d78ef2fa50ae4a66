#include <doctest.h>

#include <cmath>
#include <numbers>

#include "adaptok/error.hpp"
#include "adaptok/toymodel.hpp"
#include "adaptok/weighting.hpp"
#include "temp_dir.hpp"

using namespace adaptok;
using std::numbers::e;

namespace {

FrequencyTable table_of(std::unordered_map<std::string, std::uint64_t> counts) {
  return FrequencyTable(std::move(counts));
}

FrequencyTable zipf_table() {
  ZipfTaskConfig c;
  return count_frequencies(generate_zipf_task(c).train);
}

}  // namespace

TEST_CASE("calibrated amplitudes") {
  CHECK(calibrate_amplitude(WeightForm::exponential, 0.3) == doctest::Approx(e - 1).epsilon(1e-15));
  CHECK(std::abs(calibrate_amplitude(WeightForm::chi_square, 2.0) - 12.696480824257018) < 1e-12);
  for (double T : {1e-3, 0.25, 1.0, 7.5, 100.0}) {
    const double A = calibrate_amplitude(WeightForm::chi_square, T);
    CHECK(std::isfinite(A));
    CHECK(A > 0);
    CHECK(chi_square_weight(2.0 / T, A, T) == doctest::Approx(e).epsilon(1e-12));
  }
  CHECK_THROWS_AS(calibrate_amplitude(WeightForm::chi_square, 0.0), Error);
}

TEST_CASE("exponential form values") {
  CHECK(exponential_weight(0.0, e - 1, 1.0) == e);
  CHECK(std::abs(exponential_weight(1.0, e - 1, 1.0) - 1.6321205588285577) < 1e-15);
  CHECK_THROWS_AS(exponential_weight(1.0, 0.0, 1.0), Error);
  CHECK_THROWS_AS(exponential_weight(1.0, 1.0, -1.0), Error);
  double prev = exponential_weight(0.0, e - 1, 0.7);
  for (int i = 1; i < 200; ++i) {
    const double w = exponential_weight(i * 0.05, e - 1, 0.7);
    CHECK(w < prev);
    CHECK(w > 1.0);
    prev = w;
  }
}

TEST_CASE("chi-square form has one interior maximum") {
  const double T = 1.5;
  const double A = calibrate_amplitude(WeightForm::chi_square, T);
  CHECK(chi_square_weight(0.0, A, T) == 1.0);
  double best_c = 0, best = 0;
  int turns = 0;
  double prev = chi_square_weight(0.0, A, T), prev_diff = 1;
  for (int i = 1; i <= 200000; ++i) {
    const double c = i * 1e-4;
    const double w = chi_square_weight(c, A, T);
    if (w > best) {
      best = w;
      best_c = c;
    }
    const double diff = w - prev;
    if ((diff < 0) != (prev_diff < 0))
      ++turns;
    prev = w;
    prev_diff = diff;
  }
  CHECK(turns == 1);
  CHECK(std::abs(best_c - 2.0 / T) <= 1e-4);
  CHECK(best <= e + 1e-9);
  CHECK(chi_square_weight(400.0, A, T) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("three-type exponential table") {
  const auto table = table_of({{"a", 3}, {"b", 1}, {"c", 1}});
  const auto w = build_weight_table(table, {WeightForm::exponential, 0.0, 1.0, true});
  CHECK(std::abs(w.weight("a") - 1.0855482148687487) < 1e-12);
  CHECK(std::abs(w.weight("b") - 1.6321205588285577) < 1e-12);
  CHECK(w.weight("c") == w.weight("b"));
  CHECK(std::abs(w.expectation() - 1.3041771524526723) < 1e-12);
  const auto report = validate_criteria(w);
  CHECK(report.min_ok);
  CHECK(std::abs(report.delta - 0.3041771524526723) < 1e-12);
  CHECK_FALSE(report.expectation_ok);
}

TEST_CASE("uniform table passes with zero delta") {
  const auto table = table_of({{"a", 3}, {"b", 1}});
  const auto w = build_weight_table(table, {});
  CHECK(w.weight("a") == 1.0);
  CHECK(w.weight("b") == 1.0);
  CHECK(w.weight("never-seen") == 1.0);
  const auto report = validate_criteria(w);
  CHECK(report.min_ok);
  CHECK(report.expectation_ok);
  CHECK(report.delta == 0.0);
}

TEST_CASE("linear weights") {
  const auto table = table_of({{"big", 100}, {"small", 1}});
  CHECK(weight_linear(100, table) == 0.0);
  CHECK(weight_linear(1, table) == doctest::Approx(0.99));
  const auto w = build_weight_table(table, {WeightForm::linear});
  CHECK(w.weight("big") == 0.0);
  CHECK(w.weight("small") == doctest::Approx(2.0));
  CHECK_FALSE(validate_criteria(w).min_ok);

  const auto flat = table_of({{"a", 4}, {"b", 4}});
  CHECK_THROWS_AS(build_weight_table(flat, {WeightForm::linear}), Error);

  WeightScheme occ{WeightForm::linear};
  occ.linear_normalization = LinearNormalization::occurrences;
  const auto wo = build_weight_table(table, occ);
  const double mean = (100 * wo.weight("big") + 1 * wo.weight("small")) / 101.0;
  CHECK(mean == doctest::Approx(1.0));
}

TEST_CASE("raw-count mode skips the median") {
  const auto table = table_of({{"a", 6}, {"b", 2}, {"c", 2}});
  CHECK(weight_argument(6, table, true) == 3.0);
  CHECK(weight_argument(6, table, false) == 6.0);
  const double w = weight_exponential(6, table, e - 1, 0.5, false);
  CHECK(w == doctest::Approx((e - 1) * std::exp(-3.0) + 1));
}

TEST_CASE("expectation agrees with a per-token stream mean") {
  const auto table = zipf_table();
  for (auto form : {WeightForm::exponential, WeightForm::chi_square}) {
    const auto w = build_weight_table(table, {form, 0.0, 1.25, true});
    long double sum = 0;
    std::uint64_t n = 0;
    for (const auto& entry : table.ranked())
      for (std::uint64_t k = 0; k < entry.count; ++k) {
        sum += w.weight(entry.token);
        ++n;
      }
    CHECK(std::abs(static_cast<double>(sum / n) - w.expectation()) < 1e-9);
    CHECK(w.max_weight() <= e + 1e-9);
    CHECK(w.min_weight() >= 1.0);
  }
}

TEST_CASE("larger temperature never raises the exponential expectation") {
  const auto table = zipf_table();
  double prev = INFINITY;
  for (double T = 0.1; T <= 4.0; T += 0.1) {
    const double x = build_weight_table(table, {WeightForm::exponential, 0.0, T, true}).expectation();
    CHECK(x <= prev);
    prev = x;
  }
}

TEST_CASE("temperature search") {
  const auto table = zipf_table();
  const std::vector<double> grid{0.25, 0.35, 0.5, 0.75, 1.0};
  const auto exp = search_temperature(table, WeightForm::exponential, grid);
  REQUIRE(exp.size() == 5);
  for (std::size_t i = 1; i < exp.size(); ++i)
    CHECK(exp[i - 1].delta <= exp[i].delta);
  // Larger T gives smaller delta, so ascending delta means descending T.
  for (std::size_t i = 1; i < exp.size(); ++i)
    CHECK(exp[i - 1].temperature > exp[i].temperature);
  const auto best = widest_passing(exp);
  REQUIRE(best);
  CHECK(best->pass);
  for (const auto& c : exp)
    if (c.pass)
      CHECK(c.delta <= best->delta);

  const std::vector<double> one{0.5};
  CHECK(search_temperature(table, WeightForm::exponential, one).size() == 1);
  const std::vector<double> none;
  CHECK_THROWS_AS(search_temperature(table, WeightForm::exponential, none), Error);
}

TEST_CASE("weight TSV") {
  TempDir dir;
  const auto table = table_of({{"a", 3}, {"b", 1}, {"c", 1}});
  const auto w = build_weight_table(table, {WeightForm::chi_square, 0.0, 2.0, true});
  w.save_tsv(dir / "w.tsv");
  const auto text = slurp(dir / "w.tsv");
  CHECK(text.rfind("#form=chi_square\t", 0) == 0);
  CHECK(text.find("\na\t") != std::string::npos);
  const auto once = WeightTable::load_tsv(dir / "w.tsv");
  CHECK(once.weight("a") == doctest::Approx(w.weight("a")).epsilon(1e-6));
  once.save_tsv(dir / "w2.tsv");
  const auto twice = WeightTable::load_tsv(dir / "w2.tsv");
  for (const auto& [token, value] : once.entries())
    CHECK(twice.weight(token) == value);
  CHECK(slurp(dir / "w2.tsv") == slurp(dir / "w.tsv"));
  CHECK(validate_criteria(once, table).min_ok);
  CHECK_THROWS_AS(WeightTable::parse_tsv("a\t1.0\n"), Error);
}

TEST_CASE("dense weights leave reserved ids at one") {
  const auto table = table_of({{"a", 3}, {"b", 1}});
  const std::vector<std::string> tokens{"a", "b", "c"};
  const Vocabulary vocab(tokens);
  const auto w = build_weight_table(table, {WeightForm::exponential, 0.0, 1.0, true});
  const auto dense = w.dense(vocab);
  REQUIRE(dense.size() == 7);
  for (int i = 0; i < 4; ++i)
    CHECK(dense[i] == 1.0);
  CHECK(dense[4] == w.weight("a"));
  CHECK(dense[6] == 1.0);
}
