#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "adaptok/corpus.hpp"
#include "adaptok/error.hpp"
#include "temp_dir.hpp"

using namespace adaptok;

namespace {

std::vector<Sentence> sentences(std::initializer_list<const char*> lines) {
  std::vector<Sentence> out;
  for (const char* l : lines)
    out.push_back(split_tokens(l));
  return out;
}

}  // namespace

TEST_CASE("vocabulary reserves the first four ids") {
  const Vocabulary v;
  CHECK(v.size() == 4);
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kUnk) == "<unk>");
  CHECK(v.token(Vocabulary::kBos) == "<s>");
  CHECK(v.token(Vocabulary::kEos) == "</s>");
}

TEST_CASE("vocabulary lookup and token are inverse on regular entries") {
  const std::vector<std::string> tokens{"x", "y", "z", "x"};
  const Vocabulary v(tokens);
  CHECK(v.size() == 7);
  for (TokenId id = Vocabulary::kNumReserved; id < static_cast<TokenId>(v.size()); ++id)
    CHECK(v.lookup(v.token(id)) == id);
  CHECK(v.lookup("missing") == Vocabulary::kUnk);
  CHECK_THROWS_AS(v.token(99), Error);
}

TEST_CASE("vocabulary from sentences orders by count then string") {
  const auto v = Vocabulary::from_sentences(sentences({"b c c", "a c b"}));
  CHECK(v.token(4) == "c");
  CHECK(v.token(5) == "b");
  CHECK(v.token(6) == "a");
}

TEST_CASE("load_corpus aligns lines and maps unknown tokens") {
  TempDir dir;
  const auto src = dir.file("s.txt", "a b\n");
  const auto tgt = dir.file("t.txt", "x\n");
  const std::vector<std::string> sv{"a", "b"}, tv{"x"};
  auto svocab = std::make_shared<const Vocabulary>(sv);
  auto tvocab = std::make_shared<const Vocabulary>(tv);
  const auto corpus = load_corpus(src, tgt, svocab, tvocab);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus.source_tokens(0) == Sentence{"a", "b"});
  CHECK(corpus.target_tokens(0) == Sentence{"x"});

  const auto oov = dir.file("oov.txt", "a q\n");
  const auto with_oov = load_corpus(oov, tgt, svocab, tvocab);
  CHECK(with_oov.pairs[0].source[1] == Vocabulary::kUnk);
}

TEST_CASE("load_corpus rejects mismatched line counts") {
  TempDir dir;
  const auto src = dir.file("s.txt", "a\nb\nc\n");
  const auto tgt = dir.file("t.txt", "x\ny\n");
  CHECK_THROWS_AS(load_corpus(src, tgt), ParseError);
}

TEST_CASE("read_sentences reports the offending line") {
  TempDir dir;
  SUBCASE("empty line") {
    const auto p = dir.file("e.txt", "a b\n\nc\n");
    try {
      read_sentences(p);
      FAIL("expected an error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("invalid utf-8") {
    const auto p = dir.file("u.txt", "ok\nbad \xff\xfe\n");
    try {
      read_sentences(p);
      FAIL("expected an error");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("double space") {
    const auto p = dir.file("d.txt", "a  b\n");
    CHECK_THROWS_AS(read_sentences(p), ParseError);
  }
  SUBCASE("crlf is tolerated") {
    const auto p = dir.file("c.txt", "a b\r\nc\r\n");
    CHECK(read_sentences(p) == sentences({"a b", "c"}));
  }
}

TEST_CASE("utf-8 validation") {
  CHECK(is_valid_utf8("plain"));
  CHECK(is_valid_utf8("\xe4\xb8\xad\xe6\x96\x87"));
  CHECK_FALSE(is_valid_utf8("\xc0\xaf"));
  CHECK_FALSE(is_valid_utf8("\xe4\xb8"));
}

TEST_CASE("count_frequencies on a hand-counted corpus") {
  const auto table = count_frequencies(sentences({"a a b", "a c"}));
  CHECK(table.count("a") == 3);
  CHECK(table.count("b") == 1);
  CHECK(table.count("c") == 1);
  CHECK(table.count("zz") == 0);
  CHECK(table.total() == 5);
  CHECK(table.median() == 1);
  CHECK(table.rank_of("a") == 0);
  CHECK(table.rank_of("b") == 1);
  CHECK(table.rank_of("c") == 2);
  CHECK(table.rank_of("zz") == -1);
}

TEST_CASE("single-token corpus") {
  const auto table = count_frequencies(sentences({"a"}));
  CHECK(table.count("a") == 1);
  CHECK(table.median() == 1);
}

TEST_CASE("even type count takes the lower middle median") {
  const auto table = count_frequencies(sentences({"a a a a b b b c c d"}));
  CHECK(table.median() == 2);
}

TEST_CASE("empty corpus is an error") {
  const std::vector<Sentence> none;
  CHECK_THROWS_AS(count_frequencies(none), Error);
}

TEST_CASE("counting conserves tokens and ignores sentence order and thread count") {
  std::mt19937_64 rng(5);
  std::vector<Sentence> corpus;
  std::size_t tokens = 0;
  for (int i = 0; i < 300; ++i) {
    Sentence s;
    const int len = 1 + static_cast<int>(rng() % 7);
    for (int k = 0; k < len; ++k)
      s.push_back("t" + std::to_string(rng() % 40));
    tokens += s.size();
    corpus.push_back(s);
  }
  const auto base = count_frequencies(corpus);
  CHECK(base.total() == tokens);
  std::uint64_t sum = 0;
  for (const auto& e : base.ranked())
    sum += e.count;
  CHECK(sum == tokens);

  auto shuffled = corpus;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(count_frequencies(shuffled) == base);
  CHECK(count_frequencies(corpus, 4) == base);
  CHECK(count_frequencies(corpus, 4).to_tsv() == base.to_tsv());
}

TEST_CASE("ranking is count descending then string ascending") {
  const auto table = count_frequencies(sentences({"b a c c", "d d"}));
  const auto& r = table.ranked();
  REQUIRE(r.size() == 4);
  CHECK(r[0].token == "c");
  CHECK(r[1].token == "d");
  CHECK(r[2].token == "a");
  CHECK(r[3].token == "b");
}

TEST_CASE("corpus frequencies skip reserved ids") {
  const std::vector<std::string> tv{"x", "y"};
  auto vocab = std::make_shared<const Vocabulary>(tv);
  ParallelCorpus corpus{vocab, vocab, {{{4}, {4, 5, Vocabulary::kUnk}}}};
  const auto table = count_frequencies(corpus);
  CHECK(table.total() == 2);
  CHECK(table.count("<unk>") == 0);
}

TEST_CASE("frequency TSV round trip") {
  TempDir dir;
  const auto table = count_frequencies(sentences({"a a b", "a c", "d"}));
  table.save_tsv(dir / "f.tsv");
  CHECK(slurp(dir / "f.tsv") == "a\t3\nb\t1\nc\t1\nd\t1\n");
  CHECK(FrequencyTable::load_tsv(dir / "f.tsv") == table);
  const auto bad = dir.file("bad.tsv", "a\tx\n");
  CHECK_THROWS_AS(FrequencyTable::load_tsv(bad), ParseError);
  const auto dup = dir.file("dup.tsv", "a\t1\na\t2\n");
  CHECK_THROWS_AS(FrequencyTable::load_tsv(dup), ParseError);
}

TEST_CASE("frequency intervals by rank percentile") {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (int c = 1; c <= 10; ++c)
    counts["t" + std::to_string(c)] = static_cast<std::uint64_t>(c);
  const FrequencyTable table(counts);

  const std::vector<double> halves{50, 100};
  const auto iv = frequency_intervals(table, halves);
  REQUIRE(iv.size() == 2);
  CHECK(iv[0].tokens.size() == 5);
  CHECK(iv[0].average_count == doctest::Approx(8.0));
  CHECK(iv[1].average_count == doctest::Approx(3.0));

  const std::vector<double> all{100};
  const auto one = frequency_intervals(table, all);
  REQUIRE(one.size() == 1);
  CHECK(one[0].tokens.size() == 10);
  CHECK(one[0].average_count == doctest::Approx(55.0 / 10.0));

  const std::vector<double> bad{30, 10};
  CHECK_THROWS_AS(frequency_intervals(table, bad), Error);
  const std::vector<double> none;
  CHECK_THROWS_AS(frequency_intervals(table, none), Error);
}

TEST_CASE("every type falls in exactly one interval") {
  std::unordered_map<std::string, std::uint64_t> counts;
  for (int c = 1; c <= 37; ++c)
    counts["t" + std::to_string(c)] = static_cast<std::uint64_t>(c * 3 % 11 + 1);
  const FrequencyTable table(counts);
  const std::vector<double> bounds{10, 30, 50, 70, 100};
  std::size_t covered = 0;
  std::uint64_t mass = 0;
  for (const auto& iv : frequency_intervals(table, bounds)) {
    covered += iv.tokens.size();
    mass += iv.total_count;
  }
  CHECK(covered == 37);
  CHECK(mass == table.total());
}
