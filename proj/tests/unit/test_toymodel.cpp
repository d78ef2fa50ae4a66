#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <set>

#include "adaptok/error.hpp"
#include "adaptok/toymodel.hpp"
#include "gradcheck.hpp"
#include "temp_dir.hpp"

using namespace adaptok;

namespace {

std::vector<LossConfig> model_configs(std::size_t vocab) {
  std::vector<double> w(vocab);
  for (std::size_t i = 0; i < vocab; ++i)
    w[i] = 1.0 + 0.3 * static_cast<double>(i % 5);
  auto weights = std::make_shared<const std::vector<double>>(w);
  LossConfig entropy = LossConfig::uniform();
  entropy.entropy_penalty = 0.1;
  return {LossConfig::uniform(),        LossConfig::uniform(0.1),          LossConfig::with_weights(weights),
          LossConfig::focal(1.0, false), LossConfig::focal(1.0, true, 0.1), entropy};
}

// Source and target share one vocabulary; target = source.
ParallelCorpus copy_corpus(std::size_t vocab_size, std::size_t pairs, std::uint64_t seed) {
  ZipfTaskConfig c;
  c.vocab_size = vocab_size;
  c.exponent = 0.0;
  c.pairs = pairs;
  c.seed = seed;
  const auto task = generate_zipf_task(c);
  ParallelCorpus corpus{task.train.source_vocab, task.train.source_vocab, {}};
  for (const auto& p : task.train.pairs)
    corpus.pairs.push_back({p.source, p.source});
  return corpus;
}

std::string trajectory_digest(const std::vector<EpochLog>& log) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& e : log) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f;", e.mean_loss);
    for (const char* c = buf; *c; ++c) {
      h ^= static_cast<unsigned char>(*c);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

TrainConfig pretrain_config(std::size_t steps) {
  TrainConfig tc;
  tc.max_steps = steps;
  tc.loss.label_smoothing = 0.0;
  return tc;
}

}  // namespace

TEST_CASE("forward yields normalized distributions, uniform at zero parameters") {
  const auto params = ModelParams::random(9, 7, 4, 5, 3, 0.5);
  const SentencePair pair{{4, 5, 6}, {4, 6}};
  const auto steps = forward(params, pair);
  REQUIRE(steps.size() == 3);
  CHECK(steps.back().target == Vocabulary::kEos);
  for (const auto& s : steps) {
    double sum = 0;
    for (double p : s.probabilities)
      sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  const auto zero = ModelParams::zeros(9, 7, 4, 5);
  for (const auto& s : forward(zero, pair))
    for (double p : s.probabilities)
      CHECK(p == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
  CHECK(forward(params, pair)[1].probabilities == steps[1].probabilities);
}

TEST_CASE("forward rejects invalid ids") {
  const auto params = ModelParams::zeros(6, 6, 2, 2);
  CHECK_THROWS_AS(forward(params, {{9}, {4}}), Error);
  CHECK_THROWS_AS(forward(params, {{}, {4}}), Error);
}

TEST_CASE("parameter gradients match central differences in every block") {
  const std::size_t vs = 8, vt = 7;
  const SentencePair pair{{4, 5, 6, 4, 7}, {5, 6, 4, 4, 6}};
  for (const auto& config : model_configs(vt)) {
    auto params = ModelParams::random(vs, vt, 3, 4, 99, 0.6);
    auto grads = backward(params, pair, config);
    auto gblocks = grads.blocks();
    auto pblocks = params.blocks();
    for (std::size_t b = 0; b < pblocks.size(); ++b) {
      double worst = 0;
      auto& values = *pblocks[b].values;
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double saved = values[i];
        const double h = 1e-5;
        values[i] = saved + h;
        const double up = pair_loss(params, pair, config);
        values[i] = saved - h;
        const double down = pair_loss(params, pair, config);
        values[i] = saved;
        worst = std::max(worst, relative_error((*gblocks[b].values)[i], (up - down) / (2 * h)));
      }
      INFO("block ", pblocks[b].name);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("source rows without a path receive no gradient") {
  const auto params = ModelParams::random(10, 7, 3, 4, 5, 0.5);
  const auto grads = backward(params, {{4, 5}, {4, 5, 6}}, LossConfig::uniform());
  // Rows 4, 5 and </s> (aligned after the source ends) have paths.
  for (std::size_t row : {0u, 1u, 2u, 6u, 7u, 8u, 9u})
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(grads.source_embedding[row * 3 + i] == 0.0);
  double touched = 0;
  for (std::size_t i = 0; i < 3; ++i)
    touched += std::abs(grads.source_embedding[4 * 3 + i]);
  CHECK(touched > 0);
}

TEST_CASE("all-ones static weights give the uniform gradients") {
  const auto params = ModelParams::random(8, 7, 3, 4, 8, 0.5);
  const SentencePair pair{{4, 5, 6}, {6, 5}};
  auto ones = std::make_shared<const std::vector<double>>(std::vector<double>(7, 1.0));
  CHECK(backward(params, pair, LossConfig::with_weights(ones)) == backward(params, pair, LossConfig::uniform()));
}

TEST_CASE("training is deterministic and independent of the thread count") {
  const auto corpus = copy_corpus(12, 300, 4);
  const std::vector<TrainConfig> schedule{pretrain_config(40)};
  TrainOptions one;
  one.embed_dim = one.hidden_dim = 8;
  TrainOptions three = one;
  three.threads = 3;
  const auto a = train(corpus, schedule, one);
  const auto b = train(corpus, schedule, one);
  const auto c = train(corpus, schedule, three);
  CHECK(a.params == b.params);
  CHECK(a.params == c.params);
}

TEST_CASE("schedule ordering") {
  const auto corpus = copy_corpus(12, 50, 4);
  TrainConfig ft = pretrain_config(5);
  ft.phase = Phase::finetune;
  const std::vector<TrainConfig> backwards{ft, pretrain_config(5)};
  TrainOptions options;
  options.initial = ModelParams::random(corpus.source_vocab->size(), corpus.target_vocab->size(), 32, 32, 1);
  CHECK_THROWS_AS(train(corpus, backwards, options), Error);
  const std::vector<TrainConfig> only_ft{ft};
  CHECK_THROWS_AS(train(corpus, only_ft, {}), Error);
  CHECK_NOTHROW(train(corpus, only_ft, options));
  const std::vector<TrainConfig> empty;
  CHECK_THROWS_AS(train(corpus, empty, {}), Error);
}

TEST_CASE("finetune phases use the reduced learning rate") {
  TrainConfig tc;
  tc.learning_rate = 0.4;
  tc.finetune_lr_ratio = 0.25;
  CHECK(tc.effective_learning_rate() == 0.4);
  tc.phase = Phase::finetune;
  CHECK(tc.effective_learning_rate() == 0.1);
  tc.finetune_lr_ratio = 1.5;
  CHECK_THROWS_AS(tc.validate(), Error);
}

TEST_CASE("divergence aborts with the last good parameters") {
  const auto corpus = copy_corpus(12, 64, 4);
  TrainConfig tc = pretrain_config(10);
  tc.learning_rate = 1e300;
  TempDir dir;
  TrainOptions options;
  options.embed_dim = options.hidden_dim = 4;
  options.checkpoint_prefix = (dir / "run").string();
  const std::vector<TrainConfig> schedule{tc};
  try {
    train(corpus, schedule, options);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.last_good().all_finite());
    CHECK(std::filesystem::exists(dir / "run.last_good.ckpt"));
  }
}

TEST_CASE("copy task: decreasing epoch loss, frozen trajectory, near-perfect decoding") {
  const auto corpus = copy_corpus(20, 2000, 17);
  std::vector<TrainConfig> schedule{pretrain_config(630)};
  TempDir dir;
  TrainOptions options;
  options.checkpoint_prefix = (dir / "copy").string();
  const auto result = train(corpus, schedule, options);
  REQUIRE(result.log.size() == 10);
  for (std::size_t i = 1; i < result.log.size(); ++i)
    CHECK(result.log[i].mean_loss < result.log[i - 1].mean_loss);
  CHECK(trajectory_digest(result.log) == "8699abae6f8707ca");
  CHECK(std::filesystem::exists(dir / "copy.phase0.ckpt"));

  const auto heldout = copy_corpus(20, 200, 99);
  DecodeConfig greedy;
  greedy.mode = DecodeConfig::Mode::greedy;
  std::size_t correct = 0, total = 0, exact = 0;
  for (const auto& pair : heldout.pairs) {
    const auto out = decode(result.params, pair.source, greedy);
    exact += out == pair.target;
    for (std::size_t k = 0; k < pair.target.size(); ++k)
      correct += k < out.size() && out[k] == pair.target[k];
    total += pair.target.size();
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(total) > 0.99);
  CHECK(exact >= 190);

  DecodeConfig beam1;
  beam1.beam_size = 1;
  DecodeConfig one_token = greedy;
  one_token.max_length = 1;
  for (const auto& pair : heldout.pairs) {
    CHECK(decode(result.params, pair.source, beam1) == decode(result.params, pair.source, greedy));
    CHECK(decode(result.params, pair.source, one_token).size() == 1);
  }
}

TEST_CASE("length normalizer") {
  CHECK(length_normalizer(1, 0.6) == 1.0);
  CHECK(length_normalizer(7, 0.6) == doctest::Approx(std::pow(2.0, 0.6)));
  CHECK(length_normalizer(3, 0.0) == 1.0);
}

TEST_CASE("decode configuration checks") {
  DecodeConfig c;
  c.beam_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
  const auto params = ModelParams::zeros(6, 6, 2, 2);
  const std::vector<TokenId> empty;
  CHECK_THROWS_AS(decode(params, empty, {}), Error);
}

TEST_CASE("greedy ties go to the lowest id") {
  // Zero parameters give a flat distribution; <pad> and <s> are never emitted.
  const auto zero = ModelParams::zeros(6, 6, 2, 2);
  DecodeConfig greedy;
  greedy.mode = DecodeConfig::Mode::greedy;
  greedy.max_length = 3;
  const std::vector<TokenId> src{4};
  CHECK(decode(zero, src, greedy) == std::vector<TokenId>{Vocabulary::kUnk, Vocabulary::kUnk, Vocabulary::kUnk});
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir;
  const std::vector<std::string> s{"a", "b"}, t{"x", "y", "z"};
  Checkpoint ckpt{ModelParams::random(6, 7, 3, 2, 77, 0.3), std::make_shared<const Vocabulary>(s),
                  std::make_shared<const Vocabulary>(t)};
  ckpt.params.output_bias[2] = -1.0 / 3.0;
  save_checkpoint(dir / "m.ckpt", ckpt);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.params == ckpt.params);
  CHECK(loaded.target_vocab->tokens() == ckpt.target_vocab->tokens());
  CHECK(serialize_checkpoint(loaded) == serialize_checkpoint(ckpt));
  const auto bad = dir.file("bad.ckpt", "adaptok-checkpoint 9\n");
  CHECK_THROWS_AS(load_checkpoint(bad), Error);
  const auto junk = dir.file("junk.ckpt", "hello\n");
  CHECK_THROWS_AS(load_checkpoint(junk), Error);
}

TEST_CASE("zipf generator statistics") {
  ZipfTaskConfig flat;
  flat.vocab_size = 20;
  flat.exponent = 0.0;
  flat.pairs = 1820;  // about 10k tokens
  const auto uniform = count_frequencies(generate_zipf_task(flat).train);
  REQUIRE(uniform.num_types() == 20);
  CHECK(uniform.total() >= 9000);
  CHECK(static_cast<double>(uniform.max_count()) / static_cast<double>(uniform.ranked().back().count) < 2.0);

  ZipfTaskConfig skewed;
  const auto task = generate_zipf_task(skewed);
  const auto table = count_frequencies(task.train);
  CHECK(table.max_count() >= 20 * table.median());
  CHECK(task.mapping.size() == 200);

  const auto again = generate_zipf_task(skewed);
  CHECK(again.train.pairs.size() == task.train.pairs.size());
  bool same = true;
  for (std::size_t i = 0; i < task.train.size(); ++i)
    same = same && again.train.pairs[i].source == task.train.pairs[i].source &&
           again.train.pairs[i].target == task.train.pairs[i].target;
  CHECK(same);

  for (std::size_t i = 0; i < 50; ++i) {
    const auto src = task.train.source_tokens(i);
    const auto tgt = task.train.target_tokens(i);
    REQUIRE(src.size() == tgt.size());
    CHECK(src.size() >= 3);
    CHECK(src.size() <= 8);
  }
  // Relabeling is a bijection.
  std::set<std::string> targets;
  for (const auto& [s, t] : task.mapping)
    targets.insert(t);
  CHECK(targets.size() == 200);

  ZipfTaskConfig tiny;
  tiny.vocab_size = 5;
  CHECK_THROWS_AS(generate_zipf_task(tiny), Error);
}
