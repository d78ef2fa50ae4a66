#include <doctest.h>

#include "adaptok/error.hpp"
#include "adaptok/kvconfig.hpp"

using namespace adaptok;

TEST_CASE("key value parsing") {
  const auto kv = KeyValueConfig::parse("# header\n a = 1 \n\nb=two words # trailing\nflag = yes\n", "x.cfg");
  CHECK(kv.get_uint("a", 0) == 1);
  CHECK(kv.get_string("b", "") == "two words");
  CHECK(kv.get_bool("flag", false));
  CHECK(kv.get_double("missing", 2.5) == 2.5);
  CHECK_NOTHROW(kv.check_all_used());
}

TEST_CASE("key value errors carry the line") {
  try {
    KeyValueConfig::parse("a = 1\nb = 2\na = 3\n", "dup.cfg");
    FAIL("expected a duplicate-key error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
    CHECK(std::string(e.what()).find("duplicate key 'a'") != std::string::npos);
  }
  CHECK_THROWS_AS(KeyValueConfig::parse("just words\n"), ParseError);
  CHECK_THROWS_AS(KeyValueConfig::parse(" = v\n"), ParseError);

  const auto kv = KeyValueConfig::parse("n = 1.5x\nu = -3\nb = maybe\nextra = 1\n", "bad.cfg");
  CHECK_THROWS_AS(kv.get_double("n", 0), ParseError);
  CHECK_THROWS_AS(kv.get_uint("u", 0), ParseError);
  CHECK_THROWS_AS(kv.get_bool("b", false), ParseError);
  try {
    kv.check_all_used();
    FAIL("expected an unknown-key error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
  }
  CHECK_THROWS_AS(kv.require("absent"), Error);
}

TEST_CASE("train config with a two phase schedule") {
  const auto kv = KeyValueConfig::parse(
      "source = data/train.src\n"
      "target = /abs/train.tgt\n"
      "schedule = pretrain, finetune_exp\n"
      "model.embed_dim = 8\n"
      "pretrain.max_steps = 50\n"
      "finetune_exp.loss.weighting = exponential\n"
      "finetune_exp.loss.T = 0.75\n"
      "finetune_exp.data_mode = rare_subset\n"
      "decode.mode = greedy\n");
  const auto run = parse_train_config(kv, "/base", 9, 2);
  CHECK(run.source == std::filesystem::path("/base/data/train.src"));
  CHECK(run.target == std::filesystem::path("/abs/train.tgt"));
  CHECK(run.threads == 2);
  CHECK(run.embed_dim == 8);
  CHECK(run.init_seed == 9);
  REQUIRE(run.schedule.size() == 2);
  CHECK(run.schedule[0].phase == Phase::pretrain);
  CHECK(run.schedule[0].max_steps == 50);
  CHECK(run.schedule[0].loss.kind == LossSpec::Kind::uniform);
  CHECK(run.schedule[1].phase == Phase::finetune);
  CHECK(run.schedule[1].loss.kind == LossSpec::Kind::exponential);
  CHECK(run.schedule[1].loss.temperature == 0.75);
  CHECK(run.schedule[1].data_mode == DataMode::rare_subset);
  CHECK(run.schedule[1].seed == 9);
  CHECK(run.decode.mode == DecodeConfig::Mode::greedy);
}

TEST_CASE("rendered train config parses back to the same run") {
  const auto kv = KeyValueConfig::parse(
      "source = a.src\ntarget = a.tgt\nschedule = pretrain,finetune\n"
      "finetune.loss.weighting = chi_square\nfinetune.loss.T = 5\nfinetune.loss.entropy_penalty = 0.2\n"
      "finetune.loss.entropy_term = target\nfinetune.learning_rate = 0.3\n");
  const auto run = parse_train_config(kv, "/d");
  const auto again = parse_train_config(KeyValueConfig::parse(run.render()), "/elsewhere");
  CHECK(again.render() == run.render());
  CHECK(again.schedule[1].loss.entropy_term == EntropyTerm::target_only);
  CHECK(again.schedule[1].loss.entropy_penalty == 0.2);
}

TEST_CASE("train config rejects bad values and unknown keys") {
  auto parse = [](const std::string& extra) {
    return parse_train_config(KeyValueConfig::parse("source = s\ntarget = t\n" + extra), "/d");
  };
  CHECK_THROWS_AS(parse("pretrain.learning_rat = 0.1\n"), ParseError);
  CHECK_THROWS_AS(parse("pretrain.loss.weighting = cubic\n"), Error);
  CHECK_THROWS_AS(parse("pretrain.batch_size = 0\n"), Error);
  CHECK_THROWS_AS(parse("threads = 0\n"), Error);
  CHECK_THROWS_AS(parse("decode.mode = sample\n"), Error);
  CHECK_THROWS_AS(parse("validation.source = v\n"), Error);
  CHECK_THROWS_AS(parse("schedule = ,\n"), Error);
  CHECK_THROWS_AS(parse_train_config(KeyValueConfig::parse("target = t\n"), "/d"), Error);
}
