#include "adaptok/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "adaptok/bpe.hpp"
#include "adaptok/corpus.hpp"
#include "adaptok/error.hpp"
#include "adaptok/fixture.hpp"
#include "adaptok/kvconfig.hpp"
#include "adaptok/metrics.hpp"
#include "adaptok/rarity.hpp"
#include "adaptok/toymodel.hpp"
#include "adaptok/weighting.hpp"

namespace adaptok::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string version() { return ADAPTOK_VERSION; }

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << text;
  if (!out)
    throw Error("write failed for " + path.string());
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::uint64_t seed = 17;
  unsigned threads = 1;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  fs::path manifest_at;  // empty: no file output, no manifest

  void input(const fs::path& p) { inputs.push_back(p); }
  void output(const fs::path& p) {
    outputs.push_back(p);
    if (manifest_at.empty())
      manifest_at = p;
  }
  void manifest_next_to(const fs::path& p) { manifest_at = p; }
};

using Handler = std::function<void(Context&)>;

struct Registry {
  std::map<const CLI::App*, Handler> handlers;
};

// ------------------------------------------------------------ freq-analyze

void add_freq_analyze(CLI::App& app, Registry& reg) {
  auto* sub = app.add_subcommand("freq-analyze", "Count target-token frequencies");
  auto input = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto intervals = std::make_shared<std::vector<double>>(std::vector<double>{10, 30, 50, 70, 100});
  sub->add_option("--input", *input, "Tokenized corpus, one sentence per line")->required();
  sub->add_option("--out", *out, "Frequency TSV to write")->required();
  sub->add_option("--intervals", *intervals, "Rank-percentile interval upper bounds")->delimiter(',');
  reg.handlers[sub] = [=](Context& ctx) {
    ctx.input(*input);
    const auto sentences = read_sentences(*input);
    const auto table = count_frequencies(sentences, ctx.threads);
    table.save_tsv(*out);
    ctx.output(*out);
    ctx.out << "types=" << table.num_types() << " tokens=" << table.total() << " median=" << table.median()
            << " max=" << table.max_count() << "\n";
    ctx.out << "interval\ttypes\ttokens\tpercent\taverage\n";
    for (const auto& iv : frequency_intervals(table, *intervals)) {
      const double pct = 100.0 * static_cast<double>(iv.total_count) / static_cast<double>(table.total());
      ctx.out << fixed2(iv.lower_percent) << "-" << fixed2(iv.upper_percent) << "\t" << iv.tokens.size() << "\t"
              << iv.total_count << "\t" << fixed6(pct) << "\t" << fixed6(iv.average_count) << "\n";
    }
  };
}

// ------------------------------------------------------------------- bpe

void add_bpe(CLI::App& app, Registry& reg) {
  {
    auto* sub = app.add_subcommand("bpe-learn", "Learn BPE merges");
    auto input = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto merges = std::make_shared<std::size_t>(0);
    sub->add_option("--input", *input, "Training text")->required();
    sub->add_option("--merges", *merges, "Number of merge operations")->required();
    sub->add_option("--out", *out, "Merges file to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*input);
      const auto list = bpe::learn_merges(bpe::word_counts(read_sentences(*input)), *merges);
      list.save(*out);
      ctx.output(*out);
      ctx.out << "learned=" << list.size() << " requested=" << *merges << "\n";
    };
  }
  {
    auto* sub = app.add_subcommand("bpe-apply", "Segment text with learned merges");
    auto merges = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--merges", *merges, "Merges file")->required();
    sub->add_option("--input", *input, "Text to segment")->required();
    sub->add_option("--out", *out, "Segmented text to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*merges);
      ctx.input(*input);
      const bpe::Encoder encoder(bpe::MergeList::load(*merges));
      std::vector<Sentence> segmented;
      std::uint64_t tokens = 0;
      for (const auto& s : read_sentences(*input)) {
        segmented.push_back(encoder.apply(s));
        tokens += segmented.back().size();
      }
      write_sentences(*out, segmented);
      ctx.output(*out);
      ctx.out << "sentences=" << segmented.size() << " subwords=" << tokens << "\n";
    };
  }
}

// --------------------------------------------------------------- weights

void print_criteria(std::ostream& out, const CriteriaReport& r) {
  out << "min_ok=" << (r.min_ok ? "true" : "false") << " delta=" << fixed6(r.delta)
      << " expectation_ok=" << (r.expectation_ok ? "true" : "false") << " expectation=" << fixed6(r.expectation)
      << " min_weight=" << fixed6(r.min_weight) << "\n";
}

void add_weights(CLI::App& app, Registry& reg) {
  {
    auto* sub = app.add_subcommand("weights", "Build a token weight table");
    auto freq = std::make_shared<std::string>();
    auto form = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto T = std::make_shared<double>(1.0);
    auto A = std::make_shared<double>(0.0);
    auto delta_max = std::make_shared<double>(kDefaultDeltaMax);
    auto raw = std::make_shared<bool>(false);
    auto linear_occ = std::make_shared<bool>(false);
    sub->add_option("--freq", *freq, "Frequency TSV")->required();
    sub->add_option("--form", *form, "uniform | exponential | chi_square | linear")->required();
    sub->add_option("--T", *T, "Temperature");
    sub->add_option("--A", *A, "Amplitude (0 calibrates to the range [1, e])");
    sub->add_option("--delta-max", *delta_max, "Upper bound on the expectation excess");
    sub->add_flag("--raw-counts", *raw, "Use raw counts instead of count / median");
    sub->add_flag("--linear-occurrence-mean", *linear_occ, "Normalize linear weights over occurrences");
    sub->add_option("--out", *out, "Weight TSV to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*freq);
      const auto table = FrequencyTable::load_tsv(*freq);
      WeightScheme scheme{parse_weight_form(*form), *A, *T, !*raw,
                          *linear_occ ? LinearNormalization::occurrences : LinearNormalization::types};
      const auto weights = build_weight_table(table, scheme);
      weights.save_tsv(*out);
      ctx.output(*out);
      print_criteria(ctx.out, validate_criteria(weights, *delta_max));
    };
  }
  {
    auto* sub = app.add_subcommand("validate-criteria", "Check the minimum-weight and expectation criteria");
    auto weights_path = std::make_shared<std::string>();
    auto freq = std::make_shared<std::string>();
    auto delta_max = std::make_shared<double>(kDefaultDeltaMax);
    sub->add_option("--weights", *weights_path, "Weight TSV")->required();
    sub->add_option("--freq", *freq, "Frequency TSV the expectation is taken over")->required();
    sub->add_option("--delta-max", *delta_max, "Upper bound on the expectation excess");
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*weights_path);
      ctx.input(*freq);
      const auto weights = WeightTable::load_tsv(*weights_path);
      const auto table = FrequencyTable::load_tsv(*freq);
      print_criteria(ctx.out, validate_criteria(weights, table, *delta_max));
    };
  }
  {
    auto* sub = app.add_subcommand("search-T", "Evaluate the criteria over a temperature grid");
    auto freq = std::make_shared<std::string>();
    auto form = std::make_shared<std::string>();
    auto grid = std::make_shared<std::vector<double>>(
        std::vector<double>{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0});
    auto delta_max = std::make_shared<double>(kDefaultDeltaMax);
    auto raw = std::make_shared<bool>(false);
    sub->add_option("--freq", *freq, "Frequency TSV")->required();
    sub->add_option("--form", *form, "exponential | chi_square")->required();
    sub->add_option("--grid", *grid, "Comma-separated temperatures")->delimiter(',');
    sub->add_option("--delta-max", *delta_max, "Upper bound on the expectation excess");
    sub->add_flag("--raw-counts", *raw, "Use raw counts instead of count / median");
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*freq);
      const auto table = FrequencyTable::load_tsv(*freq);
      const auto candidates = search_temperature(table, parse_weight_form(*form), *grid, *delta_max, !*raw);
      ctx.out << "T\tA\tdelta\tmin_ok\tpass\n";
      for (const auto& c : candidates)
        ctx.out << fixed2(c.temperature) << "\t" << fixed6(c.amplitude) << "\t" << fixed6(c.delta) << "\t"
                << (c.min_ok ? "true" : "false") << "\t" << (c.pass ? "true" : "false") << "\n";
    };
  }
}

// ---------------------------------------------------------------- rarity

void add_rarity(CLI::App& app, Registry& reg) {
  auto* sub = app.add_subcommand("rarity-split", "Score sentence rarity and split or resample a corpus");
  auto input = std::make_shared<std::vector<std::string>>();
  auto freq = std::make_shared<std::string>();
  auto mode = std::make_shared<std::string>();
  auto fraction = std::make_shared<double>(1.0 / 3.0);
  auto factor = std::make_shared<int>(3);
  auto prefix = std::make_shared<std::string>();
  sub->add_option("--input", *input, "Source and target files: src,tgt")->required()->delimiter(',')->expected(2);
  sub->add_option("--freq", *freq, "Training frequency TSV")->required();
  sub->add_option("--mode", *mode, "thirds | subset | oversample")
      ->required()
      ->check(CLI::IsMember({"thirds", "subset", "oversample"}));
  sub->add_option("--fraction", *fraction, "Rare fraction for subset and oversample");
  sub->add_option("--factor", *factor, "Repetitions of the rare subset");
  sub->add_option("--out-prefix", *prefix, "Prefix for the written files")->required();
  reg.handlers[sub] = [=](Context& ctx) {
    const std::string& src = (*input)[0];
    const std::string& tgt = (*input)[1];
    ctx.input(src);
    ctx.input(tgt);
    ctx.input(*freq);
    const auto corpus = load_corpus(src, tgt);
    const auto table = FrequencyTable::load_tsv(*freq);
    auto write_pair = [&](const std::string& stem, const std::vector<std::size_t>& indices) {
      std::vector<Sentence> s, t;
      for (std::size_t i : indices) {
        s.push_back(corpus.source_tokens(i));
        t.push_back(corpus.target_tokens(i));
      }
      write_sentences(stem + ".src", s);
      write_sentences(stem + ".tgt", t);
      ctx.outputs.push_back(stem + ".src");
      ctx.outputs.push_back(stem + ".tgt");
    };
    const auto scores = score_corpus(corpus, table);
    std::vector<std::string> bucket(corpus.size());
    if (*mode == "thirds") {
      const auto strata = stratify(corpus, table);
      for (Stratum s : {Stratum::high, Stratum::middle, Stratum::low}) {
        std::string stem = to_string(s);
        std::transform(stem.begin(), stem.end(), stem.begin(), [](unsigned char ch) { return std::tolower(ch); });
        write_pair(*prefix + "." + stem, strata.indices(s));
        for (std::size_t i : strata.indices(s))
          bucket[i] = to_string(s);
      }
      ctx.out << "high=" << strata.high.size() << " middle=" << strata.middle.size()
              << " low=" << strata.low.size() << "\n";
    } else {
      const auto rare = rare_subset_indices(corpus, table, *fraction);
      std::fill(bucket.begin(), bucket.end(), "rest");
      for (std::size_t i : rare)
        bucket[i] = "rare";
      if (*mode == "subset") {
        write_pair(*prefix, rare);
        ctx.out << "selected=" << rare.size() << " of " << corpus.size() << "\n";
      } else {
        if (*factor < 1)
          throw Error("--factor must be >= 1");
        std::vector<std::size_t> order;
        for (int k = 0; k < *factor; ++k)
          order.insert(order.end(), rare.begin(), rare.end());
        for (std::size_t i = 0; i < corpus.size(); ++i)
          if (bucket[i] == "rest")
            order.push_back(i);
        write_pair(*prefix, order);
        ctx.out << "rare=" << rare.size() << " factor=" << *factor << " output=" << order.size() << "\n";
      }
    }
    std::string tsv = "index\trarity\tbucket\n";
    for (std::size_t i = 0; i < corpus.size(); ++i)
      tsv += std::to_string(i) + "\t" + fixed6(scores[i].value) + "\t" + bucket[i] + "\n";
    write_text(*prefix + ".rarity.tsv", tsv);
    ctx.outputs.push_back(*prefix + ".rarity.tsv");
    ctx.manifest_next_to(*prefix);
  };
}

// -------------------------------------------------------------- gen-zipf

void add_gen_zipf(CLI::App& app, Registry& reg) {
  auto* sub = app.add_subcommand("gen-zipf", "Generate a synthetic Zipf lexical-translation corpus");
  auto cfg = std::make_shared<ZipfTaskConfig>();
  auto prefix = std::make_shared<std::string>();
  sub->add_option("--vocab", cfg->vocab_size, "Number of token types");
  sub->add_option("--exponent", cfg->exponent, "Zipf exponent");
  sub->add_option("--pairs", cfg->pairs, "Training pairs");
  sub->add_option("--min-length", cfg->min_length, "Shortest sentence");
  sub->add_option("--max-length", cfg->max_length, "Longest sentence");
  sub->add_option("--heldout", cfg->heldout_pairs, "Held-out pairs written as <prefix>.test.*");
  sub->add_option("--out-prefix", *prefix, "Prefix for the written files")->required();
  reg.handlers[sub] = [=](Context& ctx) {
    ZipfTaskConfig c = *cfg;
    c.seed = ctx.seed;
    const auto task = generate_zipf_task(c);
    auto write_corpus = [&](const ParallelCorpus& corpus, const std::string& stem) {
      std::vector<Sentence> s, t;
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        s.push_back(corpus.source_tokens(i));
        t.push_back(corpus.target_tokens(i));
      }
      write_sentences(stem + ".src", s);
      write_sentences(stem + ".tgt", t);
      ctx.outputs.push_back(stem + ".src");
      ctx.outputs.push_back(stem + ".tgt");
    };
    write_corpus(task.train, *prefix);
    if (c.heldout_pairs > 0)
      write_corpus(task.heldout, *prefix + ".test");
    std::string mapping;
    for (const auto& [s, t] : task.mapping)
      mapping += s + "\t" + t + "\n";
    write_text(*prefix + ".mapping.tsv", mapping);
    ctx.outputs.push_back(*prefix + ".mapping.tsv");
    ctx.manifest_next_to(*prefix);
    ctx.out << "pairs=" << task.train.size() << " heldout=" << task.heldout.size() << " vocab=" << c.vocab_size
            << "\n";
  };
}

// ------------------------------------------------------- train/translate

void add_train(CLI::App& app, Registry& reg) {
  {
    auto* sub = app.add_subcommand("train", "Train the toy translation model from a config file");
    auto config = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--config", *config, "key = value training config")->required();
    sub->add_option("--out", *out, "Checkpoint to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*config);
      const auto kv = KeyValueConfig::load(*config);
      const auto run = parse_train_config(kv, fs::path(*config).parent_path(), ctx.seed, ctx.threads);
      ctx.input(run.source);
      ctx.input(run.target);
      const auto corpus = load_corpus(run.source, run.target);
      std::optional<ParallelCorpus> validation;
      if (!run.validation_source.empty()) {
        ctx.input(run.validation_source);
        ctx.input(run.validation_target);
        validation = load_corpus(run.validation_source, run.validation_target, corpus.source_vocab,
                                 corpus.target_vocab);
      }
      for (const auto& tc : run.schedule)
        if (!tc.loss.weights_file.empty())
          ctx.input(tc.loss.weights_file);
      TrainOptions options;
      options.embed_dim = run.embed_dim;
      options.hidden_dim = run.hidden_dim;
      options.init_scale = run.init_scale;
      options.init_seed = run.init_seed;
      options.threads = run.threads;
      options.checkpoint_prefix = *out;
      options.validation = validation ? &*validation : nullptr;
      const auto result = train(corpus, run.schedule, options);
      save_checkpoint(*out, {result.params, corpus.source_vocab, corpus.target_vocab});
      ctx.output(*out);
      for (std::size_t p = 0; p < run.schedule.size(); ++p)
        ctx.outputs.push_back(*out + ".phase" + std::to_string(p) + ".ckpt");
      std::string log = "phase\tname\tepoch\tsteps\tmean_loss\tvalidation_loss\n";
      for (const auto& e : result.log)
        log += std::to_string(e.phase) + "\t" + run.phase_names[e.phase] + "\t" + std::to_string(e.epoch) + "\t" +
               std::to_string(e.steps) + "\t" + fixed6(e.mean_loss) + "\t" +
               (e.validation_loss ? fixed6(*e.validation_loss) : std::string("-")) + "\n";
      write_text(*out + ".log.tsv", log);
      ctx.outputs.push_back(*out + ".log.tsv");
      write_text(*out + ".config", run.render());
      ctx.outputs.push_back(*out + ".config");
      ctx.out << log;
    };
  }
  {
    auto* sub = app.add_subcommand("translate", "Decode a source file with a checkpoint");
    auto ckpt = std::make_shared<std::string>();
    auto input = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    auto cfg = std::make_shared<DecodeConfig>();
    auto greedy = std::make_shared<bool>(false);
    sub->add_option("--ckpt", *ckpt, "Checkpoint")->required();
    sub->add_option("--input", *input, "Source sentences")->required();
    sub->add_option("--beam", cfg->beam_size, "Beam size");
    sub->add_option("--lenpen", cfg->length_penalty, "Length penalty exponent");
    sub->add_option("--max-length", cfg->max_length, "Maximum output length");
    sub->add_flag("--greedy", *greedy, "Greedy argmax decoding");
    sub->add_option("--out", *out, "Translations to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*ckpt);
      ctx.input(*input);
      const auto checkpoint = load_checkpoint(*ckpt);
      DecodeConfig c = *cfg;
      c.mode = *greedy ? DecodeConfig::Mode::greedy : DecodeConfig::Mode::beam;
      const auto sources = read_sentences(*input);
      std::vector<Sentence> targets(sources.size());
      ParallelCorpus shell{checkpoint.source_vocab, checkpoint.target_vocab, {}};
      for (const auto& s : sources)
        shell.pairs.push_back({checkpoint.source_vocab->encode(s), {Vocabulary::kEos}});
      const auto ids = decode_all(checkpoint.params, shell, c, ctx.threads);
      std::string text;
      for (const auto& sentence : ids)
        text += join_tokens(checkpoint.target_vocab->decode(sentence)) + "\n";
      write_text(*out, text);
      ctx.output(*out);
      ctx.out << "translated=" << sources.size() << "\n";
    };
  }
}

// --------------------------------------------------------------- metrics

void add_metrics(CLI::App& app, Registry& reg) {
  {
    auto* sub = app.add_subcommand("bleu", "Corpus 4-gram BLEU");
    auto hyp = std::make_shared<std::string>();
    auto ref = std::make_shared<std::string>();
    sub->add_option("--hyp", *hyp, "Hypotheses")->required();
    sub->add_option("--ref", *ref, "References")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*hyp);
      ctx.input(*ref);
      // Blank hypothesis lines are legal (empty output), so read them leniently.
      std::ifstream in(*hyp, std::ios::binary);
      if (!in)
        throw Error("cannot open " + *hyp);
      std::vector<Sentence> hyps;
      std::string line;
      while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r')
          line.pop_back();
        hyps.push_back(split_tokens(line));
      }
      ctx.out << bleu4(hyps, read_sentences(*ref)).summary() << "\n";
    };
  }
  {
    auto* sub = app.add_subcommand("diversity", "TTR, HD-D and MTLD of a text");
    auto input = std::make_shared<std::string>();
    auto words = std::make_shared<bool>(false);
    auto sample = std::make_shared<std::size_t>(42);
    auto threshold = std::make_shared<double>(0.72);
    sub->add_option("--input", *input, "Text")->required();
    sub->add_flag("--words", *words, "Merge BPE subwords into words first");
    sub->add_option("--hdd-sample", *sample, "HD-D sample size");
    sub->add_option("--mtld-threshold", *threshold, "MTLD TTR threshold");
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*input);
      auto sentences = read_sentences(*input);
      if (*words)
        for (auto& s : sentences)
          s = bpe::detokenize(s);
      const auto r = diversity(flatten(sentences), *sample, *threshold);
      ctx.out << "tokens=" << r.tokens << " types=" << r.types << " ttr=" << fixed6(r.ttr) << " hdd=" << fixed6(r.hdd)
              << " mtld=" << fixed6(r.mtld) << "\n";
    };
  }
  {
    auto* sub = app.add_subcommand("dist-report", "Token counts per training-frequency decile");
    auto freq = std::make_shared<std::string>();
    auto texts = std::make_shared<std::vector<std::string>>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--freq", *freq, "Training frequency TSV")->required();
    sub->add_option("--texts", *texts, "name=path[,name=path...]")->required()->delimiter(',');
    sub->add_option("--out", *out, "CSV to write")->required();
    reg.handlers[sub] = [=](Context& ctx) {
      ctx.input(*freq);
      const auto table = FrequencyTable::load_tsv(*freq);
      std::vector<NamedText> named;
      for (const auto& spec : *texts) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size())
          throw Error("--texts entries look like name=path, got '" + spec + "'");
        const std::string path = spec.substr(eq + 1);
        ctx.input(path);
        named.push_back({spec.substr(0, eq), flatten(read_sentences(path))});
      }
      const auto report = distribution_report(named, table);
      write_text(*out, report.to_csv());
      ctx.output(*out);
      ctx.out << report.to_csv();
    };
  }
}

// ------------------------------------------------------ reproduce-fixture

void add_fixture(CLI::App& app, Registry& reg) {
  auto* sub = app.add_subcommand("reproduce-fixture", "Run the end-to-end synthetic comparison");
  auto cfg = std::make_shared<FixtureConfig>();
  auto out = std::make_shared<std::string>();
  auto verbose = std::make_shared<bool>(false);
  sub->add_option("--seeds", cfg->num_seeds, "Number of consecutive seeds");
  sub->add_option("--vocab", cfg->vocab_size, "Token types");
  sub->add_option("--exponent", cfg->zipf_exponent, "Zipf exponent");
  sub->add_option("--pairs", cfg->train_pairs, "Training pairs");
  sub->add_option("--test-pairs", cfg->test_pairs, "Test pairs");
  sub->add_option("--pretrain-steps", cfg->pretrain_steps, "Pretraining updates");
  sub->add_option("--finetune-steps", cfg->finetune_steps, "Finetuning updates per system");
  sub->add_option("--batch-size", cfg->batch_size, "Pairs per update");
  sub->add_option("--lr", cfg->learning_rate, "Pretraining learning rate");
  sub->add_option("--finetune-lr-ratio", cfg->finetune_lr_ratio, "Finetune learning-rate multiplier");
  sub->add_option("--grid", cfg->temperature_grid, "Temperature grid")->delimiter(',');
  sub->add_option("--bpe-merges", cfg->bpe_merges, "Merge counts for the BPE sweep")->delimiter(',');
  sub->add_option("--out", *out, "Report file to write (stdout when omitted)");
  sub->add_flag("--verbose", *verbose, "Stage progress on stderr");
  reg.handlers[sub] = [=](Context& ctx) {
    FixtureConfig c = *cfg;
    c.seed = ctx.seed;
    c.threads = ctx.threads;
    std::function<void(const std::string&)> progress;
    if (*verbose)
      progress = [&](const std::string& line) { ctx.err << line << "\n"; };
    const auto report = reproduce_fixture(c, progress);
    const std::string text = report.to_text();
    if (out->empty()) {
      ctx.out << text;
    } else {
      write_text(*out, text);
      ctx.output(*out);
    }
  };
}

// ------------------------------------------------------------- manifests

json collect_config(const CLI::App& sub, std::vector<std::string>& args) {
  json config = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name.empty())
      continue;
    const bool is_flag = opt->get_expected_min() == 0;
    if (is_flag) {
      const bool on = opt->count() > 0;
      config[name] = on;
      if (on)
        args.push_back("--" + name);
      continue;
    }
    std::string value;
    if (opt->count() > 0) {
      const auto& results = opt->results();
      for (std::size_t i = 0; i < results.size(); ++i)
        value += (i ? "," : "") + results[i];
    } else {
      value = opt->get_default_str();
      if (!value.empty() && value.front() == '[' && value.back() == ']')
        value = value.substr(1, value.size() - 2);
    }
    config[name] = value;
    if (!value.empty()) {
      args.push_back("--" + name);
      args.push_back(value);
    }
  }
  return config;
}

void write_manifest(const Context& ctx, const std::string& command, const json& config,
                    const std::vector<std::string>& args) {
  json manifest;
  manifest["command"] = command;
  manifest["tool_version"] = version();
  manifest["seed"] = ctx.seed;
  manifest["threads"] = ctx.threads;
  manifest["config"] = config;
  manifest["args"] = args;
  json inputs = json::array();
  for (const auto& p : ctx.inputs)
    inputs.push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
  manifest["inputs"] = inputs;
  json outputs = json::array();
  for (const auto& p : ctx.outputs)
    if (fs::exists(p))
      outputs.push_back({{"path", p.string()}, {"fnv1a64", file_digest(p)}});
  manifest["outputs"] = outputs;
  write_text(ctx.manifest_at.string() + ".manifest.json", manifest.dump(2) + "\n");
}

int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool write_manifests);

void add_rerun(CLI::App& app, Registry& reg, std::ostream& out, std::ostream& err) {
  auto* sub = app.add_subcommand("rerun", "Re-execute a command from its manifest and compare outputs");
  auto manifest_path = std::make_shared<std::string>();
  sub->add_option("--manifest", *manifest_path, "Manifest JSON written by an earlier run")->required();
  reg.handlers[sub] = [=, &out, &err](Context& ctx) {
    std::ifstream in(*manifest_path);
    if (!in)
      throw Error("cannot open " + *manifest_path);
    json manifest;
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw Error(*manifest_path + ": " + e.what());
    }
    for (const auto& input : manifest.at("inputs")) {
      const std::string path = input.at("path");
      if (file_digest(path) != input.at("fnv1a64").get<std::string>())
        throw Error("input " + path + " changed since the manifest was written");
    }
    std::vector<std::string> args{manifest.at("command").get<std::string>()};
    for (const auto& a : manifest.at("args"))
      args.push_back(a.get<std::string>());
    args.push_back("--seed");
    args.push_back(std::to_string(manifest.at("seed").get<std::uint64_t>()));
    args.push_back("--threads");
    args.push_back(std::to_string(manifest.at("threads").get<unsigned>()));
    std::ostringstream sink;
    const int status = run_app(args, sink, err, false);
    if (status != 0)
      throw Error("re-run exited with status " + std::to_string(status));
    std::size_t mismatches = 0;
    for (const auto& output : manifest.at("outputs")) {
      const std::string path = output.at("path");
      const bool same = fs::exists(path) && file_digest(path) == output.at("fnv1a64").get<std::string>();
      out << (same ? "identical " : "DIFFERENT ") << path << "\n";
      mismatches += !same;
    }
    if (mismatches)
      throw Error(std::to_string(mismatches) + " output(s) differ from the manifest");
    (void)ctx;
  };
}

int run_app(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, bool write_manifests) {
  CLI::App app{"adaptok: token-frequency adaptive training objectives for translation", "adaptok"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version());
  std::uint64_t seed = 17;
  unsigned threads = 1;
  app.add_option("--seed", seed, "Seed for every random choice");
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)")
      ->check(CLI::Range(1u, 256u));

  Registry reg;
  add_freq_analyze(app, reg);
  add_bpe(app, reg);
  add_weights(app, reg);
  add_rarity(app, reg);
  add_gen_zipf(app, reg);
  add_train(app, reg);
  add_metrics(app, reg);
  add_fixture(app, reg);
  add_rerun(app, reg, out, err);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "adaptok: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 1;
  }

  const CLI::App* sub = app.get_subcommands().front();
  Context ctx{out, err, seed, threads, {}, {}, {}};
  try {
    reg.handlers.at(sub)(ctx);
    if (write_manifests && !ctx.manifest_at.empty() && sub->get_name() != "rerun") {
      std::vector<std::string> replay;
      const json config = collect_config(*sub, replay);
      write_manifest(ctx, sub->get_name(), config, replay);
    }
  } catch (const DivergenceError& e) {
    err << "adaptok " << sub->get_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    err << "adaptok " << sub->get_name() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "adaptok " << sub->get_name() << ": internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return run_app(args, out, err, true);
  } catch (const std::exception& e) {
    err << "adaptok: internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace adaptok::cli
