#include "adaptok/fixture.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <thread>
#include <unordered_map>

#include "adaptok/bpe.hpp"
#include "adaptok/error.hpp"
#include "adaptok/rarity.hpp"
#include "adaptok/weighting.hpp"

namespace adaptok {

void FixtureConfig::validate() const {
  if (num_seeds == 0)
    throw Error("fixture needs at least one seed");
  if (test_pairs < 3)
    throw Error("fixture needs at least 3 test pairs");
  if (pretrain_steps == 0 || finetune_steps == 0)
    throw Error("fixture step counts must be positive");
  if (temperature_grid.empty())
    throw Error("temperature grid is empty");
  if (!(rare_type_fraction > 0.0 && rare_type_fraction <= 1.0))
    throw Error("rare_type_fraction must lie in (0, 1]");
  decode.validate();
}

const SystemMetrics& FixtureReport::median_of(std::string_view name) const {
  for (const auto& m : median)
    if (m.name == name)
      return m;
  throw Error("no system named " + std::string(name));
}

double rare_token_recall(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
                         const FrequencyTable& table, double rare_type_fraction) {
  if (hypotheses.size() != references.size())
    throw Error("hypothesis and reference counts differ");
  const std::size_t n = table.num_types();
  const auto first_rare = static_cast<std::int64_t>(n - static_cast<std::size_t>(
                                                           static_cast<double>(n) * rare_type_fraction + 0.5));
  auto is_rare = [&](const std::string& token) {
    const auto rank = table.rank_of(token);
    return rank < 0 || rank >= first_rare;
  };
  std::uint64_t matched = 0, total = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    std::unordered_map<std::string_view, std::uint64_t> ref_counts, hyp_counts;
    for (const auto& t : references[i])
      if (is_rare(t))
        ++ref_counts[t];
    for (const auto& t : hypotheses[i])
      ++hyp_counts[t];
    for (const auto& [token, count] : ref_counts) {
      total += count;
      const auto it = hyp_counts.find(token);
      if (it != hyp_counts.end())
        matched += std::min(count, it->second);
    }
  }
  return total ? 100.0 * static_cast<double>(matched) / static_cast<double>(total) : 0.0;
}

double token_accuracy(std::span<const Sentence> hypotheses, std::span<const Sentence> references) {
  if (hypotheses.size() != references.size())
    throw Error("hypothesis and reference counts differ");
  std::uint64_t correct = 0, total = 0;
  for (std::size_t i = 0; i < references.size(); ++i) {
    total += references[i].size();
    const std::size_t n = std::min(references[i].size(), hypotheses[i].size());
    for (std::size_t k = 0; k < n; ++k)
      correct += hypotheses[i][k] == references[i][k];
  }
  return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

std::vector<std::vector<TokenId>> decode_all(const ModelParams& params, const ParallelCorpus& corpus,
                                             const DecodeConfig& config, unsigned threads) {
  std::vector<std::vector<TokenId>> out(corpus.size());
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(corpus.size())));
  auto run = [&](unsigned w) {
    for (std::size_t i = w; i < corpus.size(); i += workers)
      out[i] = decode(params, corpus.pairs[i].source, config);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back(run, w);
  }
  return out;
}

std::vector<BpeSweepRow> bpe_sweep(std::span<const Sentence> sentences, std::span<const std::size_t> merge_counts) {
  if (sentences.empty())
    throw Error("BPE sweep needs sentences");
  const auto counts = bpe::word_counts(sentences);
  std::vector<BpeSweepRow> rows;
  for (std::size_t requested : merge_counts) {
    const auto merges = bpe::learn_merges(counts, requested);
    const bpe::Encoder encoder(merges);
    BpeSweepRow row{requested, merges.merges.size(), 0.0, true};
    std::uint64_t tokens = 0;
    for (const auto& sentence : sentences) {
      const auto subwords = encoder.apply(sentence);
      tokens += subwords.size();
      if (bpe::detokenize(subwords) != sentence)
        row.round_trip = false;
    }
    row.mean_length = static_cast<double>(tokens) / static_cast<double>(sentences.size());
    rows.push_back(row);
  }
  return rows;
}

namespace {

template <class F>
auto stage(const std::string& name, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    throw Error("stage " + name + " failed: " + e.what());
  }
}

std::vector<Sentence> to_strings(const Vocabulary& vocab, const std::vector<std::vector<TokenId>>& ids) {
  std::vector<Sentence> out;
  out.reserve(ids.size());
  for (const auto& s : ids)
    out.push_back(vocab.decode(s));
  return out;
}

SystemMetrics evaluate(const std::string& name, const ModelParams& params, const ParallelCorpus& test,
                       const std::vector<Sentence>& references, const Stratification& strata,
                       const FrequencyTable& table, const FixtureConfig& config) {
  SystemMetrics m;
  m.name = name;
  const auto hyps = to_strings(*test.target_vocab, decode_all(params, test, config.decode, config.threads));
  m.bleu = bleu4(hyps, references).score;
  auto subset_bleu = [&](Stratum s) {
    std::vector<Sentence> h, r;
    for (std::size_t i : strata.indices(s)) {
      h.push_back(hyps[i]);
      r.push_back(references[i]);
    }
    return bleu4(h, r).score;
  };
  m.bleu_high = subset_bleu(Stratum::high);
  m.bleu_middle = subset_bleu(Stratum::middle);
  m.bleu_low = subset_bleu(Stratum::low);
  m.rare_recall = rare_token_recall(hyps, references, table, config.rare_type_fraction);
  m.token_accuracy = token_accuracy(hyps, references);
  const Sentence flat = flatten(hyps);
  const std::vector<NamedText> texts{{name, flat}};
  m.deciles = distribution_report(texts, table).counts.front();
  if (flat.size() >= 42)
    m.diversity = diversity(flat);
  return m;
}

TrainConfig phase_config(const FixtureConfig& config, Phase phase, LossSpec loss, std::uint64_t seed) {
  TrainConfig tc;
  tc.phase = phase;
  tc.loss = std::move(loss);
  tc.loss.label_smoothing = config.label_smoothing;
  tc.learning_rate = config.learning_rate;
  tc.finetune_lr_ratio = config.finetune_lr_ratio;
  tc.max_steps = phase == Phase::pretrain ? config.pretrain_steps : config.finetune_steps;
  tc.batch_size = config.batch_size;
  tc.seed = seed;
  return tc;
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::uint64_t median_count(std::vector<std::uint64_t> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

SeedRun run_seed(const FixtureConfig& config, std::uint64_t seed,
                 const std::function<void(const std::string&)>& progress) {
  auto note = [&](const std::string& line) {
    if (progress)
      progress("seed " + std::to_string(seed) + ": " + line);
  };
  SeedRun run;
  run.seed = seed;

  note("gen-zipf");
  const ZipfTask task = stage("gen-zipf", [&] {
    ZipfTaskConfig zc{config.vocab_size, config.zipf_exponent, config.train_pairs, config.min_length,
                      config.max_length,  seed,                 config.test_pairs};
    return generate_zipf_task(zc);
  });

  note("freq-analyze");
  const FrequencyTable table = stage("freq-analyze", [&] { return count_frequencies(task.train, config.threads); });

  note("weights");
  auto pick = [&](WeightForm form) {
    return stage("weights", [&] {
      const auto candidates = search_temperature(table, form, config.temperature_grid, config.delta_max);
      const auto best = widest_passing(candidates);
      if (!best)
        throw Error("no temperature in the grid satisfies the weight criteria for " + to_string(form));
      return *best;
    });
  };
  const auto exp_choice = pick(WeightForm::exponential);
  const auto k2_choice = pick(WeightForm::chi_square);
  run.exp_temperature = exp_choice.temperature;
  run.exp_delta = exp_choice.delta;
  run.k2_temperature = k2_choice.temperature;
  run.k2_delta = k2_choice.delta;

  TrainOptions options;
  options.embed_dim = config.embed_dim;
  options.hidden_dim = config.hidden_dim;
  options.init_scale = config.init_scale;
  options.init_seed = seed;
  options.threads = config.threads;

  note("pretrain");
  const TrainResult pretrained = stage("pretrain", [&] {
    const std::vector<TrainConfig> schedule{phase_config(config, Phase::pretrain, {}, seed)};
    return train(task.train, schedule, options);
  });
  run.pretrain_loss = pretrained.log.back().mean_loss;

  auto finetune = [&](const std::string& name, LossSpec loss) {
    note("finetune " + name);
    return stage("finetune " + name, [&] {
      TrainOptions ft = options;
      ft.initial = pretrained.params;
      const std::vector<TrainConfig> schedule{phase_config(config, Phase::finetune, std::move(loss), seed)};
      return train(task.train, schedule, ft).params;
    });
  };
  LossSpec exp_loss;
  exp_loss.kind = LossSpec::Kind::exponential;
  exp_loss.temperature = exp_choice.temperature;
  LossSpec k2_loss;
  k2_loss.kind = LossSpec::Kind::chi_square;
  k2_loss.temperature = k2_choice.temperature;

  std::vector<std::pair<std::string, ModelParams>> systems;
  systems.emplace_back(kPretrainedSystem, pretrained.params);
  systems.emplace_back(kBaselineSystem, finetune(kBaselineSystem, LossSpec{}));
  systems.emplace_back(kExpSystem, finetune(kExpSystem, exp_loss));
  systems.emplace_back(kK2System, finetune(kK2System, k2_loss));

  note("evaluate");
  stage("evaluate", [&] {
    std::vector<Sentence> references;
    for (std::size_t i = 0; i < task.heldout.size(); ++i)
      references.push_back(task.heldout.target_tokens(i));
    const Stratification strata = stratify(task.heldout, table);
    const std::vector<NamedText> ref_text{{"reference", flatten(references)}};
    run.reference_deciles = distribution_report(ref_text, table).counts.front();
    for (const auto& [name, params] : systems)
      run.systems.push_back(evaluate(name, params, task.heldout, references, strata, table, config));
    return 0;
  });
  return run;
}

void append(std::string& out, const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  out += buf;
}

}  // namespace

FixtureReport reproduce_fixture(const FixtureConfig& config,
                                const std::function<void(const std::string&)>& progress) {
  config.validate();
  FixtureReport report;
  report.config = config;
  for (std::size_t s = 0; s < config.num_seeds; ++s)
    report.runs.push_back(run_seed(config, config.seed + s, progress));

  const auto& names = report.runs.front().systems;
  for (std::size_t k = 0; k < names.size(); ++k) {
    SystemMetrics m;
    m.name = names[k].name;
    auto med = [&](auto field) {
      std::vector<double> v;
      for (const auto& run : report.runs)
        v.push_back(field(run.systems[k]));
      return median3(std::move(v));
    };
    m.bleu = med([](const SystemMetrics& x) { return x.bleu; });
    m.bleu_high = med([](const SystemMetrics& x) { return x.bleu_high; });
    m.bleu_middle = med([](const SystemMetrics& x) { return x.bleu_middle; });
    m.bleu_low = med([](const SystemMetrics& x) { return x.bleu_low; });
    m.rare_recall = med([](const SystemMetrics& x) { return x.rare_recall; });
    m.token_accuracy = med([](const SystemMetrics& x) { return x.token_accuracy; });
    m.diversity.ttr = med([](const SystemMetrics& x) { return x.diversity.ttr; });
    m.diversity.hdd = med([](const SystemMetrics& x) { return x.diversity.hdd; });
    m.diversity.mtld = med([](const SystemMetrics& x) { return x.diversity.mtld; });
    for (std::size_t d = 0; d < kNumDeciles; ++d) {
      std::vector<std::uint64_t> v;
      for (const auto& run : report.runs)
        v.push_back(run.systems[k].deciles[d]);
      m.deciles[d] = median_count(std::move(v));
    }
    report.median.push_back(m);
  }
  for (std::size_t d = 0; d < kNumDeciles; ++d) {
    std::vector<std::uint64_t> v;
    for (const auto& run : report.runs)
      v.push_back(run.reference_deciles[d]);
    report.reference_deciles[d] = median_count(std::move(v));
  }

  if (progress)
    progress("bpe sweep");
  report.bpe = stage("bpe-sweep", [&] {
    ZipfTaskConfig zc{config.vocab_size, config.zipf_exponent, config.train_pairs, config.min_length,
                      config.max_length,  config.seed,          0};
    const ZipfTask task = generate_zipf_task(zc);
    std::vector<Sentence> targets;
    for (std::size_t i = 0; i < task.train.size(); ++i)
      targets.push_back(task.train.target_tokens(i));
    return bpe_sweep(targets, config.bpe_merges);
  });
  return report;
}

std::string FixtureReport::to_text() const {
  const auto& c = config;
  std::string out;
  out += "# adaptok fixture report\n";
  append(out, "seed=%llu seeds=%zu vocab=%zu exponent=%.3f train_pairs=%zu test_pairs=%zu\n",
         static_cast<unsigned long long>(c.seed), c.num_seeds, c.vocab_size, c.zipf_exponent, c.train_pairs,
         c.test_pairs);
  append(out, "model d=%zu h=%zu batch=%zu lr=%.4f finetune_lr_ratio=%.4f pretrain_steps=%zu finetune_steps=%zu\n",
         c.embed_dim, c.hidden_dim, c.batch_size, c.learning_rate, c.finetune_lr_ratio, c.pretrain_steps,
         c.finetune_steps);
  append(out, "decode %s beam=%zu lenpen=%.2f; rare bucket = rarest %.0f%% of types\n",
         c.decode.mode == DecodeConfig::Mode::beam ? "beam" : "greedy", c.decode.beam_size, c.decode.length_penalty,
         100.0 * c.rare_type_fraction);

  auto system_table = [&](const std::vector<SystemMetrics>& systems) {
    out += "system        BLEU   High    Middle  Low     RareRec TokAcc  TTR      HD-D     MTLD\n";
    for (const auto& m : systems)
      append(out, "%-12s %6.2f %6.2f  %6.2f  %6.2f  %6.2f  %6.2f  %.6f %.6f %.4f\n", m.name.c_str(), m.bleu,
             m.bleu_high, m.bleu_middle, m.bleu_low, m.rare_recall, m.token_accuracy, m.diversity.ttr,
             m.diversity.hdd, m.diversity.mtld);
  };
  auto decile_table = [&](const std::array<std::uint64_t, kNumDeciles>& reference,
                          const std::vector<SystemMetrics>& systems) {
    out += "decile reference";
    for (const auto& m : systems)
      append(out, " %12s", m.name.c_str());
    out += '\n';
    for (std::size_t d = 0; d < kNumDeciles; ++d) {
      append(out, "%6zu %9llu", d + 1, static_cast<unsigned long long>(reference[d]));
      for (const auto& m : systems)
        append(out, " %12llu", static_cast<unsigned long long>(m.deciles[d]));
      out += '\n';
    }
  };

  for (const auto& run : runs) {
    append(out, "\n## seed %llu\n", static_cast<unsigned long long>(run.seed));
    append(out, "exponential T=%.2f delta=%.6f; chi-square T=%.2f delta=%.6f; pretrain loss=%.6f\n",
           run.exp_temperature, run.exp_delta, run.k2_temperature, run.k2_delta, run.pretrain_loss);
    system_table(run.systems);
    decile_table(run.reference_deciles, run.systems);
  }
  out += "\n## median over seeds\n";
  system_table(median);
  decile_table(reference_deciles, median);

  out += "\n## bpe sweep\n";
  out += "merges learned mean_length round_trip\n";
  for (const auto& row : bpe)
    append(out, "%6zu %7zu %11.6f %s\n", row.requested, row.learned, row.mean_length,
           row.round_trip ? "exact" : "MISMATCH");
  return out;
}

}  // namespace adaptok
