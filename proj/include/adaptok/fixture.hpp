#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "adaptok/metrics.hpp"
#include "adaptok/toymodel.hpp"

namespace adaptok {

struct FixtureConfig {
  std::uint64_t seed = 17;
  std::size_t num_seeds = 3;
  unsigned threads = 1;

  std::size_t vocab_size = 200;
  double zipf_exponent = 1.0;
  std::size_t train_pairs = 10000;
  std::size_t test_pairs = 1000;
  std::size_t min_length = 3;
  std::size_t max_length = 8;

  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  double init_scale = 0.1;
  std::size_t batch_size = 32;
  double learning_rate = 0.5;
  double finetune_lr_ratio = 0.1;
  std::size_t pretrain_steps = 1500;
  std::size_t finetune_steps = 1500;
  double label_smoothing = 0.1;

  std::vector<double> temperature_grid{0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0};
  double delta_max = 0.2;
  DecodeConfig decode;
  double rare_type_fraction = 0.5;
  std::vector<std::size_t> bpe_merges{50, 200, 800};

  void validate() const;
};

struct SystemMetrics {
  std::string name;
  double bleu = 0.0;
  double bleu_high = 0.0;
  double bleu_middle = 0.0;
  double bleu_low = 0.0;
  double rare_recall = 0.0;     // percent, rarest types bucket
  double token_accuracy = 0.0;  // percent, position-wise
  std::array<std::uint64_t, kNumDeciles> deciles{};
  DiversityReport diversity;
};

struct SeedRun {
  std::uint64_t seed = 0;
  double exp_temperature = 0.0;
  double exp_delta = 0.0;
  double k2_temperature = 0.0;
  double k2_delta = 0.0;
  double pretrain_loss = 0.0;  // mean loss of the last pretraining epoch
  std::array<std::uint64_t, kNumDeciles> reference_deciles{};
  std::vector<SystemMetrics> systems;  // Pretrained, Baseline-FT, Our_Exp, Our_K2
};

struct BpeSweepRow {
  std::size_t requested = 0;
  std::size_t learned = 0;
  double mean_length = 0.0;  // subword tokens per sentence
  bool round_trip = false;
};

struct FixtureReport {
  FixtureConfig config;
  std::vector<SeedRun> runs;
  std::vector<SystemMetrics> median;  // element-wise median over runs
  std::array<std::uint64_t, kNumDeciles> reference_deciles{};
  std::vector<BpeSweepRow> bpe;

  const SystemMetrics& median_of(std::string_view name) const;
  std::string to_text() const;
};

inline constexpr const char* kPretrainedSystem = "Pretrained";
inline constexpr const char* kBaselineSystem = "Baseline-FT";
inline constexpr const char* kExpSystem = "Our_Exp";
inline constexpr const char* kK2System = "Our_K2";

// Percent of reference occurrences of the rarest types (by training rank)
// recovered in the hypothesis, with clipped bag-of-words matching.
double rare_token_recall(std::span<const Sentence> hypotheses, std::span<const Sentence> references,
                         const FrequencyTable& table, double rare_type_fraction);
// Percent of reference positions whose token the hypothesis reproduces.
double token_accuracy(std::span<const Sentence> hypotheses, std::span<const Sentence> references);

std::vector<std::vector<TokenId>> decode_all(const ModelParams& params, const ParallelCorpus& corpus,
                                             const DecodeConfig& config, unsigned threads);

std::vector<BpeSweepRow> bpe_sweep(std::span<const Sentence> sentences, std::span<const std::size_t> merge_counts);

// gen-zipf -> frequencies -> weights -> pretrain -> three finetuned systems
// -> evaluation, once per seed. Any failing stage is rethrown as an Error
// naming the stage. `progress`, when set, receives one line per stage.
FixtureReport reproduce_fixture(const FixtureConfig& config,
                                const std::function<void(const std::string&)>& progress = {});

}  // namespace adaptok
