#include "adaptok/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "adaptok/error.hpp"
#include "adaptok/rarity.hpp"

namespace adaptok {

namespace {

constexpr std::string_view kCheckpointMagic = "adaptok-checkpoint";
constexpr int kCheckpointVersion = 1;
constexpr std::size_t kShardPairs = 8;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

void check_ids(const ModelParams& params, const SentencePair& pair) {
  if (pair.source.empty() || pair.target.empty())
    throw Error("sentence pair with an empty side");
  for (TokenId id : pair.source)
    if (id < 0 || static_cast<std::size_t>(id) >= params.source_vocab)
      throw Error("source id " + std::to_string(id) + " outside the model vocabulary");
  for (TokenId id : pair.target)
    if (id < 0 || static_cast<std::size_t>(id) >= params.target_vocab)
      throw Error("target id " + std::to_string(id) + " outside the model vocabulary");
}

// Scratch state for one sentence pair.
struct PairActivations {
  std::vector<double> context;  // mean source embedding, d
  std::vector<double> base;     // W_ctx^T m + b, h
};

void compute_context(const ModelParams& p, std::span<const TokenId> source, PairActivations& act) {
  const std::size_t d = p.embed_dim, h = p.hidden_dim;
  act.context.assign(d, 0.0);
  for (TokenId id : source) {
    const double* row = &p.source_embedding[static_cast<std::size_t>(id) * d];
    for (std::size_t i = 0; i < d; ++i)
      act.context[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(source.size());
  for (double& v : act.context)
    v *= inv;
  act.base.assign(p.hidden_bias.begin(), p.hidden_bias.end());
  for (std::size_t i = 0; i < d; ++i) {
    const double m = act.context[i];
    const double* w = &p.context_proj[i * h];
    for (std::size_t j = 0; j < h; ++j)
      act.base[j] += m * w[j];
  }
}

TokenId aligned_source(std::span<const TokenId> source, std::size_t k) {
  return k < source.size() ? source[k] : Vocabulary::kEos;
}

// hidden = tanh(base + W_align^T a + W_state^T s); logits = W_out^T hidden + b_out
void step_forward(const ModelParams& p, const PairActivations& act, TokenId aligned, TokenId previous,
                  std::span<double> hidden, std::span<double> logits) {
  const std::size_t d = p.embed_dim, h = p.hidden_dim, v = p.target_vocab;
  std::copy(act.base.begin(), act.base.end(), hidden.begin());
  const double* a = &p.source_embedding[static_cast<std::size_t>(aligned) * d];
  const double* s = &p.target_embedding[static_cast<std::size_t>(previous) * d];
  for (std::size_t i = 0; i < d; ++i) {
    const double ai = a[i], si = s[i];
    const double* wa = &p.align_proj[i * h];
    const double* ws = &p.state_proj[i * h];
    for (std::size_t j = 0; j < h; ++j)
      hidden[j] += ai * wa[j] + si * ws[j];
  }
  for (std::size_t j = 0; j < h; ++j)
    hidden[j] = std::tanh(hidden[j]);
  std::copy(p.output_bias.begin(), p.output_bias.end(), logits.begin());
  for (std::size_t j = 0; j < h; ++j) {
    const double hj = hidden[j];
    const double* wo = &p.output_proj[j * v];
    for (std::size_t t = 0; t < v; ++t)
      logits[t] += hj * wo[t];
  }
}

}  // namespace

ModelParams ModelParams::zeros(std::size_t source_vocab, std::size_t target_vocab, std::size_t embed_dim,
                               std::size_t hidden_dim) {
  if (!source_vocab || !target_vocab || !embed_dim || !hidden_dim)
    throw Error("model dimensions must be positive");
  ModelParams p;
  p.source_vocab = source_vocab;
  p.target_vocab = target_vocab;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  p.source_embedding.assign(source_vocab * embed_dim, 0.0);
  p.target_embedding.assign(target_vocab * embed_dim, 0.0);
  p.context_proj.assign(embed_dim * hidden_dim, 0.0);
  p.align_proj.assign(embed_dim * hidden_dim, 0.0);
  p.state_proj.assign(embed_dim * hidden_dim, 0.0);
  p.hidden_bias.assign(hidden_dim, 0.0);
  p.output_proj.assign(hidden_dim * target_vocab, 0.0);
  p.output_bias.assign(target_vocab, 0.0);
  return p;
}

ModelParams ModelParams::random(std::size_t source_vocab, std::size_t target_vocab, std::size_t embed_dim,
                                std::size_t hidden_dim, std::uint64_t seed, double scale) {
  ModelParams p = zeros(source_vocab, target_vocab, embed_dim, hidden_dim);
  std::mt19937_64 rng(seed);
  for (auto& block : p.blocks()) {
    if (block.rows == 1)
      continue;  // biases
    for (double& v : *block.values)
      v = scale * (2.0 * uniform01(rng) - 1.0);
  }
  return p;
}

std::vector<ModelParams::Block> ModelParams::blocks() {
  return {
      {"source_embedding", source_vocab, embed_dim, &source_embedding},
      {"target_embedding", target_vocab, embed_dim, &target_embedding},
      {"context_proj", embed_dim, hidden_dim, &context_proj},
      {"align_proj", embed_dim, hidden_dim, &align_proj},
      {"state_proj", embed_dim, hidden_dim, &state_proj},
      {"hidden_bias", 1, hidden_dim, &hidden_bias},
      {"output_proj", hidden_dim, target_vocab, &output_proj},
      {"output_bias", 1, target_vocab, &output_bias},
  };
}

std::size_t ModelParams::num_values() const {
  return source_embedding.size() + target_embedding.size() + context_proj.size() + align_proj.size() +
         state_proj.size() + hidden_bias.size() + output_proj.size() + output_bias.size();
}

bool ModelParams::all_finite() const {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(source_embedding) && finite(target_embedding) && finite(context_proj) && finite(align_proj) &&
         finite(state_proj) && finite(hidden_bias) && finite(output_proj) && finite(output_bias);
}

void ModelParams::set_zero() {
  for (auto& block : blocks())
    std::fill(block.values->begin(), block.values->end(), 0.0);
}

void ModelParams::axpy(double factor, const ModelParams& other) {
  auto mine = blocks();
  auto theirs = const_cast<ModelParams&>(other).blocks();
  for (std::size_t b = 0; b < mine.size(); ++b) {
    auto& x = *mine[b].values;
    const auto& y = *theirs[b].values;
    for (std::size_t i = 0; i < x.size(); ++i)
      x[i] += factor * y[i];
  }
}

std::vector<StepDistribution> forward(const ModelParams& params, const SentencePair& pair) {
  check_ids(params, pair);
  PairActivations act;
  compute_context(params, pair.source, act);
  std::vector<double> hidden(params.hidden_dim);
  std::vector<StepDistribution> steps;
  const std::size_t positions = pair.target.size() + 1;
  steps.reserve(positions);
  for (std::size_t k = 0; k < positions; ++k) {
    std::vector<double> logits(params.target_vocab);
    const TokenId previous = k == 0 ? Vocabulary::kBos : pair.target[k - 1];
    step_forward(params, act, aligned_source(pair.source, k), previous, hidden, logits);
    const TokenId target = k < pair.target.size() ? pair.target[k] : Vocabulary::kEos;
    steps.push_back(StepDistribution::from_logits(std::move(logits), target));
  }
  return steps;
}

double pair_loss(const ModelParams& params, const SentencePair& pair, const LossConfig& config) {
  return objective(forward(params, pair), config);
}

double accumulate_gradients(const ModelParams& p, const SentencePair& pair, const LossConfig& config, double scale,
                            ModelParams& g) {
  check_ids(p, pair);
  const std::size_t d = p.embed_dim, h = p.hidden_dim, v = p.target_vocab;
  PairActivations act;
  compute_context(p, pair.source, act);
  std::vector<double> hidden(h), logits(v), probs(v), dlogits(v), dpre(h), dpre_sum(h, 0.0);
  double total = 0.0;
  const std::size_t positions = pair.target.size() + 1;
  for (std::size_t k = 0; k < positions; ++k) {
    const TokenId aligned = aligned_source(pair.source, k);
    const TokenId previous = k == 0 ? Vocabulary::kBos : pair.target[k - 1];
    const TokenId target = k < pair.target.size() ? pair.target[k] : Vocabulary::kEos;
    step_forward(p, act, aligned, previous, hidden, logits);
    softmax(logits, probs);
    total += position_objective(probs, target, config, scale, dlogits);

    // Output layer.
    for (std::size_t t = 0; t < v; ++t)
      g.output_bias[t] += dlogits[t];
    for (std::size_t j = 0; j < h; ++j) {
      const double* wo = &p.output_proj[j * v];
      double* gwo = &g.output_proj[j * v];
      const double hj = hidden[j];
      double acc = 0.0;
      for (std::size_t t = 0; t < v; ++t) {
        gwo[t] += hj * dlogits[t];
        acc += wo[t] * dlogits[t];
      }
      dpre[j] = acc * (1.0 - hj * hj);
      dpre_sum[j] += dpre[j];
      g.hidden_bias[j] += dpre[j];
    }

    // Aligned source and previous-target paths.
    const double* a = &p.source_embedding[static_cast<std::size_t>(aligned) * d];
    const double* s = &p.target_embedding[static_cast<std::size_t>(previous) * d];
    double* ga = &g.source_embedding[static_cast<std::size_t>(aligned) * d];
    double* gs = &g.target_embedding[static_cast<std::size_t>(previous) * d];
    for (std::size_t i = 0; i < d; ++i) {
      const double* wa = &p.align_proj[i * h];
      const double* ws = &p.state_proj[i * h];
      double* gwa = &g.align_proj[i * h];
      double* gws = &g.state_proj[i * h];
      double da = 0.0, ds = 0.0;
      for (std::size_t j = 0; j < h; ++j) {
        gwa[j] += a[i] * dpre[j];
        gws[j] += s[i] * dpre[j];
        da += wa[j] * dpre[j];
        ds += ws[j] * dpre[j];
      }
      ga[i] += da;
      gs[i] += ds;
    }
  }

  // Mean-pooled context path, shared by every position.
  std::vector<double> dcontext(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double* wc = &p.context_proj[i * h];
    double* gwc = &g.context_proj[i * h];
    double acc = 0.0;
    for (std::size_t j = 0; j < h; ++j) {
      gwc[j] += act.context[i] * dpre_sum[j];
      acc += wc[j] * dpre_sum[j];
    }
    dcontext[i] = acc / static_cast<double>(pair.source.size());
  }
  for (TokenId id : pair.source) {
    double* row = &g.source_embedding[static_cast<std::size_t>(id) * d];
    for (std::size_t i = 0; i < d; ++i)
      row[i] += dcontext[i];
  }
  return total;
}

ModelParams backward(const ModelParams& params, const SentencePair& pair, const LossConfig& config) {
  config.validate();
  ModelParams grads = ModelParams::zeros(params.source_vocab, params.target_vocab, params.embed_dim, params.hidden_dim);
  const double scale = 1.0 / static_cast<double>(pair.target.size() + 1);
  accumulate_gradients(params, pair, config, scale, grads);
  return grads;
}

std::string to_string(Phase phase) { return phase == Phase::pretrain ? "pretrain" : "finetune"; }

std::string to_string(DataMode mode) {
  switch (mode) {
    case DataMode::full: return "full";
    case DataMode::rare_subset: return "rare_subset";
    case DataMode::oversampled: return "oversampled";
  }
  return "?";
}

Phase parse_phase(std::string_view name) {
  if (name == "pretrain")
    return Phase::pretrain;
  if (name == "finetune")
    return Phase::finetune;
  throw Error("unknown phase '" + std::string(name) + "'");
}

DataMode parse_data_mode(std::string_view name) {
  if (name == "full")
    return DataMode::full;
  if (name == "rare_subset" || name == "fine_tuning")
    return DataMode::rare_subset;
  if (name == "oversampled" || name == "sampler")
    return DataMode::oversampled;
  throw Error("unknown data mode '" + std::string(name) + "'");
}

std::string to_string(LossSpec::Kind kind) {
  switch (kind) {
    case LossSpec::Kind::uniform: return "uniform";
    case LossSpec::Kind::exponential: return "exponential";
    case LossSpec::Kind::chi_square: return "chi_square";
    case LossSpec::Kind::linear: return "linear";
    case LossSpec::Kind::static_file: return "static";
    case LossSpec::Kind::focal: return "focal";
  }
  return "?";
}

LossSpec::Kind parse_loss_kind(std::string_view name) {
  if (name == "uniform")
    return LossSpec::Kind::uniform;
  if (name == "exponential" || name == "exp")
    return LossSpec::Kind::exponential;
  if (name == "chi_square" || name == "chi-square" || name == "k2")
    return LossSpec::Kind::chi_square;
  if (name == "linear")
    return LossSpec::Kind::linear;
  if (name == "static")
    return LossSpec::Kind::static_file;
  if (name == "focal")
    return LossSpec::Kind::focal;
  throw Error("unknown loss weighting '" + std::string(name) + "'");
}

LossConfig resolve_loss(const LossSpec& spec, const FrequencyTable& table, const Vocabulary& target_vocab) {
  LossConfig config;
  config.label_smoothing = spec.label_smoothing;
  config.entropy_penalty = spec.entropy_penalty;
  config.entropy_term = spec.entropy_term;
  auto from_scheme = [&](WeightForm form) {
    WeightScheme scheme{form, spec.amplitude, spec.temperature, spec.normalize_by_median};
    const auto weights = build_weight_table(table, scheme);
    config.mode = WeightingMode::static_table;
    config.static_weights = std::make_shared<const std::vector<double>>(weights.dense(target_vocab));
  };
  switch (spec.kind) {
    case LossSpec::Kind::uniform:
      config.mode = WeightingMode::uniform;
      break;
    case LossSpec::Kind::exponential:
      from_scheme(WeightForm::exponential);
      break;
    case LossSpec::Kind::chi_square:
      from_scheme(WeightForm::chi_square);
      break;
    case LossSpec::Kind::linear:
      from_scheme(WeightForm::linear);
      break;
    case LossSpec::Kind::static_file: {
      if (spec.weights_file.empty())
        throw Error("static weighting needs a weights file");
      const auto weights = WeightTable::load_tsv(spec.weights_file);
      config.mode = WeightingMode::static_table;
      config.static_weights = std::make_shared<const std::vector<double>>(weights.dense(target_vocab));
      break;
    }
    case LossSpec::Kind::focal:
      config.mode = WeightingMode::focal;
      config.focal_gamma = spec.focal_gamma;
      config.focal_plus_one = spec.focal_plus_one;
      break;
  }
  config.validate();
  return config;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw Error("learning rate must be positive");
  if (!(finetune_lr_ratio > 0.0 && finetune_lr_ratio <= 1.0))
    throw Error("finetune_lr_ratio must lie in (0, 1]");
  if (max_steps == 0)
    throw Error("max_steps must be positive");
  if (batch_size == 0)
    throw Error("batch_size must be positive");
  if (data_mode != DataMode::full && !(rare_fraction > 0.0 && rare_fraction < 1.0))
    throw Error("rare_fraction must lie in (0, 1)");
  if (data_mode == DataMode::oversampled && oversample_factor < 1)
    throw Error("oversample_factor must be >= 1");
}

namespace {

ParallelCorpus phase_data(const ParallelCorpus& corpus, const TrainConfig& config, const FrequencyTable& table) {
  switch (config.data_mode) {
    case DataMode::full: return corpus;
    case DataMode::rare_subset: return select_rare_subset(corpus, table, config.rare_fraction);
    case DataMode::oversampled:
      return oversample_concat(corpus, table, config.rare_fraction, config.oversample_factor);
  }
  return corpus;
}

double corpus_loss(const ModelParams& params, const ParallelCorpus& corpus, const LossConfig& config) {
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto& pair : corpus.pairs) {
    const auto steps = forward(params, pair);
    for (const auto& step : steps)
      total += position_objective(step.probabilities, step.target, config, 1.0, {});
    positions += steps.size();
  }
  return positions ? total / static_cast<double>(positions) : 0.0;
}

// One SGD step over the given batch. Returns the batch mean position loss.
double sgd_step(ModelParams& params, const ParallelCorpus& data, std::span<const std::size_t> batch,
                const LossConfig& loss, double lr, unsigned threads, std::vector<ModelParams>& shard_grads,
                std::vector<double>& shard_loss) {
  std::size_t positions = 0;
  for (std::size_t i : batch)
    positions += data.pairs[i].target.size() + 1;
  const double scale = 1.0 / static_cast<double>(positions);
  const std::size_t shards = (batch.size() + kShardPairs - 1) / kShardPairs;
  while (shard_grads.size() < shards)
    shard_grads.push_back(
        ModelParams::zeros(params.source_vocab, params.target_vocab, params.embed_dim, params.hidden_dim));
  shard_loss.assign(shards, 0.0);

  auto run_shard = [&](std::size_t s) {
    auto& g = shard_grads[s];
    g.set_zero();
    const std::size_t begin = s * kShardPairs, end = std::min(batch.size(), begin + kShardPairs);
    double sum = 0.0;
    for (std::size_t b = begin; b < end; ++b)
      sum += accumulate_gradients(params, data.pairs[batch[b]], loss, scale, g);
    shard_loss[s] = sum;
  };
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, shards));
  if (workers <= 1) {
    for (std::size_t s = 0; s < shards; ++s)
      run_shard(s);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < shards; s += workers)
          run_shard(s);
      });
  }
  // Fixed pairwise tree reduction into shard 0.
  for (std::size_t stride = 1; stride < shards; stride *= 2)
    for (std::size_t s = 0; s + stride < shards; s += 2 * stride) {
      shard_grads[s].axpy(1.0, shard_grads[s + stride]);
      shard_loss[s] += shard_loss[s + stride];
    }
  params.axpy(-lr, shard_grads[0]);
  return shard_loss[0] * scale;
}

}  // namespace

TrainResult train(const ParallelCorpus& corpus, std::span<const TrainConfig> schedule, const TrainOptions& options) {
  if (schedule.empty())
    throw Error("training schedule is empty");
  if (corpus.pairs.empty())
    throw Error("training corpus is empty");
  bool seen_finetune = false;
  for (const auto& config : schedule) {
    config.validate();
    if (config.phase == Phase::finetune)
      seen_finetune = true;
    else if (seen_finetune)
      throw Error("schedule runs a pretrain phase after a finetune phase");
  }
  if (schedule.front().phase == Phase::finetune && !options.initial)
    throw Error("schedule starts with finetuning but no initial parameters were given");

  TrainResult result;
  const auto& sv = *corpus.source_vocab;
  const auto& tv = *corpus.target_vocab;
  result.params = options.initial ? *options.initial
                                  : ModelParams::random(sv.size(), tv.size(), options.embed_dim, options.hidden_dim,
                                                        options.init_seed, options.init_scale);
  if (result.params.source_vocab != sv.size() || result.params.target_vocab != tv.size())
    throw Error("initial parameters do not match the corpus vocabularies");

  const FrequencyTable table = count_frequencies(corpus);
  std::vector<ModelParams> shard_grads;
  std::vector<double> shard_loss;

  for (std::size_t phase = 0; phase < schedule.size(); ++phase) {
    const auto& config = schedule[phase];
    const LossConfig loss = resolve_loss(config.loss, table, tv);
    const ParallelCorpus data = phase_data(corpus, config, table);
    const double lr = config.effective_learning_rate();
    std::mt19937_64 rng(config.seed * 0x9E3779B97F4A7C15ULL + phase + 1);
    std::vector<std::size_t> order(data.size());
    std::size_t steps = 0, epoch = 0;
    while (steps < config.max_steps) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
      EpochLog log{phase, epoch, 0, 0.0, std::nullopt};
      double loss_sum = 0.0;
      for (std::size_t start = 0; start < order.size() && steps < config.max_steps; start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        ModelParams last_good = result.params;
        const double batch_loss = sgd_step(result.params, data, std::span(order).subspan(start, end - start), loss,
                                           lr, options.threads, shard_grads, shard_loss);
        if (!std::isfinite(batch_loss) || !result.params.all_finite()) {
          if (!options.checkpoint_prefix.empty())
            save_checkpoint(options.checkpoint_prefix + ".last_good.ckpt",
                            {last_good, corpus.source_vocab, corpus.target_vocab});
          throw DivergenceError("training diverged in phase " + std::to_string(phase) + " at step " +
                                    std::to_string(steps),
                                std::move(last_good));
        }
        loss_sum += batch_loss;
        ++steps;
        ++log.steps;
      }
      log.mean_loss = log.steps ? loss_sum / static_cast<double>(log.steps) : 0.0;
      if (options.validation)
        log.validation_loss = corpus_loss(result.params, *options.validation, loss);
      result.log.push_back(log);
      ++epoch;
    }
    if (!options.checkpoint_prefix.empty())
      save_checkpoint(options.checkpoint_prefix + ".phase" + std::to_string(phase) + ".ckpt",
                      {result.params, corpus.source_vocab, corpus.target_vocab});
  }
  return result;
}

void DecodeConfig::validate() const {
  if (beam_size < 1)
    throw Error("beam size must be >= 1");
  if (max_length < 1)
    throw Error("max_length must be >= 1");
}

double length_normalizer(std::size_t length, double alpha) {
  return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

namespace {

bool decodable(TokenId t) { return t != Vocabulary::kPad && t != Vocabulary::kBos; }

std::vector<TokenId> decode_greedy(const ModelParams& p, std::span<const TokenId> source, std::size_t max_length) {
  PairActivations act;
  compute_context(p, source, act);
  std::vector<double> hidden(p.hidden_dim), logits(p.target_vocab);
  std::vector<TokenId> out;
  TokenId previous = Vocabulary::kBos;
  for (std::size_t k = 0; k < max_length; ++k) {
    step_forward(p, act, aligned_source(source, k), previous, hidden, logits);
    TokenId best = -1;
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const auto id = static_cast<TokenId>(t);
      if (decodable(id) && (best < 0 || logits[t] > logits[static_cast<std::size_t>(best)]))
        best = id;
    }
    if (best == Vocabulary::kEos)
      break;
    out.push_back(best);
    previous = best;
  }
  return out;
}

struct Hypothesis {
  std::vector<TokenId> tokens;
  double log_prob = 0.0;
};

std::vector<TokenId> decode_beam(const ModelParams& p, std::span<const TokenId> source, const DecodeConfig& config) {
  PairActivations act;
  compute_context(p, source, act);
  std::vector<double> hidden(p.hidden_dim), logits(p.target_vocab);
  std::vector<Hypothesis> live{{{}, 0.0}};
  struct Finished {
    std::vector<TokenId> tokens;
    double score;
  };
  std::vector<Finished> finished;
  struct Candidate {
    double log_prob;
    std::size_t beam;
    TokenId token;
  };
  std::vector<Candidate> candidates;

  for (std::size_t k = 0; k < config.max_length && !live.empty(); ++k) {
    candidates.clear();
    for (std::size_t b = 0; b < live.size(); ++b) {
      const TokenId previous = live[b].tokens.empty() ? Vocabulary::kBos : live[b].tokens.back();
      step_forward(p, act, aligned_source(source, k), previous, hidden, logits);
      const double m = *std::max_element(logits.begin(), logits.end());
      double z = 0.0;
      for (double l : logits)
        z += std::exp(l - m);
      const double log_z = m + std::log(z);
      for (std::size_t t = 0; t < logits.size(); ++t)
        if (decodable(static_cast<TokenId>(t)))
          candidates.push_back({live[b].log_prob + logits[t] - log_z, b, static_cast<TokenId>(t)});
    }
    const std::size_t keep = std::min(live.size(), candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.log_prob != b.log_prob)
                          return a.log_prob > b.log_prob;
                        if (a.beam != b.beam)
                          return a.beam < b.beam;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t c = 0; c < keep; ++c) {
      const auto& cand = candidates[c];
      auto tokens = live[cand.beam].tokens;
      if (cand.token == Vocabulary::kEos) {
        finished.push_back(
            {std::move(tokens), cand.log_prob / length_normalizer(live[cand.beam].tokens.size() + 1,
                                                                  config.length_penalty)});
      } else {
        tokens.push_back(cand.token);
        next.push_back({std::move(tokens), cand.log_prob});
      }
    }
    live = std::move(next);
  }
  for (auto& h : live)
    finished.push_back({h.tokens, h.log_prob / length_normalizer(h.tokens.size(), config.length_penalty)});
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].score > finished[best].score)
      best = i;
  return finished.empty() ? std::vector<TokenId>{} : finished[best].tokens;
}

}  // namespace

std::vector<TokenId> decode(const ModelParams& params, std::span<const TokenId> source, const DecodeConfig& config) {
  config.validate();
  if (source.empty())
    throw Error("cannot decode an empty source sentence");
  for (TokenId id : source)
    if (id < 0 || static_cast<std::size_t>(id) >= params.source_vocab)
      throw Error("source id " + std::to_string(id) + " outside the model vocabulary");
  if (config.mode == DecodeConfig::Mode::greedy)
    return decode_greedy(params, source, config.max_length);
  return decode_beam(params, source, config);
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += std::string(kCheckpointMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
  const auto& p = ckpt.params;
  out += "dims " + std::to_string(p.source_vocab) + " " + std::to_string(p.target_vocab) + " " +
         std::to_string(p.embed_dim) + " " + std::to_string(p.hidden_dim) + "\n";
  auto write_vocab = [&](const char* name, const Vocabulary& vocab) {
    out += "vocab " + std::string(name) + " " + std::to_string(vocab.size() - Vocabulary::kNumReserved) + "\n";
    for (std::size_t id = Vocabulary::kNumReserved; id < vocab.size(); ++id)
      out += vocab.tokens()[id] + "\n";
  };
  write_vocab("source", *ckpt.source_vocab);
  write_vocab("target", *ckpt.target_vocab);
  char buf[40];
  for (const auto& block : const_cast<ModelParams&>(p).blocks()) {
    out += "param " + std::string(block.name) + " " + std::to_string(block.rows) + " " + std::to_string(block.cols) +
           "\n";
    const auto& v = *block.values;
    for (std::size_t r = 0; r < block.rows; ++r) {
      for (std::size_t c = 0; c < block.cols; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", v[r * block.cols + c]);
        if (c)
          out += ' ';
        out += buf;
      }
      out += '\n';
    }
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write " + path.string());
  out << serialize_checkpoint(checkpoint);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error("cannot open " + path.string());
  const std::string name = path.string();
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic)
    throw ParseError(name, 1, "not an adaptok checkpoint");
  if (version != kCheckpointVersion)
    throw ParseError(name, 1, "unsupported checkpoint version " + std::to_string(version));
  std::string keyword;
  std::size_t vs = 0, vt = 0, d = 0, h = 0;
  in >> keyword >> vs >> vt >> d >> h;
  if (keyword != "dims" || !in)
    throw ParseError(name, 2, "expected dims line");
  Checkpoint ckpt;
  auto read_vocab = [&](const char* expected) {
    std::string kw, which;
    std::size_t n = 0;
    in >> kw >> which >> n;
    if (kw != "vocab" || which != expected || !in)
      throw Error(name + ": expected vocab " + expected);
    std::vector<std::string> tokens(n);
    for (auto& t : tokens)
      in >> t;
    if (!in)
      throw Error(name + ": truncated vocabulary");
    return std::make_shared<const Vocabulary>(tokens);
  };
  ckpt.source_vocab = read_vocab("source");
  ckpt.target_vocab = read_vocab("target");
  if (ckpt.source_vocab->size() != vs || ckpt.target_vocab->size() != vt)
    throw Error(name + ": vocabulary sizes disagree with dims");
  ckpt.params = ModelParams::zeros(vs, vt, d, h);
  for (auto& block : ckpt.params.blocks()) {
    std::string kw, block_name;
    std::size_t rows = 0, cols = 0;
    in >> kw >> block_name >> rows >> cols;
    if (kw != "param" || block_name != block.name || rows != block.rows || cols != block.cols)
      throw Error(name + ": expected parameter block " + block.name);
    for (double& v : *block.values) {
      std::string token;
      in >> token;
      try {
        v = std::stod(token);
      } catch (const std::exception&) {
        throw Error(name + ": bad value in block " + block.name);
      }
    }
  }
  return ckpt;
}

void ZipfTaskConfig::validate() const {
  if (vocab_size < 10)
    throw Error("Zipf task needs vocab_size >= 10");
  if (!(exponent >= 0.0) || !std::isfinite(exponent))
    throw Error("Zipf exponent must be >= 0");
  if (pairs == 0)
    throw Error("Zipf task needs at least one pair");
  if (min_length == 0 || max_length < min_length)
    throw Error("invalid sentence length range");
}

namespace {

// Pronounceable pseudo-words: index written in base |syllables|, at least two syllables.
std::string pseudo_word(std::size_t index, std::string_view consonants, std::string_view vowels) {
  const std::size_t base = consonants.size() * vowels.size();
  std::size_t n = index + base;
  std::vector<std::size_t> digits;
  while (n > 0) {
    digits.push_back(n % base);
    n /= base;
  }
  std::string word;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    word += consonants[*it / vowels.size()];
    word += vowels[*it % vowels.size()];
  }
  return word;
}

}  // namespace

ZipfTask generate_zipf_task(const ZipfTaskConfig& config) {
  config.validate();
  const std::size_t v = config.vocab_size;
  std::mt19937_64 rng(config.seed);

  std::vector<std::string> source_words(v), target_words(v);
  for (std::size_t i = 0; i < v; ++i) {
    source_words[i] = pseudo_word(i, "ptkbdg", "aiu");
    target_words[i] = pseudo_word(i, "mnlrsvzf", "aeiou");
  }
  std::vector<std::size_t> relabel(v);
  std::iota(relabel.begin(), relabel.end(), std::size_t{0});
  for (std::size_t i = v; i > 1; --i)
    std::swap(relabel[i - 1], relabel[uniform_index(rng, i)]);

  std::vector<double> cumulative(v);
  double acc = 0.0;
  for (std::size_t r = 0; r < v; ++r) {
    acc += std::pow(static_cast<double>(r + 1), -config.exponent);
    cumulative[r] = acc;
  }
  for (double& c : cumulative)
    c /= acc;

  auto source_vocab = std::make_shared<const Vocabulary>(source_words);
  auto target_vocab = std::make_shared<const Vocabulary>(target_words);
  auto sample_corpus = [&](std::size_t n) {
    ParallelCorpus corpus{source_vocab, target_vocab, {}};
    corpus.pairs.reserve(n);
    const std::size_t span = config.max_length - config.min_length + 1;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = config.min_length + uniform_index(rng, span);
      SentencePair pair;
      for (std::size_t k = 0; k < len; ++k) {
        const double u = uniform01(rng);
        auto r = static_cast<std::size_t>(std::upper_bound(cumulative.begin(), cumulative.end(), u) -
                                          cumulative.begin());
        r = std::min(r, v - 1);
        pair.source.push_back(static_cast<TokenId>(Vocabulary::kNumReserved + r));
        pair.target.push_back(static_cast<TokenId>(Vocabulary::kNumReserved + relabel[r]));
      }
      corpus.pairs.push_back(std::move(pair));
    }
    return corpus;
  };

  ZipfTask task;
  task.train = sample_corpus(config.pairs);
  task.heldout = sample_corpus(config.heldout_pairs);
  for (std::size_t r = 0; r < v; ++r)
    task.mapping.emplace_back(source_words[r], target_words[relabel[r]]);
  return task;
}

}  // namespace adaptok
