#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adaptok/corpus.hpp"
#include "adaptok/loss.hpp"
#include "adaptok/weighting.hpp"

namespace adaptok {

// Parameters of the reference encoder-decoder:
//
//   m    = mean_j E_src[x_j]                       (source context)
//   a_k  = E_src[x_k]  (E_src[</s>] once k >= J)   (aligned source token)
//   s_k  = E_tgt[y_{k-1}] (E_tgt[<s>] at k = 0)    (decoder state)
//   h_k  = tanh(W_ctx^T m + W_align^T a_k + W_state^T s_k + b_hidden)
//   p_k  = softmax(W_out^T h_k + b_out)
//
// Matrices are row-major. A target of length K is scored at K + 1
// positions, the last one predicting </s>.
struct ModelParams {
  std::size_t source_vocab = 0;
  std::size_t target_vocab = 0;
  std::size_t embed_dim = 0;
  std::size_t hidden_dim = 0;

  std::vector<double> source_embedding;  // source_vocab x embed_dim
  std::vector<double> target_embedding;  // target_vocab x embed_dim
  std::vector<double> context_proj;      // embed_dim x hidden_dim
  std::vector<double> align_proj;        // embed_dim x hidden_dim
  std::vector<double> state_proj;        // embed_dim x hidden_dim
  std::vector<double> hidden_bias;       // hidden_dim
  std::vector<double> output_proj;       // hidden_dim x target_vocab
  std::vector<double> output_bias;       // target_vocab

  struct Block {
    const char* name;
    std::size_t rows;
    std::size_t cols;
    std::vector<double>* values;
  };

  static ModelParams zeros(std::size_t source_vocab, std::size_t target_vocab, std::size_t embed_dim,
                           std::size_t hidden_dim);
  // Uniform(-scale, scale) weights, zero biases.
  static ModelParams random(std::size_t source_vocab, std::size_t target_vocab, std::size_t embed_dim,
                            std::size_t hidden_dim, std::uint64_t seed, double scale = 0.1);

  std::vector<Block> blocks();
  std::size_t num_values() const;
  bool all_finite() const;
  void set_zero();
  // this += factor * other
  void axpy(double factor, const ModelParams& other);
  bool operator==(const ModelParams& other) const = default;
};

std::vector<StepDistribution> forward(const ModelParams& params, const SentencePair& pair);

// Loss of one sentence pair (objective normalized by its K + 1 positions).
double pair_loss(const ModelParams& params, const SentencePair& pair, const LossConfig& config);

// Gradients of pair_loss with respect to every parameter block.
ModelParams backward(const ModelParams& params, const SentencePair& pair, const LossConfig& config);

// Adds scale * d(sum of position objectives)/d params into grads and returns
// the unscaled sum of position objectives. Used by the batched trainer.
double accumulate_gradients(const ModelParams& params, const SentencePair& pair, const LossConfig& config,
                            double scale, ModelParams& grads);

enum class Phase { pretrain, finetune };
enum class DataMode { full, rare_subset, oversampled };
std::string to_string(Phase phase);
std::string to_string(DataMode mode);
Phase parse_phase(std::string_view name);
DataMode parse_data_mode(std::string_view name);

// Serializable description of the loss, resolved against the training
// corpus frequencies at the start of each phase.
struct LossSpec {
  enum class Kind { uniform, exponential, chi_square, linear, static_file, focal };
  Kind kind = Kind::uniform;
  double temperature = 1.0;
  double amplitude = 0.0;  // 0 = calibrated
  bool normalize_by_median = true;
  std::string weights_file;
  double focal_gamma = 1.0;
  bool focal_plus_one = false;
  double label_smoothing = 0.1;
  double entropy_penalty = 0.0;
  EntropyTerm entropy_term = EntropyTerm::full_distribution;
};
std::string to_string(LossSpec::Kind kind);
LossSpec::Kind parse_loss_kind(std::string_view name);

LossConfig resolve_loss(const LossSpec& spec, const FrequencyTable& table, const Vocabulary& target_vocab);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  LossSpec loss;
  double learning_rate = 0.5;
  double finetune_lr_ratio = 0.1;  // applied in finetune phases only
  std::size_t max_steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 17;
  DataMode data_mode = DataMode::full;
  double rare_fraction = 1.0 / 3.0;
  int oversample_factor = 3;

  void validate() const;
  double effective_learning_rate() const {
    return phase == Phase::finetune ? learning_rate * finetune_lr_ratio : learning_rate;
  }
};

struct EpochLog {
  std::size_t phase = 0;
  std::size_t epoch = 0;
  std::size_t steps = 0;  // updates taken in this epoch
  double mean_loss = 0.0;
  std::optional<double> validation_loss;
};

struct TrainOptions {
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 32;
  double init_scale = 0.1;
  std::uint64_t init_seed = 17;
  unsigned threads = 1;
  // Written as <prefix>.phase<N>.ckpt after each phase when non-empty.
  std::string checkpoint_prefix;
  const ParallelCorpus* validation = nullptr;
  // Start from these instead of a fresh initialization. A schedule that
  // begins with a finetune phase requires this.
  std::optional<ModelParams> initial;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
};

// Raised when the training loss becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, ModelParams last_good)
      : std::runtime_error(what), last_good_(std::move(last_good)) {}
  const ModelParams& last_good() const noexcept { return last_good_; }

 private:
  ModelParams last_good_;
};

// Plain minibatch SGD over the schedule. Each batch is split into fixed
// shards of at most 8 pairs whose gradients are reduced in a fixed tree
// order, so results do not depend on options.threads.
TrainResult train(const ParallelCorpus& corpus, std::span<const TrainConfig> schedule,
                  const TrainOptions& options = {});

struct DecodeConfig {
  enum class Mode { greedy, beam };
  Mode mode = Mode::beam;
  std::size_t beam_size = 4;
  double length_penalty = 0.6;
  std::size_t max_length = 64;

  void validate() const;
};

// GNMT-style length normalization ((5 + len) / 6)^alpha, len counting </s>.
double length_normalizer(std::size_t length, double alpha);

// Returns the generated target ids without </s>. Greedy takes the argmax
// (lowest id on ties). Beam search keeps `beam_size` hypotheses, retires the
// ones ending in </s>, and shrinks the live beam by one for each; the best
// retired hypothesis by log-prob / length_normalizer wins.
std::vector<TokenId> decode(const ModelParams& params, std::span<const TokenId> source, const DecodeConfig& config);

struct Checkpoint {
  ModelParams params;
  std::shared_ptr<const Vocabulary> source_vocab;
  std::shared_ptr<const Vocabulary> target_vocab;
};

// Versioned text format: header, vocabularies, named parameter blocks with
// values written as %.17g so loading is exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& checkpoint);

struct ZipfTaskConfig {
  std::size_t vocab_size = 200;
  double exponent = 1.0;
  std::size_t pairs = 10000;
  std::size_t min_length = 3;
  std::size_t max_length = 8;
  std::uint64_t seed = 17;
  std::size_t heldout_pairs = 0;

  void validate() const;
};

struct ZipfTask {
  ParallelCorpus train;
  ParallelCorpus heldout;
  // source word -> target word, in source frequency-rank order.
  std::vector<std::pair<std::string, std::string>> mapping;
};

// Source tokens drawn i.i.d. with P(rank r) proportional to r^-exponent;
// the target is a fixed seeded bijective relabeling of each source token.
ZipfTask generate_zipf_task(const ZipfTaskConfig& config);

}  // namespace adaptok
