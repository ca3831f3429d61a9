#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deltamem/deltaformer.hpp"
#include "deltamem/kernels.hpp"
#include "deltamem/matrix.hpp"
#include "deltamem/rng.hpp"
#include "deltamem/tape.hpp"

namespace deltamem {

enum class AttentionKind { Standard, DeltaFormer };
// Absolute = learned per-position embedding added to the token embedding; the
// DAG task needs it because a node's own id is its position.
enum class PositionKind { NoPE, RoPE, Absolute };

std::string attention_name(AttentionKind a);
std::string position_name(PositionKind p);

struct ModelConfig {
  std::size_t vocab_in = 10;
  std::size_t vocab_out = 5;
  std::size_t dim = 12;
  std::size_t n_layers = 1;
  std::size_t num_q_heads = 4;
  std::size_t num_kv_heads = 1;
  AttentionKind attention = AttentionKind::DeltaFormer;
  // kappa1 / kappa2 are read from here (Linear, Exp, ReLU, Round, SoftmaxRow).
  // Standard attention uses kappa2 only. Scores are q.k / sqrt(head_dim).
  // alpha / beta are the initial values of the learned gates.
  DeltaFormerConfig delta{};
  PositionKind positions = PositionKind::NoPE;
  double rope_base = 10000.0;
  std::size_t max_len = 0;  // Absolute positions only
  // Round without STE is a constant: no gradient flows through it.
  bool straight_through_round = true;
  // RMS-normalize every head's output before the output projection.
  bool head_rms_norm = false;

  std::size_t head_dim() const { return dim / num_q_heads; }
};

// Throws DimensionError on a malformed config.
void validate(const ModelConfig& cfg);

struct Param {
  std::string name;
  Matrix value;
};

// Parameters in a fixed order:
//   embed, [pos_embed], per layer l: l.q_w l.q_b l.k_w l.k_b l.v_w l.v_b
//   l.o_w l.o_b [l.w_w l.w_b l.alpha l.beta l.w_weight], unembed.
// Linear weights are (in x out) so y = x W + b; init is U(-1/sqrt(in),
// 1/sqrt(in)) for weights and biases, N(0,1) for embeddings and w_weight.
struct Model {
  ModelConfig cfg;
  std::vector<Param> params;

  std::size_t index(const std::string& name) const;  // throws DimensionError
  Matrix& at(const std::string& name) { return params[index(name)].value; }
  const Matrix& at(const std::string& name) const { return params[index(name)].value; }
  std::size_t parameter_count() const;
};

Model build_model(const ModelConfig& cfg, const Rng& rng);

// Records the forward pass of one sequence; `leaves` holds one tape leaf per
// parameter, in Model::params order. Returns T x vocab_out logits.
Var forward(const Model& model, Tape& tape, const std::vector<Var>& leaves, const std::vector<int>& tokens);

// Inference-only convenience.
Matrix logits(const Model& model, const std::vector<int>& tokens);

// One attention block (no residual) on an explicit input; used to compare the
// DeltaFormer and Standard paths on identical parameters.
Matrix attention_block(const Model& model, std::size_t layer, const Matrix& x);

// A training example. Label -1 means "no loss at this position".
struct Example {
  std::vector<int> tokens;
  std::vector<int> labels;
};

struct BatchStats {
  double loss = 0.0;
  double accuracy = 0.0;
};

// Mean over samples of the per-sample mean cross-entropy over labelled
// positions. With grads != nullptr, *grads receives d loss / d param
// (one matrix per parameter). Samples are independent tapes; the gradient
// sum is taken in sample order, so the result does not depend on threads.
BatchStats evaluate_batch(const Model& model, const std::vector<Example>& batch, std::vector<Matrix>* grads = nullptr);

// max over parameter entries of |g_ad - g_fd| / max(1e-3, |g_ad| + |g_fd|)
// with central differences of step eps.
double model_grad_check(const Model& model, const std::vector<Example>& batch, double eps = 1e-6);

// ---------------------------------------------------------------- optimizer

// Linear warmup from 0 to lr over `warmup` steps, then linear decay to 0 at
// `total` steps (the usual "linear" schedule).
double linear_schedule(double lr, std::size_t warmup, std::size_t total, std::size_t step);

// Adam with decoupled weight decay:
//   p -= lr wd p;  m, v moments;  p -= lr m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(double weight_decay = 0.01, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // `frozen` (optional) marks parameters that must not move.
  void step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, double lr,
            const std::vector<bool>& frozen = {});
  std::size_t steps() const noexcept { return t_; }

 private:
  double wd_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

// ---------------------------------------------------------------- training

struct Curriculum {
  double threshold = 0.99;
  std::size_t start_len = 32;
  std::size_t max_len = 256;
};

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 0.01;
  std::size_t warmup_steps = 128;
  std::size_t epochs = 4000;  // one batch per epoch, data regenerated
  std::size_t batch = 128;
  std::size_t seq_len = 16;  // used when there is no curriculum
  std::optional<Curriculum> curriculum;
  std::uint64_t seed = 0;
  // Stop once the curriculum sits at max_len and a step clears the threshold.
  bool stop_at_target = false;
  // Wall-clock cap in seconds (0: none). Hitting it ends training early with
  // TrainResult::timed_out; the schedule still assumes `epochs` steps.
  double max_seconds = 0.0;
};

// Throws DimensionError on a malformed config.
void validate(const TrainConfig& cfg);

enum class TaskKind { Swap, Dag };
struct Task {
  TaskKind kind = TaskKind::Swap;
  std::size_t n = 5;
};

// Vocabularies the model must have for the task: Swap(n) is C(n,2) -> n,
// Dag(n) is n+1 -> 2 (sequence length n).
std::size_t task_vocab_in(const Task& task);
std::size_t task_vocab_out(const Task& task);
std::vector<Example> make_batch(const Task& task, std::size_t len, std::size_t batch, Rng& rng);

struct StepLog {
  std::size_t step = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t cur_len = 0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<StepLog> log;
  bool diverged = false;
  bool reached_target = false;  // max_len reached and cleared (curriculum)
  bool timed_out = false;
};

// Step s trains on a fresh batch at the current length; the logged loss and
// accuracy are those of that batch before the update. The curriculum doubles
// cur_len after a step whose accuracy exceeds the threshold. A non-finite
// loss stops training with diverged = true (the log so far is kept).
// `on_step` (optional) sees every log entry as it is produced.
TrainResult train(Model& model, const Task& task, const TrainConfig& tcfg,
                  const std::function<void(const StepLog&)>& on_step = {});

void write_train_log(std::ostream& out, const std::vector<StepLog>& log);

// Checkpoint: `<stem>.bin` holds every parameter's entries as little-endian
// float64, concatenated in order; `<stem>.manifest` has one line per
// parameter: "name rows cols offset" (offset in doubles).
void save_checkpoint(const Model& model, const std::string& stem);
// Loads into a model built with the same config; throws std::runtime_error
// on a missing file or a name/shape mismatch.
void load_checkpoint(Model& model, const std::string& stem);

// ---------------------------------------------------------------- experiments

// Reading test on frozen constructive keys: a sequence starts with n writes
// (k_i, v_i) followed by train_len swap writes (k_a - k_b, 0), with
// kappa1 = kappa2 = the given kernel on raw dot products. u is fixed by the
// construction; only the query vector and a linear readout (d_v x n plus
// bias) train, to predict the element at slot 0 after every swap. Swaps are
// star transpositions (0 j). Values are random +-1 codes of length value_dim.
struct StressConfig {
  std::size_t n = 128;
  std::size_t d = 128;
  std::size_t train_len = 256;
  std::size_t value_dim = 32;
  std::size_t pool = 64;        // fixed training sequences
  std::size_t eval_pool = 16;   // held-out sequences
  std::size_t key_iterations = 200;  // spread_keys budget when n > d
  // Start the query at k_0 (as the construction would) rather than at random;
  // the readout always starts at random. With a random query Round's
  // straight-through gradient never leaves the all-zero region at n = 512.
  bool constructive_query = true;
  std::size_t eval_every = 1;  // held-out accuracy every this many steps (and after the last)
};

struct StressResult {
  double key_epsilon = 0.0;
  std::vector<std::size_t> steps;  // steps after which accuracy was measured
  std::vector<double> accuracy;    // held-out read accuracy at those steps
  double initial_accuracy = 0.0; // with the query set to k_0 and the readout to the codes
  double final_accuracy() const { return accuracy.empty() ? 0.0 : accuracy.back(); }
};

// tcfg.epochs steps of tcfg.batch sequences sampled from the pool.
StressResult stress_fixed_kv(const StressConfig& scfg, const KernelSpec& kappa1, const TrainConfig& tcfg);

enum class HeadAttention { SoftmaxRmsNorm, LinearRmsNorm };
std::string head_attention_name(HeadAttention a);

struct HeadTradeoffRow {
  std::size_t heads = 0;
  HeadAttention kind = HeadAttention::SoftmaxRmsNorm;
  double val_loss = 0.0;
};

// Tiny synthetic LM: each sequence lists `pairs` (key,value) tokens from a
// table of `keys` x `values`, then `queries` tokens each naming an ordered
// pair of keys; the target is the ordered pair of their values. Loss is on
// query positions only. One Standard-attention layer, per-head RMS norm.
struct HeadTradeoffConfig {
  std::size_t dim = 32;
  std::size_t keys = 16;
  std::size_t values = 4;
  std::size_t pairs = 12;
  std::size_t queries = 8;
  std::size_t val_batch = 256;
  // Target the ordered pair (v(a), v(b)) or the unordered one.
  bool ordered = true;
};

std::vector<Example> head_tradeoff_data(const HeadTradeoffConfig& hc, std::size_t batch, Rng& rng);

std::vector<HeadTradeoffRow> head_tradeoff_tiny(const std::vector<std::size_t>& heads_list, HeadAttention kind,
                                                const TrainConfig& tcfg, const HeadTradeoffConfig& hc = {});

}  // namespace deltamem
