#include "deltamem/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "deltamem/errors.hpp"
#include "deltamem/parallel.hpp"
#include "deltamem/state_tracking.hpp"
#include "deltamem/tasks.hpp"

namespace deltamem {

std::string attention_name(AttentionKind a) { return a == AttentionKind::Standard ? "standard" : "deltaformer"; }

std::string position_name(PositionKind p) {
  switch (p) {
    case PositionKind::NoPE: return "nope";
    case PositionKind::RoPE: return "rope";
    case PositionKind::Absolute: return "absolute";
  }
  return "?";
}

namespace {

bool supported_kernel(KernelKind k) { return k != KernelKind::SoLU; }

}  // namespace

void validate(const ModelConfig& cfg) {
  if (cfg.vocab_in == 0 || cfg.vocab_out == 0) throw DimensionError("ModelConfig: empty vocabulary");
  if (cfg.dim == 0 || cfg.num_q_heads == 0 || cfg.num_kv_heads == 0)
    throw DimensionError("ModelConfig: dim and head counts must be positive");
  if (cfg.dim % cfg.num_q_heads) throw DimensionError("ModelConfig: dim must be divisible by num_q_heads");
  if (cfg.num_q_heads % cfg.num_kv_heads) throw DimensionError("ModelConfig: num_kv_heads must divide num_q_heads");
  if (!supported_kernel(cfg.delta.kappa1.kind) || !supported_kernel(cfg.delta.kappa2.kind))
    throw DimensionError("ModelConfig: SoLU is not available in the model");
  if (cfg.positions == PositionKind::Absolute && cfg.max_len == 0)
    throw DimensionError("ModelConfig: absolute positions need max_len");
  if (cfg.positions == PositionKind::RoPE && !(cfg.rope_base > 1.0)) throw DimensionError("ModelConfig: rope_base must exceed 1");
}

std::size_t Model::index(const std::string& name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return i;
  throw DimensionError("Model: no parameter named " + name);
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

Model build_model(const ModelConfig& cfg, const Rng& rng) {
  validate(cfg);
  Model m;
  m.cfg = cfg;
  Rng r = rng;
  const std::size_t D = cfg.dim, kv = cfg.head_dim() * cfg.num_kv_heads;
  auto uniform = [&](std::size_t rows, std::size_t cols, std::size_t fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(rows, cols);
    for (double& e : w.data()) e = (2.0 * r.uniform() - 1.0) * b;
    return w;
  };
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    m.params.push_back({name + "_w", uniform(in, out, in)});
    m.params.push_back({name + "_b", uniform(1, out, in)});
  };

  m.params.push_back({"embed", r.gaussian_matrix(cfg.vocab_in, D)});
  if (cfg.positions == PositionKind::Absolute) m.params.push_back({"pos_embed", r.gaussian_matrix(cfg.max_len, D)});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = std::to_string(l) + ".";
    linear(p + "q", D, D);
    linear(p + "k", D, kv);
    linear(p + "v", D, kv);
    linear(p + "o", D, D);
    if (cfg.attention == AttentionKind::DeltaFormer) {
      linear(p + "w", D, D);
      m.params.push_back({p + "alpha", Matrix(1, 1, cfg.delta.alpha)});
      m.params.push_back({p + "beta", Matrix(1, 1, cfg.delta.beta)});
      m.params.push_back({p + "w_weight", r.gaussian_matrix(1, cfg.num_q_heads)});
    }
  }
  m.params.push_back({"unembed", uniform(D, cfg.vocab_out, D)});
  return m;
}

namespace {

// kappa applied to a T x T score matrix that is already zero outside the mask.
Var apply_kernel(Tape& t, Var s, const KernelSpec& k, Mask mask, bool ste) {
  const double tau = k.tau > 0.0 ? k.tau : 1.0;
  switch (k.kind) {
    case KernelKind::Linear: return s;
    case KernelKind::ReLU: return t.relu(s);
    case KernelKind::Exp: return t.mask_lower(t.exp(t.scale(s, 1.0 / tau)), mask);
    case KernelKind::SoftmaxRow: return t.row_softmax(tau == 1.0 ? s : t.scale(s, 1.0 / tau), mask, true);
    case KernelKind::Round: {
      if (ste) return t.round_ste(s, k.round_decimals);
      Tape scratch;
      return t.leaf(scratch.value(scratch.round_ste(scratch.leaf(t.value(s)), k.round_decimals)));
    }
    case KernelKind::SoLU: break;
  }
  throw DimensionError("model: unsupported kernel");
}

struct Layer {
  Var q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b, w_w, w_b, alpha, beta, w_weight;
};

Var attention(const Model& m, Tape& t, const Layer& L, Var x) {
  const ModelConfig& c = m.cfg;
  const std::size_t hd = c.head_dim(), H = c.num_q_heads, G = H / c.num_kv_heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
  const bool delta = c.attention == AttentionKind::DeltaFormer;
  auto pos = [&](Var v) { return c.positions == PositionKind::RoPE ? t.rope(v, c.rope_base) : v; };

  const Var q = t.add_row_bias(t.matmul(x, L.q_w), L.q_b);
  const Var k = t.add_row_bias(t.matmul(x, L.k_w), L.k_b);
  const Var v = t.add_row_bias(t.matmul(x, L.v_w), L.v_b);
  Var w{};
  if (delta) w = t.add_row_bias(t.matmul(x, L.w_w), L.w_b);

  std::vector<Var> heads;
  for (std::size_t g = 0; g < c.num_kv_heads; ++g) {
    const Var kg = pos(t.slice_cols(k, g * hd, (g + 1) * hd));
    Var ug = t.slice_cols(v, g * hd, (g + 1) * hd);
    if (delta) {
      Var a{};
      for (std::size_t j = 0; j < G; ++j) {
        const std::size_t h = g * G + j;
        const Var wh = pos(t.slice_cols(w, h * hd, (h + 1) * hd));
        Var ah = apply_kernel(t, t.masked_scores(wh, kg, inv, Mask::CausalStrict), c.delta.kappa1, Mask::CausalStrict,
                              c.straight_through_round);
        ah = t.mul_scalar(ah, t.slice_cols(L.w_weight, h, h + 1));
        a = j == 0 ? ah : t.add(a, ah);
      }
      if (G > 1) a = t.scale(a, 1.0 / static_cast<double>(G));
      ug = t.tri_solve(t.mul_scalar(a, L.beta), t.mul_scalar(ug, L.alpha));
    }
    for (std::size_t j = 0; j < G; ++j) {
      const std::size_t h = g * G + j;
      const Var qh = pos(t.slice_cols(q, h * hd, (h + 1) * hd));
      const Var p = apply_kernel(t, t.masked_scores(qh, kg, inv, Mask::CausalInclusive), c.delta.kappa2, Mask::CausalInclusive,
                                 c.straight_through_round);
      Var oh = t.masked_matmul(p, ug, Mask::CausalInclusive);
      if (c.head_rms_norm) oh = t.rms_norm_rows(oh);
      heads.push_back(oh);
    }
  }
  const Var o = heads.size() == 1 ? heads[0] : t.concat_cols(heads);
  return t.add_row_bias(t.matmul(o, L.o_w), L.o_b);
}

Layer bind_layer(const Model& m, const std::vector<Var>& leaves, std::size_t l) {
  const std::string p = std::to_string(l) + ".";
  auto at = [&](const std::string& s) { return leaves[m.index(p + s)]; };
  Layer L{at("q_w"), at("q_b"), at("k_w"), at("k_b"), at("v_w"), at("v_b"), at("o_w"), at("o_b"), {}, {}, {}, {}, {}};
  if (m.cfg.attention == AttentionKind::DeltaFormer) {
    L.w_w = at("w_w");
    L.w_b = at("w_b");
    L.alpha = at("alpha");
    L.beta = at("beta");
    L.w_weight = at("w_weight");
  }
  return L;
}

std::vector<Var> bind_all(const Model& m, Tape& t) {
  std::vector<Var> leaves;
  for (const auto& p : m.params) leaves.push_back(t.leaf(p.value));
  return leaves;
}

}  // namespace

Var forward(const Model& m, Tape& t, const std::vector<Var>& leaves, const std::vector<int>& tokens) {
  if (leaves.size() != m.params.size()) throw DimensionError("forward: one leaf per parameter expected");
  if (tokens.empty()) throw DimensionError("forward: empty sequence");
  Var x = t.gather_rows(leaves[m.index("embed")], tokens);
  if (m.cfg.positions == PositionKind::Absolute) {
    if (tokens.size() > m.cfg.max_len) throw DimensionError("forward: sequence longer than max_len");
    std::vector<int> ids(tokens.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    x = t.add(x, t.gather_rows(leaves[m.index("pos_embed")], ids));
  }
  for (std::size_t l = 0; l < m.cfg.n_layers; ++l) x = t.add(x, attention(m, t, bind_layer(m, leaves, l), x));
  return t.matmul(x, leaves[m.index("unembed")]);
}

Matrix logits(const Model& model, const std::vector<int>& tokens) {
  Tape t;
  const auto leaves = bind_all(model, t);
  return t.value(forward(model, t, leaves, tokens));
}

Matrix attention_block(const Model& model, std::size_t layer, const Matrix& x) {
  if (layer >= model.cfg.n_layers) throw DimensionError("attention_block: no such layer");
  Tape t;
  const auto leaves = bind_all(model, t);
  return t.value(attention(model, t, bind_layer(model, leaves, layer), t.leaf(x)));
}

namespace {

struct SampleOut {
  double loss = 0.0;
  std::size_t correct = 0, counted = 0;
  std::vector<Matrix> grads;
};

SampleOut run_sample(const Model& m, const Example& ex, bool want_grad) {
  if (ex.tokens.size() != ex.labels.size()) throw DimensionError("evaluate_batch: tokens/labels length mismatch");
  Tape t;
  const auto leaves = bind_all(m, t);
  const Var lg = forward(m, t, leaves, ex.tokens);
  std::vector<int> rows, labels;
  for (std::size_t i = 0; i < ex.labels.size(); ++i)
    if (ex.labels[i] >= 0) {
      rows.push_back(static_cast<int>(i));
      labels.push_back(ex.labels[i]);
    }
  if (rows.empty()) throw DimensionError("evaluate_batch: sample without labels");
  const Var sel = rows.size() == ex.labels.size() ? lg : t.gather_rows(lg, rows);
  const Var loss = t.cross_entropy(sel, labels);

  SampleOut out;
  out.loss = t.value(loss)(0, 0);
  const Matrix& lv = t.value(sel);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    const auto row = lv.row(r);
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    out.correct += best == labels[r];
  }
  out.counted = lv.rows();
  if (want_grad && std::isfinite(out.loss)) {
    t.backward(loss);
    for (const Var& v : leaves) out.grads.push_back(t.grad(v));
  }
  return out;
}

}  // namespace

BatchStats evaluate_batch(const Model& model, const std::vector<Example>& batch, std::vector<Matrix>* grads) {
  if (batch.empty()) throw DimensionError("evaluate_batch: empty batch");
  std::vector<SampleOut> outs(batch.size());
  std::exception_ptr err;
  const int nthreads = thread_count();
#pragma omp parallel for schedule(static) num_threads(nthreads)
  for (std::size_t s = 0; s < batch.size(); ++s) {
    try {
      outs[s] = run_sample(model, batch[s], grads != nullptr);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  BatchStats st;
  std::size_t correct = 0, counted = 0;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& o : outs) {
    st.loss += o.loss * inv;
    correct += o.correct;
    counted += o.counted;
  }
  st.accuracy = static_cast<double>(correct) / static_cast<double>(counted);
  if (grads) {
    grads->clear();
    for (const auto& p : model.params) grads->emplace_back(p.value.rows(), p.value.cols());
    if (std::isfinite(st.loss))
      for (const auto& o : outs)
        for (std::size_t p = 0; p < grads->size(); ++p) {
          auto dst = (*grads)[p].data();
          const auto src = o.grads[p].data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i] * inv;
        }
  }
  return st;
}

double model_grad_check(const Model& model, const std::vector<Example>& batch, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-4)) throw DimensionError("model_grad_check: eps must lie in [1e-7, 1e-4]");
  std::vector<Matrix> g;
  evaluate_batch(model, batch, &g);
  Model probe = model;
  double worst = 0.0;
  for (std::size_t p = 0; p < probe.params.size(); ++p) {
    auto data = probe.params[p].value.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + eps;
      const double lp = evaluate_batch(probe, batch).loss;
      data[i] = keep - eps;
      const double lm = evaluate_batch(probe, batch).loss;
      data[i] = keep;
      const double fd = (lp - lm) / (2.0 * eps);
      const double ad = g[p].data()[i];
      worst = std::max(worst, std::abs(ad - fd) / std::max(1e-3, std::abs(ad) + std::abs(fd)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------- optimizer

double linear_schedule(double lr, std::size_t warmup, std::size_t total, std::size_t step) {
  if (step < warmup) return lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total <= warmup) return 0.0;
  return lr * std::max(0.0, static_cast<double>(total - std::min(step, total)) / static_cast<double>(total - warmup));
}

AdamW::AdamW(double weight_decay, double beta1, double beta2, double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamW::step(std::vector<Matrix*> params, const std::vector<Matrix>& grads, double lr,
                 const std::vector<bool>& frozen) {
  if (params.size() != grads.size()) throw DimensionError("AdamW: parameter/gradient count mismatch");
  if (m_.empty())
    for (const Matrix* p : params) {
      m_.emplace_back(p->rows(), p->cols());
      v_.emplace_back(p->rows(), p->cols());
    }
  if (m_.size() != params.size()) throw DimensionError("AdamW: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!frozen.empty() && frozen[p]) continue;
    auto x = params[p]->data();
    const auto g = grads[p].data();
    auto m = m_[p].data();
    auto v = v_[p].data();
    if (g.size() != x.size()) throw DimensionError("AdamW: gradient shape mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= lr * wd_ * x[i];
      m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
      v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

// ---------------------------------------------------------------- training

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.weight_decay >= 0.0)) throw DimensionError("TrainConfig: lr and weight_decay must be >= 0");
  if (cfg.batch == 0) throw DimensionError("TrainConfig: batch must be positive");
  if (cfg.curriculum) {
    const auto& c = *cfg.curriculum;
    if (!(c.threshold > 0.0 && c.threshold <= 1.0)) throw DimensionError("TrainConfig: threshold must lie in (0, 1]");
    if (c.start_len == 0 || c.max_len < c.start_len) throw DimensionError("TrainConfig: need 0 < start_len <= max_len");
  } else if (cfg.seq_len == 0) {
    throw DimensionError("TrainConfig: seq_len must be positive");
  }
}

std::size_t task_vocab_in(const Task& task) {
  return task.kind == TaskKind::Swap ? task.n * (task.n - 1) / 2 : task.n + 1;
}

std::size_t task_vocab_out(const Task& task) { return task.kind == TaskKind::Swap ? task.n : 2; }

std::vector<Example> make_batch(const Task& task, std::size_t len, std::size_t batch, Rng& rng) {
  std::vector<Example> out;
  if (task.kind == TaskKind::Swap) {
    for (auto& s : gen_swap(task.n, len, batch, rng)) out.push_back({std::move(s.input_ids), std::move(s.labels)});
  } else {
    for (auto& s : gen_dag(task.n, batch, rng)) out.push_back({std::move(s.node_tokens), std::move(s.labels)});
  }
  return out;
}

TrainResult train(Model& model, const Task& task, const TrainConfig& tcfg,
                  const std::function<void(const StepLog&)>& on_step) {
  validate(tcfg);
  if (model.cfg.vocab_in != task_vocab_in(task) || model.cfg.vocab_out != task_vocab_out(task))
    throw DimensionError("train: model vocabulary does not match the task");
  Rng data = Rng(tcfg.seed).split(1);
  AdamW opt(tcfg.weight_decay);
  std::vector<Matrix*> ptrs;
  for (auto& p : model.params) ptrs.push_back(&p.value);

  TrainResult res;
  std::size_t cur_len = tcfg.curriculum ? tcfg.curriculum->start_len : tcfg.seq_len;
  std::vector<Matrix> grads;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < tcfg.epochs; ++step) {
    if (tcfg.max_seconds > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > tcfg.max_seconds) {
      res.timed_out = true;
      break;
    }
    const double lr = linear_schedule(tcfg.lr, tcfg.warmup_steps, tcfg.epochs, step);
    const auto batch = make_batch(task, cur_len, tcfg.batch, data);
    const BatchStats st = evaluate_batch(model, batch, &grads);
    const std::size_t len = task.kind == TaskKind::Dag ? task.n : cur_len;
    res.log.push_back({step, st.loss, st.accuracy, len, lr});
    if (on_step) on_step(res.log.back());
    if (!std::isfinite(st.loss)) {
      res.diverged = true;
      break;
    }
    opt.step(ptrs, grads, lr);
    if (tcfg.curriculum && st.accuracy > tcfg.curriculum->threshold) {
      if (cur_len >= tcfg.curriculum->max_len) {
        res.reached_target = true;
        if (tcfg.stop_at_target) break;
      } else {
        cur_len = std::min(2 * cur_len, tcfg.curriculum->max_len);
      }
    }
  }
  return res;
}

void write_train_log(std::ostream& out, const std::vector<StepLog>& log) {
  out << "step,loss,accuracy,cur_len,lr\n" << std::setprecision(17);
  for (const auto& s : log) out << s.step << ',' << s.loss << ',' << s.accuracy << ',' << s.cur_len << ',' << s.lr << '\n';
}

static_assert(std::endian::native == std::endian::little, "checkpoints are written in host order");

void save_checkpoint(const Model& model, const std::string& stem) {
  std::ofstream bin(stem + ".bin", std::ios::binary);
  std::ofstream man(stem + ".manifest");
  if (!bin || !man) throw std::runtime_error("save_checkpoint: cannot open " + stem);
  std::size_t offset = 0;
  for (const auto& p : model.params) {
    const auto d = p.value.data();
    bin.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(double)));
    man << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << ' ' << offset << '\n';
    offset += d.size();
  }
  if (!bin || !man) throw std::runtime_error("save_checkpoint: write failed for " + stem);
}

void load_checkpoint(Model& model, const std::string& stem) {
  std::ifstream bin(stem + ".bin", std::ios::binary);
  std::ifstream man(stem + ".manifest");
  if (!bin || !man) throw std::runtime_error("load_checkpoint: cannot open " + stem);
  std::string name;
  std::size_t rows = 0, cols = 0, offset = 0, i = 0;
  while (man >> name >> rows >> cols >> offset) {
    if (i >= model.params.size()) throw std::runtime_error("load_checkpoint: too many parameters");
    Matrix& dst = model.params[i].value;
    if (model.params[i].name != name || dst.rows() != rows || dst.cols() != cols)
      throw std::runtime_error("load_checkpoint: mismatch at " + name);
    bin.seekg(static_cast<std::streamoff>(offset * sizeof(double)));
    bin.read(reinterpret_cast<char*>(dst.data().data()), static_cast<std::streamsize>(dst.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("load_checkpoint: truncated data for " + name);
    ++i;
  }
  if (i != model.params.size()) throw std::runtime_error("load_checkpoint: missing parameters");
}

// ---------------------------------------------------------------- stress test

namespace {

struct StressSeq {
  Matrix k;                 // L x d write keys
  Matrix u;                 // L x d_v, fixed by the construction
  std::vector<int> labels;  // element at slot 0 after swap t
};

// Swaps are star transpositions (0 j), j uniform: they generate S_n and every
// one of them moves a new element into slot 0, so reading slot 0 cannot be
// done by remembering where it started.
StressSeq build_stress_seq(const Matrix& keys, const Matrix& codes, const KernelSpec& kappa, std::size_t len, Rng& rng) {
  const std::size_t n = keys.rows(), d = keys.cols(), dv = codes.cols(), L = n + len;
  StressSeq s;
  Matrix& k = s.k;
  k = Matrix(L, d);
  s.u = Matrix(L, dv);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(keys.row(i).begin(), keys.row(i).end(), k.row(i).begin());
    std::copy(codes.row(i).begin(), codes.row(i).end(), s.u.row(i).begin());
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t t = 0; t < len; ++t) {
    const std::size_t j = 1 + rng.below(n - 1);
    for (std::size_t c = 0; c < d; ++c) k(n + t, c) = keys(0, c) - keys(j, c);
    std::swap(perm[0], perm[j]);
    s.labels.push_back(static_cast<int>(perm[0]));
  }
  // u_t = v_t - sum_{i<t} kappa(k_i . k_t) u_i, with w = k and raw scores.
  const Matrix gram = matmul_nt(k, k);
  for (std::size_t t = 0; t < L; ++t) {
    auto ut = s.u.row(t);
    for (std::size_t i = 0; i < t; ++i) {
      const double c = kernel_of_score(kappa, gram(t, i), 1.0);
      if (c == 0.0) continue;
      const auto ui = s.u.row(i);
      for (std::size_t a = 0; a < dv; ++a) ut[a] -= c * ui[a];
    }
  }
  return s;
}

struct Readout {
  Matrix q;  // 1 x d
  Matrix w;  // d_v x n
  Matrix b;  // 1 x n
};

// Cross-entropy over the len reads of one sequence; accumulates gradients
// (scaled by `weight`) when g != nullptr. Returns (loss, correct count).
std::pair<double, std::size_t> stress_sample(const Readout& r, const StressSeq& s,
                                             const KernelSpec& kappa, std::size_t n, Readout* g, double weight) {
  const std::size_t L = s.u.rows(), dv = s.u.cols(), len = L - n;
  std::vector<double> score(L), coef(L);
  for (std::size_t i = 0; i < L; ++i) {
    score[i] = dot(s.k.row(i), r.q.row(0));
    coef[i] = kernel_of_score(kappa, score[i], 1.0);
  }
  // o_t = sum_{i <= n + t} coef_i u_i
  Matrix o(len, dv);
  std::vector<double> run(dv, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    if (coef[i] != 0.0)
      for (std::size_t a = 0; a < dv; ++a) run[a] += coef[i] * s.u(i, a);
    if (i >= n) std::copy(run.begin(), run.end(), o.row(i - n).begin());
  }
  Matrix lg = matmul(o, r.w);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t t = 0; t < len; ++t) {
    auto row = lg.row(t);
    for (std::size_t c = 0; c < n; ++c) row[c] += r.b(0, c);
    const double mx = *std::max_element(row.begin(), row.end());
    correct += static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()) == s.labels[t];
    double z = 0.0;
    for (double e : row) z += std::exp(e - mx);
    loss += std::log(z) + mx - row[s.labels[t]];
    if (g) {
      for (std::size_t c = 0; c < n; ++c) row[c] = std::exp(row[c] - mx) / z;
      row[s.labels[t]] -= 1.0;
      for (double& e : row) e *= weight / static_cast<double>(len);
    }
  }
  if (g) {
    g->w = add(g->w, matmul(transpose(o), lg));
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < n; ++c) g->b(0, c) += lg(t, c);
    const Matrix d_o = matmul_nt(lg, r.w);  // len x d_v
    // d coef_i = (sum_{t >= i - n} d_o_t) . u_i; identity derivative for
    // Linear and for Round (straight-through).
    std::vector<double> suffix(dv, 0.0);
    for (std::size_t i = L; i-- > 0;) {
      if (i >= n)
        for (std::size_t a = 0; a < dv; ++a) suffix[a] += d_o(i - n, a);
      const double dc = dot(suffix, s.u.row(i));
      const double ds = kappa.kind == KernelKind::Exp ? dc * coef[i] : (kappa.kind == KernelKind::ReLU && score[i] <= 0 ? 0.0 : dc);
      if (ds != 0.0)
        for (std::size_t c = 0; c < r.q.cols(); ++c) g->q(0, c) += ds * s.k(i, c);
    }
  }
  return {loss / static_cast<double>(len), correct};
}


}  // namespace

StressResult stress_fixed_kv(const StressConfig& sc, const KernelSpec& kappa1, const TrainConfig& tcfg) {
  validate(tcfg);
  if (sc.n < 2 || sc.d == 0 || sc.train_len == 0 || sc.value_dim == 0 || sc.pool == 0 || sc.eval_pool == 0 ||
      sc.eval_every == 0)
    throw DimensionError("stress_fixed_kv: empty configuration");
  if (kappa1.kind == KernelKind::SoftmaxRow || kappa1.kind == KernelKind::SoLU)
    throw DimensionError("stress_fixed_kv: kernel must be elementwise (linear, round, relu, exp)");
  Rng rng(tcfg.seed);
  const KeyEnsemble ens = sc.n <= sc.d ? orthonormal_keys(sc.n, sc.d) : spread_keys(sc.n, sc.d, rng.split(1), sc.key_iterations);
  Rng code_rng = rng.split(2);
  Matrix codes(sc.n, sc.value_dim);
  const double cv = 1.0 / std::sqrt(static_cast<double>(sc.value_dim));
  for (double& e : codes.data()) e = code_rng.uniform() < 0.5 ? -cv : cv;

  // Sequences (with their keys kept per sequence for the query gradient).
  Rng seq_rng = rng.split(3);
  auto make = [&](std::size_t count, std::size_t offset) {
    std::vector<StressSeq> items;
    for (std::size_t i = 0; i < count; ++i) {
      Rng local = seq_rng.split(offset + i);
      items.push_back(build_stress_seq(ens.keys, codes, kappa1, sc.train_len, local));
    }
    return items;
  };
  const auto train_items = make(sc.pool, 0);
  const auto eval_items = make(sc.eval_pool, 1'000'000);

  auto accuracy_on = [&](const Readout& r) {
    std::size_t correct = 0;
    for (const auto& it : eval_items) correct += stress_sample(r, it, kappa1, sc.n, nullptr, 0.0).second;
    return static_cast<double>(correct) / static_cast<double>(eval_items.size() * sc.train_len);
  };

  StressResult res;
  res.key_epsilon = ens.epsilon;
  {
    Readout ideal{Matrix(1, sc.d), transpose(codes), Matrix(1, sc.n)};
    std::copy(ens.keys.row(0).begin(), ens.keys.row(0).end(), ideal.q.row(0).begin());
    res.initial_accuracy = accuracy_on(ideal);
  }

  Rng init = rng.split(4);
  Readout r{init.gaussian_matrix(1, sc.d, 1.0 / std::sqrt(static_cast<double>(sc.d))),
            init.gaussian_matrix(sc.value_dim, sc.n, 1.0 / std::sqrt(static_cast<double>(sc.value_dim))), Matrix(1, sc.n)};
  if (sc.constructive_query) std::copy(ens.keys.row(0).begin(), ens.keys.row(0).end(), r.q.row(0).begin());
  AdamW opt(tcfg.weight_decay);
  Rng pick = rng.split(5);
  for (std::size_t step = 0; step < tcfg.epochs; ++step) {
    Readout g{Matrix(1, sc.d), Matrix(sc.value_dim, sc.n), Matrix(1, sc.n)};
    const double wgt = 1.0 / static_cast<double>(tcfg.batch);
    for (std::size_t b = 0; b < tcfg.batch; ++b) {
      const auto& it = train_items[pick.below(train_items.size())];
      stress_sample(r, it, kappa1, sc.n, &g, wgt);
    }
    opt.step({&r.q, &r.w, &r.b}, {g.q, g.w, g.b}, linear_schedule(tcfg.lr, tcfg.warmup_steps, tcfg.epochs, step));
    if ((step + 1) % sc.eval_every == 0 || step + 1 == tcfg.epochs) {
      res.steps.push_back(step + 1);
      res.accuracy.push_back(accuracy_on(r));
    }
  }
  return res;
}

// ---------------------------------------------------------------- head tradeoff

std::string head_attention_name(HeadAttention a) { return a == HeadAttention::SoftmaxRmsNorm ? "softmax" : "linear"; }

std::vector<Example> head_tradeoff_data(const HeadTradeoffConfig& hc, std::size_t batch, Rng& rng) {
  if (hc.pairs < 2 || hc.pairs > hc.keys || hc.values == 0 || hc.queries == 0)
    throw DimensionError("head_tradeoff_data: need 2 <= pairs <= keys");
  const int K = static_cast<int>(hc.keys), V = static_cast<int>(hc.values);
  std::vector<Example> out(batch);
  for (auto& ex : out) {
    std::vector<int> order(hc.keys), value(hc.keys);
    for (int i = 0; i < K; ++i) order[i] = i;
    for (std::size_t i = hc.keys - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
    for (std::size_t i = 0; i < hc.pairs; ++i) {
      const int k = order[i];
      value[k] = static_cast<int>(rng.below(hc.values));
      ex.tokens.push_back(k * V + value[k]);
      ex.labels.push_back(-1);
    }
    for (std::size_t q = 0; q < hc.queries; ++q) {
      const int a = order[rng.below(hc.pairs)];
      int b = order[rng.below(hc.pairs - 1)];
      if (b == a) b = order[hc.pairs - 1];
      ex.tokens.push_back(K * V + a * K + b);
      const int first = hc.ordered ? value[a] : std::min(value[a], value[b]);
      const int second = hc.ordered ? value[b] : std::max(value[a], value[b]);
      ex.labels.push_back(first * V + second);
    }
  }
  return out;
}

std::vector<HeadTradeoffRow> head_tradeoff_tiny(const std::vector<std::size_t>& heads_list, HeadAttention kind,
                                                const TrainConfig& tcfg, const HeadTradeoffConfig& hc) {
  validate(tcfg);
  std::vector<HeadTradeoffRow> rows;
  Rng val_rng = Rng(tcfg.seed).split(7);
  const auto val = head_tradeoff_data(hc, hc.val_batch, val_rng);
  for (std::size_t h : heads_list) {
    ModelConfig mc;
    mc.vocab_in = hc.keys * hc.values + hc.keys * hc.keys;
    mc.vocab_out = hc.values * hc.values;
    mc.dim = hc.dim;
    mc.n_layers = 1;
    mc.num_q_heads = mc.num_kv_heads = h;
    mc.attention = AttentionKind::Standard;
    mc.delta.kappa2 = kind == HeadAttention::SoftmaxRmsNorm ? KernelSpec::softmax() : KernelSpec::linear();
    mc.positions = PositionKind::NoPE;
    mc.head_rms_norm = true;
    Model m = build_model(mc, Rng(tcfg.seed).split(0));

    Rng data = Rng(tcfg.seed).split(1);
    AdamW opt(tcfg.weight_decay);
    std::vector<Matrix*> ptrs;
    for (auto& p : m.params) ptrs.push_back(&p.value);
    std::vector<Matrix> grads;
    for (std::size_t step = 0; step < tcfg.epochs; ++step) {
      evaluate_batch(m, head_tradeoff_data(hc, tcfg.batch, data), &grads);
      opt.step(ptrs, grads, linear_schedule(tcfg.lr, tcfg.warmup_steps, tcfg.epochs, step));
    }
    rows.push_back({h, kind, evaluate_batch(m, val).loss});
  }
  return rows;
}

}  // namespace deltamem
