// Copyright 2026 The Prefalign Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// A small decoder-only transformer with exact log-probabilities and a
// hand-written backward pass.
//
// Architecture (pre-norm):
//   x = embed(tokens) + sinusoid(positions)
//   repeat num_blocks:
//     x += dropout(attn(rmsnorm(x)))        causal multi-head attention
//     x += dropout(mlp(rmsnorm(x)))         gelu(x W1^T + b1) W2^T + b2
//   logits = rmsnorm(x) Wout^T + bout
//
// Low-rank adapters can be attached to any of the weight matrices; when they
// are, only the adapter factors are trainable and the base stays frozen.

#ifndef PREFALIGN_NEURAL_POLICY_HPP_
#define PREFALIGN_NEURAL_POLICY_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "prefalign/error.hpp"
#include "prefalign/policy.hpp"
#include "prefalign/rng.hpp"
#include "prefalign/vocabulary.hpp"

namespace prefalign {

struct NeuralConfig {
  int vocab_size = Vocabulary::kSize;
  int d_model = 32;
  int num_blocks = 2;
  int num_heads = 4;
  int ff_mult = 4;
  int context_window = 4096;
  double dropout = 0.1;
  Token begin_response = Vocabulary::kBeginResponse;
  Token end_response = Vocabulary::kEndResponse;

  int head_dim() const { return d_model / num_heads; }
  int ff_dim() const { return d_model * ff_mult; }

  void validate() const {
    require(vocab_size >= 2, "vocab_size must be at least 2");
    require(d_model > 0 && num_heads > 0 && d_model % num_heads == 0,
            "d_model must be a positive multiple of num_heads");
    require(num_blocks >= 0, "num_blocks must be non-negative");
    require(ff_mult > 0, "ff_mult must be positive");
    require(context_window >= 2, "context_window must be at least 2");
    require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
    require(begin_response >= 0 && begin_response < vocab_size, "begin_response outside vocabulary");
    require(end_response >= 0 && end_response < vocab_size, "end_response outside vocabulary");
  }
};

// Per-block tensor slots.
enum BlockTensor : int {
  kNorm1 = 0,
  kWq,
  kWk,
  kWv,
  kWo,
  kNorm2,
  kW1,
  kB1,
  kW2,
  kB2,
  kBlockTensorCount
};

inline const char* block_tensor_name(int kind) {
  static const char* kNames[] = {"norm1", "wq", "wk", "wv", "wo", "norm2", "w1", "b1", "w2", "b2"};
  return kNames[kind];
}

struct LoraAdapter {
  std::size_t target = 0;  // base tensor index
  Matrix a;                // rank x d_in
  Matrix b;                // d_out x rank
};

struct LoraState {
  int rank = 0;
  double scaling = 1.0;
  std::vector<LoraAdapter> adapters;
};

class NeuralPolicy {
 public:
  using context_type = TokenSequence;
  using response_type = TokenSequence;

  struct BlockCache {
    Matrix x_in, n1;
    Vector r1;
    Matrix q, k, v;
    std::vector<Matrix> attn;  // per head, T x T, zero above the diagonal
    Matrix o;
    Matrix drop1;  // empty when dropout is inactive
    Matrix x1, n2;
    Vector r2;
    Matrix h, g;
    Matrix drop2;
  };

  struct Trace {
    TokenSequence tokens;
    std::vector<Eigen::Index> rows;  // positions whose next-token prediction is scored
    std::vector<BlockCache> blocks;
    Matrix x_final, n_final;
    Vector r_final;
    Matrix probs;  // rows.size() x vocab
    double log_prob = 0.0;
  };
  using trace_type = Trace;

  NeuralPolicy() = default;

  NeuralPolicy(const NeuralConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    allocate();
    Rng rng(seed);
    const int d = config_.d_model;
    const double depth_scale = 1.0 / std::sqrt(2.0 * std::max(1, config_.num_blocks));
    auto fill = [&rng](Matrix& m, double stddev) {
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * rng.normal();
    };
    fill(tensors_[0], 1.0);
    for (int b = 0; b < config_.num_blocks; ++b) {
      tensor(b, kNorm1).setOnes();
      tensor(b, kNorm2).setOnes();
      fill(tensor(b, kWq), 1.0 / std::sqrt(d));
      fill(tensor(b, kWk), 1.0 / std::sqrt(d));
      fill(tensor(b, kWv), 1.0 / std::sqrt(d));
      fill(tensor(b, kWo), depth_scale / std::sqrt(d));
      fill(tensor(b, kW1), 1.0 / std::sqrt(d));
      fill(tensor(b, kW2), depth_scale / std::sqrt(config_.ff_dim()));
    }
    tensors_[final_norm_index()].setOnes();
    fill(tensors_[output_weight_index()], 1.0 / std::sqrt(d));
  }

  // Reconstructs a policy from serialized tensors (checkpoint loading).
  NeuralPolicy(const NeuralConfig& config, std::vector<Matrix> tensors,
               std::optional<LoraState> lora)
      : config_(config) {
    config_.validate();
    allocate();
    require(tensors.size() == tensors_.size(), "tensor count does not match architecture");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      require(tensors[i].rows() == tensors_[i].rows() && tensors[i].cols() == tensors_[i].cols(),
              "tensor shape mismatch for " + tensor_name(i));
    }
    tensors_ = std::move(tensors);
    lora_ = std::move(lora);
  }

  const NeuralConfig& config() const { return config_; }
  void set_dropout(double rate) {
    require(rate >= 0.0 && rate < 1.0, "dropout must lie in [0, 1)");
    config_.dropout = rate;
  }
  const std::vector<Matrix>& tensors() const { return tensors_; }
  std::vector<Matrix>& mutable_tensors() { return tensors_; }
  const std::optional<LoraState>& lora() const { return lora_; }
  std::optional<LoraState>& mutable_lora() { return lora_; }
  bool has_lora() const { return lora_.has_value(); }

  std::size_t num_tensors() const { return tensors_.size(); }
  std::size_t tensor_index(int block, int kind) const {
    return 1 + static_cast<std::size_t>(block) * kBlockTensorCount + static_cast<std::size_t>(kind);
  }
  std::size_t final_norm_index() const { return 1 + static_cast<std::size_t>(config_.num_blocks) * kBlockTensorCount; }
  std::size_t output_weight_index() const { return final_norm_index() + 1; }
  std::size_t output_bias_index() const { return final_norm_index() + 2; }

  Matrix& tensor(int block, int kind) { return tensors_[tensor_index(block, kind)]; }
  const Matrix& tensor(int block, int kind) const { return tensors_[tensor_index(block, kind)]; }

  std::string tensor_name(std::size_t index) const {
    if (index == 0) return "tok_emb";
    if (index == final_norm_index()) return "final_norm";
    if (index == output_weight_index()) return "w_out";
    if (index == output_bias_index()) return "b_out";
    const std::size_t rel = index - 1;
    return "blocks." + std::to_string(rel / kBlockTensorCount) + "." +
           block_tensor_name(static_cast<int>(rel % kBlockTensorCount));
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.size());
    return n;
  }

  bool parameters_finite() const {
    for (const auto& t : tensors_)
      if (!t.allFinite()) return false;
    if (lora_) {
      for (const auto& ad : lora_->adapters)
        if (!ad.a.allFinite() || !ad.b.allFinite()) return false;
    }
    return true;
  }

  // Effective weight including any adapter: W + scaling * B A.
  Matrix effective_weight(std::size_t index) const {
    Matrix w = tensors_[index];
    if (lora_) {
      for (const auto& ad : lora_->adapters)
        if (ad.target == index) w.noalias() += lora_->scaling * (ad.b * ad.a);
    }
    return w;
  }

  // --- scoring -------------------------------------------------------------

  // log pi(response | prompt): the sequence is prompt, <bor>, response, and
  // only response tokens are scored.
  double log_prob(const TokenSequence& prompt, const TokenSequence& response) const {
    return forward(prompt, response, ForwardOptions{}).log_prob;
  }

  // Sum of log-probabilities of tokens[i] for every i with scored[i] set.
  // Position 0 has no prediction and cannot be scored.
  double log_prob_masked(const TokenSequence& tokens, const std::vector<bool>& scored) const {
    require(scored.size() == tokens.size(), "mask length must match token count");
    require(!scored.empty() && !scored[0], "the first token cannot be scored");
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 1; i < tokens.size(); ++i)
      if (scored[i]) rows.push_back(static_cast<Eigen::Index>(i - 1));
    require(!rows.empty(), "nothing to score");
    check_tokens(tokens);
    return run(tokens, rows, ForwardOptions{}).log_prob;
  }

  Trace forward(const TokenSequence& prompt, const TokenSequence& response,
                const ForwardOptions& opts) const {
    require(!response.empty(), "response must be non-empty");
    TokenSequence tokens;
    tokens.reserve(prompt.size() + 1 + response.size());
    tokens.insert(tokens.end(), prompt.begin(), prompt.end());
    tokens.push_back(config_.begin_response);
    tokens.insert(tokens.end(), response.begin(), response.end());
    check_tokens(tokens);
    std::vector<Eigen::Index> rows;
    rows.reserve(response.size());
    for (std::size_t i = 0; i < response.size(); ++i)
      rows.push_back(static_cast<Eigen::Index>(prompt.size() + i));
    return run(tokens, rows, opts);
  }

  // Next-token distribution after `prefix` (a full token stream).
  Eigen::RowVectorXd next_token_probabilities(const TokenSequence& prefix) const {
    require(!prefix.empty(), "prefix must be non-empty");
    check_tokens(prefix);
    const Trace t = run(prefix, {static_cast<Eigen::Index>(prefix.size() - 1)}, ForwardOptions{},
                        /*score=*/false);
    return t.probs.row(0);
  }

  // Autoregressive sampling after prompt + <bor>; stops at <eor> (not
  // returned) or after max_new_tokens.
  TokenSequence sample(const TokenSequence& prompt, const SampleOptions& opts) const {
    TokenSequence tokens = prompt;
    tokens.push_back(config_.begin_response);
    check_tokens(tokens);
    require(opts.greedy || opts.temperature > 0.0, "temperature must be positive");
    Rng rng(opts.seed);
    TokenSequence out;
    for (int n = 0; n < opts.max_new_tokens; ++n) {
      if (static_cast<int>(tokens.size()) >= config_.context_window) break;
      const Trace t = run(tokens, {static_cast<Eigen::Index>(tokens.size() - 1)}, ForwardOptions{},
                          /*score=*/false);
      Eigen::RowVectorXd p = t.probs.row(0);
      Token next = 0;
      if (opts.greedy) {
        Eigen::Index best = 0;
        p.maxCoeff(&best);
        next = static_cast<Token>(best);
      } else {
        if (opts.temperature != 1.0) {
          Eigen::RowVectorXd lp = p.array().log() / opts.temperature;
          p = (lp.array() - log_sum_exp(lp)).exp();
        }
        double u = rng.uniform();
        next = static_cast<Token>(p.size() - 1);
        for (Eigen::Index i = 0; i < p.size(); ++i) {
          u -= p(i);
          if (u < 0.0) {
            next = static_cast<Token>(i);
            break;
          }
        }
      }
      if (next == config_.end_response) break;
      out.push_back(next);
      tokens.push_back(next);
    }
    return out;
  }

  // --- training interface ----------------------------------------------------

  std::vector<ParamRef> trainable_parameters() {
    std::vector<ParamRef> out;
    if (lora_) {
      for (auto& ad : lora_->adapters) {
        const std::string base = "lora." + tensor_name(ad.target);
        out.push_back(ParamRef{base + ".a", &ad.a});
        out.push_back(ParamRef{base + ".b", &ad.b});
      }
      return out;
    }
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.push_back(ParamRef{tensor_name(i), &tensors_[i]});
    return out;
  }

  GradientSet make_gradients() const {
    GradientSet g;
    if (lora_) {
      for (const auto& ad : lora_->adapters) {
        g.push_back(Matrix::Zero(ad.a.rows(), ad.a.cols()));
        g.push_back(Matrix::Zero(ad.b.rows(), ad.b.cols()));
      }
      return g;
    }
    for (const auto& t : tensors_) g.push_back(Matrix::Zero(t.rows(), t.cols()));
    return g;
  }

  // grads += coef * d trace.log_prob / d theta
  void backward(const Trace& tr, double coef, GradientSet& grads) const {
    const int d = config_.d_model;
    const Eigen::Index T = static_cast<Eigen::Index>(tr.tokens.size());
    const Eigen::Index nrows = static_cast<Eigen::Index>(tr.rows.size());

    GradRouter route(*this, grads);

    // Output head.
    Matrix dlogits = -coef * tr.probs;
    for (Eigen::Index j = 0; j < nrows; ++j) {
      const Token target = tr.tokens[static_cast<std::size_t>(tr.rows[static_cast<std::size_t>(j)] + 1)];
      dlogits(j, target) += coef;
    }
    const Matrix w_out = effective_weight(output_weight_index());
    Matrix nf_rows(nrows, d);
    for (Eigen::Index j = 0; j < nrows; ++j) nf_rows.row(j) = tr.n_final.row(tr.rows[static_cast<std::size_t>(j)]);
    if (route.wants(output_weight_index())) route.add(output_weight_index(), dlogits.transpose() * nf_rows);
    if (route.wants(output_bias_index())) route.add(output_bias_index(), dlogits.colwise().sum().transpose());
    Matrix dnf = Matrix::Zero(T, d);
    const Matrix dnf_rows = dlogits * w_out;
    for (Eigen::Index j = 0; j < nrows; ++j) dnf.row(tr.rows[static_cast<std::size_t>(j)]) += dnf_rows.row(j);

    Matrix dx = rmsnorm_backward(tr.x_final, tr.r_final, tensors_[final_norm_index()], dnf,
                                 route, final_norm_index());

    const int nh = config_.num_heads;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int b = config_.num_blocks - 1; b >= 0; --b) {
      const BlockCache& c = tr.blocks[static_cast<std::size_t>(b)];
      // MLP branch.
      Matrix dm = c.drop2.size() ? Matrix(dx.cwiseProduct(c.drop2)) : dx;
      if (route.wants(tensor_index(b, kB2))) route.add(tensor_index(b, kB2), dm.colwise().sum().transpose());
      const Matrix w2 = effective_weight(tensor_index(b, kW2));
      if (route.wants(tensor_index(b, kW2))) route.add(tensor_index(b, kW2), dm.transpose() * c.g);
      Matrix dg = dm * w2;
      Matrix dh_pre = dg.cwiseProduct(gelu_grad(c.h));
      if (route.wants(tensor_index(b, kB1))) route.add(tensor_index(b, kB1), dh_pre.colwise().sum().transpose());
      const Matrix w1 = effective_weight(tensor_index(b, kW1));
      if (route.wants(tensor_index(b, kW1))) route.add(tensor_index(b, kW1), dh_pre.transpose() * c.n2);
      Matrix dn2 = dh_pre * w1;
      Matrix dx1 = dx + rmsnorm_backward(c.x1, c.r2, tensor(b, kNorm2), dn2, route, tensor_index(b, kNorm2));

      // Attention branch.
      Matrix da = c.drop1.size() ? Matrix(dx1.cwiseProduct(c.drop1)) : dx1;
      const Matrix wo = effective_weight(tensor_index(b, kWo));
      if (route.wants(tensor_index(b, kWo))) route.add(tensor_index(b, kWo), da.transpose() * c.o);
      Matrix d_o = da * wo;
      Matrix dq(T, d), dk(T, d), dv(T, d);
      for (int h = 0; h < nh; ++h) {
        const Matrix& p = c.attn[static_cast<std::size_t>(h)];
        const auto doh = d_o.middleCols(h * dh, dh);
        const auto vh = c.v.middleCols(h * dh, dh);
        const Matrix dp = doh * vh.transpose();
        dv.middleCols(h * dh, dh) = p.transpose() * doh;
        // softmax backward, row-wise; entries above the diagonal have p = 0
        const Vector rowdot = (dp.cwiseProduct(p)).rowwise().sum();
        Matrix ds = p.cwiseProduct(dp - rowdot.replicate(1, T));
        ds *= scale;
        dq.middleCols(h * dh, dh) = ds * c.k.middleCols(h * dh, dh);
        dk.middleCols(h * dh, dh) = ds.transpose() * c.q.middleCols(h * dh, dh);
      }
      const Matrix wq = effective_weight(tensor_index(b, kWq));
      const Matrix wk = effective_weight(tensor_index(b, kWk));
      const Matrix wv = effective_weight(tensor_index(b, kWv));
      if (route.wants(tensor_index(b, kWq))) route.add(tensor_index(b, kWq), dq.transpose() * c.n1);
      if (route.wants(tensor_index(b, kWk))) route.add(tensor_index(b, kWk), dk.transpose() * c.n1);
      if (route.wants(tensor_index(b, kWv))) route.add(tensor_index(b, kWv), dv.transpose() * c.n1);
      Matrix dn1 = dq * wq + dk * wk + dv * wv;
      dx = dx1 + rmsnorm_backward(c.x_in, c.r1, tensor(b, kNorm1), dn1, route, tensor_index(b, kNorm1));
    }

    if (route.wants(0)) {
      Matrix demb = Matrix::Zero(config_.vocab_size, d);
      for (Eigen::Index t = 0; t < T; ++t) demb.row(tr.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
      route.add(0, demb);
    }
  }

 private:
  // Routes a gradient with respect to an effective base tensor either to the
  // base slot (full fine-tuning) or to the adapter factors.
  class GradRouter {
   public:
    GradRouter(const NeuralPolicy& policy, GradientSet& grads) : policy_(policy), grads_(grads) {
      const std::size_t n = policy.tensors_.size();
      if (policy.lora_) {
        lora_slots_.assign(n, {});
        for (std::size_t i = 0; i < policy.lora_->adapters.size(); ++i)
          lora_slots_[policy.lora_->adapters[i].target].push_back(i);
      } else {
        require(grads.size() == n, "gradient set does not match parameters");
      }
    }

    bool wants(std::size_t index) const {
      if (!policy_.lora_) return true;
      return !lora_slots_[index].empty();
    }

    void add(std::size_t index, const Matrix& d_weight) {
      if (!policy_.lora_) {
        grads_[index] += d_weight;
        return;
      }
      const double s = policy_.lora_->scaling;
      for (std::size_t ai : lora_slots_[index]) {
        const LoraAdapter& ad = policy_.lora_->adapters[ai];
        grads_[2 * ai] += s * (ad.b.transpose() * d_weight);
        grads_[2 * ai + 1] += s * (d_weight * ad.a.transpose());
      }
    }

   private:
    const NeuralPolicy& policy_;
    GradientSet& grads_;
    std::vector<std::vector<std::size_t>> lora_slots_;
  };

  static constexpr double kNormEps = 1e-5;

  void allocate() {
    const int V = config_.vocab_size;
    const int d = config_.d_model;
    const int f = config_.ff_dim();
    tensors_.clear();
    tensors_.push_back(Matrix::Zero(V, d));
    for (int b = 0; b < config_.num_blocks; ++b) {
      tensors_.push_back(Matrix::Ones(d, 1));
      for (int k = 0; k < 4; ++k) tensors_.push_back(Matrix::Zero(d, d));
      tensors_.push_back(Matrix::Ones(d, 1));
      tensors_.push_back(Matrix::Zero(f, d));
      tensors_.push_back(Matrix::Zero(f, 1));
      tensors_.push_back(Matrix::Zero(d, f));
      tensors_.push_back(Matrix::Zero(d, 1));
    }
    tensors_.push_back(Matrix::Ones(d, 1));
    tensors_.push_back(Matrix::Zero(V, d));
    tensors_.push_back(Matrix::Zero(V, 1));
  }

  void check_tokens(const TokenSequence& tokens) const {
    if (static_cast<long>(tokens.size()) > config_.context_window) {
      fail(ErrorCode::kLengthOverflow, "sequence of " + std::to_string(tokens.size()) +
                                           " tokens exceeds the context window of " +
                                           std::to_string(config_.context_window));
    }
    for (Token t : tokens) {
      if (t < 0 || t >= config_.vocab_size) {
        fail(ErrorCode::kInvalidArgument, "token id " + std::to_string(t) + " outside vocabulary");
      }
    }
  }

  static double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
  }

  static Matrix gelu_grad(const Matrix& h) {
    constexpr double c = 0.7978845608028654;
    return h.unaryExpr([](double x) {
      const double t = std::tanh(c * (x + 0.044715 * x * x * x));
      return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
    });
  }

  static void rmsnorm(const Matrix& x, const Matrix& gain, Matrix& out, Vector& rinv) {
    const double d = static_cast<double>(x.cols());
    rinv = ((x.array().square().rowwise().sum() / d) + kNormEps).rsqrt().matrix();
    out = (x.array().colwise() * rinv.array()).matrix();
    out.array().rowwise() *= gain.col(0).transpose().array();
  }

  Matrix rmsnorm_backward(const Matrix& x, const Vector& rinv, const Matrix& gain, const Matrix& dy,
                          GradRouter& route, std::size_t gain_index) const {
    const double d = static_cast<double>(x.cols());
    const Matrix xhat = (x.array().colwise() * rinv.array()).matrix();
    if (route.wants(gain_index)) route.add(gain_index, (xhat.cwiseProduct(dy)).colwise().sum().transpose());
    Matrix dxhat = dy;
    dxhat.array().rowwise() *= gain.col(0).transpose().array();
    const Vector dot = (x.cwiseProduct(dxhat)).rowwise().sum();
    Matrix dx = (dxhat.array().colwise() * rinv.array()).matrix();
    const Vector coeff = (rinv.array().cube() * dot.array() / d).matrix();
    dx -= (x.array().colwise() * coeff.array()).matrix();
    return dx;
  }

  Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, const ForwardOptions& opts) const {
    if (!opts.train || config_.dropout <= 0.0) return Matrix();
    require(opts.rng != nullptr, "training forward pass with dropout needs an rng");
    const double keep = 1.0 - config_.dropout;
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = opts.rng->uniform() < keep ? 1.0 / keep : 0.0;
    return m;
  }

  static Matrix positional_encoding(Eigen::Index T, int d) {
    Matrix pe(T, d);
    for (Eigen::Index t = 0; t < T; ++t) {
      for (int i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / d);
        pe(t, i) = std::sin(static_cast<double>(t) * freq);
        if (i + 1 < d) pe(t, i + 1) = std::cos(static_cast<double>(t) * freq);
      }
    }
    return pe;
  }

  Trace run(const TokenSequence& tokens, std::vector<Eigen::Index> rows, const ForwardOptions& opts,
            bool score = true) const {
    const int d = config_.d_model;
    const int nh = config_.num_heads;
    const int dh = config_.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());

    Trace tr;
    tr.tokens = tokens;
    tr.rows = std::move(rows);

    const Matrix emb = effective_weight(0);
    Matrix x = positional_encoding(T, d);
    for (Eigen::Index t = 0; t < T; ++t) x.row(t) += emb.row(tokens[static_cast<std::size_t>(t)]);

    tr.blocks.resize(static_cast<std::size_t>(config_.num_blocks));
    for (int b = 0; b < config_.num_blocks; ++b) {
      BlockCache& c = tr.blocks[static_cast<std::size_t>(b)];
      c.x_in = x;
      rmsnorm(x, tensor(b, kNorm1), c.n1, c.r1);
      c.q = c.n1 * effective_weight(tensor_index(b, kWq)).transpose();
      c.k = c.n1 * effective_weight(tensor_index(b, kWk)).transpose();
      c.v = c.n1 * effective_weight(tensor_index(b, kWv)).transpose();
      c.o.resize(T, d);
      c.attn.resize(static_cast<std::size_t>(nh));
      for (int h = 0; h < nh; ++h) {
        Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
        Matrix p = Matrix::Zero(T, T);
        for (Eigen::Index i = 0; i < T; ++i) {
          const auto live = s.row(i).head(i + 1);
          const double m = live.maxCoeff();
          Eigen::RowVectorXd e = (live.array() - m).exp();
          p.row(i).head(i + 1) = e / e.sum();
        }
        c.o.middleCols(h * dh, dh) = p * c.v.middleCols(h * dh, dh);
        c.attn[static_cast<std::size_t>(h)] = std::move(p);
      }
      Matrix a = c.o * effective_weight(tensor_index(b, kWo)).transpose();
      c.drop1 = dropout_mask(T, d, opts);
      if (c.drop1.size()) a = a.cwiseProduct(c.drop1);
      c.x1 = x + a;
      rmsnorm(c.x1, tensor(b, kNorm2), c.n2, c.r2);
      c.h = c.n2 * effective_weight(tensor_index(b, kW1)).transpose();
      c.h.rowwise() += tensor(b, kB1).col(0).transpose();
      c.g = c.h.unaryExpr(&NeuralPolicy::gelu);
      Matrix m = c.g * effective_weight(tensor_index(b, kW2)).transpose();
      m.rowwise() += tensor(b, kB2).col(0).transpose();
      c.drop2 = dropout_mask(T, d, opts);
      if (c.drop2.size()) m = m.cwiseProduct(c.drop2);
      x = c.x1 + m;
    }

    tr.x_final = x;
    rmsnorm(x, tensors_[final_norm_index()], tr.n_final, tr.r_final);
    const Matrix w_out = effective_weight(output_weight_index());
    const Eigen::RowVectorXd b_out = tensors_[output_bias_index()].col(0).transpose();
    const Eigen::Index nrows = static_cast<Eigen::Index>(tr.rows.size());
    tr.probs.resize(nrows, config_.vocab_size);
    double total = 0.0;
    for (Eigen::Index j = 0; j < nrows; ++j) {
      const Eigen::Index row = tr.rows[static_cast<std::size_t>(j)];
      Eigen::RowVectorXd logits = tr.n_final.row(row) * w_out.transpose() + b_out;
      const double lse = log_sum_exp(logits);
      tr.probs.row(j) = (logits.array() - lse).exp();
      if (score) total += logits(tokens[static_cast<std::size_t>(row + 1)]) - lse;
    }
    tr.log_prob = total;
    return tr;
  }

  NeuralConfig config_;
  std::vector<Matrix> tensors_;
  std::optional<LoraState> lora_;
};

// Attaches fresh low-rank adapters to the chosen weight kinds in every block.
// A starts small and random, B starts at zero, so the adapted policy is
// initially identical to the base.
struct LoraConfig {
  int rank = 8;
  double scaling = 1.0;
  std::vector<int> targets = {kWq, kWk, kWv, kWo};
  bool include_output_head = false;
  double init_std = 0.01;
  std::uint64_t seed = 0;
};

inline NeuralPolicy apply_lora(const NeuralPolicy& base, const LoraConfig& cfg) {
  require(cfg.rank >= 1, "LoRA rank must be at least 1");
  require(!base.has_lora(), "policy already carries adapters");
  NeuralPolicy adapted = base;
  LoraState state;
  state.rank = cfg.rank;
  state.scaling = cfg.scaling;
  Rng rng(cfg.seed);
  auto add = [&](std::size_t index) {
    const Matrix& w = base.tensors()[index];
    const auto max_rank = std::min(w.rows(), w.cols());
    if (cfg.rank > max_rank) {
      fail(ErrorCode::kInvalidArgument, "LoRA rank " + std::to_string(cfg.rank) + " exceeds min(d_out, d_in) = " +
                                            std::to_string(max_rank) + " for " + base.tensor_name(index));
    }
    LoraAdapter ad;
    ad.target = index;
    ad.a.resize(cfg.rank, w.cols());
    for (Eigen::Index j = 0; j < ad.a.cols(); ++j)
      for (Eigen::Index i = 0; i < ad.a.rows(); ++i) ad.a(i, j) = cfg.init_std * rng.normal();
    ad.b = Matrix::Zero(w.rows(), cfg.rank);
    state.adapters.push_back(std::move(ad));
  };
  for (int b = 0; b < base.config().num_blocks; ++b) {
    for (int kind : cfg.targets) {
      require(kind == kWq || kind == kWk || kind == kWv || kind == kWo || kind == kW1 || kind == kW2,
              "LoRA targets must be weight matrices");
      add(base.tensor_index(b, kind));
    }
  }
  if (cfg.include_output_head) add(base.output_weight_index());
  require(!state.adapters.empty(), "no LoRA targets selected");
  adapted.mutable_lora() = std::move(state);
  return adapted;
}

// Folds adapters into the base weights and drops them.
inline NeuralPolicy merge_lora(const NeuralPolicy& adapted) {
  NeuralPolicy out = adapted;
  if (!adapted.has_lora()) return out;
  for (std::size_t i = 0; i < out.num_tensors(); ++i) out.mutable_tensors()[i] = adapted.effective_weight(i);
  out.mutable_lora().reset();
  return out;
}

}  // namespace prefalign

#endif  // PREFALIGN_NEURAL_POLICY_HPP_
