// Copyright 2026 The loraroute Authors
// SPDX-License-Identifier: Apache-2.0

#include "loraroute/harness/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "loraroute/error.hpp"

namespace loraroute::harness {

namespace {

// Layer norm that keeps what the backward pass needs.
void layer_norm_cached(std::span<const double> x, std::span<const double> gain,
                       std::span<const double> bias, std::span<double> xhat, double& rstd,
                       std::span<double> out) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    xhat[i] = (x[i] - mean) * rstd;
    out[i] = xhat[i] * gain[i] + bias[i];
  }
}

// dx += d(layer_norm)/dx applied to dout.
void layer_norm_backward(std::span<const double> dout, std::span<const double> gain,
                         std::span<const double> xhat, double rstd, std::span<double> dx) {
  const std::size_t n = dout.size();
  double mean_dxhat = 0.0;
  double mean_dxhat_xhat = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = dout[i] * gain[i];
    mean_dxhat += g;
    mean_dxhat_xhat += g * xhat[i];
  }
  mean_dxhat /= static_cast<double>(n);
  mean_dxhat_xhat /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    dx[i] += rstd * (dout[i] * gain[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
  }
}

struct BlockCache {
  Matrix x_in, xhat1, normed, up_q, query, key, up_v, value, context, xhat2, ffn_in, pre_act;
  Vector rstd1, rstd2;
  std::vector<double> probs;  // [head][query position][key position]
};

struct SampleCache {
  std::vector<BlockCache> blocks;
  Matrix x_final, xhat_final, y, logits;
  Vector rstd_final;
};

std::size_t site_index(std::size_t block, Site site) {
  return block * kNumSites + static_cast<std::size_t>(site);
}

// Projection with the adapter's delta added: out = W a + alpha * up (down a).
void project_with_adapter(const Matrix& w, const LoraFactors& f, double alpha,
                          std::span<const double> a, std::span<double> low,
                          std::span<double> out) {
  matvec_into(w, a, out);
  matvec_into(f.down, a, low);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * dot(f.up.row(i), low);
}

void forward_sample(const Backbone& backbone, const LoraAdapter& adapter,
                    std::span<const Token> tokens, SampleCache& c) {
  const ModelConfig& mc = backbone.config();
  const BackboneWeights& w = backbone.weights();
  const std::size_t n = tokens.size();
  const std::size_t d = mc.d_model;
  const std::size_t hd = mc.head_dim();
  const std::size_t r = adapter.rank();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = x.row(i);
    const auto te = w.token_embedding.row(tokens[i]);
    const auto pe = w.position_embedding.row(i);
    for (std::size_t k = 0; k < d; ++k) row[k] = te[k] + pe[k];
  }

  c.blocks.resize(mc.n_blocks);
  Vector attn(d), hidden(mc.d_ff), ffn_out(d);
  for (std::size_t j = 0; j < mc.n_blocks; ++j) {
    const BlockWeights& bw = w.blocks[j];
    BlockCache& b = c.blocks[j];
    b.x_in = x;
    b.xhat1 = Matrix(n, d);
    b.normed = Matrix(n, d);
    b.up_q = Matrix(n, r);
    b.query = Matrix(n, d);
    b.key = Matrix(n, d);
    b.up_v = Matrix(n, r);
    b.value = Matrix(n, d);
    b.context = Matrix(n, d);
    b.xhat2 = Matrix(n, d);
    b.ffn_in = Matrix(n, d);
    b.pre_act = Matrix(n, mc.d_ff);
    b.rstd1.assign(n, 0.0);
    b.rstd2.assign(n, 0.0);
    b.probs.assign(mc.n_heads * n * n, 0.0);

    const LoraFactors& fq = adapter.factors(j, Site::kQ);
    const LoraFactors& fv = adapter.factors(j, Site::kV);
    const double aq = adapter.alpha(j, Site::kQ);
    const double av = adapter.alpha(j, Site::kV);
    for (std::size_t i = 0; i < n; ++i) {
      layer_norm_cached(x.row(i), bw.ln1_gain, bw.ln1_bias, b.xhat1.row(i), b.rstd1[i],
                        b.normed.row(i));
      project_with_adapter(bw.wq, fq, aq, b.normed.row(i), b.up_q.row(i), b.query.row(i));
      matvec_into(bw.wk, b.normed.row(i), b.key.row(i));
      project_with_adapter(bw.wv, fv, av, b.normed.row(i), b.up_v.row(i), b.value.row(i));
    }
    for (std::size_t i = 0; i < n; ++i) {
      auto ctx = b.context.row(i);
      for (std::size_t h = 0; h < mc.n_heads; ++h) {
        double* p = &b.probs[(h * n + i) * n];
        const auto q = b.query.row(i).subspan(h * hd, hd);
        double peak = -INFINITY;
        for (std::size_t t = 0; t <= i; ++t) {
          p[t] = dot(q, b.key.row(t).subspan(h * hd, hd)) * scale;
          peak = std::max(peak, p[t]);
        }
        double total = 0.0;
        for (std::size_t t = 0; t <= i; ++t) {
          p[t] = std::exp(p[t] - peak);
          total += p[t];
        }
        for (std::size_t t = 0; t <= i; ++t) {
          p[t] /= total;
          axpy(p[t], b.value.row(t).subspan(h * hd, hd), ctx.subspan(h * hd, hd));
        }
      }
      matvec_into(bw.wo, ctx, attn);
      axpy(1.0, attn, x.row(i));
      layer_norm_cached(x.row(i), bw.ln2_gain, bw.ln2_bias, b.xhat2.row(i), b.rstd2[i],
                        b.ffn_in.row(i));
      auto z = b.pre_act.row(i);
      matvec_into(bw.w1, b.ffn_in.row(i), z);
      for (std::size_t k = 0; k < mc.d_ff; ++k) {
        z[k] += bw.b1[k];
        hidden[k] = std::max(z[k], 0.0);
      }
      matvec_into(bw.w2, hidden, ffn_out);
      auto xr = x.row(i);
      for (std::size_t k = 0; k < d; ++k) xr[k] += ffn_out[k] + bw.b2[k];
    }
  }

  c.x_final = x;
  c.xhat_final = Matrix(n, d);
  c.y = Matrix(n, d);
  c.logits = Matrix(n, mc.vocab_size);
  c.rstd_final.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    layer_norm_cached(x.row(i), w.final_gain, w.final_bias, c.xhat_final.row(i), c.rstd_final[i],
                      c.y.row(i));
    matvec_into(w.unembedding, c.y.row(i), c.logits.row(i));
  }
}

// Backward through a LoRA-augmented projection for one token.
void project_backward(const Matrix& w, const LoraFactors& f, double alpha,
                      std::span<const double> a, std::span<const double> low,
                      std::span<const double> dout, LoraFactors& grad, std::span<double> dlow,
                      std::span<double> da) {
  // up grad: alpha * dout (x) low; dlow = alpha * up^T dout
  std::fill(dlow.begin(), dlow.end(), 0.0);
  for (std::size_t i = 0; i < dout.size(); ++i) {
    if (dout[i] == 0.0) continue;
    axpy(alpha * dout[i], low, grad.up.row(i));
    axpy(alpha * dout[i], f.up.row(i), dlow);
  }
  for (std::size_t k = 0; k < dlow.size(); ++k) {
    axpy(dlow[k], a, grad.down.row(k));
    axpy(dlow[k], f.down.row(k), da);
  }
  matvec_transposed_accumulate(w, dout, da);
}

// Accumulates the gradient of sum_over_loss_positions(CE) * loss_scale.
double backward_sample(const Backbone& backbone, const LoraAdapter& adapter,
                       const SyntheticTask& task, std::span<const Token> tokens,
                       const SampleCache& c, double loss_scale, std::vector<LoraFactors>& grad) {
  const ModelConfig& mc = backbone.config();
  const BackboneWeights& w = backbone.weights();
  const std::size_t n = tokens.size();
  const std::size_t d = mc.d_model;
  const std::size_t hd = mc.head_dim();
  const std::size_t r = adapter.rank();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  double loss = 0.0;
  Matrix dx(n, d);
  Vector dy(d);
  for (std::size_t i = 0; i < n; ++i) {
    if (!task.in_band(tokens[i])) continue;
    const Token label = task.next(tokens[i]);
    Vector p = softmax(c.logits.row(i));
    loss -= std::log(std::max(p[label], 1e-300));
    p[label] -= 1.0;
    for (double& v : p) v *= loss_scale;
    std::fill(dy.begin(), dy.end(), 0.0);
    matvec_transposed_accumulate(w.unembedding, p, dy);
    layer_norm_backward(dy, w.final_gain, c.xhat_final.row(i), c.rstd_final[i], dx.row(i));
  }

  Vector dhidden(mc.d_ff), dffn_in(d), dctx(d), dlow(r);
  Matrix dquery(n, d), dkey(n, d), dvalue(n, d), dnormed(n, d);
  std::vector<double> dprob(n);
  for (std::size_t jj = mc.n_blocks; jj-- > 0;) {
    const BlockWeights& bw = w.blocks[jj];
    const BlockCache& b = c.blocks[jj];

    // Feed-forward: x_out = x_mid + W2 relu(W1 ln2(x_mid) + b1) + b2.
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(dhidden.begin(), dhidden.end(), 0.0);
      matvec_transposed_accumulate(bw.w2, dx.row(i), dhidden);
      const auto z = b.pre_act.row(i);
      for (std::size_t k = 0; k < mc.d_ff; ++k) {
        if (z[k] <= 0.0) dhidden[k] = 0.0;
      }
      std::fill(dffn_in.begin(), dffn_in.end(), 0.0);
      matvec_transposed_accumulate(bw.w1, dhidden, dffn_in);
      layer_norm_backward(dffn_in, bw.ln2_gain, b.xhat2.row(i), b.rstd2[i], dx.row(i));
    }

    // Attention: x_mid = x_in + Wo attn(q, k, v).
    std::fill(dquery.data().begin(), dquery.data().end(), 0.0);
    std::fill(dkey.data().begin(), dkey.data().end(), 0.0);
    std::fill(dvalue.data().begin(), dvalue.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(dctx.begin(), dctx.end(), 0.0);
      matvec_transposed_accumulate(bw.wo, dx.row(i), dctx);
      for (std::size_t h = 0; h < mc.n_heads; ++h) {
        const double* p = &b.probs[(h * n + i) * n];
        const auto dc = std::span<const double>(dctx).subspan(h * hd, hd);
        double weighted = 0.0;
        for (std::size_t t = 0; t <= i; ++t) {
          dprob[t] = dot(dc, b.value.row(t).subspan(h * hd, hd));
          weighted += p[t] * dprob[t];
          axpy(p[t], dc, dvalue.row(t).subspan(h * hd, hd));
        }
        for (std::size_t t = 0; t <= i; ++t) {
          const double ds = p[t] * (dprob[t] - weighted) * scale;
          if (ds == 0.0) continue;
          axpy(ds, b.key.row(t).subspan(h * hd, hd), dquery.row(i).subspan(h * hd, hd));
          axpy(ds, b.query.row(i).subspan(h * hd, hd), dkey.row(t).subspan(h * hd, hd));
        }
      }
    }

    const LoraFactors& fq = adapter.factors(jj, Site::kQ);
    const LoraFactors& fv = adapter.factors(jj, Site::kV);
    LoraFactors& gq = grad[site_index(jj, Site::kQ)];
    LoraFactors& gv = grad[site_index(jj, Site::kV)];
    std::fill(dnormed.data().begin(), dnormed.data().end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      project_backward(bw.wq, fq, adapter.alpha(jj, Site::kQ), b.normed.row(i), b.up_q.row(i),
                       dquery.row(i), gq, dlow, dnormed.row(i));
      project_backward(bw.wv, fv, adapter.alpha(jj, Site::kV), b.normed.row(i), b.up_v.row(i),
                       dvalue.row(i), gv, dlow, dnormed.row(i));
      matvec_transposed_accumulate(bw.wk, dkey.row(i), dnormed.row(i));
      layer_norm_backward(dnormed.row(i), bw.ln1_gain, b.xhat1.row(i), b.rstd1[i], dx.row(i));
    }
  }
  return loss;
}

std::size_t loss_positions(const SyntheticTask& task, std::span<const TaskSample> samples) {
  std::size_t count = 0;
  for (const auto& s : samples) {
    for (Token t : s.tokens) count += task.in_band(t) ? 1 : 0;
  }
  return count;
}

std::vector<LoraFactors> zero_like(const LoraAdapter& adapter) {
  std::vector<LoraFactors> out;
  for (const auto& f : adapter.all_factors()) {
    out.push_back({Matrix(f.up.rows(), f.up.cols()), Matrix(f.down.rows(), f.down.cols())});
  }
  return out;
}

}  // namespace

double task_loss(const Backbone& backbone, const SyntheticTask& task,
                 std::span<const TaskSample> samples, const HookSet& hooks) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    const HiddenTrace trace = backbone.forward(s.tokens, hooks);
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (!task.in_band(s.tokens[i])) continue;
      const Vector p = softmax(trace.logits.row(i));
      total -= std::log(std::max(p[task.next(s.tokens[i])], 1e-300));
      ++count;
    }
  }
  if (count == 0) throw Error(ErrorCode::kEmptyInput, "task_loss: no in-band positions");
  return total / static_cast<double>(count);
}

LoraGradient lora_loss_and_gradient(const Backbone& backbone, const LoraAdapter& adapter,
                                    const SyntheticTask& task,
                                    std::span<const TaskSample> samples) {
  const std::size_t count = loss_positions(task, samples);
  if (count == 0) throw Error(ErrorCode::kEmptyInput, "lora gradient: no in-band positions");
  const double loss_scale = 1.0 / static_cast<double>(count);
  LoraGradient out;
  out.grad = zero_like(adapter);
  SampleCache cache;
  for (const auto& s : samples) {
    backbone.validate_tokens(s.tokens);
    forward_sample(backbone, adapter, s.tokens, cache);
    out.loss += backward_sample(backbone, adapter, task, s.tokens, cache, loss_scale, out.grad);
  }
  out.loss *= loss_scale;
  return out;
}

LoraAdapter train_toy_adapter(const Backbone& backbone, const SyntheticTask& task,
                              const ToyTrainingConfig& config) {
  const ModelConfig& mc = backbone.config();
  if (config.steps == 0) throw Error(ErrorCode::kInvalidArgument, "training: steps must be >= 1");
  if (config.rank == 0 || config.rank > mc.d_model) {
    throw Error(ErrorCode::kInvalidArgument, "training: rank " + std::to_string(config.rank) +
                                                 " must be in [1, d_model=" +
                                                 std::to_string(mc.d_model) + "]");
  }
  if (config.batch_size == 0 || config.seq_len == 0 || config.seq_len > mc.max_seq_len) {
    throw Error(ErrorCode::kInvalidArgument, "training: bad batch size or sequence length");
  }

  std::mt19937_64 rng(config.seed);
  std::vector<LoraFactors> factors(mc.n_blocks * kNumSites);
  for (auto& f : factors) {
    f.up = Matrix(mc.d_model, config.rank);
    for (double& x : f.up.data()) x = uniform_symmetric(rng, config.init_scale);
    f.down = Matrix(config.rank, mc.d_model);
  }

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  constexpr double kMomentum = 0.9;
  std::vector<double> m1, m2;
  auto params = [&factors]() {
    std::vector<std::span<double>> out;
    for (auto& f : factors) {
      out.push_back(f.up.data());
      out.push_back(f.down.data());
    }
    return out;
  };
  std::size_t n_params = 0;
  for (auto p : params()) n_params += p.size();
  m1.assign(n_params, 0.0);
  m2.assign(n_params, 0.0);

  std::vector<TaskSample> batch;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    batch.clear();
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      batch.push_back(sample_task(task, config.seq_len, rng));
    }
    const LoraAdapter current(task.id, mc.d_model, mc.n_blocks, config.rank, config.alpha,
                              factors, task.id);
    LoraGradient g = lora_loss_and_gradient(backbone, current, task, batch);
    if (!std::isfinite(g.loss)) {
      throw Error(ErrorCode::kDivergence,
                  "training " + task.id + ": loss became non-finite at step " + std::to_string(step));
    }
    double grad_scale = 1.0;
    if (config.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& f : g.grad) {
        for (double x : f.up.data()) sq += x * x;
        for (double x : f.down.data()) sq += x * x;
      }
      const double norm = std::sqrt(sq);
      if (norm > config.clip_norm) grad_scale = config.clip_norm / norm;
    }
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
    auto p = params();
    std::size_t offset = 0;
    std::size_t pi = 0;
    for (std::size_t f = 0; f < g.grad.size(); ++f) {
      const std::span<const double> grads[2] = {g.grad[f].up.data(), g.grad[f].down.data()};
      for (int which = 0; which < 2; ++which, ++pi) {
        std::span<double> ps = p[pi];
        double tensor_scale = grad_scale;
        if (config.optimizer == Optimizer::kNormalized) {
          const double n = l2_norm(grads[which]);
          tensor_scale = n > 0.0 ? 1.0 / n : 0.0;
        }
        for (std::size_t i = 0; i < ps.size(); ++i, ++offset) {
          const double gi = tensor_scale * grads[which][i] + config.weight_decay * ps[i];
          if (config.optimizer != Optimizer::kAdam) {
            m1[offset] = kMomentum * m1[offset] + gi;
            ps[i] -= config.learning_rate * m1[offset];
            continue;
          }
          m1[offset] = kBeta1 * m1[offset] + (1.0 - kBeta1) * gi;
          m2[offset] = kBeta2 * m2[offset] + (1.0 - kBeta2) * gi * gi;
          ps[i] -= config.learning_rate * (m1[offset] / c1) / (std::sqrt(m2[offset] / c2) + kEps);
        }
        if (!all_finite(ps)) {
          throw Error(ErrorCode::kDivergence, "training " + task.id +
                                                  ": parameters became non-finite at step " +
                                                  std::to_string(step));
        }
      }
    }
  }
  return LoraAdapter(task.id, mc.d_model, mc.n_blocks, config.rank, config.alpha,
                     std::move(factors), task.id);
}

void train_suite_into(AdapterPool& pool, const Backbone& backbone, const TaskSuite& suite,
                      const ToyTrainingConfig& config) {
  for (const auto& task : suite.tasks) {
    ToyTrainingConfig c = config;
    c.seed = config.seed + task.band_begin;
    pool.add(std::make_shared<LoraAdapter>(train_toy_adapter(backbone, task, c)));
  }
}

}  // namespace loraroute::harness
