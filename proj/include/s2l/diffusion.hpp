#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "s2l/datagen.hpp"
#include "s2l/param_store.hpp"

namespace s2l::diffusion {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;       // beta_t at index t-1, strictly increasing
  std::vector<double> alpha_bars;  // cumulative product of (1 - beta)

  // The classic 1e-4..0.02 DDPM range is calibrated for T=1000; at T=50 it
  // leaves alpha_bar(T) ~ 0.6 and sampling from pure noise never matches
  // training. Scaling the endpoints by 1000/T keeps the terminal
  // signal-to-noise near zero.
  static NoiseSchedule linear(int T, double beta_start = 1e-3, double beta_end = 0.15);

  void validate() const;

  /// alpha_bar with the convention alpha_bar(0) = 1.
  double abar(int t) const {
    if (t == 0) return 1.0;
    return alpha_bars.at(static_cast<size_t>(t - 1));
  }
  double sqrt_abar(int t) const { return std::sqrt(abar(t)); }
  double sqrt_one_minus_abar(int t) const { return std::sqrt(1.0 - abar(t)); }
};

struct ModelConfig {
  int vocab_size = 64;
  int embed_dim = 32;
  int hidden_dim = 128;
  int blocks = 2;
  bool latent_mode = true;
  int latent_dim = 64;
  int ae_hidden = 192;
  int pixel_dim = datagen::kPixelDim;
  int T = 50;
  int max_prompt_len = 8;

  int data_dim() const { return latent_mode ? latent_dim : pixel_dim; }
  void validate() const;
};

/// The victim model: embedding G_e, one-block self-attention text encoder
/// G_t, a cross-attention denoiser G_n predicting x0, and an optional linear
/// pixel autoencoder. All state lives in the param store (trainable groups
/// plus `buffer` records for the schedule and config), so checkpointing and
/// perturbation see one flat namespace.
template <typename Scalar>
struct DiffusionModelT {
  ModelConfig config;
  NoiseSchedule schedule;
  ParamStoreT<Scalar> params;

  static DiffusionModelT init(const ModelConfig& cfg, std::uint64_t seed);

  /// Base dense layers adapted by LoRA (derived from param names).
  std::vector<std::string> lora_layers() const;
  bool has_hypernetwork() const;

  /// Rebuilds config/schedule from buffer records after a raw param load.
  static DiffusionModelT from_params(ParamStoreT<Scalar> params);
};

using DiffusionModel = DiffusionModelT<float>;

/// Dense weight names eligible for LoRA (text encoder + denoiser).
std::vector<std::string> dense_layer_names(const ModelConfig& cfg);

namespace detail {

template <typename Scalar>
TensorT<Scalar> time_embedding(const std::vector<int>& ts, int dim) {
  const int B = static_cast<int>(ts.size());
  TensorT<Scalar> emb({B, dim});
  const int half = dim / 2;
  for (int b = 0; b < B; ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half));
      const double a = static_cast<double>(ts[static_cast<size_t>(b)]) * freq;
      emb[b * dim + 2 * i] = static_cast<Scalar>(std::sin(a));
      emb[b * dim + 2 * i + 1] = static_cast<Scalar>(std::cos(a));
    }
  }
  return emb;
}

}  // namespace detail

/// Binds a model's parameters as autodiff leaves and exposes the forward
/// passes, the deterministic sampler and the training step. The runtime owns
/// the live values while it exists; commit() writes them back to the model.
template <typename Scalar>
class ModelRuntimeT {
 public:
  explicit ModelRuntimeT(DiffusionModelT<Scalar>& model)
      : model_(&model),
        cfg_(model.config),
        sched_(model.schedule),
        bound_(BoundParamsT<Scalar>::bind(model.params)),
        lora_layers_(model.lora_layers()),
        hyper_(model.has_hypernetwork()) {}

  const ModelConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return sched_; }
  BoundParamsT<Scalar>& bound() { return bound_; }

  void commit() {
    for (size_t i = 0; i < bound_.vars.size(); ++i) {
      model_->params.at(bound_.names[i]) = bound_.vars[i]->value;
    }
  }

  /// Marks leaves without any trainable scalar as constants so backward
  /// skips their gradient work.
  void set_trainable(const ParamStoreT<Scalar>& mask) {
    for (size_t i = 0; i < bound_.vars.size(); ++i) {
      const auto& name = bound_.names[i];
      const bool any = mask.has(name) && (mask.at(name).array() != Scalar(0)).any();
      bound_.vars[i]->requires_grad = any;
    }
  }

  void set_all_trainable() {
    for (auto& v : bound_.vars) v->requires_grad = true;
  }

  // -- forward passes ------------------------------------------------------

  /// Token hidden states H in R^{B x L x embed_dim}: embedding lookup plus
  /// one residual self-attention block.
  VarT<Scalar> token_hidden(const std::vector<int>& tokens, int B) const {
    const int L = cfg_.max_prompt_len;
    if (static_cast<int>(tokens.size()) != B * L) {
      throw std::invalid_argument("token_hidden: expected " + std::to_string(B * L) +
                                  " token ids, got " + std::to_string(tokens.size()));
    }
    auto emb = embedding(bound_["emb.table"], tokens, {B, L});
    auto q = dense("text.wq", "text.bq", emb);
    auto k = dense("text.wk", "text.bk", emb);
    auto v = dense("text.wv", "text.bv", emb);
    auto attn = attention(q, k, v);
    auto proj = dense("text.wo", "text.bo", attn);
    return add(emb, proj);
  }

  /// Denoiser forward: predicts x0 from x_t, per-row timestep and H.
  VarT<Scalar> denoise(const VarT<Scalar>& x_t, const VarT<Scalar>& hidden_tokens,
                       const std::vector<int>& ts) const {
    const int B = x_t->value.dim(0);
    for (int t : ts) {
      if (t < 1 || t > cfg_.T) {
        throw std::invalid_argument("denoise: timestep " + std::to_string(t) +
                                    " out of range [1," + std::to_string(cfg_.T) + "]");
      }
    }
    auto temb = constant(detail::time_embedding<Scalar>(ts, cfg_.embed_dim));
    auto h = gelu(dense("den.in.w", "den.in.b", concat_last(x_t, temb)));
    for (int blk = 0; blk < cfg_.blocks; ++blk) {
      const std::string p = "den.blk" + std::to_string(blk);
      auto u = gelu(dense(p + ".dense.w", p + ".dense.b", h));
      auto q3 = reshape(dense(p + ".cross.wq", p + ".cross.bq", u),
                        {B, 1, cfg_.hidden_dim});
      auto k = dense(p + ".cross.wk", p + ".cross.bk", hidden_tokens);
      auto v = dense(p + ".cross.wv", p + ".cross.bv", hidden_tokens);
      if (hyper_) {
        k = hyper_transform(p, "k", k);
        v = hyper_transform(p, "v", v);
      }
      auto attn = reshape(attention(q3, k, v), {B, cfg_.hidden_dim});
      h = add(h, dense(p + ".cross.wo", p + ".cross.bo", attn));
    }
    // The head sees x_t directly so near-identity denoising at low t does
    // not have to pass through the residual stack.
    return dense("den.out.w", "den.out.b", concat_last(h, x_t));
  }

  /// No-grad convenience: deterministic x0 prediction as a plain tensor.
  TensorT<Scalar> predict_x0(const TensorT<Scalar>& x_t, const std::vector<int>& tokens,
                             const std::vector<int>& ts) const {
    const int B = x_t.dim(0);
    auto H = token_hidden(tokens, B);
    auto out = denoise(constant(x_t), H, ts);
    return out->value;
  }

  // -- autoencoder ---------------------------------------------------------

  /// Raw (unstandardised) autoencoder passes.
  VarT<Scalar> encode_raw(const VarT<Scalar>& pixels) const {
    require_latent("encode");
    auto h = gelu(dense("ae.enc.w1", "ae.enc.b1", pixels));
    return dense("ae.enc.w2", "ae.enc.b2", h);
  }
  VarT<Scalar> decode_raw(const VarT<Scalar>& latent) const {
    require_latent("decode");
    auto h = gelu(dense("ae.dec.w1", "ae.dec.b1", latent));
    return dense("ae.dec.w2", "ae.dec.b2", h);
  }

  /// Standardised latent encoding (graph version).
  VarT<Scalar> encode_var(const VarT<Scalar>& pixels) const {
    auto z = encode_raw(pixels);
    const int B = pixels->value.dim(0);
    auto mu_b = constant(tile_rows(model_->params.at("ae.latent_mu"), B));
    auto sg_b = constant(tile_rows(inv_sigma_tensor(), B));
    return mul(add(z, scale(mu_b, Scalar(-1))), sg_b);
  }

  VarT<Scalar> decode_var(const VarT<Scalar>& latent) const {
    require_latent("decode");
    const int B = latent->value.dim(0);
    auto sg_b = constant(tile_rows(model_->params.at("ae.latent_sigma"), B));
    auto mu_b = constant(tile_rows(model_->params.at("ae.latent_mu"), B));
    return decode_raw(add(mul(latent, sg_b), mu_b));
  }

  TensorT<Scalar> encode(const TensorT<Scalar>& pixels) const {
    return encode_var(constant(pixels))->value;
  }
  TensorT<Scalar> decode(const TensorT<Scalar>& latent) const {
    return decode_var(constant(latent))->value;
  }

  /// Maps pixel batches into the diffusion operating space.
  TensorT<Scalar> to_data_space(const TensorT<Scalar>& pixels) const {
    return cfg_.latent_mode ? encode(pixels) : pixels;
  }
  TensorT<Scalar> to_pixel_space(const TensorT<Scalar>& x) const {
    if (!cfg_.latent_mode) return x;
    TensorT<Scalar> px = decode(x);
    px.array() = px.array().max(Scalar(0)).min(Scalar(1));
    return px;
  }

  // -- diffusion steps (all deterministic) ----------------------------------

  /// Closed-form forward mixture x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
  TensorT<Scalar> q_sample(const TensorT<Scalar>& x0, const std::vector<int>& ts,
                           const TensorT<Scalar>& noise) const {
    if (!x0.same_shape(noise)) {
      throw std::invalid_argument("q_sample: noise shape " + noise.shape_str() +
                                  " does not match x0 " + x0.shape_str());
    }
    if (static_cast<Eigen::Index>(ts.size()) != x0.rows2d()) {
      throw std::invalid_argument("q_sample: need one timestep per row");
    }
    TensorT<Scalar> out(x0.shape());
    auto xm = x0.mat();
    auto nm = noise.mat();
    auto om = out.mat();
    for (Eigen::Index r = 0; r < xm.rows(); ++r) {
      const int t = ts[static_cast<size_t>(r)];
      if (t < 1 || t > cfg_.T) {
        throw std::invalid_argument("q_sample: timestep " + std::to_string(t) +
                                    " out of range [1," + std::to_string(cfg_.T) + "]");
      }
      om.row(r) = static_cast<Scalar>(sched_.sqrt_abar(t)) * xm.row(r) +
                  static_cast<Scalar>(sched_.sqrt_one_minus_abar(t)) * nm.row(r);
    }
    return out;
  }

  /// Deterministic reverse update from level t_hi to t_lo < t_hi, predicting
  /// x0 at t_hi and carrying its implied noise direction.
  TensorT<Scalar> reverse_step(const TensorT<Scalar>& x_t, const std::vector<int>& tokens,
                               int t_hi, int t_lo) const {
    const int B = x_t.dim(0);
    TensorT<Scalar> x0 = predict_x0(x_t, tokens, std::vector<int>(static_cast<size_t>(B), t_hi));
    const Scalar sa_hi = static_cast<Scalar>(sched_.sqrt_abar(t_hi));
    const Scalar sb_hi = static_cast<Scalar>(sched_.sqrt_one_minus_abar(t_hi));
    const Scalar sa_lo = static_cast<Scalar>(sched_.sqrt_abar(t_lo));
    const Scalar sb_lo = static_cast<Scalar>(sched_.sqrt_one_minus_abar(t_lo));
    TensorT<Scalar> out(x_t.shape());
    out.array() = sa_lo * x0.array() +
                  sb_lo * ((x_t.array() - sa_hi * x0.array()) / sb_hi);
    return out;
  }

  /// Deterministic diffusion (inversion) step from level s to s+1. The first
  /// step out of clean data carries no noise direction yet.
  TensorT<Scalar> forward_step(const TensorT<Scalar>& x_s, const std::vector<int>& tokens,
                               int s) const {
    const int B = x_s.dim(0);
    const Scalar sa_next = static_cast<Scalar>(sched_.sqrt_abar(s + 1));
    const Scalar sb_next = static_cast<Scalar>(sched_.sqrt_one_minus_abar(s + 1));
    TensorT<Scalar> out(x_s.shape());
    if (s == 0) {
      out.array() = sa_next * x_s.array();
      return out;
    }
    TensorT<Scalar> x0 = predict_x0(x_s, tokens, std::vector<int>(static_cast<size_t>(B), s));
    const Scalar sa = static_cast<Scalar>(sched_.sqrt_abar(s));
    const Scalar sb = static_cast<Scalar>(sched_.sqrt_one_minus_abar(s));
    out.array() = sa_next * x0.array() +
                  sb_next * ((x_s.array() - sa * x0.array()) / sb);
    return out;
  }

  /// DDIM inversion: deterministic forward map of clean data to level t.
  TensorT<Scalar> ddim_invert(const TensorT<Scalar>& x0, const std::vector<int>& tokens,
                              int t) const {
    if (t < 1 || t > cfg_.T) {
      throw std::invalid_argument("ddim_invert: target step out of range");
    }
    TensorT<Scalar> x = x0;
    for (int s = 0; s < t; ++s) x = forward_step(x, tokens, s);
    return x;
  }

  /// Deterministic generation: seeded Gaussian x_T, then the reverse update
  /// over an evenly spaced timestep subsequence; decoded and clamped.
  TensorT<Scalar> generate_batch(const std::vector<std::vector<int>>& prompts,
                                 std::uint64_t master_seed, std::string_view seed_label,
                                 std::uint64_t first_index, int steps) const {
    if (steps < 1 || steps > cfg_.T) {
      throw std::invalid_argument("generate: steps must be in [1,T]");
    }
    const int B = static_cast<int>(prompts.size());
    const int D = cfg_.data_dim();
    std::vector<int> tokens = pad_prompts(prompts);
    TensorT<Scalar> x({B, D});
    for (int b = 0; b < B; ++b) {
      Rng rng = Rng::stream(master_seed, seed_label, first_index + static_cast<std::uint64_t>(b));
      rng.fill_normal(x.data() + static_cast<Eigen::Index>(b) * D, D);
    }
    std::vector<int> seq = timestep_sequence(steps);
    for (size_t i = 0; i + 1 < seq.size(); ++i) {
      x = reverse_step(x, tokens, seq[i], seq[i + 1]);
    }
    return to_pixel_space(x);
  }

  std::vector<int> timestep_sequence(int steps) const {
    std::vector<int> seq;
    for (int i = 0; i <= steps; ++i) {
      const double f = static_cast<double>(steps - i) / static_cast<double>(steps);
      seq.push_back(static_cast<int>(std::llround(f * cfg_.T)));
    }
    seq.front() = cfg_.T;
    seq.back() = 0;
    // Strictly decreasing; duplicates can appear for steps close to T.
    std::vector<int> out;
    for (int t : seq) {
      if (out.empty() || t < out.back()) out.push_back(t);
    }
    return out;
  }

  /// Pads each prompt to max_prompt_len.
  std::vector<int> pad_prompts(const std::vector<std::vector<int>>& prompts) const {
    std::vector<int> tokens;
    tokens.reserve(prompts.size() * static_cast<size_t>(cfg_.max_prompt_len));
    for (const auto& p : prompts) {
      if (static_cast<int>(p.size()) > cfg_.max_prompt_len) {
        throw std::invalid_argument("prompt longer than max_prompt_len");
      }
      for (int id : p) tokens.push_back(id);
      for (int i = static_cast<int>(p.size()); i < cfg_.max_prompt_len; ++i) {
        tokens.push_back(datagen::tok::PAD);
      }
    }
    return tokens;
  }

  // -- training -------------------------------------------------------------

  struct StepSample {
    const TensorT<Scalar>* pixels;
    const std::vector<int>* prompt;
  };

  /// One Eq.-1 step: per-sample uniform t, fresh Gaussian noise, MSE between
  /// x0 and the prediction, one masked Adam update. Returns the loss.
  double train_step(const std::vector<StepSample>& batch, AdamT<Scalar>& opt,
                    const ParamStoreT<Scalar>& mask, Rng& rng) {
    if (batch.empty()) {
      throw std::invalid_argument("train_step: empty batch");
    }
    const int B = static_cast<int>(batch.size());
    const int D = cfg_.data_dim();
    const bool train_ae = cfg_.latent_mode && mask_touches_ae(mask);

    std::vector<std::vector<int>> prompts;
    prompts.reserve(batch.size());
    TensorT<Scalar> pixels({B, cfg_.pixel_dim});
    for (int b = 0; b < B; ++b) {
      prompts.push_back(*batch[static_cast<size_t>(b)].prompt);
      pixels.mat().row(b) = batch[static_cast<size_t>(b)].pixels->mat().row(0);
    }
    std::vector<int> tokens = pad_prompts(prompts);

    std::vector<int> ts(static_cast<size_t>(B));
    for (auto& t : ts) t = rng.uniform_int(1, cfg_.T);
    TensorT<Scalar> noise({B, D});
    rng.fill_normal(noise.data(), noise.size());

    VarT<Scalar> loss;
    if (train_ae) {
      // Gradient flows through the encoder into both x_t and the target.
      auto x0 = encode_var(constant(pixels));
      std::vector<Scalar> sa(ts.size()), sb(ts.size());
      for (size_t i = 0; i < ts.size(); ++i) {
        sa[i] = static_cast<Scalar>(sched_.sqrt_abar(ts[i]));
        sb[i] = static_cast<Scalar>(sched_.sqrt_one_minus_abar(ts[i]));
      }
      auto x_t = add(row_scale(x0, sa), row_scale(constant(noise), sb));
      auto pred = denoise(x_t, token_hidden(tokens, B), ts);
      loss = mse(pred, x0);
    } else {
      TensorT<Scalar> x0 = cfg_.latent_mode ? encode(pixels) : pixels;
      TensorT<Scalar> x_t = q_sample(x0, ts, noise);
      auto pred = denoise(constant(x_t), token_hidden(tokens, B), ts);
      loss = mse(pred, constant(x0));
    }
    const double value = static_cast<double>(loss->value[0]);
    backward(loss);
    opt.step(bound_.vars, bound_.names, mask);
    return value;
  }

  /// Autoencoder reconstruction step (pretraining stage 1).
  double ae_train_step(const TensorT<Scalar>& pixels, AdamT<Scalar>& opt,
                       const ParamStoreT<Scalar>& mask) {
    require_latent("ae_train_step");
    auto x = constant(pixels);
    auto rec = decode_raw(encode_raw(x));
    auto loss = mse(rec, x);
    const double value = static_cast<double>(loss->value[0]);
    backward(loss);
    opt.step(bound_.vars, bound_.names, mask);
    return value;
  }

 private:
  VarT<Scalar> dense(const std::string& wname, const std::string& bname,
                     const VarT<Scalar>& x) const {
    auto w = bound_[wname];
    if (!lora_layers_.empty() &&
        std::find(lora_layers_.begin(), lora_layers_.end(), wname) != lora_layers_.end()) {
      w = add(w, matmul(bound_["lora." + wname + ".a"], bound_["lora." + wname + ".b"]));
    }
    return affine(x, w, bound_[bname]);
  }

  /// Residual two-layer hypernetwork transform of keys or values.
  VarT<Scalar> hyper_transform(const std::string& block_prefix, const char* kv,
                               const VarT<Scalar>& x) const {
    const std::string p = "hyper." + block_prefix + "." + kv;
    auto h = gelu(affine(x, bound_[p + ".w1"], bound_[p + ".b1"]));
    return add(x, affine(h, bound_[p + ".w2"], bound_[p + ".b2"]));
  }

  bool mask_touches_ae(const ParamStoreT<Scalar>& mask) const {
    for (const auto& e : mask) {
      if (e.group == ParamGroup::autoencoder && (e.tensor.array() != Scalar(0)).any()) {
        return true;
      }
    }
    return false;
  }

  void require_latent(const char* op) const {
    if (!cfg_.latent_mode) {
      throw std::invalid_argument(std::string(op) + ": latent mode is disabled");
    }
  }

  TensorT<Scalar> inv_sigma_tensor() const {
    TensorT<Scalar> s = model_->params.at("ae.latent_sigma");
    s.array() = Scalar(1) / s.array();
    return s;
  }

  static TensorT<Scalar> tile_rows(const TensorT<Scalar>& row, int B) {
    TensorT<Scalar> out({B, static_cast<int>(row.size())});
    for (int b = 0; b < B; ++b) out.mat().row(b) = row.mat().row(0);
    return out;
  }

  DiffusionModelT<Scalar>* model_;
  ModelConfig cfg_;
  NoiseSchedule sched_;
  BoundParamsT<Scalar> bound_;
  std::vector<std::string> lora_layers_;
  bool hyper_;
};

using ModelRuntime = ModelRuntimeT<float>;

struct TrainLog {
  std::vector<double> ae_epoch_loss;
  std::vector<double> epoch_loss;
};

struct PretrainOptions {
  int ae_epochs = 10;
  int epochs = 30;
  int batch = 32;
  double lr = 1e-3;
  double lr_final_fraction = 0.05;  // cosine decay floor, as a fraction of lr
};

/// Stage 1 trains the autoencoder on reconstruction and freezes latent
/// statistics; stage 2 trains the diffusion objective over the member set.
DiffusionModel pretrain(const ModelConfig& cfg, const datagen::Corpus& corpus,
                        std::uint64_t seed, const PretrainOptions& opts, TrainLog* log);

}  // namespace s2l::diffusion
