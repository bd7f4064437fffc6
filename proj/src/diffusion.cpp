#include "s2l/diffusion.hpp"

#include <algorithm>

namespace s2l::diffusion {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("schedule: T must be positive");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alpha_bars.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double beta =
        T == 1 ? beta_start
               : beta_start + (beta_end - beta_start) * static_cast<double>(t) /
                                  static_cast<double>(T - 1);
    s.betas[static_cast<size_t>(t)] = beta;
    prod *= (1.0 - beta);
    s.alpha_bars[static_cast<size_t>(t)] = prod;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (T < 1 || betas.size() != static_cast<size_t>(T) ||
      alpha_bars.size() != static_cast<size_t>(T)) {
    throw std::invalid_argument("schedule: inconsistent sizes");
  }
  double prev_beta = 0.0;
  double prev_ab = 1.0;
  for (int t = 0; t < T; ++t) {
    const double b = betas[static_cast<size_t>(t)];
    const double ab = alpha_bars[static_cast<size_t>(t)];
    if (b <= 0.0 || b >= 1.0 || b <= prev_beta) {
      throw std::invalid_argument("schedule: betas must be strictly increasing in (0,1)");
    }
    if (ab <= 0.0 || ab >= prev_ab) {
      throw std::invalid_argument("schedule: alpha_bars must be strictly decreasing in (0,1)");
    }
    prev_beta = b;
    prev_ab = ab;
  }
}

void ModelConfig::validate() const {
  if (vocab_size < datagen::tok::FIRST_NAME || embed_dim < 2 || hidden_dim < 1 ||
      blocks < 1 || latent_dim < 1 || pixel_dim < 1 || T < 1 || max_prompt_len < 1) {
    throw std::invalid_argument("model config: all dimensions must be positive");
  }
  if (embed_dim % 2 != 0) {
    throw std::invalid_argument("model config: embed_dim must be even");
  }
  if (latent_mode && latent_dim >= pixel_dim) {
    throw std::invalid_argument("model config: latent_dim must be below pixel_dim");
  }
}

std::vector<std::string> dense_layer_names(const ModelConfig& cfg) {
  std::vector<std::string> names = {"text.wq", "text.wk", "text.wv", "text.wo",
                                    "den.in.w"};
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string p = "den.blk" + std::to_string(b);
    names.push_back(p + ".dense.w");
    names.push_back(p + ".cross.wq");
    names.push_back(p + ".cross.wk");
    names.push_back(p + ".cross.wv");
    names.push_back(p + ".cross.wo");
  }
  names.push_back("den.out.w");
  return names;
}

namespace {

template <typename Scalar>
TensorT<Scalar> gaussian_init(std::vector<int> shape, double stddev, std::uint64_t seed,
                              const std::string& label) {
  TensorT<Scalar> t(std::move(shape));
  Rng rng = Rng::stream(seed, label);
  rng.fill_normal(t.data(), t.size(), 0.0, stddev);
  return t;
}

template <typename Scalar>
void add_dense(ParamStoreT<Scalar>& p, ParamGroup g, const std::string& base, int in,
               int out, std::uint64_t seed) {
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  p.add(base + ".w", g,
        gaussian_init<Scalar>({in, out}, stddev, seed, "init." + base + ".w"));
  p.add(base + ".b", g, TensorT<Scalar>::zeros({out}));
}

}  // namespace

template <typename Scalar>
DiffusionModelT<Scalar> DiffusionModelT<Scalar>::init(const ModelConfig& cfg,
                                                      std::uint64_t seed) {
  cfg.validate();
  DiffusionModelT<Scalar> m;
  m.config = cfg;
  m.schedule = NoiseSchedule::linear(cfg.T);

  auto& p = m.params;
  p.add("emb.table", ParamGroup::embedding,
        gaussian_init<Scalar>({cfg.vocab_size, cfg.embed_dim}, 1.0, seed, "init.emb.table"));

  const auto te = ParamGroup::text_encoder;
  const double text_std = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
  for (const char* nm : {"wq", "wk", "wv", "wo"}) {
    const std::string base = std::string("text.") + nm;
    p.add(base, te, gaussian_init<Scalar>({cfg.embed_dim, cfg.embed_dim}, text_std, seed,
                                          "init." + base));
    p.add(std::string("text.b") + (nm + 1), te, TensorT<Scalar>::zeros({cfg.embed_dim}));
  }

  const auto dn = ParamGroup::denoiser;
  add_dense(p, dn, "den.in", cfg.data_dim() + cfg.embed_dim, cfg.hidden_dim, seed);
  for (int b = 0; b < cfg.blocks; ++b) {
    const std::string blk = "den.blk" + std::to_string(b);
    add_dense(p, dn, blk + ".dense", cfg.hidden_dim, cfg.hidden_dim, seed);
    const double sh = 1.0 / std::sqrt(static_cast<double>(cfg.hidden_dim));
    const double se = 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim));
    p.add(blk + ".cross.wq", dn,
          gaussian_init<Scalar>({cfg.hidden_dim, cfg.hidden_dim}, sh, seed,
                                "init." + blk + ".cross.wq"));
    p.add(blk + ".cross.bq", dn, TensorT<Scalar>::zeros({cfg.hidden_dim}));
    p.add(blk + ".cross.wk", dn,
          gaussian_init<Scalar>({cfg.embed_dim, cfg.hidden_dim}, se, seed,
                                "init." + blk + ".cross.wk"));
    p.add(blk + ".cross.bk", dn, TensorT<Scalar>::zeros({cfg.hidden_dim}));
    p.add(blk + ".cross.wv", dn,
          gaussian_init<Scalar>({cfg.embed_dim, cfg.hidden_dim}, se, seed,
                                "init." + blk + ".cross.wv"));
    p.add(blk + ".cross.bv", dn, TensorT<Scalar>::zeros({cfg.hidden_dim}));
    p.add(blk + ".cross.wo", dn,
          gaussian_init<Scalar>({cfg.hidden_dim, cfg.hidden_dim}, sh, seed,
                                "init." + blk + ".cross.wo"));
    p.add(blk + ".cross.bo", dn, TensorT<Scalar>::zeros({cfg.hidden_dim}));
  }
  add_dense(p, dn, "den.out", cfg.hidden_dim + cfg.data_dim(), cfg.data_dim(), seed);

  if (cfg.latent_mode) {
    const auto ae = ParamGroup::autoencoder;
    auto add_ae = [&p, seed](const std::string& wname, const std::string& bname, int in,
                             int out) {
      const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
      p.add(wname, ParamGroup::autoencoder,
            gaussian_init<Scalar>({in, out}, stddev, seed, "init." + wname));
      p.add(bname, ParamGroup::autoencoder, TensorT<Scalar>::zeros({out}));
    };
    add_ae("ae.enc.w1", "ae.enc.b1", cfg.pixel_dim, cfg.ae_hidden);
    add_ae("ae.enc.w2", "ae.enc.b2", cfg.ae_hidden, cfg.latent_dim);
    add_ae("ae.dec.w1", "ae.dec.b1", cfg.latent_dim, cfg.ae_hidden);
    add_ae("ae.dec.w2", "ae.dec.b2", cfg.ae_hidden, cfg.pixel_dim);
    p.add("ae.latent_mu", ParamGroup::buffer, TensorT<Scalar>::zeros({cfg.latent_dim}));
    p.add("ae.latent_sigma", ParamGroup::buffer,
          TensorT<Scalar>::full({cfg.latent_dim}, Scalar(1)));
  }

  TensorT<Scalar> fields({10});
  fields[0] = static_cast<Scalar>(cfg.vocab_size);
  fields[1] = static_cast<Scalar>(cfg.embed_dim);
  fields[2] = static_cast<Scalar>(cfg.hidden_dim);
  fields[3] = static_cast<Scalar>(cfg.blocks);
  fields[4] = static_cast<Scalar>(cfg.latent_mode ? 1 : 0);
  fields[5] = static_cast<Scalar>(cfg.latent_dim);
  fields[6] = static_cast<Scalar>(cfg.pixel_dim);
  fields[7] = static_cast<Scalar>(cfg.T);
  fields[8] = static_cast<Scalar>(cfg.max_prompt_len);
  fields[9] = static_cast<Scalar>(cfg.ae_hidden);
  p.add("config.fields", ParamGroup::buffer, std::move(fields));
  TensorT<Scalar> betas({cfg.T});
  for (int t = 0; t < cfg.T; ++t) {
    betas[t] = static_cast<Scalar>(m.schedule.betas[static_cast<size_t>(t)]);
  }
  p.add("sched.betas", ParamGroup::buffer, std::move(betas));
  return m;
}

template <typename Scalar>
std::vector<std::string> DiffusionModelT<Scalar>::lora_layers() const {
  std::vector<std::string> out;
  for (const auto& e : params) {
    const auto& n = e.name;
    if (n.rfind("lora.", 0) == 0 && n.size() > 7 && n.compare(n.size() - 2, 2, ".a") == 0) {
      out.push_back(n.substr(5, n.size() - 7));
    }
  }
  return out;
}

template <typename Scalar>
bool DiffusionModelT<Scalar>::has_hypernetwork() const {
  for (const auto& e : params) {
    if (e.name.rfind("hyper.", 0) == 0) return true;
  }
  return false;
}

template <typename Scalar>
DiffusionModelT<Scalar> DiffusionModelT<Scalar>::from_params(ParamStoreT<Scalar> params) {
  DiffusionModelT<Scalar> m;
  const auto& f = params.at("config.fields");
  if (f.size() != 10) {
    throw std::invalid_argument("checkpoint: malformed config.fields record");
  }
  m.config.vocab_size = static_cast<int>(f[0]);
  m.config.embed_dim = static_cast<int>(f[1]);
  m.config.hidden_dim = static_cast<int>(f[2]);
  m.config.blocks = static_cast<int>(f[3]);
  m.config.latent_mode = f[4] != Scalar(0);
  m.config.latent_dim = static_cast<int>(f[5]);
  m.config.pixel_dim = static_cast<int>(f[6]);
  m.config.T = static_cast<int>(f[7]);
  m.config.max_prompt_len = static_cast<int>(f[8]);
  m.config.ae_hidden = static_cast<int>(f[9]);
  m.config.validate();
  const auto& betas = params.at("sched.betas");
  if (betas.size() != m.config.T) {
    throw std::invalid_argument("checkpoint: schedule length does not match T");
  }
  m.schedule.T = m.config.T;
  double prod = 1.0;
  for (int t = 0; t < m.config.T; ++t) {
    const double b = static_cast<double>(betas[t]);
    m.schedule.betas.push_back(b);
    prod *= (1.0 - b);
    m.schedule.alpha_bars.push_back(prod);
  }
  m.schedule.validate();
  m.params = std::move(params);
  return m;
}

template struct DiffusionModelT<float>;
template struct DiffusionModelT<double>;

DiffusionModel pretrain(const ModelConfig& cfg, const datagen::Corpus& corpus,
                        std::uint64_t seed, const PretrainOptions& opts, TrainLog* log) {
  if (corpus.members.empty()) {
    throw std::invalid_argument("pretrain: corpus has no members");
  }
  DiffusionModel model = DiffusionModel::init(cfg, seed);
  const int n = static_cast<int>(corpus.members.size());

  auto shuffled_indices = [n](Rng& rng) {
    std::vector<int> idx(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
      const int j = rng.uniform_int(0, i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    return idx;
  };

  if (cfg.latent_mode) {
    // Stage 1: reconstruction training for the autoencoder.
    ModelRuntime rt(model);
    ParamStore mask = zero_mask_like(model.params);
    for (auto& e : model.params) {
      if (e.group == ParamGroup::autoencoder) {
        mask.at(e.name).array().setConstant(1.0f);
      }
    }
    rt.set_trainable(mask);
    Adam opt(opts.lr);
    Rng order = Rng::stream(seed, "pretrain.ae.order");
    for (int epoch = 0; epoch < opts.ae_epochs; ++epoch) {
      auto idx = shuffled_indices(order);
      double epoch_loss = 0.0;
      int steps = 0;
      for (int start = 0; start + opts.batch <= n; start += opts.batch) {
        Tensor batch({opts.batch, cfg.pixel_dim});
        for (int b = 0; b < opts.batch; ++b) {
          batch.mat().row(b) =
              corpus.members[static_cast<size_t>(idx[static_cast<size_t>(start + b)])]
                  .image.mat()
                  .row(0);
        }
        epoch_loss += rt.ae_train_step(batch, opt, mask);
        ++steps;
      }
      if (log) log->ae_epoch_loss.push_back(epoch_loss / std::max(1, steps));
    }
    rt.commit();

    // Freeze latent statistics so diffusion sees unit-scale data.
    Tensor all({n, cfg.pixel_dim});
    for (int i = 0; i < n; ++i) {
      all.mat().row(i) = corpus.members[static_cast<size_t>(i)].image.mat().row(0);
    }
    ModelRuntime stats_rt(model);
    Tensor raw = stats_rt.encode_raw(constant(all))->value;
    auto& mu = model.params.at("ae.latent_mu");
    auto& sigma = model.params.at("ae.latent_sigma");
    for (int j = 0; j < cfg.latent_dim; ++j) {
      const double m = raw.mat().col(j).template cast<double>().mean();
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        const double d = static_cast<double>(raw.mat()(i, j)) - m;
        var += d * d;
      }
      var /= std::max(1, n - 1);
      mu[j] = static_cast<float>(m);
      sigma[j] = static_cast<float>(std::max(std::sqrt(var), 1e-4));
    }
  }

  // Stage 2: diffusion objective over the member set.
  {
    ModelRuntime rt(model);
    ParamStore mask = zero_mask_like(model.params);
    for (auto& e : model.params) {
      if (e.group == ParamGroup::embedding || e.group == ParamGroup::text_encoder ||
          e.group == ParamGroup::denoiser) {
        mask.at(e.name).array().setConstant(1.0f);
      }
    }
    rt.set_trainable(mask);
    Adam opt(opts.lr);
    Rng order = Rng::stream(seed, "pretrain.diff.order");
    Rng noise = Rng::stream(seed, "pretrain.diff.noise");
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
      // Cosine decay lets late epochs settle into sharp minima.
      const double frac = opts.epochs > 1
                              ? static_cast<double>(epoch) / (opts.epochs - 1)
                              : 0.0;
      const double floor_lr = opts.lr * opts.lr_final_fraction;
      opt.set_learning_rate(floor_lr + (opts.lr - floor_lr) * 0.5 *
                                           (1.0 + std::cos(3.14159265358979 * frac)));
      auto idx = shuffled_indices(order);
      double epoch_loss = 0.0;
      int steps = 0;
      for (int start = 0; start + opts.batch <= n; start += opts.batch) {
        std::vector<ModelRuntime::StepSample> batch;
        batch.reserve(static_cast<size_t>(opts.batch));
        for (int b = 0; b < opts.batch; ++b) {
          const auto& s =
              corpus.members[static_cast<size_t>(idx[static_cast<size_t>(start + b)])];
          batch.push_back({&s.image, &s.prompt});
        }
        epoch_loss += rt.train_step(batch, opt, mask, noise);
        ++steps;
      }
      if (log) log->epoch_loss.push_back(epoch_loss / std::max(1, steps));
    }
    rt.commit();
  }
  return model;
}

}  // namespace s2l::diffusion
