#include "s2l/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace s2l::finetune {

using diffusion::DiffusionModel;
using diffusion::ModelRuntime;

std::string FinetuneMethod::name() const {
  switch (variant) {
    case Variant::EndToEnd: return "end_to_end";
    case Variant::DreamBooth: return "dreambooth";
    case Variant::TextualInversion: return "textual_inversion";
    case Variant::Hypernetwork: return "hypernetwork";
    case Variant::LoRA: return "lora";
    case Variant::DreamBoothHypernetwork: return "dreambooth+hypernetwork";
    case Variant::DreamBoothLoRA: return "dreambooth+lora";
    case Variant::PartMask: {
      std::string s = "partmask:";
      bool first = true;
      for (auto g : part_groups) {
        if (!first) s += "+";
        s += group_name(g);
        first = false;
      }
      return s;
    }
  }
  return "?";
}

FinetuneMethod FinetuneMethod::parse(const std::string& text) {
  FinetuneMethod m;
  std::string head = text;
  std::string opts;
  // PartMask uses ':' for its group list, other methods for key=value opts.
  if (text.rfind("partmask:", 0) == 0) {
    m.variant = Variant::PartMask;
    std::string groups = text.substr(9);
    size_t pos = 0;
    while (pos != std::string::npos) {
      const size_t next = groups.find('+', pos);
      const std::string g = groups.substr(pos, next == std::string::npos ? next : next - pos);
      if (!g.empty()) m.part_groups.insert(group_from_name(g));
      pos = next == std::string::npos ? next : next + 1;
    }
    if (m.part_groups.empty()) {
      throw std::invalid_argument("partmask method needs at least one group");
    }
    return m;
  }
  const size_t colon = text.find(':');
  if (colon != std::string::npos) {
    head = text.substr(0, colon);
    opts = text.substr(colon + 1);
  }
  if (head == "end_to_end") m.variant = Variant::EndToEnd;
  else if (head == "dreambooth") m.variant = Variant::DreamBooth;
  else if (head == "textual_inversion") m.variant = Variant::TextualInversion;
  else if (head == "hypernetwork") m.variant = Variant::Hypernetwork;
  else if (head == "lora") m.variant = Variant::LoRA;
  else if (head == "dreambooth+hypernetwork") m.variant = Variant::DreamBoothHypernetwork;
  else if (head == "dreambooth+lora") m.variant = Variant::DreamBoothLoRA;
  else throw std::invalid_argument("unknown fine-tuning method '" + head + "'");
  size_t pos = 0;
  while (pos < opts.size()) {
    const size_t next = opts.find(',', pos);
    const std::string kv = opts.substr(pos, next == std::string::npos ? next : next - pos);
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("bad method option '" + kv + "'");
    }
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "rank") m.lora_rank = std::stoi(val);
    else if (key == "extra") m.ti_extra_tokens = std::stoi(val);
    else if (key == "epochs") m.epochs = std::stoi(val);
    else throw std::invalid_argument("unknown method option '" + key + "'");
    pos = next == std::string::npos ? opts.size() : next + 1;
  }
  if (m.lora_rank < 1) throw std::invalid_argument("lora rank must be >= 1");
  if (m.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  return m;
}

TIConfig make_ti_config(const std::vector<int>& base_prompt, int extra_tokens,
                        int first_free_token, int vocab_size) {
  std::vector<int> prompt;
  for (int id : base_prompt) {
    if (id != datagen::tok::PAD) prompt.push_back(id);
  }
  if (extra_tokens < 0) {
    const int drop = -extra_tokens;
    if (drop >= static_cast<int>(prompt.size())) {
      throw std::invalid_argument("textual inversion: dropping " + std::to_string(drop) +
                                  " tokens empties the prompt");
    }
    prompt.erase(prompt.begin(), prompt.begin() + drop);
  } else if (extra_tokens > 0) {
    if (first_free_token + extra_tokens > vocab_size) {
      throw std::invalid_argument("textual inversion: vocabulary has no room for " +
                                  std::to_string(extra_tokens) + " placeholder tokens");
    }
    std::vector<int> fresh;
    for (int i = 0; i < extra_tokens; ++i) fresh.push_back(first_free_token + i);
    prompt.insert(prompt.begin(), fresh.begin(), fresh.end());
  }
  TIConfig ti;
  ti.prompt = prompt;
  for (int id : prompt) {
    if (std::find(ti.tunable_tokens.begin(), ti.tunable_tokens.end(), id) ==
        ti.tunable_tokens.end()) {
      ti.tunable_tokens.push_back(id);
    }
  }
  return ti;
}

void attach_lora(diffusion::DiffusionModel& model, const std::vector<std::string>& layers,
                 int rank, std::uint64_t seed) {
  if (rank < 1) throw std::invalid_argument("attach_lora: rank must be >= 1");
  for (const auto& layer : layers) {
    const auto& w = model.params.at(layer);
    if (w.rank() != 2) {
      throw std::invalid_argument("attach_lora: '" + layer + "' is not a dense weight");
    }
    const int in = w.dim(0);
    const int out = w.dim(1);
    if (rank > std::min(in, out)) {
      throw std::invalid_argument("attach_lora: rank " + std::to_string(rank) +
                                  " exceeds min(" + std::to_string(in) + "," +
                                  std::to_string(out) + ") for '" + layer + "'");
    }
    Tensor a({in, rank});
    Rng rng = Rng::stream(seed, "lora.init." + layer);
    rng.fill_normal(a.data(), a.size(), 0.0, 0.02);
    model.params.add("lora." + layer + ".a", ParamGroup::adapter, std::move(a));
    model.params.add("lora." + layer + ".b", ParamGroup::adapter,
                     Tensor::zeros({rank, out}));
  }
}

void attach_lora(diffusion::DiffusionModel& model, int rank, std::uint64_t seed) {
  attach_lora(model, diffusion::dense_layer_names(model.config), rank, seed);
}

void attach_hypernetwork(diffusion::DiffusionModel& model, std::uint64_t seed) {
  const int d = model.config.hidden_dim;  // key/value element count
  for (int b = 0; b < model.config.blocks; ++b) {
    const std::string p = "hyper.den.blk" + std::to_string(b);
    for (const char* kv : {"k", "v"}) {
      const std::string base = p + "." + kv;
      Tensor w1({d, 2 * d});
      Rng rng = Rng::stream(seed, "hyper.init." + base);
      rng.fill_normal(w1.data(), w1.size(), 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
      model.params.add(base + ".w1", ParamGroup::adapter, std::move(w1));
      model.params.add(base + ".b1", ParamGroup::adapter, Tensor::zeros({2 * d}));
      model.params.add(base + ".w2", ParamGroup::adapter, Tensor::zeros({2 * d, d}));
      model.params.add(base + ".b2", ParamGroup::adapter, Tensor::zeros({d}));
    }
  }
}

diffusion::DiffusionModel without_adapters(const diffusion::DiffusionModel& model) {
  diffusion::DiffusionModel out;
  out.config = model.config;
  out.schedule = model.schedule;
  for (const auto& e : model.params) {
    if (e.group == ParamGroup::adapter) continue;
    out.params.add(e.name, e.group, e.tensor);
  }
  return out;
}

namespace {

void fill_groups(const DiffusionModel& model, ParamStore& mask, const GroupSet& groups) {
  for (const auto& e : model.params) {
    if (groups.count(e.group)) mask.at(e.name).array().setConstant(1.0f);
  }
}

}  // namespace

ParamStore embedding_row_mask(const diffusion::DiffusionModel& model,
                              const std::vector<int>& token_ids) {
  ParamStore mask = zero_mask_like(model.params);
  auto& table = mask.at("emb.table");
  const int vocab = model.config.vocab_size;
  for (int id : token_ids) {
    if (id < 0 || id >= vocab) {
      throw std::invalid_argument("embedding_row_mask: token id " + std::to_string(id) +
                                  " out of range");
    }
    table.mat().row(id).setConstant(1.0f);
  }
  return mask;
}

ParamStore build_mask(const diffusion::DiffusionModel& model, const FinetuneMethod& method,
                      const TIConfig* ti) {
  ParamStore mask = zero_mask_like(model.params);
  const bool has_adapters = model.params.scalar_count({ParamGroup::adapter}) > 0;
  switch (method.variant) {
    case Variant::EndToEnd: {
      GroupSet g = {ParamGroup::embedding, ParamGroup::text_encoder, ParamGroup::denoiser,
                    ParamGroup::autoencoder};
      if (has_adapters) g.insert(ParamGroup::adapter);
      fill_groups(model, mask, g);
      break;
    }
    case Variant::DreamBooth:
      // The autoencoder stays frozen: DreamBooth tunes embedding, text
      // encoder and denoiser in latent space.
      fill_groups(model, mask,
                  {ParamGroup::embedding, ParamGroup::text_encoder, ParamGroup::denoiser});
      break;
    case Variant::TextualInversion: {
      if (!ti) throw std::invalid_argument("build_mask: textual inversion needs a TIConfig");
      mask = embedding_row_mask(model, ti->tunable_tokens);
      break;
    }
    case Variant::Hypernetwork:
    case Variant::LoRA:
      if (!has_adapters) {
        throw std::invalid_argument("build_mask: no adapters attached for " + method.name());
      }
      fill_groups(model, mask, {ParamGroup::adapter});
      break;
    case Variant::DreamBoothHypernetwork:
    case Variant::DreamBoothLoRA:
      if (!has_adapters) {
        throw std::invalid_argument("build_mask: no adapters attached for " + method.name());
      }
      fill_groups(model, mask, {ParamGroup::adapter, ParamGroup::embedding});
      break;
    case Variant::PartMask:
      if (method.part_groups.empty()) {
        throw std::invalid_argument("build_mask: partmask without groups");
      }
      fill_groups(model, mask, method.part_groups);
      break;
  }
  if (mask_count(mask) == 0) {
    throw std::invalid_argument("build_mask: resulting mask is empty for " + method.name());
  }
  return mask;
}

namespace {

struct RunOutcome {
  std::vector<double> epoch_loss;
  bool diverged = false;
};

RunOutcome run_epochs(ModelRuntime& rt, const std::vector<datagen::Sample>& dataset,
                      const std::vector<int>* prompt_override, const ParamStore& mask,
                      int epochs, int batch, double lr, std::uint64_t seed) {
  RunOutcome out;
  Adam opt(lr);
  Rng order = Rng::stream(seed, "finetune.order");
  Rng noise = Rng::stream(seed, "finetune.noise");
  const int n = static_cast<int>(dataset.size());
  const int bsz = std::min(batch, n);
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (int i = n - 1; i > 0; --i) {
      const int j = order.uniform_int(0, i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    double total = 0.0;
    int steps = 0;
    for (int start = 0; start + bsz <= n; start += bsz) {
      std::vector<ModelRuntime::StepSample> b;
      b.reserve(static_cast<size_t>(bsz));
      for (int k = 0; k < bsz; ++k) {
        const auto& s = dataset[static_cast<size_t>(idx[static_cast<size_t>(start + k)])];
        b.push_back({&s.image, prompt_override ? prompt_override : &s.prompt});
      }
      const double loss = rt.train_step(b, opt, mask, noise);
      if (!std::isfinite(loss)) {
        out.diverged = true;
        return out;
      }
      total += loss;
      ++steps;
    }
    out.epoch_loss.push_back(total / std::max(1, steps));
  }
  return out;
}

}  // namespace

double lr_grid_search(const diffusion::DiffusionModel& model,
                      const std::vector<datagen::Sample>& dataset,
                      const FinetuneMethod& method, const ParamStore& mask,
                      const std::vector<int>* prompt_override, std::uint64_t seed) {
  if (method.lr_grid.empty()) {
    throw std::invalid_argument("lr_grid_search: empty grid");
  }
  if (method.lr_grid.size() == 1) return method.lr_grid[0];
  double best_lr = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  for (size_t gi = 0; gi < method.lr_grid.size(); ++gi) {
    const double lr = method.lr_grid[gi];
    DiffusionModel probe = model;
    ModelRuntime rt(probe);
    rt.set_trainable(mask);
    auto out = run_epochs(rt, dataset, prompt_override, mask, method.probe_epochs,
                          method.batch, lr, Rng::stream(seed, "lr_probe", gi).next_u64());
    if (out.diverged || out.epoch_loss.empty()) continue;
    const double final_loss = out.epoch_loss.back();
    // Ties break toward the smaller lr; the grid is scanned in order.
    if (final_loss < best_loss - 1e-12 ||
        (std::abs(final_loss - best_loss) <= 1e-12 && lr < best_lr)) {
      best_loss = final_loss;
      best_lr = lr;
    }
  }
  if (best_lr == 0.0) {
    throw std::runtime_error("lr_grid_search: every probe diverged");
  }
  return best_lr;
}

diffusion::DiffusionModel finetune(const diffusion::DiffusionModel& model,
                                   const std::vector<datagen::Sample>& dataset,
                                   const FinetuneMethod& method, std::uint64_t seed,
                                   FinetuneLog* log, const TIConfig* ti) {
  if (dataset.empty()) {
    throw std::invalid_argument("finetune: empty dataset");
  }
  DiffusionModel tuned = model;
  if (method.variant == Variant::LoRA || method.variant == Variant::DreamBoothLoRA) {
    if (tuned.lora_layers().empty()) {
      attach_lora(tuned, method.lora_rank, Rng::stream(seed, "lora.seed").next_u64());
    }
  }
  if (method.variant == Variant::Hypernetwork ||
      method.variant == Variant::DreamBoothHypernetwork) {
    if (!tuned.has_hypernetwork()) {
      attach_hypernetwork(tuned, Rng::stream(seed, "hyper.seed").next_u64());
    }
  }
  ParamStore mask = build_mask(tuned, method, ti);
  if (log) log->trainable_params = mask_count(mask);
  if (method.epochs == 0) {
    if (log) log->chosen_lr = 0.0;
    return tuned;
  }
  const std::vector<int>* prompt_override =
      (ti && method.variant == Variant::TextualInversion && !ti->prompt.empty())
          ? &ti->prompt
          : nullptr;
  const double lr =
      lr_grid_search(tuned, dataset, method, mask, prompt_override, seed);
  if (log) log->chosen_lr = lr;
  ModelRuntime rt(tuned);
  rt.set_trainable(mask);
  auto out = run_epochs(rt, dataset, prompt_override, mask, method.epochs, method.batch,
                        lr, Rng::stream(seed, "finetune.run").next_u64());
  rt.commit();
  if (log) {
    log->epoch_loss = out.epoch_loss;
    log->diverged = out.diverged;
  }
  return tuned;
}

std::int64_t analytic_param_count(const diffusion::ModelConfig& cfg,
                                  const FinetuneMethod& method, const TIConfig* ti) {
  const auto dense_names = diffusion::dense_layer_names(cfg);
  auto dense_dims = [&cfg](const std::string& name) -> std::pair<int, int> {
    if (name == "text.wq" || name == "text.wk" || name == "text.wv" || name == "text.wo") {
      return {cfg.embed_dim, cfg.embed_dim};
    }
    if (name == "den.in.w") return {cfg.data_dim() + cfg.embed_dim, cfg.hidden_dim};
    if (name == "den.out.w") return {cfg.hidden_dim + cfg.data_dim(), cfg.data_dim()};
    if (name.find(".dense.w") != std::string::npos ||
        name.find(".cross.wq") != std::string::npos ||
        name.find(".cross.wo") != std::string::npos) {
      return {cfg.hidden_dim, cfg.hidden_dim};
    }
    return {cfg.embed_dim, cfg.hidden_dim};  // cross wk / wv
  };
  std::int64_t embedding = static_cast<std::int64_t>(cfg.vocab_size) * cfg.embed_dim;
  std::int64_t text = 4LL * (cfg.embed_dim * cfg.embed_dim + cfg.embed_dim);
  std::int64_t denoiser = 0;
  denoiser += (cfg.data_dim() + cfg.embed_dim) * static_cast<std::int64_t>(cfg.hidden_dim) +
              cfg.hidden_dim;
  for (int b = 0; b < cfg.blocks; ++b) {
    denoiser += static_cast<std::int64_t>(cfg.hidden_dim) * cfg.hidden_dim + cfg.hidden_dim;
    denoiser += 2LL * (cfg.hidden_dim * cfg.hidden_dim + cfg.hidden_dim);  // wq, wo
    denoiser += 2LL * (cfg.embed_dim * cfg.hidden_dim + cfg.hidden_dim);   // wk, wv
  }
  denoiser += static_cast<std::int64_t>(cfg.hidden_dim + cfg.data_dim()) * cfg.data_dim() +
              cfg.data_dim();
  std::int64_t autoenc = 0;
  if (cfg.latent_mode) {
    autoenc = static_cast<std::int64_t>(cfg.pixel_dim) * cfg.ae_hidden + cfg.ae_hidden +
              static_cast<std::int64_t>(cfg.ae_hidden) * cfg.latent_dim + cfg.latent_dim +
              static_cast<std::int64_t>(cfg.latent_dim) * cfg.ae_hidden + cfg.ae_hidden +
              static_cast<std::int64_t>(cfg.ae_hidden) * cfg.pixel_dim + cfg.pixel_dim;
  }
  std::int64_t lora = 0;
  for (const auto& nm : dense_names) {
    const auto [in, out] = dense_dims(nm);
    lora += static_cast<std::int64_t>(in) * method.lora_rank +
            static_cast<std::int64_t>(method.lora_rank) * out;
  }
  const int d = cfg.hidden_dim;
  const std::int64_t hyper =
      static_cast<std::int64_t>(cfg.blocks) * 2 *
      (static_cast<std::int64_t>(d) * 2 * d + 2 * d + static_cast<std::int64_t>(2 * d) * d + d);
  switch (method.variant) {
    case Variant::EndToEnd: return embedding + text + denoiser + autoenc;
    case Variant::DreamBooth: return embedding + text + denoiser;
    case Variant::TextualInversion:
      return static_cast<std::int64_t>(ti ? ti->tunable_tokens.size() : 0) * cfg.embed_dim;
    case Variant::Hypernetwork: return hyper;
    case Variant::LoRA: return lora;
    case Variant::DreamBoothHypernetwork: return hyper + embedding;
    case Variant::DreamBoothLoRA: return lora + embedding;
    case Variant::PartMask: {
      std::int64_t total = 0;
      if (method.part_groups.count(ParamGroup::embedding)) total += embedding;
      if (method.part_groups.count(ParamGroup::text_encoder)) total += text;
      if (method.part_groups.count(ParamGroup::denoiser)) total += denoiser;
      if (method.part_groups.count(ParamGroup::autoencoder)) total += autoenc;
      return total;
    }
  }
  return 0;
}

}  // namespace s2l::finetune
