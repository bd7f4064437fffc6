#include "s2l/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "s2l/parallel.hpp"
#include "s2l/utility.hpp"

namespace s2l::attacks {

using datagen::Sample;
using diffusion::DiffusionModel;
using diffusion::ModelRuntime;

void AttackConfig::validate(int model_T) const {
  if (!(0.0 < delta_d && delta_d <= delta_m && delta_m < delta_n && delta_n < 1.0)) {
    throw std::invalid_argument(
        "attack config: thresholds must satisfy 0 < delta_d <= delta_m < delta_n < 1");
  }
  if (n_p < 0 || n_d < 0 || n_m <= 0) {
    throw std::invalid_argument("attack config: set sizes must be positive");
  }
  if (eidetic_k < 1 || eidetic_delta <= 0.0 || match_delta <= 0.0) {
    throw std::invalid_argument("attack config: bad eidetic parameters");
  }
  if (t_star < 1 || t_star > model_T) {
    throw std::invalid_argument("attack config: t_star out of range [1," +
                                std::to_string(model_T) + "]");
  }
  if (mia_steps < 1 || mia_steps > t_star) {
    throw std::invalid_argument("attack config: mia_steps must be in [1, t_star]");
  }
  if (gen_steps < 1 || gen_steps > model_T) {
    throw std::invalid_argument("attack config: gen_steps out of range");
  }
}

namespace {

constexpr int kScoreChunk = 256;
constexpr int kGenChunk = 128;

std::vector<int> repeated_tokens(const ModelRuntime& rt, const std::vector<int>& prompt,
                                 int B) {
  std::vector<std::vector<int>> prompts(static_cast<size_t>(B), prompt);
  return rt.pad_prompts(prompts);
}

Tensor stack_images(const std::vector<const Tensor*>& images) {
  const int B = static_cast<int>(images.size());
  const int D = static_cast<int>(images[0]->size());
  Tensor out({B, D});
  for (int b = 0; b < B; ++b) out.mat().row(b) = images[static_cast<size_t>(b)]->mat().row(0);
  return out;
}

std::vector<double> score_batch(const ModelRuntime& rt, const std::vector<int>& prompt,
                                const Tensor& pixel_batch, const AttackConfig& cfg) {
  const int B = pixel_batch.dim(0);
  const std::vector<int> tokens = repeated_tokens(rt, prompt, B);
  Tensor x = rt.to_data_space(pixel_batch);
  const int D = x.dim(1);
  // Deterministic forward map of x to t_star.
  Tensor x_hat = rt.ddim_invert(x, tokens, cfg.t_star);
  // One (or cfg.mia_steps) deterministic reverse then forward steps.
  Tensor y = x_hat;
  for (int k = 0; k < cfg.mia_steps; ++k) {
    y = rt.reverse_step(y, tokens, cfg.t_star - k, cfg.t_star - k - 1);
  }
  for (int s = cfg.t_star - cfg.mia_steps; s < cfg.t_star; ++s) {
    y = rt.forward_step(y, tokens, s);
  }
  std::vector<double> scores(static_cast<size_t>(B));
  for (int b = 0; b < B; ++b) {
    const double ss = (y.mat().row(b) - x_hat.mat().row(b)).cast<double>().squaredNorm();
    scores[static_cast<size_t>(b)] = ss / static_cast<double>(D);
  }
  return scores;
}

}  // namespace

std::vector<datagen::Sample> gen_sp_set(const DiffusionModel& model,
                                        const std::vector<int>& p_z, int n_p,
                                        std::uint64_t seed, int gen_steps) {
  DiffusionModel m = model;
  ModelRuntime rt(m);
  std::vector<Sample> out;
  out.reserve(static_cast<size_t>(n_p));
  for (int start = 0; start < n_p; start += kGenChunk) {
    const int B = std::min(kGenChunk, n_p - start);
    std::vector<std::vector<int>> prompts(static_cast<size_t>(B), p_z);
    Tensor images = rt.generate_batch(prompts, seed, "sp.gen",
                                      static_cast<std::uint64_t>(start), gen_steps);
    for (int b = 0; b < B; ++b) {
      Sample s;
      s.image = Tensor({model.config.pixel_dim});
      s.image.mat().row(0) = images.mat().row(b);
      s.prompt = p_z;
      s.domain_id = -1;
      s.member = false;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<double> mia_scores(const DiffusionModel& model, const std::vector<int>& prompt,
                               const std::vector<const Tensor*>& images,
                               const AttackConfig& cfg) {
  cfg.validate(model.config.T);
  if (images.empty()) return {};
  DiffusionModel m = model;
  ModelRuntime rt(m);
  std::vector<double> scores;
  scores.reserve(images.size());
  for (size_t start = 0; start < images.size(); start += kScoreChunk) {
    const size_t stop = std::min(images.size(), start + kScoreChunk);
    std::vector<const Tensor*> chunk(images.begin() + static_cast<std::ptrdiff_t>(start),
                                     images.begin() + static_cast<std::ptrdiff_t>(stop));
    auto s = score_batch(rt, prompt, stack_images(chunk), cfg);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  return scores;
}

double mia_score(const DiffusionModel& model, const std::vector<int>& prompt,
                 const Tensor& image, const AttackConfig& cfg) {
  std::vector<const Tensor*> one = {&image};
  return mia_scores(model, prompt, one, cfg)[0];
}

MiaResult mia_attack(const DiffusionModel& model,
                     const std::vector<const Sample*>& test_set, int n_members,
                     const std::vector<int>& p_z, const AttackConfig& cfg,
                     const std::vector<double>* calibration_pool) {
  if (test_set.empty() || n_members <= 0 ||
      n_members >= static_cast<int>(test_set.size())) {
    throw std::invalid_argument("mia_attack: need members and nonmembers");
  }
  MiaResult res;
  res.balanced = (2 * n_members == static_cast<int>(test_set.size()));
  std::vector<const Tensor*> images;
  images.reserve(test_set.size());
  for (const auto* s : test_set) images.push_back(&s->image);
  const auto raw = mia_scores(model, p_z, images, cfg);
  for (size_t i = 0; i < raw.size(); ++i) {
    res.scored.push_back({static_cast<int>(i), static_cast<int>(i) < n_members, raw[i]});
  }
  res.rank_scores =
      metrics::rank_normalize(raw, calibration_pool ? *calibration_pool : raw);
  for (size_t i = 0; i < res.rank_scores.size(); ++i) {
    if (res.rank_scores[i] < cfg.delta_m) res.member_set.push_back(static_cast<int>(i));
  }
  res.auc = metrics::auc(res.scored);
  res.tpr_at_1fpr = metrics::tpr_at_fpr(res.scored, 0.01, &res.tpr_interpolated);
  return res;
}

ExtractionResult extract(const DiffusionModel& model, const std::vector<int>& p_z,
                         const AttackConfig& cfg, std::uint64_t seed,
                         const std::vector<double>& calibration_pool) {
  cfg.validate(model.config.T);
  ExtractionResult res;
  res.candidates = cfg.n_d;
  DiffusionModel m = model;
  ModelRuntime rt(m);
  std::vector<Tensor> images;
  images.reserve(static_cast<size_t>(cfg.n_d));
  for (int start = 0; start < cfg.n_d; start += kGenChunk) {
    const int B = std::min(kGenChunk, cfg.n_d - start);
    std::vector<std::vector<int>> prompts(static_cast<size_t>(B), p_z);
    Tensor batch = rt.generate_batch(prompts, seed, "extract.gen",
                                     static_cast<std::uint64_t>(start), cfg.gen_steps);
    for (int b = 0; b < B; ++b) {
      Tensor img({model.config.pixel_dim});
      img.mat().row(0) = batch.mat().row(b);
      images.push_back(std::move(img));
    }
  }
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(images.size());
  for (const auto& img : images) ptrs.push_back(&img);
  std::vector<double> raw;
  {
    std::vector<double> scores;
    for (size_t start = 0; start < ptrs.size(); start += kScoreChunk) {
      const size_t stop = std::min(ptrs.size(), start + kScoreChunk);
      std::vector<const Tensor*> chunk(ptrs.begin() + static_cast<std::ptrdiff_t>(start),
                                       ptrs.begin() + static_cast<std::ptrdiff_t>(stop));
      auto s = score_batch(rt, p_z, stack_images(chunk), cfg);
      scores.insert(scores.end(), s.begin(), s.end());
    }
    raw = std::move(scores);
  }
  const auto ranks = metrics::rank_normalize(raw, calibration_pool);
  for (int i = 0; i < cfg.n_d; ++i) {
    if (ranks[static_cast<size_t>(i)] < cfg.delta_d) {
      res.accepted.push_back(i);
      res.accepted_images.push_back(images[static_cast<size_t>(i)]);
    }
  }
  return res;
}

namespace {

/// Lazily counts members inside the eidetic radius of a given member.
class EideticFilter {
 public:
  EideticFilter(const std::vector<const Sample*>& members, double radius)
      : members_(members), radius_(radius) {}

  int neighbour_count(int member_id) {
    auto it = cache_.find(member_id);
    if (it != cache_.end()) return it->second;
    int count = 0;
    const auto& img = members_[static_cast<size_t>(member_id)]->image;
    for (const auto* m : members_) {
      if (metrics::l2_distance(img, m->image) <= radius_) ++count;
    }
    cache_[member_id] = count;
    return count;
  }

 private:
  const std::vector<const Sample*>& members_;
  double radius_;
  std::unordered_map<int, int> cache_;
};

}  // namespace

ExtractionEval evaluate_extraction(const std::vector<Tensor>& accepted,
                                   const std::vector<const Sample*>& members, int k,
                                   double match_delta, double eidetic_delta) {
  ExtractionEval eval;
  if (accepted.empty() || members.empty()) return eval;
  EideticFilter filter(members, eidetic_delta);
  std::unordered_set<int> matched;
  for (const auto& cand : accepted) {
    bool cand_matched = false;
    for (size_t mi = 0; mi < members.size(); ++mi) {
      if (metrics::l2_distance(cand, members[mi]->image) > match_delta) continue;
      if (filter.neighbour_count(static_cast<int>(mi)) > k) continue;
      cand_matched = true;
      matched.insert(static_cast<int>(mi));
    }
    if (cand_matched) ++eval.matched_candidates;
  }
  eval.num = static_cast<int>(matched.size());
  eval.matched_member_ids.assign(matched.begin(), matched.end());
  std::sort(eval.matched_member_ids.begin(), eval.matched_member_ids.end());
  eval.precision =
      static_cast<double>(eval.matched_candidates) / static_cast<double>(accepted.size());
  return eval;
}

ExtractionGrid extraction_grid(const std::vector<Tensor>& accepted,
                               const std::vector<const Sample*>& members,
                               const std::vector<int>& ks, const std::vector<double>& deltas,
                               double eidetic_delta) {
  ExtractionGrid grid;
  grid.ks = ks;
  grid.deltas = deltas;
  grid.num.assign(ks.size(), std::vector<int>(deltas.size(), 0));
  if (members.empty()) return grid;
  EideticFilter filter(members, eidetic_delta);
  // Distance from every candidate to every member, computed once.
  const double delta_max = deltas.empty() ? 0.0 : *std::max_element(deltas.begin(), deltas.end());
  std::vector<std::pair<int, double>> hits;  // (member, distance) pairs
  for (const auto& cand : accepted) {
    for (size_t mi = 0; mi < members.size(); ++mi) {
      const double d = metrics::l2_distance(cand, members[mi]->image);
      if (d <= delta_max) hits.push_back({static_cast<int>(mi), d});
    }
  }
  for (size_t ki = 0; ki < ks.size(); ++ki) {
    for (size_t di = 0; di < deltas.size(); ++di) {
      std::unordered_set<int> matched;
      for (const auto& [mi, d] : hits) {
        if (d <= deltas[di] && filter.neighbour_count(mi) <= ks[ki]) matched.insert(mi);
      }
      grid.num[ki][di] = static_cast<int>(matched.size());
    }
  }
  return grid;
}

GaussianResult gaussian_attack(const DiffusionModel& model, const GroupSet& groups,
                               double eps, int trials,
                               const std::vector<const Sample*>& test_set, int n_members,
                               const std::vector<int>& p_z, const AttackConfig& cfg,
                               std::uint64_t seed, int threads) {
  if (trials < 1) throw std::invalid_argument("gaussian_attack: trials must be >= 1");
  if (eps < 0.0) throw std::invalid_argument("gaussian_attack: negative eps");
  GaussianResult res;
  res.baseline_auc = mia_attack(model, test_set, n_members, p_z, cfg).auc;
  res.trial_aucs.assign(static_cast<size_t>(trials), 0.0);
  parallel_for(trials, threads, [&](int i) {
    const std::uint64_t trial_seed =
        Rng::stream(seed, "gauss.trial", static_cast<std::uint64_t>(i)).next_u64();
    DiffusionModel shaken = model;
    shaken.params = model.params.perturbed(groups, eps, trial_seed);
    res.trial_aucs[static_cast<size_t>(i)] =
        mia_attack(shaken, test_set, n_members, p_z, cfg).auc;
  });
  std::vector<double> sorted = res.trial_aucs;
  std::sort(sorted.rbegin(), sorted.rend());
  const int top = std::min(3, trials);
  res.top3_mean = std::accumulate(sorted.begin(), sorted.begin() + top, 0.0) /
                  static_cast<double>(top);
  return res;
}

const char* transfer_mode_name(TransferMode m) {
  switch (m) {
    case TransferMode::PlainSuffix: return "plain_suffix";
    case TransferMode::PlainS2L: return "plain_s2l";
    case TransferMode::MiaSet: return "mia_set";
    case TransferMode::GroundTruthSet: return "ground_truth_set";
  }
  return "?";
}

namespace {

std::vector<int> with_suffix(const std::vector<int>& prompt, std::initializer_list<int> suffix) {
  std::vector<int> out;
  for (int id : prompt) {
    if (id != datagen::tok::PAD) out.push_back(id);
  }
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

std::vector<double> sp_pool_scores(const DiffusionModel& model,
                                   const std::vector<Sample>& sp,
                                   const std::vector<int>& prompt, const AttackConfig& cfg) {
  std::vector<const Tensor*> imgs;
  imgs.reserve(sp.size());
  for (const auto& s : sp) imgs.push_back(&s.image);
  return mia_scores(model, prompt, imgs, cfg);
}

}  // namespace

TransferOutcome domain_transfer(const DiffusionModel& pretrained,
                                const datagen::Corpus& corpus, int target_domain,
                                const AttackConfig& cfg, TransferMode mode,
                                const TransferOptions& opts, std::uint64_t seed) {
  cfg.validate(pretrained.config.T);
  TransferOutcome out;
  out.mode = mode;
  const std::vector<int> p_z = corpus.attack_prompt(target_domain);
  const auto member_ptrs = [&corpus]() {
    std::vector<const Sample*> v;
    for (const auto& s : corpus.members) v.push_back(&s);
    return v;
  }();

  // Step 1: privacy-risk amplification with SP-set fine-tuning (skipped for
  // the plain-suffix baseline, which probes the pretrained model directly).
  std::vector<Sample> sp =
      gen_sp_set(pretrained, p_z, cfg.n_p, Rng::stream(seed, "transfer.sp").next_u64(),
                 cfg.gen_steps);
  DiffusionModel model = pretrained;
  if (mode != TransferMode::PlainSuffix) {
    model = finetune::finetune(pretrained, sp, opts.sp_method,
                               Rng::stream(seed, "transfer.ft").next_u64());
  }

  if (mode == TransferMode::MiaSet || mode == TransferMode::GroundTruthSet) {
    // Public-domain candidate set A_b: members from the pretraining set plus
    // fresh deduped draws.
    std::vector<const Sample*> public_members;
    for (int d : corpus.public_domain_ids) {
      for (const auto* s : corpus.domain_members(d)) public_members.push_back(s);
    }
    Rng pick = Rng::stream(seed, "transfer.ab");
    for (int i = static_cast<int>(public_members.size()) - 1; i > 0; --i) {
      const int j = pick.uniform_int(0, i);
      std::swap(public_members[static_cast<size_t>(i)],
                public_members[static_cast<size_t>(j)]);
    }
    const int n_pub = std::min<int>(opts.ab_members, static_cast<int>(public_members.size()));
    std::vector<Sample> ab;
    for (int i = 0; i < n_pub; ++i) ab.push_back(*public_members[static_cast<size_t>(i)]);
    int fresh_needed = opts.ab_nonmembers;
    int round = 0;
    while (fresh_needed > 0) {
      const int d = corpus.public_domain_ids[static_cast<size_t>(
          pick.uniform_int(0, static_cast<int>(corpus.public_domain_ids.size()) - 1))];
      datagen::DomainSpec spec = corpus.domain(d);
      spec.dup.hot_count = 0;
      auto fresh = datagen::sample_domain(
          spec, 1, Rng::stream(seed, "transfer.ab.fresh", static_cast<std::uint64_t>(round)).next_u64(),
          false);
      ++round;
      bool close = false;
      for (const auto* m : corpus.domain_members(d)) {
        if (metrics::l2_distance(fresh[0].image, m->image) <= corpus.config.dedup_tau) {
          close = true;
          break;
        }
      }
      if (close) continue;
      ab.push_back(std::move(fresh[0]));
      --fresh_needed;
    }

    // Step 2: balanced membership set, either by high-confidence MIA
    // filtering or from ground truth.
    struct Entry {
      const Sample* sample;
      double score = 0.0;
      bool truth_member;
    };
    std::vector<Entry> entries;
    for (int i = 0; i < n_pub; ++i) {
      entries.push_back({&ab[static_cast<size_t>(i)], 0.0, true});
    }
    for (size_t i = static_cast<size_t>(n_pub); i < ab.size(); ++i) {
      entries.push_back({&ab[i], 0.0, false});
    }
    std::vector<Sample> mia_set;
    int want_half = cfg.n_m / 2;
    if (mode == TransferMode::GroundTruthSet) {
      int taken_m = 0, taken_n = 0;
      for (const auto& e : entries) {
        if (e.truth_member && taken_m < want_half) {
          Sample s = *e.sample;
          s.prompt = with_suffix(s.prompt, {datagen::tok::OF, datagen::tok::M});
          mia_set.push_back(std::move(s));
          ++taken_m;
        } else if (!e.truth_member && taken_n < want_half) {
          Sample s = *e.sample;
          s.prompt = with_suffix(s.prompt, {datagen::tok::OF, datagen::tok::NOT, datagen::tok::M});
          mia_set.push_back(std::move(s));
          ++taken_n;
        }
      }
      out.mia_set_members = taken_m;
      out.mia_set_nonmembers = taken_n;
      out.member_purity = 1.0;
    } else {
      // Score each candidate under its own domain prompt; group by domain so
      // prompts stay consistent within a batch.
      std::unordered_map<int, std::vector<int>> by_domain;
      for (size_t i = 0; i < entries.size(); ++i) {
        by_domain[entries[i].sample->domain_id].push_back(static_cast<int>(i));
      }
      for (const auto& [d, idx] : by_domain) {
        std::vector<const Tensor*> imgs;
        for (int i : idx) imgs.push_back(&entries[static_cast<size_t>(i)].sample->image);
        const auto scores = mia_scores(model, corpus.attack_prompt(d), imgs, cfg);
        for (size_t j = 0; j < idx.size(); ++j) {
          entries[static_cast<size_t>(idx[j])].score = scores[j];
        }
      }
      std::vector<double> all_scores;
      for (const auto& e : entries) all_scores.push_back(e.score);
      const auto ranks = metrics::rank_normalize(all_scores, all_scores);
      std::vector<int> order(entries.size());
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return all_scores[static_cast<size_t>(a)] < all_scores[static_cast<size_t>(b)];
      });
      int true_members_taken = 0;
      // Most member-like first, filtered at delta_m.
      for (int oi : order) {
        if (out.mia_set_members >= want_half) break;
        if (ranks[static_cast<size_t>(oi)] >= cfg.delta_m) break;
        Sample s = *entries[static_cast<size_t>(oi)].sample;
        s.prompt = with_suffix(s.prompt, {datagen::tok::OF, datagen::tok::M});
        mia_set.push_back(std::move(s));
        if (entries[static_cast<size_t>(oi)].truth_member) ++true_members_taken;
        ++out.mia_set_members;
      }
      // Most nonmember-like first, filtered at delta_n.
      for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if (out.mia_set_nonmembers >= want_half) break;
        if (ranks[static_cast<size_t>(*it)] <= cfg.delta_n) break;
        Sample s = *entries[static_cast<size_t>(*it)].sample;
        s.prompt = with_suffix(s.prompt, {datagen::tok::OF, datagen::tok::NOT, datagen::tok::M});
        mia_set.push_back(std::move(s));
        ++out.mia_set_nonmembers;
      }
      out.member_purity = out.mia_set_members > 0
                              ? static_cast<double>(true_members_taken) / out.mia_set_members
                              : 0.0;
    }
    out.shortfall = cfg.n_m - static_cast<int>(mia_set.size());
    if (mia_set.empty()) {
      throw std::runtime_error("domain_transfer: no examples qualified for the MIA set");
    }

    // Step 3: textual inversion of the membership token only.
    finetune::FinetuneMethod ti_method = finetune::FinetuneMethod::parse("textual_inversion");
    ti_method.epochs = opts.ti_epochs;
    finetune::TIConfig ti;
    ti.tunable_tokens = {datagen::tok::M};
    model = finetune::finetune(model, mia_set, ti_method,
                               Rng::stream(seed, "transfer.ti").next_u64(), nullptr, &ti);
  }

  // Step 4: extraction with the membership suffix (the plain S2L arm keeps
  // the raw target prompt).
  const std::vector<int> extract_prompt =
      mode == TransferMode::PlainS2L
          ? p_z
          : with_suffix(p_z, {datagen::tok::OF, datagen::tok::M});
  const auto pool = sp_pool_scores(model, sp, extract_prompt, cfg);
  out.extraction = extract(model, extract_prompt, cfg,
                           Rng::stream(seed, "transfer.extract").next_u64(), pool);
  out.extraction.eval = evaluate_extraction(out.extraction.accepted_images, member_ptrs,
                                            cfg.eidetic_k, cfg.match_delta, cfg.eidetic_delta);
  out.extraction.eval_at_015 = evaluate_extraction(out.extraction.accepted_images, member_ptrs,
                                                   cfg.eidetic_k, 0.15, cfg.eidetic_delta);
  return out;
}

AttackReport s2l_pipeline(const DiffusionModel& pretrained, const datagen::Corpus& corpus,
                          int domain_id, const PipelineOptions& opts, const AttackConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate(pretrained.config.T);
  AttackReport report;
  report.domain_id = domain_id;
  report.method = opts.method.name();
  report.finetune_set = datagen::finetune_set_name(opts.set_kind);
  report.seed = seed;

  const std::vector<int> p_z = corpus.attack_prompt(domain_id);

  // Step 1: the SP set is the fine-tuning data when requested and always
  // serves as the rank-normalisation pool.
  std::vector<Sample> sp = gen_sp_set(
      pretrained, p_z, cfg.n_p, Rng::stream(seed, "pipeline.sp").next_u64(), cfg.gen_steps);

  std::vector<Sample> dataset;
  if (opts.set_kind == datagen::FinetuneSetKind::SPPlaceholder) {
    dataset = sp;
  } else {
    dataset = datagen::build_finetune_set(corpus, opts.set_kind, domain_id, cfg.n_p,
                                          Rng::stream(seed, "pipeline.set").next_u64());
  }

  // Step 2: fine-tune a clone (textual inversion may rewrite the prompt).
  finetune::TIConfig ti;
  const bool is_ti = opts.method.variant == finetune::Variant::TextualInversion;
  std::vector<int> attack_prompt = p_z;
  const finetune::TIConfig* ti_ptr = nullptr;
  if (is_ti) {
    const int first_free =
        datagen::tok::FIRST_NAME + static_cast<int>(corpus.domains.size());
    ti = finetune::make_ti_config(p_z, opts.method.ti_extra_tokens, first_free,
                                  pretrained.config.vocab_size);
    attack_prompt = ti.prompt;
    ti_ptr = &ti;
  }
  finetune::FinetuneLog ft_log;
  DiffusionModel tuned =
      finetune::finetune(pretrained, dataset, opts.method,
                         Rng::stream(seed, "pipeline.ft").next_u64(), &ft_log, ti_ptr);
  report.chosen_lr = ft_log.chosen_lr;
  report.trainable_params = ft_log.trainable_params;

  // Step 3: attacks on the tuned model.
  const auto pool = sp_pool_scores(tuned, sp, attack_prompt, cfg);
  const auto test_set = corpus.mia_test_set(domain_id);
  const auto mia = mia_attack(tuned, test_set, corpus.config.mia_members, attack_prompt,
                              cfg, &pool);
  report.auc = mia.auc;
  report.tpr_at_1fpr = mia.tpr_at_1fpr;
  report.mia = mia;

  if (opts.run_extraction) {
    auto ext = extract(tuned, attack_prompt, cfg,
                       Rng::stream(seed, "pipeline.extract").next_u64(), pool);
    std::vector<const Sample*> member_ptrs;
    for (const auto& s : corpus.members) member_ptrs.push_back(&s);
    ext.eval = evaluate_extraction(ext.accepted_images, member_ptrs, cfg.eidetic_k,
                                   cfg.match_delta, cfg.eidetic_delta);
    ext.eval_at_015 = evaluate_extraction(ext.accepted_images, member_ptrs, cfg.eidetic_k,
                                          0.15, cfg.eidetic_delta);
    report.extraction_num = ext.eval.num;
    report.extraction_precision = ext.eval.precision;
    report.extraction_num_015 = ext.eval_at_015.num;
    report.accepted = static_cast<int>(ext.accepted.size());
    if (opts.run_grid) {
      const auto grid = extraction_grid(ext.accepted_images, member_ptrs, {1, 2, 4, 8, 16},
                                        {0.01, 0.05, 0.10, 0.15, 0.20}, cfg.eidetic_delta);
      report.grid.ks = grid.ks;
      report.grid.deltas = grid.deltas;
      report.grid.num = grid.num;
    }
  }
  if (opts.run_utility) {
    report.utility = metrics::utility_fidelity(
        tuned, corpus, cfg.utility_prompts, Rng::stream(seed, "pipeline.util").next_u64(),
        cfg.gen_steps);
  }
  return report;
}

AttackReport pretrained_report(const DiffusionModel& pretrained, const datagen::Corpus& corpus,
                               int domain_id, const AttackConfig& cfg, std::uint64_t seed,
                               bool run_extraction, bool run_utility, bool run_grid) {
  cfg.validate(pretrained.config.T);
  AttackReport report;
  report.domain_id = domain_id;
  report.method = "pretrained";
  report.finetune_set = "-";
  report.seed = seed;
  const std::vector<int> p_z = corpus.attack_prompt(domain_id);
  std::vector<Sample> sp = gen_sp_set(
      pretrained, p_z, cfg.n_p, Rng::stream(seed, "pipeline.sp").next_u64(), cfg.gen_steps);
  const auto pool = sp_pool_scores(pretrained, sp, p_z, cfg);
  const auto test_set = corpus.mia_test_set(domain_id);
  const auto mia =
      mia_attack(pretrained, test_set, corpus.config.mia_members, p_z, cfg, &pool);
  report.auc = mia.auc;
  report.pre_auc = mia.auc;
  report.tpr_at_1fpr = mia.tpr_at_1fpr;
  report.mia = mia;
  if (run_extraction) {
    auto ext = extract(pretrained, p_z, cfg,
                       Rng::stream(seed, "pipeline.extract").next_u64(), pool);
    std::vector<const Sample*> member_ptrs;
    for (const auto& s : corpus.members) member_ptrs.push_back(&s);
    ext.eval = evaluate_extraction(ext.accepted_images, member_ptrs, cfg.eidetic_k,
                                   cfg.match_delta, cfg.eidetic_delta);
    ext.eval_at_015 = evaluate_extraction(ext.accepted_images, member_ptrs, cfg.eidetic_k,
                                          0.15, cfg.eidetic_delta);
    report.extraction_num = ext.eval.num;
    report.extraction_precision = ext.eval.precision;
    report.extraction_num_015 = ext.eval_at_015.num;
    report.accepted = static_cast<int>(ext.accepted.size());
    if (run_grid) {
      const auto grid = extraction_grid(ext.accepted_images, member_ptrs, {1, 2, 4, 8, 16},
                                        {0.01, 0.05, 0.10, 0.15, 0.20}, cfg.eidetic_delta);
      report.grid.ks = grid.ks;
      report.grid.deltas = grid.deltas;
      report.grid.num = grid.num;
    }
  }
  if (run_utility) {
    report.utility = metrics::utility_fidelity(
        pretrained, corpus, cfg.utility_prompts,
        Rng::stream(seed, "pipeline.util").next_u64(), cfg.gen_steps);
  }
  return report;
}

}  // namespace s2l::attacks
