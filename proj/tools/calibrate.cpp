// Development harness: pretrains a toy model and prints the quantities the
// trend experiments depend on (AE reconstruction, losses, MIA AUC, utility,
// extraction). Not part of the shipped CLI.

#include <chrono>
#include <cstdio>
#include <string>

#include "s2l/attacks.hpp"
#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"
#include "s2l/metrics.hpp"
#include "s2l/parallel.hpp"
#include "s2l/utility.hpp"

using namespace s2l;
using Clock = std::chrono::steady_clock;

static double secs(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

static Tensor stackrow(const Tensor& img, int dim) {
  Tensor out({1, dim});
  out.mat().row(0) = img.mat().row(0);
  return out;
}

int main(int argc, char** argv) {
  std::uint64_t seed = 1;
  int epochs = 30;
  int domains = 32;
  int members = 256;
  int hidden = 128;
  int mode = 0;  // 0 = pretrain metrics only, 1 = + s2l pipeline, 2 = + gaussian
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    auto next = [&]() { return std::stoi(argv[++i]); };
    if (a == "--seed") seed = static_cast<std::uint64_t>(next());
    else if (a == "--epochs") epochs = next();
    else if (a == "--domains") domains = next();
    else if (a == "--members") members = next();
    else if (a == "--hidden") hidden = next();
    else if (a == "--mode") mode = next();
  }

  datagen::CorpusConfig cc;
  cc.n_domains = domains;
  cc.members_per_domain = members;
  cc.min_domain_size = members;
  auto t0 = Clock::now();
  auto corpus = datagen::build_corpus(cc, seed);
  auto t1 = Clock::now();
  std::printf("corpus: %zu members, %zu nonmembers, %.1fs\n", corpus.members.size(),
              corpus.nonmembers.size(), secs(t0, t1));

  // Domain geometry: typical member-member and member-prototype distances.
  {
    auto mem = corpus.domain_members(0);
    const Tensor proto = corpus.prototype(0);
    double dmin = 1e9, dsum = 0;
    int pairs = 0;
    for (size_t i = 0; i < 40; ++i) {
      for (size_t j = i + 1; j < 40; ++j) {
        const double d = metrics::l2_distance(mem[i]->image, mem[j]->image);
        dmin = std::min(dmin, d);
        dsum += d;
        ++pairs;
      }
    }
    double dproto = 0;
    for (size_t i = 0; i < 40; ++i) dproto += metrics::l2_distance(mem[i]->image, proto);
    std::printf("geometry: member-member mean %.3f min %.3f, member-proto %.3f\n",
                dsum / pairs, dmin, dproto / 40);
  }

  diffusion::ModelConfig mc;
  mc.hidden_dim = hidden;
  diffusion::PretrainOptions opts;
  opts.epochs = epochs;
  diffusion::TrainLog log;
  t0 = Clock::now();
  auto model = diffusion::pretrain(mc, corpus, seed, opts, &log);
  t1 = Clock::now();
  std::printf("pretrain: %.1fs; ae loss %.4f -> %.4f; diff loss %.4f -> %.4f\n",
              secs(t0, t1), log.ae_epoch_loss.front(), log.ae_epoch_loss.back(),
              log.epoch_loss.front(), log.epoch_loss.back());

  // AE round trip on held-out nonmembers.
  {
    diffusion::DiffusionModel m = model;
    diffusion::ModelRuntime rt(m);
    double err = 0;
    int n = 0;
    for (const auto& s : corpus.nonmembers) {
      if (n >= 200) break;
      Tensor x({1, mc.pixel_dim});
      x.mat().row(0) = s.image.mat().row(0);
      Tensor rec = rt.to_pixel_space(rt.to_data_space(x));
      Tensor rec1({mc.pixel_dim});
      rec1.mat().row(0) = rec.mat().row(0);
      err += metrics::l2_distance(rec1, s.image);
      ++n;
    }
    std::printf("ae holdout round-trip mean l2: %.4f (n=%d)\n", err / n, n);
  }

  attacks::AttackConfig acfg;
  acfg.t_star = mc.T / 2;

  // t* sweep on a few domains.
  for (auto [ts, steps] : std::vector<std::pair<int, int>>{
           {2, 1}, {4, 1}, {6, 1}, {9, 1}, {12, 1}, {25, 1}, {9, 3}, {12, 3}, {12, 6}, {18, 6}}) {
    attacks::AttackConfig c2 = acfg;
    c2.t_star = ts;
    c2.mia_steps = steps;
    double auc3 = 0.0;
    for (int d : corpus.private_domain_ids) {
      auto test = corpus.mia_test_set(d);
      auc3 += attacks::mia_attack(model, test, cc.mia_members, corpus.attack_prompt(d), c2,
                                  nullptr)
                  .auc;
    }
    std::printf("  t*=%d k=%d (abar %.3f): mean auc %.3f\n", ts, steps,
                model.schedule.abar(ts), auc3 / corpus.private_domain_ids.size());
  }

  // Baseline MIA per private domain.
  double mean_auc = 0;
  for (int d : corpus.private_domain_ids) {
    auto test = corpus.mia_test_set(d);
    auto mia = attacks::mia_attack(model, test, cc.mia_members, corpus.attack_prompt(d),
                                   acfg, nullptr);
    mean_auc += mia.auc;
    if (d < 3) std::printf("  domain %d: auc %.3f tpr@1 %.3f\n", d, mia.auc, mia.tpr_at_1fpr);
  }
  mean_auc /= corpus.private_domain_ids.size();
  t0 = Clock::now();
  std::printf("baseline mean AUC over %zu domains: %.3f (mia time %.1fs)\n",
              corpus.private_domain_ids.size(), mean_auc, secs(t1, t0));

  const double util = metrics::utility_fidelity(model, corpus, 64, seed + 5, acfg.gen_steps);
  t1 = Clock::now();
  std::printf("utility_fidelity: %.3f (%.1fs)\n", util, secs(t0, t1));

  // Pretrained extraction baseline.
  auto base_rep = attacks::pretrained_report(model, corpus, 0, acfg, seed + 9, true, false);
  std::printf("pretrained extraction: num %d (0.15: %d) accepted %d\n",
              base_rep.extraction_num, base_rep.extraction_num_015, base_rep.accepted);

  // Candidate-to-member geometry: who gets matched and how close.
  {
    auto pool = std::vector<double>{};
    auto sp = attacks::gen_sp_set(model, corpus.attack_prompt(0), acfg.n_p, seed + 21,
                                  acfg.gen_steps);
    std::vector<const Tensor*> imgs;
    for (const auto& s : sp) imgs.push_back(&s.image);
    pool = attacks::mia_scores(model, corpus.attack_prompt(0), imgs, acfg);
    auto ext = attacks::extract(model, corpus.attack_prompt(0), acfg, seed + 22, pool);
    std::vector<const datagen::Sample*> members;
    for (const auto& s : corpus.members) members.push_back(&s);
    int dup_matched = 0, ord_matched = 0;
    std::vector<double> nearest;
    for (const auto& img : ext.accepted_images) {
      double best = 1e9;
      int best_i = -1;
      for (size_t i = 0; i < members.size(); ++i) {
        const double d = metrics::l2_distance(img, members[i]->image);
        if (d < best) { best = d; best_i = static_cast<int>(i); }
      }
      nearest.push_back(best);
      if (best <= acfg.match_delta) {
        (members[static_cast<size_t>(best_i)]->dup_group >= 0 ? dup_matched : ord_matched)++;
      }
    }
    std::sort(nearest.begin(), nearest.end());
    std::printf("accepted=%zu nearest-member dist: p0 %.3f p10 %.3f p50 %.3f p90 %.3f\n",
                nearest.size(), nearest.front(), nearest[nearest.size() / 10],
                nearest[nearest.size() / 2], nearest[nearest.size() * 9 / 10]);
    std::printf("matched candidates: dup-nearest %d ordinary-nearest %d\n", dup_matched,
                ord_matched);
  }

  if (mode == 8) {  // memorization diagnostics: raw loss gap member vs nonmember
    diffusion::DiffusionModel m2 = model;
    diffusion::ModelRuntime rt(m2);
    for (int d : {0, 1}) {
      auto test = corpus.mia_test_set(d);
      const auto tokens = rt.pad_prompts({corpus.attack_prompt(d)});
      std::vector<metrics::ScoredExample> scored;
      double mloss = 0, nloss = 0;
      for (size_t i = 0; i < test.size(); ++i) {
        Tensor x0 = rt.to_data_space(stackrow(test[i]->image, mc.pixel_dim));
        double loss = 0;
        int reps = 0;
        for (int t : {3, 6, 12, 20, 35}) {
          Tensor noise(x0.shape());
          Rng r(seed * 977 + static_cast<std::uint64_t>(i) * 131 + t);
          r.fill_normal(noise.data(), noise.size());
          auto xt = rt.q_sample(x0, {t}, noise);
          auto pred = rt.predict_x0(xt, tokens, {t});
          loss += (pred.array() - x0.array()).square().mean();
          ++reps;
        }
        loss /= reps;
        const bool member = i < static_cast<size_t>(cc.mia_members);
        (member ? mloss : nloss) += loss;
        scored.push_back({static_cast<int>(i), member, loss});
      }
      std::printf("diag loss-gap domain %d: member %.4f nonmember %.4f gap %.4f  auc(loss) %.3f\n",
                  d, mloss / cc.mia_members, nloss / cc.mia_nonmembers,
                  nloss / cc.mia_nonmembers - mloss / cc.mia_members,
                  metrics::auc(scored));
    }
  }

  if (mode == 9) {  // generation diagnostics
    diffusion::DiffusionModel m2 = model;
    diffusion::ModelRuntime rt(m2);
    const int d = 0;
    auto mem = corpus.domain_members(d);
    Tensor domain_mean({mc.pixel_dim});
    for (const auto* s : mem) domain_mean.array() += s->image.array();
    domain_mean.array() /= static_cast<float>(mem.size());
    std::vector<std::vector<int>> prompts(32, corpus.attack_prompt(d));
    Tensor gens = rt.generate_batch(prompts, seed + 31, "diag.gen", 0, acfg.gen_steps);
    double d_proto = 0, d_mean = 0, d_member = 0, d_other = 0, pix_mean = 0, pix_std = 0;
    double gen_spread = 0;
    const Tensor proto = corpus.prototype(d);
    for (int i = 0; i < 32; ++i) {
      Tensor g({mc.pixel_dim});
      g.mat().row(0) = gens.mat().row(i);
      d_proto += metrics::l2_distance(g, proto);
      d_mean += metrics::l2_distance(g, domain_mean);
      double best = 1e9;
      for (const auto* s : mem) best = std::min(best, metrics::l2_distance(g, s->image));
      d_member += best;
      double bo = 1e9;
      for (int od = 0; od < cc.n_domains; ++od) {
        if (od == d) continue;
        bo = std::min(bo, metrics::l2_distance(g, corpus.prototype(od)));
      }
      d_other += bo;
      pix_mean += g.array().mean();
      pix_std += std::sqrt((g.array() - g.array().mean()).square().mean());
      if (i > 0) {
        Tensor g0({mc.pixel_dim});
        g0.mat().row(0) = gens.mat().row(0);
        gen_spread += metrics::l2_distance(g, g0);
      }
    }
    double mem_mean = 0, mem_std = 0;
    for (int i = 0; i < 32; ++i) {
      mem_mean += mem[static_cast<size_t>(i)]->image.array().mean();
      mem_std += std::sqrt((mem[static_cast<size_t>(i)]->image.array() -
                            mem[static_cast<size_t>(i)]->image.array().mean())
                               .square()
                               .mean());
    }
    std::printf("diag gen: d(proto)=%.3f d(domain_mean)=%.3f d(nearest member)=%.3f "
                "d(best other proto)=%.3f spread=%.3f\n",
                d_proto / 32, d_mean / 32, d_member / 32, d_other / 32, gen_spread / 31);
    std::printf("diag pix: gen mean %.3f std %.3f vs member mean %.3f std %.3f\n",
                pix_mean / 32, pix_std / 32, mem_mean / 32, mem_std / 32);
    // Prompt sensitivity: same x_t, two prompts.
    {
      Tensor x0s = rt.to_data_space(stackrow(mem[0]->image, mc.pixel_dim));
      Tensor noise(x0s.shape());
      Rng r3(seed + 43);
      r3.fill_normal(noise.data(), noise.size());
      for (int t : {5, 15, 40}) {
        auto xt = rt.q_sample(x0s, {t}, noise);
        auto pa = rt.predict_x0(xt, rt.pad_prompts({corpus.attack_prompt(0)}), {t});
        auto pb = rt.predict_x0(xt, rt.pad_prompts({corpus.attack_prompt(5)}), {t});
        std::printf("diag prompt sensitivity t=%d: |f(p0)-f(p5)| rms %.4f\n", t,
                    std::sqrt((pa.array() - pb.array()).square().mean()));
      }
    }
    // Denoising sanity at low t.
    Tensor x0 = rt.to_data_space(stackrow(mem[0]->image, mc.pixel_dim));
    for (int t : {2, 5, 10, 25}) {
      Tensor noise(x0.shape());
      Rng r2(seed + 41);
      r2.fill_normal(noise.data(), noise.size());
      auto xt = rt.q_sample(x0, {t}, noise);
      auto tokens = rt.pad_prompts({corpus.attack_prompt(d)});
      auto pred = rt.predict_x0(xt, tokens, {t});
      const double rel = std::sqrt((pred.array() - x0.array()).square().mean()) /
                         std::sqrt(x0.array().square().mean());
      std::printf("diag denoise t=%d: rel x0 err %.3f\n", t, rel);
    }
  }

  if (mode >= 1) {
    for (const char* name : {"dreambooth", "textual_inversion", "lora", "dreambooth+lora"}) {
      attacks::PipelineOptions po;
      po.method = finetune::FinetuneMethod::parse(name);
      po.set_kind = datagen::FinetuneSetKind::SPPlaceholder;
      t0 = Clock::now();
      auto rep = attacks::s2l_pipeline(model, corpus, 0, po, acfg, seed + 11);
      t1 = Clock::now();
      std::printf("s2l[%s]: auc %.3f (base %.3f) num %d prec %.2f util %.3f lr %.0e %.1fs\n",
                  name, rep.auc, mean_auc, rep.extraction_num, rep.extraction_precision,
                  rep.utility, rep.chosen_lr, secs(t0, t1));
    }
  }
  if (mode == 3) {  // distance-gap analysis: pretrained vs fine-tuned candidates
    auto nearest_stats = [&](const diffusion::DiffusionModel& m, const char* label,
                             int domain) {
      auto p_z = corpus.attack_prompt(domain);
      auto sp = attacks::gen_sp_set(m, p_z, acfg.n_p, seed + 77, acfg.gen_steps);
      std::vector<const Tensor*> imgs;
      for (const auto& s : sp) imgs.push_back(&s.image);
      auto pool = attacks::mia_scores(m, p_z, imgs, acfg);
      auto ext = attacks::extract(m, p_z, acfg, seed + 78, pool);
      std::vector<double> dup_d, ord_d;
      for (const auto& img : ext.accepted_images) {
        double best = 1e9;
        const datagen::Sample* best_s = nullptr;
        for (const auto& s : corpus.members) {
          const double dd = metrics::l2_distance(img, s.image);
          if (dd < best) { best = dd; best_s = &s; }
        }
        (best_s->dup_group >= 0 ? dup_d : ord_d).push_back(best);
      }
      std::sort(dup_d.begin(), dup_d.end());
      std::sort(ord_d.begin(), ord_d.end());
      auto q = [](const std::vector<double>& v, double f) {
        return v.empty() ? -1.0 : v[static_cast<size_t>(f * (v.size() - 1))];
      };
      std::printf("%s d%d: dup-nearest n=%zu min %.3f p25 %.3f p50 %.3f | ord-nearest "
                  "n=%zu min %.3f p5 %.3f p25 %.3f p50 %.3f\n",
                  label, domain, dup_d.size(), q(dup_d, 0.0), q(dup_d, 0.25), q(dup_d, 0.5),
                  ord_d.size(), q(ord_d, 0.0), q(ord_d, 0.05), q(ord_d, 0.25), q(ord_d, 0.5));
    };
    for (int d : {0, 1}) {
      nearest_stats(model, "pretrained", d);
      attacks::PipelineOptions po;
      po.method = finetune::FinetuneMethod::parse("dreambooth+lora");
      auto sp = attacks::gen_sp_set(model, corpus.attack_prompt(d), acfg.n_p, seed + 79,
                                    acfg.gen_steps);
      finetune::FinetuneLog flog;
      auto tuned = finetune::finetune(model, sp, po.method, seed + 80, &flog);
      std::printf("  finetuned lr %.0e\n", flog.chosen_lr);
      nearest_stats(tuned, "s2l(db+lora)", d);
    }
  }

  if (mode >= 2) {
    auto test = corpus.mia_test_set(0);
    const GroupSet groups = {ParamGroup::embedding, ParamGroup::text_encoder,
                             ParamGroup::denoiser};
    for (double eps : {2e-4, 8e-4, 3.2e-3}) {
      t0 = Clock::now();
      auto g = attacks::gaussian_attack(model, groups, eps, 50, test, cc.mia_members,
                                        corpus.attack_prompt(0), acfg, seed + 13, 2);
      t1 = Clock::now();
      std::printf("gauss eps=%.1e: baseline %.3f top3 %.3f (%.1fs)\n", eps,
                  g.baseline_auc, g.top3_mean, secs(t0, t1));
    }
  }
  return 0;
}
