#include "s2l/cli.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "s2l/checkpoint.hpp"
#include "s2l/parallel.hpp"

namespace s2l::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string corpus_path(const RunContext& ctx) { return ctx.out_dir + "/corpus.s2lc"; }
std::string model_path(const RunContext& ctx) { return ctx.out_dir + "/model.s2lc"; }

void write_text(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json base_record(const RunContext& ctx, const std::string& stage) {
  return json{{"config_hash", ctx.cfg.hash()},
              {"master_seed", ctx.master_seed},
              {"stage", stage}};
}

datagen::Corpus load_corpus_checked(const RunContext& ctx) {
  if (!fs::exists(corpus_path(ctx))) {
    throw std::runtime_error("no corpus at '" + corpus_path(ctx) +
                             "'; run `gen-corpus` first");
  }
  return io::load_corpus(corpus_path(ctx));
}

diffusion::DiffusionModel load_model_checked(const RunContext& ctx) {
  if (!fs::exists(model_path(ctx))) {
    throw std::runtime_error("no checkpoint at '" + model_path(ctx) +
                             "'; run `pretrain` first");
  }
  return io::load_model(model_path(ctx));
}

std::vector<int> resolve_domains(const ExperimentConfig& cfg, const std::vector<int>& wanted) {
  if (!wanted.empty()) return wanted;
  std::vector<int> all;
  for (int d = 0; d < cfg.corpus.n_private; ++d) all.push_back(d);
  return all;
}

finetune::FinetuneMethod resolve_method(const ExperimentConfig& cfg, const std::string& name) {
  finetune::FinetuneMethod m = finetune::FinetuneMethod::parse(name);
  m.epochs = cfg.method_defaults.epochs;
  m.batch = cfg.method_defaults.batch;
  m.probe_epochs = cfg.method_defaults.probe_epochs;
  m.lr_grid = cfg.method_defaults.lr_grid;
  if (name.find("rank=") == std::string::npos) m.lora_rank = cfg.method_defaults.lora_rank;
  if (name.find("extra=") == std::string::npos) {
    m.ti_extra_tokens = cfg.method_defaults.ti_extra_tokens;
  }
  // Method strings may still carry their own epoch overrides.
  finetune::FinetuneMethod parsed = finetune::FinetuneMethod::parse(name);
  if (parsed.epochs != 100) m.epochs = parsed.epochs;
  if (name.find("rank=") != std::string::npos) m.lora_rank = parsed.lora_rank;
  if (name.find("extra=") != std::string::npos) m.ti_extra_tokens = parsed.ti_extra_tokens;
  return m;
}

struct Cell {
  int domain;
  std::string method;  // "pretrained" for the baseline row
  std::string set_kind;
  size_t seed_index;
};

std::vector<Cell> attack_cells(const ExperimentConfig& cfg, const std::vector<int>& domains) {
  std::vector<Cell> cells;
  for (int d : domains) {
    for (size_t si = 0; si < cfg.seeds.size(); ++si) {
      cells.push_back({d, "pretrained", "-", si});
      for (const auto& m : cfg.methods) {
        for (const auto& s : cfg.finetune_sets) {
          cells.push_back({d, m, s, si});
        }
      }
    }
  }
  return cells;
}

std::string cell_tag(const Cell& c) {
  std::string m = c.method;
  for (auto& ch : m) {
    if (ch == '+' || ch == ':' || ch == '=' || ch == ',') ch = '_';
  }
  return "d" + std::to_string(c.domain) + "_" + m + "_" + c.set_kind + "_r" +
         std::to_string(c.seed_index);
}

std::uint64_t cell_seed(const RunContext& ctx, const Cell& c) {
  const std::uint64_t replicate = ctx.cfg.seeds[c.seed_index];
  return Rng::stream(ctx.master_seed ^ replicate * 0x9e3779b97f4a7c15ULL,
                     "cell." + cell_tag(c))
      .next_u64();
}

json report_to_json(const attacks::AttackReport& r) {
  return json{{"domain", r.domain_id},
              {"method", r.method},
              {"set", r.finetune_set},
              {"seed", r.seed},
              {"auc", r.auc},
              {"tpr_at_1fpr", r.tpr_at_1fpr},
              {"extraction_num", r.extraction_num},
              {"extraction_precision", r.extraction_precision},
              {"extraction_num_at_015", r.extraction_num_015},
              {"accepted", r.accepted},
              {"utility", r.utility},
              {"chosen_lr", r.chosen_lr},
              {"trainable_params", r.trainable_params}};
}

void write_scores_csv(const std::string& path, const attacks::MiaResult& mia, int domain) {
  std::ostringstream os;
  os << "example_id,domain_id,membership,raw_score,rank_score\n";
  os.precision(9);
  for (size_t i = 0; i < mia.scored.size(); ++i) {
    os << mia.scored[i].id << "," << domain << ","
       << (mia.scored[i].member ? "member" : "nonmember") << "," << mia.scored[i].score
       << "," << mia.rank_scores[i] << "\n";
  }
  write_text(path, os.str());
}

/// Shared driver for `attack mia` (no extraction) and `attack extract`.
int run_attack_matrix(const RunContext& ctx, bool with_extraction) {
  const auto corpus = load_corpus_checked(ctx);
  const auto pretrained = load_model_checked(ctx);
  const auto domains = resolve_domains(ctx.cfg, ctx.cfg.attack_domains);
  const auto cells = attack_cells(ctx.cfg, domains);
  const std::string stage = with_extraction ? "attack-extract" : "attack-mia";
  const std::string dir = ctx.out_dir + "/results";
  fs::create_directories(dir);
  std::vector<json> rows(cells.size());
  parallel_for(static_cast<int>(cells.size()), ctx.threads, [&](int i) {
    const Cell& cell = cells[static_cast<size_t>(i)];
    const std::uint64_t seed = cell_seed(ctx, cell);
    attacks::AttackReport rep;
    attacks::MiaResult mia;
    json extra;
    if (cell.method == "pretrained") {
      rep = attacks::pretrained_report(pretrained, corpus, cell.domain, ctx.cfg.attack, seed,
                                       with_extraction, true, with_extraction);
    } else {
      attacks::PipelineOptions po;
      po.method = resolve_method(ctx.cfg, cell.method);
      po.set_kind = datagen::finetune_set_from_name(cell.set_kind);
      po.run_extraction = with_extraction;
      po.run_grid = with_extraction;
      rep = attacks::s2l_pipeline(pretrained, corpus, cell.domain, po, ctx.cfg.attack, seed);
    }
    json j = base_record(ctx, stage);
    j["cell_seed"] = seed;
    j["replicate"] = ctx.cfg.seeds[cell.seed_index];
    j["report"] = report_to_json(rep);
    if (with_extraction && !rep.grid.ks.empty()) {
      j["grid"] = json{{"ks", rep.grid.ks}, {"deltas", rep.grid.deltas},
                       {"num", rep.grid.num}};
    }
    rows[static_cast<size_t>(i)] = j;
    const std::string tag = cell_tag(cell);
    write_json(dir + "/" + stage + "_" + tag + ".json", j);
    write_scores_csv(dir + "/scores_" + tag + ".csv", rep.mia, cell.domain);
  });
  // Summary CSV, deterministic cell order.
  std::ostringstream os;
  os << "domain,method,set,replicate,auc,tpr_at_1fpr,num,precision,num_at_015,utility\n";
  os.precision(9);
  for (size_t i = 0; i < cells.size(); ++i) {
    const auto& r = rows[i]["report"];
    os << r["domain"] << "," << r["method"].get<std::string>() << ","
       << r["set"].get<std::string>() << "," << rows[i]["replicate"] << "," << r["auc"]
       << "," << r["tpr_at_1fpr"] << "," << r["extraction_num"] << ","
       << r["extraction_precision"] << "," << r["extraction_num_at_015"] << ","
       << r["utility"] << "\n";
  }
  write_text(ctx.out_dir + "/" + stage + "_summary.csv", os.str());
  std::cout << stage << ": " << cells.size() << " cells done\n";
  return 0;
}

}  // namespace

int cmd_gen_corpus(const RunContext& ctx) {
  const auto corpus = datagen::build_corpus(ctx.cfg.corpus, ctx.master_seed);
  fs::create_directories(ctx.out_dir);
  io::save_corpus(corpus_path(ctx), corpus, ctx.cfg.hash());
  json j = base_record(ctx, "gen-corpus");
  j["members"] = corpus.members.size();
  j["nonmembers"] = corpus.nonmembers.size();
  j["domains"] = corpus.domains.size();
  j["private_domains"] = corpus.private_domain_ids;
  j["ood_domains"] = corpus.ood_domain_ids;
  write_json(ctx.out_dir + "/corpus_summary.json", j);
  std::cout << "gen-corpus: " << corpus.members.size() << " members\n";
  return 0;
}

int cmd_pretrain(const RunContext& ctx) {
  const auto corpus = load_corpus_checked(ctx);
  diffusion::TrainLog log;
  const auto model =
      diffusion::pretrain(ctx.cfg.model, corpus, ctx.master_seed, ctx.cfg.pretrain, &log);
  io::save_model(model_path(ctx), model, ctx.cfg.hash(), ctx.master_seed);
  json j = base_record(ctx, "pretrain");
  j["ae_epoch_loss"] = log.ae_epoch_loss;
  j["epoch_loss"] = log.epoch_loss;
  j["param_scalars"] = model.params.scalar_count();
  write_json(ctx.out_dir + "/pretrain_log.json", j);
  std::cout << "pretrain: final loss "
            << (log.epoch_loss.empty() ? 0.0 : log.epoch_loss.back()) << "\n";
  return 0;
}

int cmd_finetune(const RunContext& ctx) {
  const auto corpus = load_corpus_checked(ctx);
  const auto pretrained = load_model_checked(ctx);
  const auto domains = resolve_domains(ctx.cfg, ctx.cfg.attack_domains);
  // One cell: the first configured (domain, method, set, seed).
  const int domain = domains.front();
  const std::string method_name = ctx.cfg.methods.front();
  const auto set_kind = datagen::finetune_set_from_name(ctx.cfg.finetune_sets.front());
  const std::uint64_t seed =
      cell_seed(ctx, {domain, method_name, ctx.cfg.finetune_sets.front(), 0});
  const auto method = resolve_method(ctx.cfg, method_name);

  const auto p_z = corpus.attack_prompt(domain);
  std::vector<datagen::Sample> dataset;
  if (set_kind == datagen::FinetuneSetKind::SPPlaceholder) {
    dataset = attacks::gen_sp_set(pretrained, p_z, ctx.cfg.attack.n_p,
                                  Rng::stream(seed, "pipeline.sp").next_u64(),
                                  ctx.cfg.attack.gen_steps);
  } else {
    dataset = datagen::build_finetune_set(corpus, set_kind, domain, ctx.cfg.attack.n_p,
                                          Rng::stream(seed, "pipeline.set").next_u64());
  }
  finetune::FinetuneLog log;
  const auto tuned = finetune::finetune(pretrained, dataset, method,
                                        Rng::stream(seed, "pipeline.ft").next_u64(), &log);
  const std::string tag = cell_tag({domain, method_name, ctx.cfg.finetune_sets.front(), 0});
  io::save_model(ctx.out_dir + "/finetuned_" + tag + ".s2lc", tuned, ctx.cfg.hash(), seed);
  json j = base_record(ctx, "finetune");
  j["cell_seed"] = seed;
  j["domain"] = domain;
  j["method"] = method_name;
  j["set"] = ctx.cfg.finetune_sets.front();
  j["chosen_lr"] = log.chosen_lr;
  j["trainable_params"] = log.trainable_params;
  j["epoch_loss"] = log.epoch_loss;
  j["diverged"] = log.diverged;
  write_json(ctx.out_dir + "/finetune_" + tag + ".json", j);
  std::cout << "finetune: " << tag << " lr " << log.chosen_lr << "\n";
  return 0;
}

int cmd_attack_mia(const RunContext& ctx) {
  // Also emit per-example score CSVs for the baseline and each cell.
  const auto corpus = load_corpus_checked(ctx);
  const auto pretrained = load_model_checked(ctx);
  const auto domains = resolve_domains(ctx.cfg, ctx.cfg.attack_domains);
  const std::string dir = ctx.out_dir + "/results";
  fs::create_directories(dir);
  // Scores for the pretrained model per domain (seed-independent).
  for (int d : domains) {
    const auto p_z = corpus.attack_prompt(d);
    const auto test = corpus.mia_test_set(d);
    const auto mia = attacks::mia_attack(pretrained, test, corpus.config.mia_members, p_z,
                                         ctx.cfg.attack, nullptr);
    write_scores_csv(dir + "/scores_pretrained_d" + std::to_string(d) + ".csv", mia, d);
  }
  return run_attack_matrix(ctx, false);
}

int cmd_attack_extract(const RunContext& ctx) { return run_attack_matrix(ctx, true); }

int cmd_attack_shake(const RunContext& ctx) {
  const auto corpus = load_corpus_checked(ctx);
  const auto pretrained = load_model_checked(ctx);
  GroupSet groups = {ParamGroup::embedding, ParamGroup::text_encoder, ParamGroup::denoiser};
  if (ctx.cfg.shake.include_autoencoder) groups.insert(ParamGroup::autoencoder);
  const auto domains =
      ctx.cfg.shake.domains.empty() ? std::vector<int>{0} : ctx.cfg.shake.domains;
  const std::string dir = ctx.out_dir + "/results";
  fs::create_directories(dir);
  for (int d : domains) {
    const auto test = corpus.mia_test_set(d);
    const auto p_z = corpus.attack_prompt(d);
    for (size_t ei = 0; ei < ctx.cfg.shake.eps_grid.size(); ++ei) {
      const double eps = ctx.cfg.shake.eps_grid[ei];
      const auto res = attacks::gaussian_attack(
          pretrained, groups, eps, ctx.cfg.shake.trials, test, corpus.config.mia_members,
          p_z, ctx.cfg.attack, Rng::stream(ctx.master_seed, "shake", ei).next_u64(),
          ctx.threads);
      json j = base_record(ctx, "attack-shake");
      j["domain"] = d;
      j["eps"] = eps;
      j["trials"] = ctx.cfg.shake.trials;
      j["baseline_auc"] = res.baseline_auc;
      j["top3_auc"] = res.top3_mean;
      j["trial_aucs"] = res.trial_aucs;
      write_json(dir + "/shake_d" + std::to_string(d) + "_e" + std::to_string(ei) + ".json",
                 j);
      std::cout << "shake d" << d << " eps " << eps << ": baseline " << res.baseline_auc
                << " top3 " << res.top3_mean << "\n";
    }
  }
  return 0;
}

int cmd_attack_transfer(const RunContext& ctx) {
  const auto corpus = load_corpus_checked(ctx);
  const auto pretrained = load_model_checked(ctx);
  const auto domains =
      ctx.cfg.transfer.domains.empty() ? std::vector<int>{0} : ctx.cfg.transfer.domains;
  const std::string dir = ctx.out_dir + "/results";
  fs::create_directories(dir);
  attacks::TransferOptions opts;
  opts.ab_members = ctx.cfg.transfer.ab_members;
  opts.ab_nonmembers = ctx.cfg.transfer.ab_nonmembers;
  opts.ti_epochs = ctx.cfg.transfer.ti_epochs;
  opts.sp_method.epochs = ctx.cfg.method_defaults.epochs;
  opts.sp_method.batch = ctx.cfg.method_defaults.batch;
  opts.sp_method.probe_epochs = ctx.cfg.method_defaults.probe_epochs;
  opts.sp_method.lr_grid = ctx.cfg.method_defaults.lr_grid;

  struct Task {
    int domain;
    std::string mode;
    size_t seed_index;
  };
  std::vector<Task> tasks;
  for (int d : domains) {
    for (const auto& m : ctx.cfg.transfer.modes) {
      for (size_t si = 0; si < ctx.cfg.seeds.size(); ++si) tasks.push_back({d, m, si});
    }
  }
  parallel_for(static_cast<int>(tasks.size()), ctx.threads, [&](int i) {
    const auto& t = tasks[static_cast<size_t>(i)];
    attacks::TransferMode mode = attacks::TransferMode::PlainSuffix;
    if (t.mode == "plain_s2l") mode = attacks::TransferMode::PlainS2L;
    if (t.mode == "mia_set") mode = attacks::TransferMode::MiaSet;
    if (t.mode == "ground_truth_set") mode = attacks::TransferMode::GroundTruthSet;
    const std::uint64_t seed =
        Rng::stream(ctx.master_seed ^ ctx.cfg.seeds[t.seed_index] * 0x9e3779b97f4a7c15ULL,
                    "transfer." + t.mode, static_cast<std::uint64_t>(t.domain))
            .next_u64();
    const auto out =
        attacks::domain_transfer(pretrained, corpus, t.domain, ctx.cfg.attack, mode,
                                 opts, seed);
    json j = base_record(ctx, "attack-transfer");
    j["cell_seed"] = seed;
    j["replicate"] = ctx.cfg.seeds[t.seed_index];
    j["domain"] = t.domain;
    j["mode"] = t.mode;
    j["num"] = out.extraction.eval.num;
    j["precision"] = out.extraction.eval.precision;
    j["num_at_015"] = out.extraction.eval_at_015.num;
    j["accepted"] = out.extraction.accepted.size();
    j["mia_set_members"] = out.mia_set_members;
    j["mia_set_nonmembers"] = out.mia_set_nonmembers;
    j["member_purity"] = out.member_purity;
    j["shortfall"] = out.shortfall;
    write_json(dir + "/transfer_" + t.mode + "_d" + std::to_string(t.domain) + "_r" +
                   std::to_string(t.seed_index) + ".json",
               j);
  });
  std::cout << "transfer: " << tasks.size() << " runs done\n";
  return 0;
}

int cmd_report(const RunContext& ctx) {
  const std::string dir = ctx.out_dir + "/results";
  if (!fs::exists(dir) || fs::is_empty(dir)) {
    std::cerr << "report: no results found under '" << dir << "'\n";
    return 1;
  }
  struct Agg {
    double auc = 0, tpr = 0, num = 0, prec = 0, num015 = 0, utility = 0;
    int n = 0;
  };
  std::map<std::pair<std::string, std::string>, Agg> table;  // (method, set)
  std::map<std::string, std::map<double, std::pair<double, int>>> shake;  // domain-indep
  std::map<std::string, Agg> transfer;
  std::map<double, double> shake_baseline;
  std::map<std::pair<std::string, std::string>, std::pair<json, int>> grids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    json j;
    in >> j;
    const std::string stage = j.value("stage", "");
    if (stage == "attack-mia" || stage == "attack-extract") {
      const auto& r = j["report"];
      auto& a = table[{r["method"], r["set"]}];
      a.auc += r["auc"].get<double>();
      a.tpr += r["tpr_at_1fpr"].get<double>();
      a.num += r["extraction_num"].get<double>();
      a.prec += r["extraction_precision"].get<double>();
      a.num015 += r["extraction_num_at_015"].get<double>();
      a.utility += r["utility"].get<double>();
      a.n += 1;
      if (j.contains("grid")) {
        auto& g = grids[{r["method"], r["set"]}];
        if (g.second == 0) {
          g.first = j["grid"];
          std::vector<std::vector<double>> zero(
              j["grid"]["ks"].size(),
              std::vector<double>(j["grid"]["deltas"].size(), 0.0));
          g.first["num"] = zero;
        }
        auto acc = g.first["num"].get<std::vector<std::vector<double>>>();
        const auto add = j["grid"]["num"].get<std::vector<std::vector<int>>>();
        for (size_t a1 = 0; a1 < acc.size(); ++a1) {
          for (size_t b1 = 0; b1 < acc[a1].size(); ++b1) acc[a1][b1] += add[a1][b1];
        }
        g.first["num"] = acc;
        g.second += 1;
      }
    } else if (stage == "attack-shake") {
      auto& cell = shake["all"][j["eps"].get<double>()];
      cell.first += j["top3_auc"].get<double>();
      cell.second += 1;
      shake_baseline[j["eps"].get<double>()] = j["baseline_auc"].get<double>();
    } else if (stage == "attack-transfer") {
      auto& a = transfer[j["mode"].get<std::string>()];
      a.num += j["num"].get<double>();
      a.prec += j["precision"].get<double>();
      a.num015 += j["num_at_015"].get<double>();
      a.n += 1;
    }
  }
  if (table.empty() && shake.empty() && transfer.empty()) {
    std::cerr << "report: no results found under '" << dir << "'\n";
    return 1;
  }
  json rep = base_record(ctx, "report");
  fs::create_directories(ctx.out_dir + "/report");
  if (!table.empty()) {
    std::ostringstream os;
    os << "method,set,auc,tpr_at_1fpr,num,precision,num_at_015,utility,cells\n";
    os.precision(6);
    json jt = json::array();
    for (const auto& [key, a] : table) {
      os << key.first << "," << key.second << "," << a.auc / a.n << "," << a.tpr / a.n << ","
         << a.num / a.n << "," << a.prec / a.n << "," << a.num015 / a.n << ","
         << a.utility / a.n << "," << a.n << "\n";
      jt.push_back(json{{"method", key.first},
                        {"set", key.second},
                        {"auc", a.auc / a.n},
                        {"tpr_at_1fpr", a.tpr / a.n},
                        {"num", a.num / a.n},
                        {"precision", a.prec / a.n},
                        {"num_at_015", a.num015 / a.n},
                        {"utility", a.utility / a.n},
                        {"cells", a.n}});
    }
    write_text(ctx.out_dir + "/report/table_main.csv", os.str());
    rep["table_main"] = jt;
  }
  if (!shake.empty()) {
    std::ostringstream os;
    os << "eps,baseline_auc,top3_auc,runs\n";
    os.precision(6);
    json js = json::array();
    for (const auto& [eps, cell] : shake["all"]) {
      os << eps << "," << shake_baseline[eps] << "," << cell.first / cell.second << ","
         << cell.second << "\n";
      js.push_back(json{{"eps", eps},
                        {"baseline_auc", shake_baseline[eps]},
                        {"top3_auc", cell.first / cell.second}});
    }
    write_text(ctx.out_dir + "/report/table_gauss.csv", os.str());
    rep["table_gauss"] = js;
  }
  if (!transfer.empty()) {
    std::ostringstream os;
    os << "mode,num,precision,num_at_015,runs\n";
    os.precision(6);
    json jt = json::array();
    for (const auto& [mode, a] : transfer) {
      os << mode << "," << a.num / a.n << "," << a.prec / a.n << "," << a.num015 / a.n << ","
         << a.n << "\n";
      jt.push_back(json{{"mode", mode},
                        {"num", a.num / a.n},
                        {"precision", a.prec / a.n},
                        {"num_at_015", a.num015 / a.n}});
    }
    write_text(ctx.out_dir + "/report/table_transfer.csv", os.str());
    rep["table_transfer"] = jt;
  }
  if (!grids.empty()) {
    std::ostringstream os;
    os << "method,set,k,delta,num\n";
    os.precision(6);
    json jg = json::array();
    for (const auto& [key, g] : grids) {
      const auto ks = g.first["ks"].get<std::vector<int>>();
      const auto deltas = g.first["deltas"].get<std::vector<double>>();
      auto num = g.first["num"].get<std::vector<std::vector<double>>>();
      for (auto& row : num) {
        for (auto& v : row) v /= g.second;
      }
      for (size_t a = 0; a < ks.size(); ++a) {
        for (size_t b = 0; b < deltas.size(); ++b) {
          os << key.first << "," << key.second << "," << ks[a] << "," << deltas[b] << ","
             << num[a][b] << "\n";
        }
      }
      jg.push_back(json{{"method", key.first},
                        {"set", key.second},
                        {"ks", ks},
                        {"deltas", deltas},
                        {"mean_num", num},
                        {"cells", g.second}});
    }
    write_text(ctx.out_dir + "/report/grid.csv", os.str());
    rep["grid"] = jg;
  }
  write_json(ctx.out_dir + "/report/report.json", rep);
  std::cout << "report: written to " << ctx.out_dir << "/report\n";
  return 0;
}

}  // namespace s2l::cli
