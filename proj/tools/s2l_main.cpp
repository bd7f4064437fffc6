#include <CLI11.hpp>

#include <iostream>

#include "s2l/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Toy latent-diffusion privacy lab: fine-tuning leakage attacks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  app.add_option("--config", config_path, "experiment config file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--threads", threads, "worker threads for independent cells");

  auto* gen = app.add_subcommand("gen-corpus", "generate the multi-domain corpus");
  auto* pre = app.add_subcommand("pretrain", "pretrain the victim model");
  auto* ft = app.add_subcommand("finetune", "fine-tune one configured cell");
  auto* attack = app.add_subcommand("attack", "run privacy attacks");
  auto* mia = attack->add_subcommand("mia", "membership inference over the matrix");
  auto* extract = attack->add_subcommand("extract", "MIA plus data extraction");
  auto* shake = attack->add_subcommand("shake", "zero-knowledge Gaussian attack");
  auto* transfer = attack->add_subcommand("transfer", "domain-transfer attack");
  auto* report = app.add_subcommand("report", "aggregate results into tables");
  attack->require_subcommand(1);

  CLI11_PARSE(app, argc, argv);

  try {
    s2l::cli::RunContext ctx;
    ctx.cfg = config_path.empty() ? s2l::cli::ExperimentConfig{}
                                  : s2l::cli::load_config(config_path);
    ctx.out_dir = out_dir;
    ctx.master_seed = seed;
    ctx.threads = threads;
    if (gen->parsed()) return s2l::cli::cmd_gen_corpus(ctx);
    if (pre->parsed()) return s2l::cli::cmd_pretrain(ctx);
    if (ft->parsed()) return s2l::cli::cmd_finetune(ctx);
    if (attack->parsed()) {
      if (mia->parsed()) return s2l::cli::cmd_attack_mia(ctx);
      if (extract->parsed()) return s2l::cli::cmd_attack_extract(ctx);
      if (shake->parsed()) return s2l::cli::cmd_attack_shake(ctx);
      if (transfer->parsed()) return s2l::cli::cmd_attack_transfer(ctx);
    }
    if (report->parsed()) return s2l::cli::cmd_report(ctx);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
