#include "s2l/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace s2l::cli {

namespace {

struct Field {
  std::function<void(const std::string&)> set;
};

[[noreturn]] void fail(int line, const std::string& what) {
  throw std::invalid_argument("config line " + std::to_string(line) + ": " + what);
}

int to_int(const std::string& v, int line, const std::string& key) {
  try {
    size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    fail(line, "field '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& v, int line, const std::string& key) {
  try {
    size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    fail(line, "field '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "field '" + key + "' expects true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  size_t a = 0;
  size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;

  // section -> key -> setter; the line number threading keeps diagnostics
  // pointing at the offending field.
  int line_no = 0;
  auto I = [&line_no](int* dst) {
    return [dst, &line_no](const std::string& v) { *dst = to_int(v, line_no, ""); };
  };
  (void)I;

  std::map<std::string, std::map<std::string, std::function<void(const std::string&, int,
                                                                 const std::string&)>>>
      schema;
  auto set_int = [](int* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      *dst = to_int(v, ln, k);
    };
  };
  auto set_f32 = [](float* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      *dst = static_cast<float>(to_double(v, ln, k));
    };
  };
  auto set_f64 = [](double* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      *dst = to_double(v, ln, k);
    };
  };
  auto set_bool = [](bool* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      *dst = to_bool(v, ln, k);
    };
  };
  auto set_ints = [](std::vector<int>* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      dst->clear();
      for (const auto& item : split_list(v)) dst->push_back(to_int(item, ln, k));
    };
  };
  auto set_doubles = [](std::vector<double>* dst) {
    return [dst](const std::string& v, int ln, const std::string& k) {
      dst->clear();
      for (const auto& item : split_list(v)) dst->push_back(to_double(item, ln, k));
    };
  };
  auto set_strings = [](std::vector<std::string>* dst) {
    return [dst](const std::string& v, int, const std::string&) { *dst = split_list(v); };
  };

  schema["corpus"] = {
      {"domains", set_int(&cfg.corpus.n_domains)},
      {"ood_domains", set_int(&cfg.corpus.n_ood_domains)},
      {"members_per_domain", set_int(&cfg.corpus.members_per_domain)},
      {"private_domains", set_int(&cfg.corpus.n_private)},
      {"nonmembers_per_private", set_int(&cfg.corpus.nonmembers_per_private)},
      {"mia_members", set_int(&cfg.corpus.mia_members)},
      {"mia_nonmembers", set_int(&cfg.corpus.mia_nonmembers)},
      {"vocab_size", set_int(&cfg.corpus.vocab_size)},
      {"dedup_tau", set_f32(&cfg.corpus.dedup_tau)},
      {"min_domain_size", set_int(&cfg.corpus.min_domain_size)},
      {"max_shift_px", set_int(&cfg.corpus.deform.max_shift_px)},
      {"pixel_noise_std", set_f32(&cfg.corpus.deform.pixel_noise_std)},
      {"brightness_jitter", set_f32(&cfg.corpus.deform.brightness_jitter)},
      {"dup_hot_count", set_int(&cfg.corpus.dup.hot_count)},
      {"dup_group_size", set_int(&cfg.corpus.dup.group_size)},
      {"dup_noise_std", set_f32(&cfg.corpus.dup.dup_noise_std)},
  };
  schema["model"] = {
      {"embed_dim", set_int(&cfg.model.embed_dim)},
      {"hidden_dim", set_int(&cfg.model.hidden_dim)},
      {"blocks", set_int(&cfg.model.blocks)},
      {"latent_mode", set_bool(&cfg.model.latent_mode)},
      {"latent_dim", set_int(&cfg.model.latent_dim)},
      {"ae_hidden", set_int(&cfg.model.ae_hidden)},
      {"timesteps", set_int(&cfg.model.T)},
      {"max_prompt_len", set_int(&cfg.model.max_prompt_len)},
  };
  schema["pretrain"] = {
      {"ae_epochs", set_int(&cfg.pretrain.ae_epochs)},
      {"epochs", set_int(&cfg.pretrain.epochs)},
      {"batch", set_int(&cfg.pretrain.batch)},
      {"lr", set_f64(&cfg.pretrain.lr)},
      {"lr_final_fraction", set_f64(&cfg.pretrain.lr_final_fraction)},
  };
  schema["finetune"] = {
      {"methods", set_strings(&cfg.methods)},
      {"sets", set_strings(&cfg.finetune_sets)},
      {"epochs", set_int(&cfg.method_defaults.epochs)},
      {"batch", set_int(&cfg.method_defaults.batch)},
      {"probe_epochs", set_int(&cfg.method_defaults.probe_epochs)},
      {"lr_grid", set_doubles(&cfg.method_defaults.lr_grid)},
      {"lora_rank", set_int(&cfg.method_defaults.lora_rank)},
      {"ti_extra_tokens", set_int(&cfg.method_defaults.ti_extra_tokens)},
  };
  schema["attack"] = {
      {"delta_m", set_f64(&cfg.attack.delta_m)},
      {"delta_d", set_f64(&cfg.attack.delta_d)},
      {"delta_n", set_f64(&cfg.attack.delta_n)},
      {"np", set_int(&cfg.attack.n_p)},
      {"nd", set_int(&cfg.attack.n_d)},
      {"nm", set_int(&cfg.attack.n_m)},
      {"eidetic_k", set_int(&cfg.attack.eidetic_k)},
      {"eidetic_delta", set_f64(&cfg.attack.eidetic_delta)},
      {"match_delta", set_f64(&cfg.attack.match_delta)},
      {"t_star", set_int(&cfg.attack.t_star)},
      {"mia_steps", set_int(&cfg.attack.mia_steps)},
      {"gen_steps", set_int(&cfg.attack.gen_steps)},
      {"utility_prompts", set_int(&cfg.attack.utility_prompts)},
      {"domains", set_ints(&cfg.attack_domains)},
  };
  schema["experiment"] = {
      {"seeds",
       [&cfg](const std::string& v, int ln, const std::string& k) {
         cfg.seeds.clear();
         for (const auto& item : split_list(v)) {
           cfg.seeds.push_back(static_cast<std::uint64_t>(to_int(item, ln, k)));
         }
       }},
  };
  schema["shake"] = {
      {"eps", set_doubles(&cfg.shake.eps_grid)},
      {"trials", set_int(&cfg.shake.trials)},
      {"include_autoencoder", set_bool(&cfg.shake.include_autoencoder)},
      {"domains", set_ints(&cfg.shake.domains)},
  };
  schema["transfer"] = {
      {"ab_members", set_int(&cfg.transfer.ab_members)},
      {"ab_nonmembers", set_int(&cfg.transfer.ab_nonmembers)},
      {"ti_epochs", set_int(&cfg.transfer.ti_epochs)},
      {"modes", set_strings(&cfg.transfer.modes)},
      {"domains", set_ints(&cfg.transfer.domains)},
  };

  std::istringstream in(text);
  std::string raw;
  std::string section;
  int ln = 0;
  while (std::getline(in, raw)) {
    ++ln;
    std::string line = trim(raw);
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(ln, "unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (!schema.count(section)) fail(ln, "unknown section '" + section + "'");
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(ln, "expected key = value");
    if (section.empty()) fail(ln, "key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto& keys = schema[section];
    auto it = keys.find(key);
    if (it == keys.end()) fail(ln, "unknown key '" + key + "' in section [" + section + "]");
    it->second(value, ln, key);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

void ExperimentConfig::validate() const {
  model.validate();
  attack.validate(model.T);
  if (corpus.n_private > corpus.n_domains) {
    throw std::invalid_argument("config: private_domains exceeds domains");
  }
  if (corpus.vocab_size != model.vocab_size && model.vocab_size != 64) {
    throw std::invalid_argument("config: model vocab is fixed by the corpus vocabulary");
  }
  for (const auto& m : methods) finetune::FinetuneMethod::parse(m);  // throws on bad names
  for (const auto& s : finetune_sets) datagen::finetune_set_from_name(s);
  for (const auto& m : transfer.modes) {
    if (m != "plain_suffix" && m != "plain_s2l" && m != "mia_set" &&
        m != "ground_truth_set") {
      throw std::invalid_argument("config: unknown transfer mode '" + m + "'");
    }
  }
  for (int d : attack_domains) {
    if (d < 0 || d >= corpus.n_private) {
      throw std::invalid_argument("config: attack domain " + std::to_string(d) +
                                  " is not a private domain");
    }
  }
  if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
  if (shake.trials < 1) throw std::invalid_argument("config: shake trials must be >= 1");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os.precision(12);
  os << "corpus.domains=" << corpus.n_domains << "\n";
  os << "corpus.ood_domains=" << corpus.n_ood_domains << "\n";
  os << "corpus.members_per_domain=" << corpus.members_per_domain << "\n";
  os << "corpus.private_domains=" << corpus.n_private << "\n";
  os << "corpus.nonmembers_per_private=" << corpus.nonmembers_per_private << "\n";
  os << "corpus.mia_members=" << corpus.mia_members << "\n";
  os << "corpus.mia_nonmembers=" << corpus.mia_nonmembers << "\n";
  os << "corpus.vocab_size=" << corpus.vocab_size << "\n";
  os << "corpus.dedup_tau=" << corpus.dedup_tau << "\n";
  os << "corpus.min_domain_size=" << corpus.min_domain_size << "\n";
  os << "corpus.max_shift_px=" << corpus.deform.max_shift_px << "\n";
  os << "corpus.pixel_noise_std=" << corpus.deform.pixel_noise_std << "\n";
  os << "corpus.brightness_jitter=" << corpus.deform.brightness_jitter << "\n";
  os << "corpus.dup_hot_count=" << corpus.dup.hot_count << "\n";
  os << "corpus.dup_group_size=" << corpus.dup.group_size << "\n";
  os << "corpus.dup_noise_std=" << corpus.dup.dup_noise_std << "\n";
  os << "model.embed_dim=" << model.embed_dim << "\n";
  os << "model.hidden_dim=" << model.hidden_dim << "\n";
  os << "model.blocks=" << model.blocks << "\n";
  os << "model.latent_mode=" << model.latent_mode << "\n";
  os << "model.latent_dim=" << model.latent_dim << "\n";
  os << "model.ae_hidden=" << model.ae_hidden << "\n";
  os << "model.timesteps=" << model.T << "\n";
  os << "model.max_prompt_len=" << model.max_prompt_len << "\n";
  os << "pretrain.ae_epochs=" << pretrain.ae_epochs << "\n";
  os << "pretrain.epochs=" << pretrain.epochs << "\n";
  os << "pretrain.batch=" << pretrain.batch << "\n";
  os << "pretrain.lr=" << pretrain.lr << "\n";
  os << "pretrain.lr_final_fraction=" << pretrain.lr_final_fraction << "\n";
  os << "finetune.methods=";
  for (const auto& m : methods) os << m << ",";
  os << "\n";
  os << "finetune.sets=";
  for (const auto& s : finetune_sets) os << s << ",";
  os << "\n";
  os << "finetune.epochs=" << method_defaults.epochs << "\n";
  os << "finetune.batch=" << method_defaults.batch << "\n";
  os << "finetune.probe_epochs=" << method_defaults.probe_epochs << "\n";
  os << "finetune.lr_grid=";
  for (double lr : method_defaults.lr_grid) os << lr << ",";
  os << "\n";
  os << "finetune.lora_rank=" << method_defaults.lora_rank << "\n";
  os << "finetune.ti_extra_tokens=" << method_defaults.ti_extra_tokens << "\n";
  os << "attack.delta_m=" << attack.delta_m << "\n";
  os << "attack.delta_d=" << attack.delta_d << "\n";
  os << "attack.delta_n=" << attack.delta_n << "\n";
  os << "attack.np=" << attack.n_p << "\n";
  os << "attack.nd=" << attack.n_d << "\n";
  os << "attack.nm=" << attack.n_m << "\n";
  os << "attack.eidetic_k=" << attack.eidetic_k << "\n";
  os << "attack.eidetic_delta=" << attack.eidetic_delta << "\n";
  os << "attack.match_delta=" << attack.match_delta << "\n";
  os << "attack.t_star=" << attack.t_star << "\n";
  os << "attack.mia_steps=" << attack.mia_steps << "\n";
  os << "attack.gen_steps=" << attack.gen_steps << "\n";
  os << "attack.utility_prompts=" << attack.utility_prompts << "\n";
  os << "attack.domains=";
  for (int d : attack_domains) os << d << ",";
  os << "\n";
  os << "experiment.seeds=";
  for (auto s : seeds) os << s << ",";
  os << "\n";
  os << "shake.eps=";
  for (double e : shake.eps_grid) os << e << ",";
  os << "\n";
  os << "shake.trials=" << shake.trials << "\n";
  os << "shake.include_autoencoder=" << shake.include_autoencoder << "\n";
  os << "shake.domains=";
  for (int d : shake.domains) os << d << ",";
  os << "\n";
  os << "transfer.ab_members=" << transfer.ab_members << "\n";
  os << "transfer.ab_nonmembers=" << transfer.ab_nonmembers << "\n";
  os << "transfer.ti_epochs=" << transfer.ti_epochs << "\n";
  os << "transfer.modes=";
  for (const auto& m : transfer.modes) os << m << ",";
  os << "\n";
  os << "transfer.domains=";
  for (int d : transfer.domains) os << d << ",";
  os << "\n";
  return os.str();
}

std::uint32_t ExperimentConfig::hash() const {
  const std::string c = canonical();
  std::uint32_t h = 2166136261u;
  for (unsigned char ch : c) {
    h ^= ch;
    h *= 16777619u;
  }
  return h;
}

}  // namespace s2l::cli
