#include "s2l/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace s2l::io {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  }
  void bytes(const void* p, size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) { bytes(&v, 2); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void check(const std::string& path) {
    if (!out_) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  }
  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in_.gcount()) != n) {
      throw std::runtime_error("checkpoint: '" + path_ + "' truncated at byte offset " +
                               std::to_string(offset_ + static_cast<size_t>(in_.gcount())));
    }
    offset_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint16_t u16() { std::uint16_t v; bytes(&v, 2); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  size_t offset() const { return offset_; }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  std::ifstream in_;
  std::string path_;
  size_t offset_ = 0;
};

// u64 values ride in four exact u16-valued floats.
void push_u64(std::vector<float>& row, std::uint64_t v) {
  for (int i = 0; i < 4; ++i) row.push_back(static_cast<float>((v >> (16 * i)) & 0xffffULL));
}

std::uint64_t pull_u64(const Tensor& t, Eigen::Index base) {
  std::uint64_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<std::uint32_t>(t[base + i])) << (16 * i);
  }
  return v;
}

}  // namespace

void save_store(const std::string& path, const ParamStore& store,
                const CheckpointHeader& header) {
  Writer w(path);
  w.bytes(kMagic, 4);
  w.u32(header.version);
  w.u32(header.config_hash);
  w.u64(header.master_seed);
  w.u32(static_cast<std::uint32_t>(store.size()));
  for (const auto& e : store) {
    if (e.name.size() > 0xffff) throw std::invalid_argument("checkpoint: name too long");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.u8(static_cast<std::uint8_t>(e.group));
    w.u8(static_cast<std::uint8_t>(e.tensor.rank()));
    for (int d = 0; d < e.tensor.rank(); ++d) w.u32(static_cast<std::uint32_t>(e.tensor.dim(d)));
    w.bytes(e.tensor.data(), sizeof(float) * static_cast<size_t>(e.tensor.size()));
  }
  w.check(path);
}

ParamStore load_store(const std::string& path, CheckpointHeader* header) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: '" + path + "' has bad magic at byte offset 0");
  }
  CheckpointHeader h;
  h.version = r.u32();
  if (h.version != kVersion) {
    throw std::runtime_error("checkpoint: '" + path + "' has unsupported version " +
                             std::to_string(h.version) + " at byte offset 4");
  }
  h.config_hash = r.u32();
  h.master_seed = r.u64();
  const std::uint32_t count = r.u32();
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16();
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const std::uint8_t group = r.u8();
    if (group > 5) {
      throw std::runtime_error("checkpoint: bad group tag at byte offset " +
                               std::to_string(r.offset() - 1));
    }
    const std::uint8_t rank = r.u8();
    std::vector<int> shape;
    Eigen::Index total = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t dim = r.u32();
      if (dim == 0 || dim > (1u << 28)) {
        throw std::runtime_error("checkpoint: bad dimension at byte offset " +
                                 std::to_string(r.offset() - 4));
      }
      shape.push_back(static_cast<int>(dim));
      total *= dim;
    }
    Tensor t(shape);
    (void)total;
    r.bytes(t.data(), sizeof(float) * static_cast<size_t>(t.size()));
    store.add(std::move(name), static_cast<ParamGroup>(group), std::move(t));
  }
  if (!r.at_eof()) {
    throw std::runtime_error("checkpoint: trailing bytes at offset " +
                             std::to_string(r.offset()));
  }
  if (header) *header = h;
  return store;
}

void save_model(const std::string& path, const diffusion::DiffusionModel& model,
                std::uint32_t config_hash, std::uint64_t master_seed) {
  CheckpointHeader h;
  h.config_hash = config_hash;
  h.master_seed = master_seed;
  save_store(path, model.params, h);
}

diffusion::DiffusionModel load_model(const std::string& path, CheckpointHeader* header) {
  return diffusion::DiffusionModel::from_params(load_store(path, header));
}

void save_corpus(const std::string& path, const datagen::Corpus& corpus,
                 std::uint32_t config_hash) {
  ParamStore store;
  const auto& cc = corpus.config;
  {
    Tensor cfg({16});
    float* f = cfg.data();
    f[0] = static_cast<float>(cc.n_domains);
    f[1] = static_cast<float>(cc.n_ood_domains);
    f[2] = static_cast<float>(cc.members_per_domain);
    f[3] = static_cast<float>(cc.n_private);
    f[4] = static_cast<float>(cc.nonmembers_per_private);
    f[5] = static_cast<float>(cc.mia_members);
    f[6] = static_cast<float>(cc.mia_nonmembers);
    f[7] = static_cast<float>(cc.vocab_size);
    f[8] = cc.dedup_tau;
    f[9] = static_cast<float>(cc.min_domain_size);
    f[10] = static_cast<float>(cc.deform.max_shift_px);
    f[11] = cc.deform.pixel_noise_std;
    f[12] = cc.deform.brightness_jitter;
    f[13] = static_cast<float>(cc.dup.hot_count);
    f[14] = static_cast<float>(cc.dup.group_size);
    f[15] = cc.dup.dup_noise_std;
    store.add("corpus.config", ParamGroup::buffer, std::move(cfg));
  }
  {
    const int D = static_cast<int>(corpus.domains.size());
    Tensor doms({D, 12});
    for (int i = 0; i < D; ++i) {
      const auto& d = corpus.domains[static_cast<size_t>(i)];
      std::vector<float> row = {static_cast<float>(d.domain_id),
                                static_cast<float>(d.name_token)};
      push_u64(row, d.prototype_seed);
      row.push_back(static_cast<float>(d.deform.max_shift_px));
      row.push_back(d.deform.pixel_noise_std);
      row.push_back(d.deform.brightness_jitter);
      row.push_back(static_cast<float>(d.dup.hot_count));
      row.push_back(static_cast<float>(d.dup.group_size));
      row.push_back(d.dup.dup_noise_std);
      for (int j = 0; j < 12; ++j) doms[i * 12 + j] = row[static_cast<size_t>(j)];
    }
    store.add("corpus.domains", ParamGroup::buffer, std::move(doms));
  }
  auto pack_samples = [&store](const std::string& prefix, const std::vector<datagen::Sample>& ss) {
    const int N = static_cast<int>(ss.size());
    if (N == 0) return;
    Tensor images({N, datagen::kPixelDim});
    Tensor prompts({N, datagen::kPromptLen});
    Tensor meta({N, 3});
    for (int i = 0; i < N; ++i) {
      const auto& s = ss[static_cast<size_t>(i)];
      images.mat().row(i) = s.image.mat().row(0);
      for (int j = 0; j < datagen::kPromptLen; ++j) {
        prompts[i * datagen::kPromptLen + j] = static_cast<float>(s.prompt[static_cast<size_t>(j)]);
      }
      meta[i * 3 + 0] = static_cast<float>(s.domain_id);
      meta[i * 3 + 1] = s.member ? 1.0f : 0.0f;
      meta[i * 3 + 2] = static_cast<float>(s.dup_group);
    }
    store.add(prefix + ".images", ParamGroup::buffer, std::move(images));
    store.add(prefix + ".prompts", ParamGroup::buffer, std::move(prompts));
    store.add(prefix + ".meta", ParamGroup::buffer, std::move(meta));
  };
  pack_samples("corpus.members", corpus.members);
  pack_samples("corpus.nonmembers", corpus.nonmembers);
  auto pack_ids = [&store](const std::string& name, const std::vector<int>& ids) {
    if (ids.empty()) return;
    Tensor t({static_cast<int>(ids.size())});
    for (size_t i = 0; i < ids.size(); ++i) t[static_cast<Eigen::Index>(i)] = static_cast<float>(ids[i]);
    store.add(name, ParamGroup::buffer, std::move(t));
  };
  pack_ids("corpus.private_ids", corpus.private_domain_ids);
  pack_ids("corpus.public_ids", corpus.public_domain_ids);
  pack_ids("corpus.ood_ids", corpus.ood_domain_ids);
  CheckpointHeader h;
  h.config_hash = config_hash;
  h.master_seed = corpus.master_seed;
  save_store(path, store, h);
}

datagen::Corpus load_corpus(const std::string& path, CheckpointHeader* header) {
  CheckpointHeader h;
  ParamStore store = load_store(path, &h);
  datagen::Corpus corpus;
  corpus.master_seed = h.master_seed;
  const auto& cfg = store.at("corpus.config");
  if (cfg.size() != 16) throw std::runtime_error("corpus file: malformed config record");
  auto& cc = corpus.config;
  cc.n_domains = static_cast<int>(cfg[0]);
  cc.n_ood_domains = static_cast<int>(cfg[1]);
  cc.members_per_domain = static_cast<int>(cfg[2]);
  cc.n_private = static_cast<int>(cfg[3]);
  cc.nonmembers_per_private = static_cast<int>(cfg[4]);
  cc.mia_members = static_cast<int>(cfg[5]);
  cc.mia_nonmembers = static_cast<int>(cfg[6]);
  cc.vocab_size = static_cast<int>(cfg[7]);
  cc.dedup_tau = cfg[8];
  cc.min_domain_size = static_cast<int>(cfg[9]);
  cc.deform.max_shift_px = static_cast<int>(cfg[10]);
  cc.deform.pixel_noise_std = cfg[11];
  cc.deform.brightness_jitter = cfg[12];
  cc.dup.hot_count = static_cast<int>(cfg[13]);
  cc.dup.group_size = static_cast<int>(cfg[14]);
  cc.dup.dup_noise_std = cfg[15];
  corpus.vocab_size = cc.vocab_size;
  const auto& doms = store.at("corpus.domains");
  const int D = doms.dim(0);
  for (int i = 0; i < D; ++i) {
    datagen::DomainSpec d;
    const Eigen::Index base = static_cast<Eigen::Index>(i) * 12;
    d.domain_id = static_cast<int>(doms[base + 0]);
    d.name_token = static_cast<int>(doms[base + 1]);
    d.prototype_seed = pull_u64(doms, base + 2);
    d.deform.max_shift_px = static_cast<int>(doms[base + 6]);
    d.deform.pixel_noise_std = doms[base + 7];
    d.deform.brightness_jitter = doms[base + 8];
    d.dup.hot_count = static_cast<int>(doms[base + 9]);
    d.dup.group_size = static_cast<int>(doms[base + 10]);
    d.dup.dup_noise_std = doms[base + 11];
    corpus.domains.push_back(d);
  }
  auto unpack_samples = [&store](const std::string& prefix, std::vector<datagen::Sample>* out) {
    if (!store.has(prefix + ".images")) return;
    const auto& images = store.at(prefix + ".images");
    const auto& prompts = store.at(prefix + ".prompts");
    const auto& meta = store.at(prefix + ".meta");
    const int N = images.dim(0);
    for (int i = 0; i < N; ++i) {
      datagen::Sample s;
      s.image = Tensor({datagen::kPixelDim});
      s.image.mat().row(0) = images.mat().row(i);
      for (int j = 0; j < datagen::kPromptLen; ++j) {
        s.prompt.push_back(static_cast<int>(prompts[i * datagen::kPromptLen + j]));
      }
      s.domain_id = static_cast<int>(meta[i * 3 + 0]);
      s.member = meta[i * 3 + 1] != 0.0f;
      s.dup_group = static_cast<int>(meta[i * 3 + 2]);
      out->push_back(std::move(s));
    }
  };
  unpack_samples("corpus.members", &corpus.members);
  unpack_samples("corpus.nonmembers", &corpus.nonmembers);
  auto unpack_ids = [&store](const std::string& name, std::vector<int>* out) {
    if (!store.has(name)) return;
    const auto& t = store.at(name);
    for (Eigen::Index i = 0; i < t.size(); ++i) out->push_back(static_cast<int>(t[i]));
  };
  unpack_ids("corpus.private_ids", &corpus.private_domain_ids);
  unpack_ids("corpus.public_ids", &corpus.public_domain_ids);
  unpack_ids("corpus.ood_ids", &corpus.ood_domain_ids);
  if (header) *header = h;
  return corpus;
}

}  // namespace s2l::io
