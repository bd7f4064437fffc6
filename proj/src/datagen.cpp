#include "s2l/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "s2l/metrics.hpp"

namespace s2l::datagen {

namespace {

void clamp01(Tensor& img) {
  img.array() = img.array().max(0.0f).min(1.0f);
}

std::vector<int> make_prompt(int name_token, bool face_template) {
  std::vector<int> p = face_template
                           ? std::vector<int>{tok::THE, tok::FACE, tok::OF, name_token}
                           : std::vector<int>{tok::A, tok::PHOTO, tok::OF, name_token};
  p.resize(kPromptLen, tok::PAD);
  return p;
}

Tensor shifted(const Tensor& img, int dx, int dy) {
  Tensor out({kPixelDim});
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      const int sx = x - dx;
      const int sy = y - dy;
      float v = 0.0f;
      if (sx >= 0 && sx < kImageSide && sy >= 0 && sy < kImageSide) {
        v = img[sy * kImageSide + sx];
      }
      out[y * kImageSide + x] = v;
    }
  }
  return out;
}

}  // namespace

Tensor render_blobs(const std::vector<GaussianBlob>& blobs) {
  Tensor img({kPixelDim});
  for (const auto& b : blobs) {
    const float inv2s2 = 1.0f / (2.0f * b.sigma * b.sigma);
    for (int y = 0; y < kImageSide; ++y) {
      for (int x = 0; x < kImageSide; ++x) {
        const float dx = static_cast<float>(x) - b.cx;
        const float dy = static_cast<float>(y) - b.cy;
        img[y * kImageSide + x] += b.amplitude * std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  }
  const float lo = img.array().minCoeff();
  const float hi = img.array().maxCoeff();
  if (hi - lo <= 1e-12f) {
    img.array().setConstant(0.5f);
    return img;
  }
  img.array() = (img.array() - lo) / (hi - lo);
  return img;
}

Tensor make_prototype(const DomainSpec& spec) {
  Rng rng(spec.prototype_seed);
  const int n_blobs = rng.uniform_int(3, 6);
  std::vector<GaussianBlob> blobs;
  blobs.reserve(static_cast<size_t>(n_blobs));
  for (int i = 0; i < n_blobs; ++i) {
    GaussianBlob b;
    b.cx = static_cast<float>(rng.uniform(2.0, kImageSide - 3.0));
    b.cy = static_cast<float>(rng.uniform(2.0, kImageSide - 3.0));
    b.sigma = static_cast<float>(rng.uniform(1.5, 3.5));
    // Signed amplitudes keep the min-max-normalised background interior, so
    // per-sample pixel noise is not clipped away at 0.
    b.amplitude = static_cast<float>(rng.uniform(0.4, 1.0)) *
                  (rng.uniform() < 0.5 ? -1.0f : 1.0f);
    blobs.push_back(b);
  }
  return render_blobs(blobs);
}

std::vector<Sample> sample_domain(const DomainSpec& spec, int n, std::uint64_t seed,
                                  bool member) {
  if (n < 0) throw std::invalid_argument("sample_domain: negative count");
  if (spec.dup.group_size < 1) {
    throw std::invalid_argument("sample_domain: dup group_size must be >= 1");
  }
  if (spec.dup.dup_noise_std >= spec.deform.pixel_noise_std) {
    throw std::invalid_argument(
        "sample_domain: dup_noise_std must be below pixel_noise_std");
  }
  std::vector<Sample> out;
  if (n == 0) return out;

  const int dup_extra = spec.dup.hot_count * (spec.dup.group_size - 1);
  const int n_base = n - dup_extra;
  if (n_base < spec.dup.hot_count) {
    throw std::invalid_argument("sample_domain: dup policy needs more samples than " +
                                std::to_string(n));
  }
  const Tensor proto = make_prototype(spec);
  Rng rng = Rng::stream(seed, member ? "samples.member" : "samples.nonmember",
                        static_cast<std::uint64_t>(spec.domain_id));
  out.reserve(static_cast<size_t>(n));
  int next_group = 0;
  for (int i = 0; i < n_base; ++i) {
    Sample s;
    const int dx = rng.uniform_int(-spec.deform.max_shift_px, spec.deform.max_shift_px);
    const int dy = rng.uniform_int(-spec.deform.max_shift_px, spec.deform.max_shift_px);
    s.image = shifted(proto, dx, dy);
    const float bright =
        1.0f + static_cast<float>(rng.uniform(-spec.deform.brightness_jitter,
                                              spec.deform.brightness_jitter));
    s.image.array() *= bright;
    for (Eigen::Index px = 0; px < s.image.size(); ++px) {
      s.image[px] += static_cast<float>(rng.normal()) * spec.deform.pixel_noise_std;
    }
    clamp01(s.image);
    s.prompt = make_prompt(spec.name_token, rng.uniform() < 0.7);
    s.domain_id = spec.domain_id;
    s.member = member;
    const bool hot = i < spec.dup.hot_count;
    s.dup_group = hot ? next_group++ : -1;
    out.push_back(std::move(s));
  }
  // Near-copies of each hot base, appended so the requested count holds.
  for (int h = 0; h < spec.dup.hot_count; ++h) {
    const Sample& base = out[static_cast<size_t>(h)];
    for (int c = 1; c < spec.dup.group_size; ++c) {
      Sample s = base;
      for (Eigen::Index px = 0; px < s.image.size(); ++px) {
        s.image[px] += static_cast<float>(rng.normal()) * spec.dup.dup_noise_std;
      }
      clamp01(s.image);
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<Sample> dedup(const std::vector<Sample>& candidates,
                          const std::vector<Sample>& reference, double tau) {
  if (tau <= 0.0) throw std::invalid_argument("dedup: tau must be positive");
  std::vector<Sample> kept;
  kept.reserve(candidates.size());
  for (const auto& c : candidates) {
    bool close = false;
    for (const auto& r : reference) {
      if (metrics::l2_distance(c.image, r.image) <= tau) {
        close = true;
        break;
      }
    }
    if (!close) kept.push_back(c);
  }
  return kept;
}

const DomainSpec& Corpus::domain(int id) const {
  for (const auto& d : domains) {
    if (d.domain_id == id) return d;
  }
  throw std::invalid_argument("corpus: unknown domain id " + std::to_string(id));
}

bool Corpus::is_private(int id) const {
  return std::find(private_domain_ids.begin(), private_domain_ids.end(), id) !=
         private_domain_ids.end();
}

std::vector<const Sample*> Corpus::domain_members(int id) const {
  std::vector<const Sample*> v;
  for (const auto& s : members) {
    if (s.domain_id == id) v.push_back(&s);
  }
  return v;
}

std::vector<const Sample*> Corpus::domain_nonmembers(int id) const {
  std::vector<const Sample*> v;
  for (const auto& s : nonmembers) {
    if (s.domain_id == id) v.push_back(&s);
  }
  return v;
}

std::vector<const Sample*> Corpus::mia_test_set(int domain_id) const {
  auto mem = domain_members(domain_id);
  auto non = domain_nonmembers(domain_id);
  if (static_cast<int>(mem.size()) < config.mia_members ||
      static_cast<int>(non.size()) < config.mia_nonmembers) {
    throw std::runtime_error("corpus: domain " + std::to_string(domain_id) +
                             " lacks samples for a balanced MIA test set (" +
                             std::to_string(mem.size()) + " members, " +
                             std::to_string(non.size()) + " nonmembers)");
  }
  // Deterministic subset from the corpus master stream.
  Rng rng = Rng::stream(master_seed, "az", static_cast<std::uint64_t>(domain_id));
  auto pick = [&rng](std::vector<const Sample*>& pool, int count) {
    for (int i = 0; i < count; ++i) {
      const int j = i + rng.uniform_int(0, static_cast<int>(pool.size()) - 1 - i);
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
    }
    pool.resize(static_cast<size_t>(count));
  };
  pick(mem, config.mia_members);
  pick(non, config.mia_nonmembers);
  mem.insert(mem.end(), non.begin(), non.end());
  return mem;
}

std::vector<int> Corpus::attack_prompt(int domain_id) const {
  std::vector<int> p = {tok::THE, tok::FACE, tok::OF, domain(domain_id).name_token};
  p.resize(kPromptLen, tok::PAD);
  return p;
}

Tensor Corpus::prototype(int domain_id) const { return make_prototype(domain(domain_id)); }

Corpus build_corpus(const CorpusConfig& config, std::uint64_t master_seed) {
  if (config.n_private > config.n_domains) {
    throw std::invalid_argument("build_corpus: more private domains than domains");
  }
  if (config.members_per_domain < config.min_domain_size) {
    throw std::invalid_argument("build_corpus: members_per_domain below min_domain_size");
  }
  const int total_domains = config.n_domains + config.n_ood_domains;
  if (tok::FIRST_NAME + total_domains > config.vocab_size) {
    throw std::invalid_argument("build_corpus: vocabulary too small for " +
                                std::to_string(total_domains) + " domains");
  }
  Corpus corpus;
  corpus.config = config;
  corpus.master_seed = master_seed;
  corpus.vocab_size = config.vocab_size;

  for (int d = 0; d < total_domains; ++d) {
    DomainSpec spec;
    spec.domain_id = d;
    spec.name_token = tok::FIRST_NAME + d;
    spec.prototype_seed = Rng::stream(master_seed, "proto", static_cast<std::uint64_t>(d)).next_u64();
    spec.deform = config.deform;
    spec.dup = config.dup;
    corpus.domains.push_back(spec);
  }
  // First n_private pretraining domains are the private targets.
  for (int d = 0; d < config.n_domains; ++d) {
    if (d < config.n_private) {
      corpus.private_domain_ids.push_back(d);
    } else {
      corpus.public_domain_ids.push_back(d);
    }
  }
  for (int d = config.n_domains; d < total_domains; ++d) {
    corpus.ood_domain_ids.push_back(d);
  }

  for (int d = 0; d < config.n_domains; ++d) {
    auto ms = sample_domain(corpus.domains[static_cast<size_t>(d)],
                            config.members_per_domain, master_seed, true);
    corpus.members.insert(corpus.members.end(), ms.begin(), ms.end());
  }

  // Per-domain nonmember pools from disjoint seed streams, deduped against
  // the domain members and refilled on shortfall.
  for (int d : corpus.private_domain_ids) {
    if (config.nonmembers_per_private <= 0) continue;
    const auto mem_ptrs = corpus.domain_members(d);
    std::vector<Sample> mem_copy;
    mem_copy.reserve(mem_ptrs.size());
    for (const auto* p : mem_ptrs) mem_copy.push_back(*p);
    DomainSpec spec = corpus.domain(d);
    spec.dup.hot_count = 0;  // nonmembers carry no planted duplicates
    std::vector<Sample> pool;
    std::uint64_t round = 0;
    while (static_cast<int>(pool.size()) < config.nonmembers_per_private) {
      const int need = config.nonmembers_per_private - static_cast<int>(pool.size());
      const std::uint64_t seed =
          Rng::stream(master_seed, "nonmember", static_cast<std::uint64_t>(d) * 1000 + round)
              .next_u64();
      auto fresh = sample_domain(spec, need + 8, seed, false);
      fresh = dedup(fresh, mem_copy, config.dedup_tau);
      for (auto& s : fresh) {
        if (static_cast<int>(pool.size()) >= config.nonmembers_per_private) break;
        pool.push_back(std::move(s));
      }
      if (++round > 64) {
        throw std::runtime_error("build_corpus: cannot fill nonmember pool for domain " +
                                 std::to_string(d));
      }
    }
    corpus.nonmembers.insert(corpus.nonmembers.end(), pool.begin(), pool.end());
  }
  return corpus;
}

const char* finetune_set_name(FinetuneSetKind k) {
  switch (k) {
    case FinetuneSetKind::OoD: return "ood";
    case FinetuneSetKind::INM: return "inm";
    case FinetuneSetKind::SPPlaceholder: return "sp";
    case FinetuneSetKind::Private: return "private";
  }
  return "?";
}

FinetuneSetKind finetune_set_from_name(const std::string& s) {
  if (s == "ood") return FinetuneSetKind::OoD;
  if (s == "inm") return FinetuneSetKind::INM;
  if (s == "sp") return FinetuneSetKind::SPPlaceholder;
  if (s == "private") return FinetuneSetKind::Private;
  throw std::invalid_argument("unknown fine-tune set kind '" + s + "'");
}

std::vector<Sample> build_finetune_set(const Corpus& corpus, FinetuneSetKind kind,
                                       int domain_id, int n, std::uint64_t seed) {
  switch (kind) {
    case FinetuneSetKind::SPPlaceholder:
      return {};  // generated by the attack, not by the corpus
    case FinetuneSetKind::OoD: {
      if (corpus.ood_domain_ids.empty()) {
        throw std::invalid_argument("build_finetune_set: corpus has no OoD domains");
      }
      std::vector<Sample> out;
      Rng rng = Rng::stream(seed, "ood_mix");
      int i = 0;
      while (static_cast<int>(out.size()) < n) {
        const int d = corpus.ood_domain_ids[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int>(corpus.ood_domain_ids.size()) - 1))];
        DomainSpec spec = corpus.domain(d);
        spec.dup.hot_count = 0;
        auto batch = sample_domain(spec, 1,
                                   Rng::stream(seed, "ood", static_cast<std::uint64_t>(i)).next_u64(),
                                   false);
        out.push_back(std::move(batch[0]));
        ++i;
      }
      return out;
    }
    case FinetuneSetKind::INM: {
      const auto mem_ptrs = corpus.domain_members(domain_id);
      if (mem_ptrs.empty()) {
        throw std::invalid_argument("build_finetune_set: unknown domain " +
                                    std::to_string(domain_id));
      }
      std::vector<Sample> mem_copy;
      for (const auto* p : mem_ptrs) mem_copy.push_back(*p);
      DomainSpec spec = corpus.domain(domain_id);
      spec.dup.hot_count = 0;
      std::vector<Sample> out;
      std::uint64_t round = 0;
      while (static_cast<int>(out.size()) < n) {
        const std::uint64_t s =
            Rng::stream(seed, "inm", static_cast<std::uint64_t>(domain_id) * 1000 + round)
                .next_u64();
        auto fresh = sample_domain(spec, n - static_cast<int>(out.size()) + 8, s, false);
        fresh = dedup(fresh, mem_copy, corpus.config.dedup_tau);
        for (auto& f : fresh) {
          if (static_cast<int>(out.size()) >= n) break;
          out.push_back(std::move(f));
        }
        if (++round > 64) {
          throw std::runtime_error("build_finetune_set: INM refill stalled");
        }
      }
      return out;
    }
    case FinetuneSetKind::Private: {
      auto mem = corpus.domain_members(domain_id);
      if (n > static_cast<int>(mem.size())) {
        throw std::invalid_argument("build_finetune_set: requested " + std::to_string(n) +
                                    " private samples but domain " +
                                    std::to_string(domain_id) + " has " +
                                    std::to_string(mem.size()));
      }
      Rng rng = Rng::stream(seed, "private", static_cast<std::uint64_t>(domain_id));
      for (int i = 0; i < n; ++i) {
        const int j = i + rng.uniform_int(0, static_cast<int>(mem.size()) - 1 - i);
        std::swap(mem[static_cast<size_t>(i)], mem[static_cast<size_t>(j)]);
      }
      std::vector<Sample> out;
      out.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) out.push_back(*mem[static_cast<size_t>(i)]);
      return out;
    }
  }
  throw std::logic_error("build_finetune_set: unreachable");
}

}  // namespace s2l::datagen
