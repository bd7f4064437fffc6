#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "s2l/rng.hpp"
#include "s2l/tensor.hpp"

namespace s2l::datagen {

// Fixed vocabulary layout: special tokens, then one name token per domain,
// then free slots for textual-inversion placeholders.
namespace tok {
inline constexpr int PAD = 0;
inline constexpr int THE = 1;
inline constexpr int A = 2;
inline constexpr int PHOTO = 3;
inline constexpr int FACE = 4;
inline constexpr int OF = 5;
inline constexpr int NOT = 6;
inline constexpr int M = 7;
inline constexpr int FIRST_NAME = 8;
}  // namespace tok

inline constexpr int kImageSide = 16;
inline constexpr int kPixelDim = kImageSide * kImageSide;
inline constexpr int kPromptLen = 6;  // stored corpus prompts, PAD-padded

struct DeformPolicy {
  int max_shift_px = 2;
  float pixel_noise_std = 0.09f;
  float brightness_jitter = 0.15f;
};

struct DupPolicy {
  int hot_count = 3;       // samples replicated into near-duplicate groups
  int group_size = 6;      // copies per group (1 = no duplication effect)
  float dup_noise_std = 0.01f;
};

struct DomainSpec {
  int domain_id = 0;
  int name_token = tok::FIRST_NAME;
  std::uint64_t prototype_seed = 0;
  DeformPolicy deform;
  DupPolicy dup;
};

struct Sample {
  Tensor image;             // kPixelDim values in [0,1]
  std::vector<int> prompt;  // kPromptLen ids, PAD-padded
  int domain_id = 0;
  bool member = false;
  int dup_group = -1;  // shared id within a planted near-duplicate group
};

struct GaussianBlob {
  float cx, cy, sigma, amplitude;
};

struct CorpusConfig {
  int n_domains = 32;          // pretraining domains
  int n_ood_domains = 4;       // held out of pretraining entirely
  int members_per_domain = 256;
  int n_private = 8;
  int nonmembers_per_private = 256;  // per-domain nonmember pool
  int mia_members = 128;             // balanced A_z halves
  int mia_nonmembers = 128;
  int vocab_size = 64;
  float dedup_tau = 0.05f;
  int min_domain_size = 256;
  DeformPolicy deform;
  DupPolicy dup;
};

struct Corpus {
  CorpusConfig config;
  std::uint64_t master_seed = 0;
  std::vector<DomainSpec> domains;  // pretraining then OoD, by domain_id
  std::vector<Sample> members;
  std::vector<Sample> nonmembers;  // pools for the private domains
  std::vector<int> private_domain_ids;
  std::vector<int> public_domain_ids;
  std::vector<int> ood_domain_ids;
  int vocab_size = 64;

  const DomainSpec& domain(int id) const;
  bool is_private(int id) const;
  std::vector<const Sample*> domain_members(int id) const;
  std::vector<const Sample*> domain_nonmembers(int id) const;
  /// Balanced per-domain MIA test set A_z (members first).
  std::vector<const Sample*> mia_test_set(int domain_id) const;
  /// Canonical attack prompt p_z = [THE, FACE, OF, name], PAD-padded.
  std::vector<int> attack_prompt(int domain_id) const;
  Tensor prototype(int domain_id) const;
};

/// Renders a blob list onto the 16x16 grid, min-max normalised to [0,1].
/// A degenerate all-zero field falls back to a uniform 0.5 image.
Tensor render_blobs(const std::vector<GaussianBlob>& blobs);

/// 3-6 seeded blobs; a pure function of spec.prototype_seed.
Tensor make_prototype(const DomainSpec& spec);

/// Prototype deformed by integer shift, brightness jitter and iid pixel
/// noise, clamped to [0,1]; prompts follow the two fixed templates with
/// probability 0.7 / 0.3; the dup policy plants near-duplicate groups.
std::vector<Sample> sample_domain(const DomainSpec& spec, int n, std::uint64_t seed,
                                  bool member);

/// Keeps candidates whose nearest reference is farther than tau; order
/// preserved.
std::vector<Sample> dedup(const std::vector<Sample>& candidates,
                          const std::vector<Sample>& reference, double tau);

Corpus build_corpus(const CorpusConfig& config, std::uint64_t master_seed);

enum class FinetuneSetKind { OoD, INM, SPPlaceholder, Private };

const char* finetune_set_name(FinetuneSetKind k);
FinetuneSetKind finetune_set_from_name(const std::string& s);

/// OoD: samples from domains excluded from pretraining. INM: fresh
/// target-domain draws deduped against the member set. Private: an actual
/// member subset. The SP placeholder returns empty; attacks fill it by
/// generation.
std::vector<Sample> build_finetune_set(const Corpus& corpus, FinetuneSetKind kind,
                                       int domain_id, int n, std::uint64_t seed);

}  // namespace s2l::datagen
