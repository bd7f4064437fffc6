#pragma once

#include <cstdint>
#include <string>

#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"
#include "s2l/param_store.hpp"

namespace s2l::io {

// Binary container: magic "S2LC", u32 version, u32 config hash, u64 master
// seed, u32 record count; per record a u16 name length + UTF-8 name, u8
// group tag, u8 rank, rank x u32 dims, then raw little-endian f32 data.
inline constexpr char kMagic[4] = {'S', '2', 'L', 'C'};
inline constexpr std::uint32_t kVersion = 1;

struct CheckpointHeader {
  std::uint32_t version = kVersion;
  std::uint32_t config_hash = 0;
  std::uint64_t master_seed = 0;
};

void save_store(const std::string& path, const ParamStore& store,
                const CheckpointHeader& header);
ParamStore load_store(const std::string& path, CheckpointHeader* header = nullptr);

void save_model(const std::string& path, const diffusion::DiffusionModel& model,
                std::uint32_t config_hash, std::uint64_t master_seed);
diffusion::DiffusionModel load_model(const std::string& path,
                                     CheckpointHeader* header = nullptr);

void save_corpus(const std::string& path, const datagen::Corpus& corpus,
                 std::uint32_t config_hash);
datagen::Corpus load_corpus(const std::string& path, CheckpointHeader* header = nullptr);

}  // namespace s2l::io
