#pragma once

#include <cstdint>

#include "s2l/datagen.hpp"
#include "s2l/diffusion.hpp"

namespace s2l::metrics {

/// Prototype-fidelity utility: generates images for random pretraining
/// prompts and returns the fraction whose nearest domain prototype (under
/// the normalised l2) is the prompted domain. Chance level is one over the
/// number of pretraining domains.
double utility_fidelity(const diffusion::DiffusionModel& model,
                        const datagen::Corpus& corpus, int n_prompts,
                        std::uint64_t seed, int gen_steps);

}  // namespace s2l::metrics
