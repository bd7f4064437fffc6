#include "s2l/utility.hpp"

#include "s2l/metrics.hpp"
#include "s2l/rng.hpp"

namespace s2l::metrics {

double utility_fidelity(const diffusion::DiffusionModel& model,
                        const datagen::Corpus& corpus, int n_prompts,
                        std::uint64_t seed, int gen_steps) {
  if (n_prompts <= 0) return 0.0;
  const int n_domains = corpus.config.n_domains;
  std::vector<Tensor> prototypes;
  prototypes.reserve(static_cast<size_t>(n_domains));
  for (int d = 0; d < n_domains; ++d) prototypes.push_back(corpus.prototype(d));

  Rng rng = Rng::stream(seed, "utility.prompts");
  std::vector<std::vector<int>> prompts;
  std::vector<int> wanted;
  for (int i = 0; i < n_prompts; ++i) {
    const int d = rng.uniform_int(0, n_domains - 1);
    wanted.push_back(d);
    const int name = corpus.domain(d).name_token;
    prompts.push_back(rng.uniform() < 0.7
                          ? std::vector<int>{datagen::tok::THE, datagen::tok::FACE,
                                             datagen::tok::OF, name}
                          : std::vector<int>{datagen::tok::A, datagen::tok::PHOTO,
                                             datagen::tok::OF, name});
  }
  auto m = model;  // runtime binds mutable leaves
  diffusion::ModelRuntime rt(m);
  Tensor images = rt.generate_batch(prompts, seed, "utility.gen", 0, gen_steps);
  int hits = 0;
  for (int i = 0; i < n_prompts; ++i) {
    Tensor img({model.config.pixel_dim});
    img.mat().row(0) = images.mat().row(i);
    int best = -1;
    double best_d = 0.0;
    for (int d = 0; d < n_domains; ++d) {
      const double dist = l2_distance(img, prototypes[static_cast<size_t>(d)]);
      if (best < 0 || dist < best_d) {
        best = d;
        best_d = dist;
      }
    }
    if (best == wanted[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n_prompts);
}

}  // namespace s2l::metrics
