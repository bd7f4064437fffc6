#include <doctest.h>

#include <cmath>

#include "fd_check.hpp"
#include "s2l/autodiff.hpp"
#include "s2l/param_store.hpp"
#include "s2l/rng.hpp"
#include "s2l/tensor.hpp"

using namespace s2l;

namespace {

TensorT<double> random_tensor(std::vector<int> shape, std::uint64_t seed,
                              double stddev = 0.7) {
  TensorT<double> t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data(), t.size(), 0.0, stddev);
  return t;
}

}  // namespace

TEST_CASE("rng: streams are deterministic and label-separated") {
  Rng a = Rng::stream(42, "alpha", 3);
  Rng b = Rng::stream(42, "alpha", 3);
  Rng c = Rng::stream(42, "beta", 3);
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
  }
}

TEST_CASE("rng: disjoint streams are statistically independent") {
  const int n = 100000;
  Rng a = Rng::stream(9, "corr", 0);
  Rng b = Rng::stream(9, "corr", 1);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.normal();
    const double y = b.normal();
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - (sa / n) * (sa / n)) *
                                      (sbb / n - (sb / n) * (sb / n)));
  CHECK(std::abs(corr) < 0.02);
}

TEST_CASE("tensor: shape validation and reshape") {
  CHECK_THROWS_AS(Tensor({2, 0}), std::invalid_argument);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK_THROWS_AS(t.reshaped({4}), std::invalid_argument);
  auto r = t.reshaped({3, 2});
  CHECK(r.dim(0) == 3);
}

TEST_CASE("matmul: identity leaves a matrix unchanged") {
  TensorT<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye[i * 3 + i] = 1.0;
  auto a = random_tensor({3, 4}, 11);
  auto out = matmul(constant(eye), constant(a));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    CHECK(out->value[i] == doctest::Approx(a[i]));
  }
}

TEST_CASE("matmul: incompatible shapes are rejected with op name") {
  auto a = constant(random_tensor({2, 3}, 1));
  auto b = constant(random_tensor({4, 2}, 2));
  CHECK_THROWS_WITH_AS(matmul(a, b),
                       doctest::Contains("matmul"), std::invalid_argument);
}

TEST_CASE("softmax: uniform logits give uniform probabilities") {
  auto x = constant(TensorT<double>::zeros({1, 3}));
  auto s = softmax_last(x);
  for (int i = 0; i < 3; ++i) {
    CHECK(s->value[i] == doctest::Approx(1.0 / 3.0));
  }
}

TEST_CASE("attention: a single key/value pair returns that value row") {
  // softmax over one logit is 1 regardless of the query.
  auto q = constant(random_tensor({2, 1, 4}, 21));
  auto k = constant(random_tensor({2, 1, 4}, 22));
  auto v = constant(random_tensor({2, 1, 5}, 23));
  auto out = attention(q, k, v);
  for (Eigen::Index i = 0; i < v->value.size(); ++i) {
    CHECK(out->value[i] == doctest::Approx(v->value[i]));
  }
}

TEST_CASE("finite differences: every primitive") {
  // >= 50 randomized trials across the primitive set; each trial checks a
  // batch of coordinates.
  int trials = 0;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 4; ++s) {
    {
      auto params = fd::random_store({{"a", ParamGroup::denoiser, {3, 4}},
                                      {"b", ParamGroup::denoiser, {4, 2}}},
                                     100 + s);
      auto rep = fd::check_gradients(
          params,
          [](const fd::DBound& p) {
            return sse(matmul(p["a"], p["b"]),
                       constant(TensorT<double>::zeros({3, 2})));
          },
          1e-3, 24, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"a", ParamGroup::denoiser, {2, 5}},
                                      {"b", ParamGroup::denoiser, {2, 5}}},
                                     200 + s);
      auto rep = fd::check_gradients(
          params,
          [](const fd::DBound& p) {
            auto prod = mul(p["a"], p["b"]);
            auto summ = add(prod, scale(p["a"], 0.5));
            return mse(summ, constant(TensorT<double>::full({2, 5}, 0.3)));
          },
          1e-3, 20, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"x", ParamGroup::denoiser, {3, 4}},
                                      {"w", ParamGroup::denoiser, {4, 6}},
                                      {"b", ParamGroup::denoiser, {6}}},
                                     300 + s);
      auto rep = fd::check_gradients(
          params,
          [](const fd::DBound& p) {
            auto y = gelu(affine(p["x"], p["w"], p["b"]));
            return mse(y, constant(TensorT<double>::zeros({3, 6})));
          },
          1e-3, 20, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"x", ParamGroup::denoiser, {4, 5}}}, 400 + s);
      auto rep = fd::check_gradients(
          params,
          [](const fd::DBound& p) {
            auto y = softmax_last(tanh_act(p["x"]));
            return sse(y, constant(TensorT<double>::full({4, 5}, 0.2)));
          },
          1e-3, 20, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"q", ParamGroup::denoiser, {2, 3, 4}},
                                      {"k", ParamGroup::denoiser, {2, 5, 4}},
                                      {"v", ParamGroup::denoiser, {2, 5, 3}}},
                                     500 + s);
      auto rep = fd::check_gradients(
          params,
          [](const fd::DBound& p) {
            return mse(attention(p["q"], p["k"], p["v"]),
                       constant(TensorT<double>::zeros({2, 3, 3})));
          },
          1e-3, 16, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"table", ParamGroup::embedding, {7, 4}}}, 600 + s);
      std::vector<int> ids = {0, 3, 6, 3, 1, 2};
      auto rep = fd::check_gradients(
          params,
          [ids](const fd::DBound& p) {
            auto e = embedding(p["table"], ids, {2, 3});
            auto m = mean_axis(e, 1);
            return sse(m, constant(TensorT<double>::full({2, 4}, 0.1)));
          },
          1e-3, 28, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
    {
      auto params = fd::random_store({{"a", ParamGroup::denoiser, {3, 2}},
                                      {"b", ParamGroup::denoiser, {3, 4}}},
                                     700 + s);
      std::vector<double> coeff = {0.5, -1.25, 2.0};
      auto rep = fd::check_gradients(
          params,
          [coeff](const fd::DBound& p) {
            auto c = concat_last(p["a"], p["b"]);
            auto r = row_scale(c, coeff);
            return mse(reshape(r, {2, 9}), constant(TensorT<double>::zeros({2, 9})));
          },
          1e-3, 18, s);
      worst = std::max(worst, rep.max_rel_err);
      ++trials;
    }
  }
  CHECK(trials * 12 >= 50);  // coordinate checks far exceed 50 trials
  CHECK(worst < 1e-3);
}

TEST_CASE("finite differences: two-layer network") {
  auto params = fd::random_store({{"w1", ParamGroup::denoiser, {6, 8}},
                                  {"b1", ParamGroup::denoiser, {8}},
                                  {"w2", ParamGroup::denoiser, {8, 3}},
                                  {"b2", ParamGroup::denoiser, {3}}},
                                 999);
  auto x = random_tensor({5, 6}, 1000);
  auto target = random_tensor({5, 3}, 1001, 0.3);
  auto rep = fd::check_gradients(
      params,
      [&](const fd::DBound& p) {
        auto h = gelu(affine(constant(x), p["w1"], p["b1"]));
        return mse(affine(h, p["w2"], p["b2"]), constant(target));
      },
      1e-3, 16);
  CHECK(rep.max_rel_err < 1e-3);
}

TEST_CASE("gradient: analytic identity for ||p||^2 / 2") {
  ParamStoreT<double> params;
  params.add("p", ParamGroup::denoiser, random_tensor({4, 3}, 5));
  auto grads = gradient<double>(params, [](const BoundParamsT<double>& p) {
    return scale(sse(p["p"], constant(TensorT<double>::zeros({4, 3}))), 0.5);
  });
  for (Eigen::Index i = 0; i < grads.at("p").size(); ++i) {
    CHECK(grads.at("p")[i] == doctest::Approx(params.at("p")[i]));
  }
}

TEST_CASE("gradient: constant loss gives exact zeros") {
  ParamStoreT<double> params;
  params.add("p", ParamGroup::denoiser, random_tensor({3}, 6));
  auto grads = gradient<double>(params, [](const BoundParamsT<double>&) {
    return constant(TensorT<double>::full({1}, 2.5));
  });
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(grads.at("p")[i] == 0.0);
}

TEST_CASE("gradient: non-scalar loss is rejected") {
  ParamStoreT<double> params;
  params.add("p", ParamGroup::denoiser, random_tensor({3}, 7));
  CHECK_THROWS_AS(gradient<double>(params,
                                   [](const BoundParamsT<double>& p) {
                                     return scale(p["p"], 2.0);
                                   }),
                  std::invalid_argument);
}

TEST_CASE("gradient: masked entries get exact zeros") {
  ParamStoreT<double> params;
  params.add("a", ParamGroup::denoiser, random_tensor({2, 2}, 8));
  params.add("b", ParamGroup::denoiser, random_tensor({2, 2}, 9));
  auto mask = zero_mask_like(params);
  mask.at("a").array().setConstant(1.0);
  auto grads = gradient<double>(
      params,
      [](const BoundParamsT<double>& p) {
        return sse(add(p["a"], p["b"]), constant(TensorT<double>::zeros({2, 2})));
      },
      &mask);
  bool a_nonzero = false;
  for (Eigen::Index i = 0; i < 4; ++i) {
    a_nonzero = a_nonzero || grads.at("a")[i] != 0.0;
    CHECK(grads.at("b")[i] == 0.0);
  }
  CHECK(a_nonzero);
}

TEST_CASE("param store: flatten/unflatten is a bijection") {
  ParamStore p;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    Tensor t({2 + i, 3});
    rng.fill_normal(t.data(), t.size());
    p.add("t" + std::to_string(i),
          static_cast<ParamGroup>(i % 4), std::move(t));
  }
  const GroupSet all = {ParamGroup::embedding, ParamGroup::text_encoder,
                        ParamGroup::denoiser, ParamGroup::autoencoder};
  for (const auto& groups :
       {all, GroupSet{ParamGroup::embedding},
        GroupSet{ParamGroup::text_encoder, ParamGroup::autoencoder}}) {
    auto [flat, layout] = p.flatten(groups);
    ParamStore q = p;
    for (const auto& item : layout.items) q.at(item.name).array().setZero();
    q.unflatten(flat, layout);
    CHECK(q.bit_equal(p));
  }
  CHECK_THROWS_AS(p.flatten({}), std::invalid_argument);
}

TEST_CASE("param store: two 2x2 tensors flatten to length 8") {
  ParamStore p;
  p.add("a", ParamGroup::denoiser, Tensor({2, 2}));
  p.add("b", ParamGroup::denoiser, Tensor({2, 2}));
  auto [flat, layout] = p.flatten({ParamGroup::denoiser});
  CHECK(flat.size() == 8);
  CHECK(layout.total == 8);
}

TEST_CASE("param store: adapter group with no adapters flattens empty") {
  ParamStore p;
  p.add("a", ParamGroup::denoiser, Tensor({2, 2}));
  auto [flat, layout] = p.flatten({ParamGroup::adapter});
  CHECK(flat.empty());
  CHECK(layout.total == 0);
}

TEST_CASE("perturb: eps=0 is bit-identical, same seed reproduces") {
  ParamStore p;
  Rng rng(4);
  Tensor t({50, 40});
  rng.fill_normal(t.data(), t.size());
  p.add("w", ParamGroup::denoiser, std::move(t));
  const GroupSet g = {ParamGroup::denoiser};
  CHECK(p.perturbed(g, 0.0, 123).bit_equal(p));
  auto a = p.perturbed(g, 1e-3, 123);
  auto b = p.perturbed(g, 1e-3, 123);
  CHECK(a.bit_equal(b));
  CHECK_FALSE(a.bit_equal(p));
  CHECK_THROWS_AS(p.perturbed(g, -1e-3, 123), std::invalid_argument);
}

TEST_CASE("perturb: sample statistics match the requested scale") {
  // eps = 8e-4 over >= 1e5 scalars: the mean stays within 3 eps/sqrt(n) of 0
  // and the sample std within 2% of eps.
  ParamStore p;
  const int n = 400 * 300;  // 120000 scalars
  p.add("w", ParamGroup::denoiser, Tensor({400, 300}));
  const double eps = 8e-4;
  auto q = p.perturbed({ParamGroup::denoiser}, eps, 77);
  double sum = 0.0, sq = 0.0;
  for (Eigen::Index i = 0; i < q.at("w").size(); ++i) {
    sum += q.at("w")[i];
    sq += static_cast<double>(q.at("w")[i]) * q.at("w")[i];
  }
  const double mean = sum / n;
  const double stddev = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(mean) < 3.0 * eps / std::sqrt(static_cast<double>(n)));
  CHECK(stddev == doctest::Approx(eps).epsilon(0.02));
}

TEST_CASE("perturb: disjoint seeds decorrelate") {
  ParamStore p;
  p.add("w", ParamGroup::denoiser, Tensor({400, 300}));
  auto a = p.perturbed({ParamGroup::denoiser}, 1.0, 1001);
  auto b = p.perturbed({ParamGroup::denoiser}, 1.0, 1002);
  double sab = 0, saa = 0, sbb = 0;
  for (Eigen::Index i = 0; i < a.at("w").size(); ++i) {
    sab += static_cast<double>(a.at("w")[i]) * b.at("w")[i];
    saa += static_cast<double>(a.at("w")[i]) * a.at("w")[i];
    sbb += static_cast<double>(b.at("w")[i]) * b.at("w")[i];
  }
  CHECK(std::abs(sab / std::sqrt(saa * sbb)) < 0.02);
}
