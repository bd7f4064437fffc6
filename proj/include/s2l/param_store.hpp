#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2l/autodiff.hpp"
#include "s2l/rng.hpp"
#include "s2l/tensor.hpp"

namespace s2l {

enum class ParamGroup : std::uint8_t {
  embedding = 0,
  text_encoder = 1,
  denoiser = 2,
  autoencoder = 3,
  adapter = 4,
  buffer = 5,  // non-trainable state (schedules, serialized metadata)
};

inline const char* group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::embedding: return "embedding";
    case ParamGroup::text_encoder: return "text_encoder";
    case ParamGroup::denoiser: return "denoiser";
    case ParamGroup::autoencoder: return "autoencoder";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::buffer: return "buffer";
  }
  return "?";
}

inline ParamGroup group_from_name(const std::string& s) {
  for (int g = 0; g <= 5; ++g) {
    if (s == group_name(static_cast<ParamGroup>(g))) return static_cast<ParamGroup>(g);
  }
  throw std::invalid_argument("unknown parameter group '" + s + "'");
}

using GroupSet = std::set<ParamGroup>;

/// Named, group-tagged tensors with deterministic (insertion) order.
template <typename Scalar>
class ParamStoreT {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    TensorT<Scalar> tensor;
  };

  /// Layout descriptor produced by flatten(); permits an exact inverse.
  struct Layout {
    struct Item {
      std::string name;
      std::int64_t offset;
      std::int64_t length;
    };
    std::vector<Item> items;
    std::int64_t total = 0;
  };

  void add(std::string name, ParamGroup group, TensorT<Scalar> tensor) {
    if (index_.count(name)) {
      throw std::invalid_argument("param store: duplicate name '" + name + "'");
    }
    index_[name] = entries_.size();
    entries_.push_back({std::move(name), group, std::move(tensor)});
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const TensorT<Scalar>& at(const std::string& name) const {
    return entries_[find(name)].tensor;
  }
  TensorT<Scalar>& at(const std::string& name) { return entries_[find(name)].tensor; }

  ParamGroup group_of(const std::string& name) const {
    return entries_[find(name)].group;
  }

  size_t size() const { return entries_.size(); }
  const Entry& entry(size_t i) const { return entries_[i]; }
  Entry& entry(size_t i) { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::int64_t scalar_count(const GroupSet& groups) const {
    std::int64_t n = 0;
    for (const auto& e : entries_) {
      if (groups.count(e.group)) n += e.tensor.size();
    }
    return n;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  /// Concatenates the selected groups in insertion order into one flat
  /// vector with a layout descriptor that permits an exact inverse.
  std::pair<std::vector<Scalar>, Layout> flatten(const GroupSet& groups) const {
    if (groups.empty()) {
      throw std::invalid_argument("flatten: empty group set");
    }
    Layout layout;
    std::int64_t total = 0;
    for (const auto& e : entries_) {
      if (!groups.count(e.group)) continue;
      layout.items.push_back({e.name, total, e.tensor.size()});
      total += e.tensor.size();
    }
    layout.total = total;
    std::vector<Scalar> flat(static_cast<size_t>(total));
    for (const auto& it : layout.items) {
      const auto& t = at(it.name);
      std::copy(t.data(), t.data() + it.length, flat.data() + it.offset);
    }
    return {std::move(flat), layout};
  }

  /// Writes a flat vector back through a layout descriptor.
  void unflatten(const std::vector<Scalar>& flat, const Layout& layout) {
    if (static_cast<std::int64_t>(flat.size()) != layout.total) {
      throw std::invalid_argument("unflatten: flat length " +
                                  std::to_string(flat.size()) +
                                  " does not match layout total " +
                                  std::to_string(layout.total));
    }
    for (const auto& it : layout.items) {
      auto& t = at(it.name);
      std::copy(flat.data() + it.offset, flat.data() + it.offset + it.length, t.data());
    }
  }

  /// Adds independent N(0, eps^2) draws to every scalar in the selected
  /// groups. Identical (store, groups, eps, seed) gives identical output.
  ParamStoreT perturbed(const GroupSet& groups, double eps, std::uint64_t master_seed,
                        std::string_view label = "perturb") const {
    if (eps < 0.0) {
      throw std::invalid_argument("perturb: negative standard deviation");
    }
    ParamStoreT out = *this;
    if (eps == 0.0) return out;
    std::uint64_t entry_index = 0;
    for (auto& e : out.entries_) {
      if (groups.count(e.group)) {
        // Per-entry streams keep draws independent of iteration details.
        Rng rng = Rng::stream(master_seed, label, entry_index);
        for (Eigen::Index i = 0; i < e.tensor.size(); ++i) {
          e.tensor[i] += static_cast<Scalar>(eps * rng.normal());
        }
      }
      ++entry_index;
    }
    return out;
  }

  bool bit_equal(const ParamStoreT& o) const {
    if (entries_.size() != o.entries_.size()) return false;
    for (size_t i = 0; i < entries_.size(); ++i) {
      if (entries_[i].name != o.entries_[i].name ||
          entries_[i].group != o.entries_[i].group ||
          !entries_[i].tensor.bit_equal(o.entries_[i].tensor)) {
        return false;
      }
    }
    return true;
  }

  /// FNV-1a over names, groups and raw bytes; order-sensitive.
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& e : entries_) {
      feed(e.name.data(), e.name.size());
      std::uint8_t g = static_cast<std::uint8_t>(e.group);
      feed(&g, 1);
      feed(e.tensor.data(), sizeof(Scalar) * static_cast<size_t>(e.tensor.size()));
    }
    return h;
  }

  template <typename OtherScalar>
  ParamStoreT<OtherScalar> cast() const {
    ParamStoreT<OtherScalar> out;
    for (const auto& e : entries_) {
      out.add(e.name, e.group, e.tensor.template cast<OtherScalar>());
    }
    return out;
  }

 private:
  size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw std::invalid_argument("param store: no entry named '" + name + "'");
    }
    return it->second;
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

using ParamStore = ParamStoreT<float>;

/// 0/1 mask with the same named shapes as a store's trainable entries.
template <typename Scalar>
ParamStoreT<Scalar> zero_mask_like(const ParamStoreT<Scalar>& params) {
  ParamStoreT<Scalar> m;
  for (const auto& e : params) {
    if (e.group == ParamGroup::buffer) continue;
    m.add(e.name, e.group, TensorT<Scalar>::zeros(e.tensor.shape()));
  }
  return m;
}

template <typename Scalar>
std::int64_t mask_count(const ParamStoreT<Scalar>& mask) {
  std::int64_t n = 0;
  for (const auto& e : mask) n += static_cast<std::int64_t>(e.tensor.array().sum());
  return n;
}

/// Parameters bound as autodiff leaves, aligned with store order.
template <typename Scalar>
struct BoundParamsT {
  std::vector<VarT<Scalar>> vars;
  std::vector<std::string> names;
  std::unordered_map<std::string, size_t> index;

  static BoundParamsT bind(const ParamStoreT<Scalar>& params) {
    BoundParamsT b;
    for (const auto& e : params) {
      if (e.group == ParamGroup::buffer) continue;
      b.index[e.name] = b.vars.size();
      b.vars.push_back(leaf(e.tensor));
      b.names.push_back(e.name);
    }
    return b;
  }

  const VarT<Scalar>& operator[](const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) {
      throw std::invalid_argument("bound params: no entry named '" + name + "'");
    }
    return vars[it->second];
  }
  bool has(const std::string& name) const { return index.count(name) != 0; }
};

using BoundParams = BoundParamsT<float>;

/// Reverse-mode gradient of a scalar loss with respect to every trainable
/// entry. Masked-out entries get exact zeros.
template <typename Scalar>
ParamStoreT<Scalar> gradient(
    const ParamStoreT<Scalar>& params,
    const std::function<VarT<Scalar>(const BoundParamsT<Scalar>&)>& loss_fn,
    const ParamStoreT<Scalar>* mask = nullptr) {
  BoundParamsT<Scalar> bound = BoundParamsT<Scalar>::bind(params);
  VarT<Scalar> loss = loss_fn(bound);
  if (loss->value.size() != 1) {
    throw std::invalid_argument("gradient: loss must be scalar, got " +
                                loss->value.shape_str());
  }
  backward(loss);
  ParamStoreT<Scalar> grads;
  for (size_t i = 0; i < bound.vars.size(); ++i) {
    const auto& name = bound.names[i];
    TensorT<Scalar> g = bound.vars[i]->grad.same_shape(bound.vars[i]->value)
                            ? bound.vars[i]->grad
                            : TensorT<Scalar>::zeros(bound.vars[i]->value.shape());
    if (mask && mask->has(name)) {
      g.array() *= mask->at(name).array();
    }
    grads.add(name, params.group_of(name), std::move(g));
  }
  return grads;
}

/// Adam with bias correction; updates are multiplied by the mask so frozen
/// entries stay bit-identical.
template <typename Scalar>
class AdamT {
 public:
  AdamT(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }

  void step(std::vector<VarT<Scalar>>& params, const std::vector<std::string>& names,
            const ParamStoreT<Scalar>& mask) {
    ensure_state(params, names);
    ++t_;
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, t_));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, t_));
    for (size_t i = 0; i < params.size(); ++i) {
      if (!mask.has(names[i])) continue;
      const auto& mk = mask.at(names[i]).array();
      auto& p = params[i]->value;
      const auto& g = params[i]->grad;
      if (!g.same_shape(p)) continue;  // parameter unused by this loss
      auto& m = m_[i];
      auto& v = v_[i];
      m.array() = static_cast<Scalar>(beta1_) * m.array() +
                  static_cast<Scalar>(1.0 - beta1_) * g.array();
      v.array() = static_cast<Scalar>(beta2_) * v.array() +
                  static_cast<Scalar>(1.0 - beta2_) * g.array().square();
      p.array() -= mk * (static_cast<Scalar>(lr_) * (m.array() / c1) /
                         ((v.array() / c2).sqrt() + static_cast<Scalar>(eps_)));
    }
  }

 private:
  void ensure_state(const std::vector<VarT<Scalar>>& params,
                    const std::vector<std::string>& names) {
    if (m_.size() == params.size()) return;
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(TensorT<Scalar>::zeros(p->value.shape()));
      v_.push_back(TensorT<Scalar>::zeros(p->value.shape()));
    }
    (void)names;
  }

  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<TensorT<Scalar>> m_, v_;
};

using Adam = AdamT<float>;

}  // namespace s2l
