#pragma once

#include "symseq/common.hpp"
#include "symseq/model.hpp"

#include <map>
#include <string>

namespace symseq {

// SYMC v1 container: named f32 tensors plus a trailing UTF-8 config
// snapshot. Entry order is the sorted tensor name order, so identical state
// serializes to identical bytes.
struct Checkpoint {
  std::map<std::string, MatF> entries;
  std::string config_text;

  const MatF& at(const std::string& name) const {
    auto it = entries.find(name);
    check(it != entries.end(), "checkpoint missing entry: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return entries.count(name) != 0; }

  float scalar_entry(const std::string& name) const {
    const MatF& m = at(name);
    check(m.size() == 1, "checkpoint entry is not scalar: " + name);
    return m(0, 0);
  }
  void set_scalar(const std::string& name, float v) {
    MatF m(1, 1);
    m(0, 0) = v;
    entries[name] = std::move(m);
  }

  template <class T>
  void put_params(const ParamMap<T>& p, const std::string& prefix = "") {
    for (const auto& [name, tensor] : p)
      entries[prefix + name] = tensor.template cast<float>();
  }

  template <class T>
  ParamMap<T> params_with_prefix(const std::string& prefix) const {
    ParamMap<T> out;
    for (const auto& [name, tensor] : entries)
      if (name.rfind(prefix, 0) == 0)
        out[name.substr(prefix.size())] = tensor.template cast<T>();
    return out;
  }

  // Model tensors only (drops optimizer state and run counters).
  template <class T>
  ParamMap<T> model_params() const {
    ParamMap<T> out;
    for (const auto& [name, tensor] : entries) {
      if (name.rfind("opt.", 0) == 0 || name.rfind("train.", 0) == 0 ||
          name.rfind("rng.", 0) == 0)
        continue;
      out[name] = tensor.template cast<T>();
    }
    return out;
  }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace symseq
