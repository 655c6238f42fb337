#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlsup/array.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/tape.hpp"

namespace nlsup {

// One trainable tensor plus its Adam state.  `v_` is the second-moment
// accumulator (the underscore keeps it apart from Array::v).
struct ParamEntry {
  Array value;
  Array m;
  Array v_;
  std::int64_t step = 0;
};

class ParamStore {
 public:
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  Array& add(const std::string& name, Array value) {
    if (contains(name))
      throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
    ParamEntry e;
    e.m = Array::zeros(value.shape);
    e.v_ = Array::zeros(value.shape);
    e.value = std::move(value);
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  Array& init_uniform(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                      double range = 0.08) {
    Array a = Array::zeros(std::move(shape));
    for (auto& x : a.v) x = rng.uniform(-range, range);
    return add(name, std::move(a));
  }

  Array& at(const std::string& name) { return entry(name).value; }
  const Array& at(const std::string& name) const {
    return const_cast<ParamStore*>(this)->entry(name).value;
  }

  ParamEntry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end())
      throw std::out_of_range("param store: unknown parameter '" + name + "'");
    return it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : entries_) out.push_back(name);
    return out;
  }

  // Copies every entry (values and optimizer state) from another store.
  // Lets separately trained parsers merge into one store for joint use.
  void absorb(const ParamStore& other) {
    for (const auto& [name, e] : other.entries_) {
      if (contains(name))
        throw std::invalid_argument("param store: absorb would duplicate '" + name + "'");
      entries_[name] = e;
    }
  }

  std::size_t total_coords() const {
    std::size_t n = 0;
    for (const auto& [_, e] : entries_) n += e.value.numel();
    return n;
  }

  // Checkpoints are JSON with every double printed at 17 significant digits,
  // which strtod parses back to the identical bit pattern; a save/load/save
  // cycle reproduces the file byte for byte.  Writing by hand keeps the field
  // order and number format fixed.
  void save(const std::string& path, bool with_optimizer_state = true) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out << "{\n  \"format\": \"nlsup-params-v1\",\n  \"params\": {";
    bool first_param = true;
    for (const auto& [name, e] : entries_) {
      out << (first_param ? "\n" : ",\n");
      first_param = false;
      out << "    \"" << name << "\": {\"shape\": [";
      for (std::size_t i = 0; i < e.value.shape.size(); ++i)
        out << (i ? ", " : "") << e.value.shape[i];
      out << "], \"values\": ";
      write_doubles(out, e.value.v);
      if (with_optimizer_state) {
        out << ", \"m\": ";
        write_doubles(out, e.m.v);
        out << ", \"v\": ";
        write_doubles(out, e.v_.v);
        out << ", \"step\": " << e.step;
      }
      out << "}";
    }
    out << "\n  }\n}\n";
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
  }

  static ParamStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("checkpoint: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || !j.contains("params") || !j["params"].is_object())
      throw std::runtime_error("checkpoint: " + path + " has no params object");

    ParamStore ps;
    for (const auto& [name, spec] : j["params"].items()) {
      if (!spec.contains("shape") || !spec.contains("values"))
        throw std::runtime_error("checkpoint: parameter '" + name + "' lacks shape or values");
      Array a;
      for (const auto& d : spec["shape"]) a.shape.push_back(d.get<std::size_t>());
      a.v = spec["values"].get<std::vector<double>>();
      if (a.v.size() != a.count_from_shape())
        throw std::runtime_error("checkpoint: parameter '" + name + "' has " +
                                 std::to_string(a.v.size()) + " values for shape " +
                                 a.shape_str());
      ParamEntry& e = ps.entries_[name];
      e.m = Array::zeros(a.shape);
      e.v_ = Array::zeros(a.shape);
      e.value = std::move(a);
      if (spec.contains("m")) e.m.v = spec["m"].get<std::vector<double>>();
      if (spec.contains("v")) e.v_.v = spec["v"].get<std::vector<double>>();
      if (spec.contains("step")) e.step = spec["step"].get<std::int64_t>();
      if (e.m.v.size() != e.value.numel() || e.v_.v.size() != e.value.numel())
        throw std::runtime_error("checkpoint: optimizer state for '" + name +
                                 "' does not match its shape");
    }
    return ps;
  }

 private:
  static void write_doubles(std::ofstream& out, const std::vector<double>& xs) {
    out << "[";
    char buf[40];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", xs[i]);
      out << (i ? ", " : "") << buf;
    }
    out << "]";
  }

  std::map<std::string, ParamEntry> entries_;
};

inline double global_grad_norm(const GradMap& grads) {
  double total = 0.0;
  for (const auto& [_, g] : grads)
    for (double x : g.v) total += x * x;
  return std::sqrt(total);
}

// Rescales in place when the global L2 norm exceeds the threshold; returns
// the pre-clip norm.
inline double clip_grads(GradMap& grads, double threshold) {
  double norm = global_grad_norm(grads);
  if (norm > threshold) {
    double factor = threshold / norm;
    for (auto& [_, g] : grads)
      for (double& x : g.v) x *= factor;
  }
  return norm;
}

// Global-norm clipping followed by one bias-corrected Adam step.  Parameters
// absent from `grads` are untouched (each parser steps only its own weights).
inline void clip_and_step(ParamStore& params, const GradMap& grads, double lr,
                          double clip_threshold, double beta1 = 0.9, double beta2 = 0.999,
                          double eps = 1e-8) {
  for (const auto& [name, g] : grads) {
    for (double x : g.v)
      if (!std::isfinite(x))
        throw std::runtime_error("clip_and_step: non-finite gradient for parameter '" + name +
                                 "'");
    if (!params.at(name).same_shape(g) && params.at(name).numel() != g.numel())
      throw std::invalid_argument("clip_and_step: gradient shape " + g.shape_str() +
                                  " does not match parameter '" + name + "'");
  }
  double norm = global_grad_norm(grads);
  double factor = norm > clip_threshold ? clip_threshold / norm : 1.0;
  for (const auto& [name, g] : grads) {
    ParamEntry& e = params.entry(name);
    e.step += 1;
    double mc = 1.0 - std::pow(beta1, static_cast<double>(e.step));
    double vc = 1.0 - std::pow(beta2, static_cast<double>(e.step));
    for (std::size_t i = 0; i < g.numel(); ++i) {
      double gi = g.v[i] * factor;
      e.m.v[i] = beta1 * e.m.v[i] + (1.0 - beta1) * gi;
      e.v_.v[i] = beta2 * e.v_.v[i] + (1.0 - beta2) * gi * gi;
      double mhat = e.m.v[i] / mc;
      double vhat = e.v_.v[i] / vc;
      e.value.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace nlsup
