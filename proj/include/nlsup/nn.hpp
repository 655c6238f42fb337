#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "nlsup/params.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/tape.hpp"

namespace nlsup {

// Gated recurrent cell.  Each weight matrix is [hidden, input+hidden] and
// multiplies the concatenation [x; h].
struct LstmParamRefs {
  NodeId wi, wf, wo, wg, bi, bf, bo, bg;
};

struct LstmState {
  NodeId h, c;
};

inline void add_lstm_params(ParamStore& ps, const std::string& prefix, std::size_t input_dim,
                            std::size_t hidden_dim, Rng& rng) {
  for (const char* gate : {"i", "f", "o", "g"}) {
    ps.init_uniform(prefix + ".w" + gate, {hidden_dim, input_dim + hidden_dim}, rng);
    ps.init_uniform(prefix + ".b" + gate, {hidden_dim}, rng);
  }
}

inline LstmParamRefs lstm_params_on_tape(Tape& t, const ParamStore& ps,
                                         const std::string& prefix) {
  return {t.param(prefix + ".wi", ps.at(prefix + ".wi")),
          t.param(prefix + ".wf", ps.at(prefix + ".wf")),
          t.param(prefix + ".wo", ps.at(prefix + ".wo")),
          t.param(prefix + ".wg", ps.at(prefix + ".wg")),
          t.param(prefix + ".bi", ps.at(prefix + ".bi")),
          t.param(prefix + ".bf", ps.at(prefix + ".bf")),
          t.param(prefix + ".bo", ps.at(prefix + ".bo")),
          t.param(prefix + ".bg", ps.at(prefix + ".bg"))};
}

inline LstmState lstm_step(Tape& t, const LstmParamRefs& p, NodeId x, LstmState prev) {
  NodeId z = t.concat(x, prev.h);
  NodeId i = t.sigmoid_(t.affine(p.wi, z, p.bi));
  NodeId f = t.sigmoid_(t.affine(p.wf, z, p.bf));
  NodeId o = t.sigmoid_(t.affine(p.wo, z, p.bo));
  NodeId g = t.tanh_(t.affine(p.wg, z, p.bg));
  NodeId c = t.add(t.mul(f, prev.c), t.mul(i, g));
  NodeId h = t.mul(o, t.tanh_(c));
  return {h, c};
}

inline LstmState lstm_zero_state(Tape& t, std::size_t hidden_dim) {
  NodeId z = t.input(Array::zeros({hidden_dim}));
  return {z, z};
}

// Compares reverse-mode gradients against central differences on a random
// sample of coordinates (up to max_coords of them) and returns the worst
// relative error.  The loss builder is rerun on a fresh eval tape per probe,
// so it must be a pure function of the store.
//
// Central differences on a double-precision loss L carry irreducible rounding
// noise of roughly ulp(L) / (2 eps) on the numeric side; coordinates whose
// true gradient sits below that scale cannot be measured this way at all, so
// the probe skips coordinates where both sides are under an eps-derived
// informativeness threshold.  A wrong analytic value on a measurable
// coordinate (including a wrongly-zero one) still lands in the sample because
// the threshold looks at the larger of the two sides.
template <class LossFn>
double grad_check(LossFn&& loss_fn, ParamStore& params, double eps, Rng& rng,
                  std::size_t max_coords = 200) {
  Tape t(true);
  NodeId loss = loss_fn(t, params);
  double loss_value = t.value(loss)[0];
  GradMap analytic = t.backward(loss);

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, g] : analytic)
    for (std::size_t i = 0; i < g.numel(); ++i) coords.emplace_back(name, i);
  rng.shuffle(coords);

  auto eval_loss = [&]() {
    Tape e(false);
    return e.value(loss_fn(e, params))[0];
  };

  double fd_noise = std::max(1.0, std::abs(loss_value)) * 0x1p-52 / (2.0 * eps);
  double informative = std::max(1e-6, 1e5 * fd_noise);

  double worst = 0.0;
  std::size_t measured = 0;
  for (const auto& [name, i] : coords) {
    if (measured >= max_coords) break;
    double& x = params.at(name).v[i];
    double keep = x;
    x = keep + eps;
    double up = eval_loss();
    x = keep - eps;
    double down = eval_loss();
    x = keep;
    double numeric = (up - down) / (2.0 * eps);
    double got = analytic.at(name).v[i];
    if (std::max(std::abs(got), std::abs(numeric)) < informative) continue;
    double rel = std::abs(got - numeric) / std::max({std::abs(got), std::abs(numeric), 1e-8});
    worst = std::max(worst, rel);
    ++measured;
  }
  return worst;
}

}  // namespace nlsup
