#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nlsup/nn.hpp"
#include "nlsup/params.hpp"
#include "nlsup/rng.hpp"
#include "nlsup/tape.hpp"

using namespace nlsup;
using Catch::Matchers::ContainsSubstring;

namespace {

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Reference softmax, written naively (no max shift) so it shares no code
// with the tape implementation.  Only safe for moderate inputs.
std::vector<double> softmax_ref(const std::vector<double>& z) {
  double total = 0.0;
  for (double x : z) total += std::exp(x);
  std::vector<double> out;
  for (double x : z) out.push_back(std::exp(x) / total);
  return out;
}

Array rand_vec(std::size_t n, Rng& rng, double range = 1.0) {
  Array a = Array::zeros({n});
  for (auto& x : a.v) x = rng.uniform(-range, range);
  return a;
}

Array rand_mat(std::size_t r, std::size_t c, Rng& rng, double range = 1.0) {
  Array a = Array::zeros({r, c});
  for (auto& x : a.v) x = rng.uniform(-range, range);
  return a;
}

}  // namespace

TEST_CASE("arrays are dense row-major buffers") {
  Array m = Array::zeros({3, 4});
  REQUIRE(m.numel() == 12);
  REQUIRE(m.rows() == 3);
  REQUIRE(m.cols() == 4);
  m.at(1, 2) = 5.0;
  REQUIRE(m.v[1 * 4 + 2] == 5.0);

  Array x = Array::vec({1.0, 2.0});
  REQUIRE(x.shape.size() == 1);
  REQUIRE(x.numel() == 2);
  REQUIRE(x.at(1) == 2.0);
  REQUIRE(m.shape_str() == "3x4");
  REQUIRE(x.shape_str() == "2");
}

TEST_CASE("softmax matches a naive reference and normalizes") {
  Tape t;
  NodeId equal = t.softmax(t.input(Array::vec({2.0, 2.0, 2.0})));
  for (double p : t.value(equal).v) REQUIRE(p == Catch::Approx(1.0 / 3.0).epsilon(1e-12));

  Rng rng(401);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 1 + rng.uniform_int(8);
    Array z = rand_vec(n, rng, 30.0);
    Tape tt;
    const Array& p = tt.value(tt.softmax(tt.input(z)));
    std::vector<double> want = softmax_ref(z.v);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      REQUIRE(p.v[i] == Catch::Approx(want[i]).margin(1e-9));
      REQUIRE(p.v[i] > 0.0);
      total += p.v[i];
    }
    REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("log-sum-exp is shift invariant and overflow safe") {
  Rng rng(402);
  for (int trial = 0; trial < 100; ++trial) {
    Array z = rand_vec(1 + rng.uniform_int(6), rng, 5.0);
    Tape t;
    double base = t.value(t.logsumexp(t.input(z)))[0];

    // naive reference is fine at this scale
    double naive = 0.0;
    for (double x : z.v) naive += std::exp(x);
    REQUIRE(base == Catch::Approx(std::log(naive)).margin(1e-12));

    for (double shift : {-700.0, -3.5, 211.0, 700.0}) {
      Array zs = z;
      for (auto& x : zs.v) x += shift;
      Tape ts;
      double got = ts.value(ts.logsumexp(ts.input(zs)))[0];
      REQUIRE(std::isfinite(got));
      REQUIRE(got - shift == Catch::Approx(base).margin(1e-9));
    }
  }
}

TEST_CASE("bilinear with the identity matrix is a dot product") {
  Array eye = Array::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Array s = Array::vec({1.5, -2.0, 0.25});
  Array h = Array::vec({4.0, 0.5, -1.0});

  Tape t;
  double got = t.value(t.bilinear(t.input(s), t.input(eye), t.input(h)))[0];
  REQUIRE(got == Catch::Approx(1.5 * 4.0 - 2.0 * 0.5 - 0.25 * 1.0).epsilon(1e-12));

  Rng rng(403);
  Array w = rand_mat(3, 4, rng);
  Array hv = rand_vec(4, rng);
  double want = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) want += s.v[i] * w.at(i, j) * hv.v[j];
  Tape t2;
  double got2 = t2.value(t2.bilinear(t2.input(s), t2.input(w), t2.input(hv)))[0];
  REQUIRE(got2 == Catch::Approx(want).epsilon(1e-12));
}

TEST_CASE("matvec, transpose matvec, and affine match hand loops") {
  Rng rng(404);
  Array a = rand_mat(3, 5, rng);
  Array x = rand_vec(5, rng);
  Array y = rand_vec(3, rng);
  Array b = rand_vec(3, rng);

  Tape t;
  const Array& ax = t.value(t.matvec(t.input(a), t.input(x)));
  const Array& aty = t.value(t.matvec_t(t.input(a), t.input(y)));
  const Array& aff = t.value(t.affine(t.input(a), t.input(x), t.input(b)));

  for (std::size_t i = 0; i < 3; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 5; ++j) want += a.at(i, j) * x.v[j];
    REQUIRE(ax.v[i] == Catch::Approx(want).epsilon(1e-12));
    REQUIRE(aff.v[i] == Catch::Approx(want + b.v[i]).epsilon(1e-12));
  }
  for (std::size_t j = 0; j < 5; ++j) {
    double want = 0.0;
    for (std::size_t i = 0; i < 3; ++i) want += a.at(i, j) * y.v[i];
    REQUIRE(aty.v[j] == Catch::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("gated recurrent step with zero weights reduces to its biases") {
  // With all weight matrices zero the gates depend only on their biases:
  //   c' = sigmoid(bf) * c0 + sigmoid(bi) * tanh(bg),  h' = sigmoid(bo) * tanh(c')
  // and neither x nor h0 can influence the result.
  ParamStore ps;
  Rng rng(405);
  add_lstm_params(ps, "cell", 3, 2, rng);
  for (const char* w : {"cell.wi", "cell.wf", "cell.wo", "cell.wg"})
    for (auto& v : ps.at(w).v) v = 0.0;
  ps.at("cell.bi") = Array::vec({0.5, -1.0});
  ps.at("cell.bf") = Array::vec({0.25, 0.75});
  ps.at("cell.bo") = Array::vec({-0.5, 1.0});
  ps.at("cell.bg") = Array::vec({0.3, -0.7});

  Tape t;
  LstmParamRefs cell = lstm_params_on_tape(t, ps, "cell");
  LstmState prev{t.input(Array::vec({0.9, -0.9})), t.input(Array::vec({0.2, -0.4}))};
  NodeId x = t.input(Array::vec({0.1, 0.2, 0.3}));
  LstmState next = lstm_step(t, cell, x, prev);

  for (std::size_t k = 0; k < 2; ++k) {
    double bi = ps.at("cell.bi").v[k], bf = ps.at("cell.bf").v[k];
    double bo = ps.at("cell.bo").v[k], bg = ps.at("cell.bg").v[k];
    double c0 = (k == 0) ? 0.2 : -0.4;
    double c1 = sigmoid_ref(bf) * c0 + sigmoid_ref(bi) * std::tanh(bg);
    double h1 = sigmoid_ref(bo) * std::tanh(c1);
    REQUIRE(t.value(next.c).v[k] == Catch::Approx(c1).epsilon(1e-12));
    REQUIRE(t.value(next.h).v[k] == Catch::Approx(h1).epsilon(1e-12));
  }
}

TEST_CASE("backward of a parameter sum is a vector of ones") {
  ParamStore ps;
  ps.add("w", Array::vec({3.0, -1.0, 0.5, 2.0}));
  Tape t;
  GradMap g = t.backward(t.sum(t.param("w", ps.at("w"))));
  REQUIRE(g.count("w") == 1);
  for (double x : g.at("w").v) REQUIRE(x == 1.0);
}

TEST_CASE("cross-entropy gradient vanishes when the true class is certain") {
  ParamStore ps;
  ps.add("z", Array::vec({60.0, 0.0, -60.0}));
  Tape t;
  NodeId z = t.param("z", ps.at("z"));
  NodeId loss = t.sub(t.logsumexp(z), t.pick(z, 0));
  REQUIRE(t.value(loss)[0] == Catch::Approx(0.0).margin(1e-12));
  GradMap g = t.backward(loss);
  for (double x : g.at("z").v) REQUIRE(std::abs(x) < 1e-12);
}

TEST_CASE("composite network gradients match central differences") {
  // two-layer net with softmax cross-entropy, differentiated by hand here
  // via central differences over every coordinate.
  ParamStore ps;
  Rng rng(406);
  ps.init_uniform("w1", {5, 4}, rng, 0.5);
  ps.init_uniform("b1", {5}, rng, 0.5);
  ps.init_uniform("w2", {3, 5}, rng, 0.5);
  ps.init_uniform("b2", {3}, rng, 0.5);
  Array x = rand_vec(4, rng);

  auto loss_value = [&](bool record, GradMap* grads) {
    Tape t(record);
    NodeId h = t.tanh_(t.affine(t.param("w1", ps.at("w1")), t.input(x), t.param("b1", ps.at("b1"))));
    NodeId z = t.affine(t.param("w2", ps.at("w2")), h, t.param("b2", ps.at("b2")));
    NodeId loss = t.sub(t.logsumexp(z), t.pick(z, 1));
    if (grads) *grads = t.backward(loss);
    return t.value(loss)[0];
  };

  GradMap analytic;
  loss_value(true, &analytic);

  const double eps = 1e-6;
  for (const std::string& name : {"w1", "b1", "w2", "b2"}) {
    Array& p = ps.at(name);
    REQUIRE(analytic.at(name).numel() == p.numel());
    for (std::size_t i = 0; i < p.numel(); ++i) {
      double keep = p.v[i];
      p.v[i] = keep + eps;
      double up = loss_value(false, nullptr);
      p.v[i] = keep - eps;
      double down = loss_value(false, nullptr);
      p.v[i] = keep;
      double numeric = (up - down) / (2.0 * eps);
      double got = analytic.at(name).v[i];
      double rel = std::abs(got - numeric) / std::max({std::abs(got), std::abs(numeric), 1e-8});
      REQUIRE(rel < 1e-6);
    }
  }
}

TEST_CASE("gather accumulates gradients for repeated indices") {
  ParamStore ps;
  ps.add("x", Array::vec({1.0, 2.0, 3.0, 4.0}));
  Tape t;
  NodeId g = t.gather(t.param("x", ps.at("x")), {1, 1, 2});
  REQUIRE(t.value(g).v == std::vector<double>{2.0, 2.0, 3.0});
  GradMap grads = t.backward(t.sum(g));
  REQUIRE(grads.at("x").v == std::vector<double>{0.0, 2.0, 1.0, 0.0});
}

TEST_CASE("embed and stack_rows route gradients to the right rows") {
  ParamStore ps;
  Rng rng(407);
  ps.init_uniform("emb", {4, 3}, rng);
  Tape t;
  NodeId m = t.param("emb", ps.at("emb"));
  NodeId r2 = t.embed(m, 2);
  for (std::size_t j = 0; j < 3; ++j) REQUIRE(t.value(r2).v[j] == ps.at("emb").at(2, j));

  NodeId stacked = t.stack_rows({r2, t.embed(m, 0), r2});
  REQUIRE(t.value(stacked).rows() == 3);
  GradMap grads = t.backward(t.sum(stacked));
  for (std::size_t j = 0; j < 3; ++j) {
    REQUIRE(grads.at("emb").at(0, j) == 1.0);
    REQUIRE(grads.at("emb").at(1, j) == 0.0);
    REQUIRE(grads.at("emb").at(2, j) == 2.0);
    REQUIRE(grads.at("emb").at(3, j) == 0.0);
  }
}

TEST_CASE("grad_check is near exact for a linear model") {
  ParamStore ps;
  Rng rng(408);
  ps.init_uniform("w", {6}, rng);
  ps.add("b", Array::vec({0.3}));
  Array x = rand_vec(6, rng);

  auto fn = [&x](Tape& t, ParamStore& p) {
    return t.add(t.dot(t.param("w", p.at("w")), t.input(x)), t.pick(t.param("b", p.at("b")), 0));
  };
  Rng coords(409);
  REQUIRE(grad_check(fn, ps, 1e-5, coords) < 1e-9);
}

TEST_CASE("grad_check passes a single recurrent step") {
  ParamStore ps;
  Rng rng(410);
  add_lstm_params(ps, "cell", 4, 3, rng);
  Array x = rand_vec(4, rng);
  Array h0 = rand_vec(3, rng);
  Array c0 = rand_vec(3, rng);

  auto fn = [&](Tape& t, ParamStore& p) {
    LstmParamRefs cell = lstm_params_on_tape(t, p, "cell");
    LstmState next = lstm_step(t, cell, t.input(x), {t.input(h0), t.input(c0)});
    return t.sum(t.mul(next.h, next.h));
  };
  Rng coords(411);
  REQUIRE(grad_check(fn, ps, 1e-5, coords) < 1e-6);
}

TEST_CASE("gradient clipping rescales only above the threshold") {
  GradMap mild;
  mild["a"] = Array::vec({3.0});
  mild["b"] = Array::vec({4.0});
  REQUIRE(global_grad_norm(mild) == Catch::Approx(5.0).epsilon(1e-12));
  double pre = clip_grads(mild, 10.0);
  REQUIRE(pre == Catch::Approx(5.0));
  REQUIRE(mild.at("a").v[0] == 3.0);
  REQUIRE(mild.at("b").v[0] == 4.0);

  GradMap big;
  big["a"] = Array::vec({12.0});
  big["b"] = Array::vec({16.0});
  REQUIRE(clip_grads(big, 10.0) == Catch::Approx(20.0));
  REQUIRE(global_grad_norm(big) == Catch::Approx(10.0).margin(1e-9));
  REQUIRE(big.at("a").v[0] == Catch::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("adam leaves parameters untouched under zero gradients") {
  ParamStore ps;
  Rng rng(412);
  ps.init_uniform("w", {7}, rng);
  Array before = ps.at("w");
  GradMap zero;
  zero["w"] = Array::zeros({7});
  clip_and_step(ps, zero, 1e-4, 10.0);
  REQUIRE(ps.at("w").v == before.v);
}

TEST_CASE("adam steps match the textbook recurrence") {
  ParamStore ps;
  ps.add("w", Array::vec({1.0, -2.0}));
  Array g = Array::vec({0.4, -0.9});

  // independent reimplementation of two bias-corrected steps
  std::vector<double> want = {1.0, -2.0}, m(2, 0.0), v(2, 0.0);
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int t = 1; t <= 2; ++t) {
    for (std::size_t i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g.v[i];
      v[i] = b2 * v[i] + (1 - b2) * g.v[i] * g.v[i];
      double mhat = m[i] / (1 - std::pow(b1, t));
      double vhat = v[i] / (1 - std::pow(b2, t));
      want[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  for (int t = 0; t < 2; ++t) {
    GradMap grads;
    grads["w"] = g;
    clip_and_step(ps, grads, lr, 10.0);
  }
  REQUIRE(ps.at("w").v[0] == Catch::Approx(want[0]).epsilon(1e-12));
  REQUIRE(ps.at("w").v[1] == Catch::Approx(want[1]).epsilon(1e-12));
  REQUIRE(ps.entry("w").step == 2);
}

TEST_CASE("shape mismatches name the operation and the shapes") {
  Tape t;
  NodeId a3 = t.input(Array::vec({1, 2, 3}));
  NodeId a4 = t.input(Array::vec({1, 2, 3, 4}));
  NodeId m34 = t.input(Array::zeros({3, 4}));
  REQUIRE_THROWS_WITH(t.add(a3, a4), ContainsSubstring("add") && ContainsSubstring("3") && ContainsSubstring("4"));
  REQUIRE_THROWS_WITH(t.matvec(m34, a3), ContainsSubstring("matvec") && ContainsSubstring("3x4"));
  REQUIRE_THROWS_WITH(t.affine(m34, a4, a4), ContainsSubstring("affine"));
  REQUIRE_THROWS_WITH(t.concat(m34, a3), ContainsSubstring("concat"));
  REQUIRE_THROWS_WITH(t.embed(m34, 3), ContainsSubstring("embed") && ContainsSubstring("3x4"));
  REQUIRE_THROWS_WITH(t.pick(a3, 5), ContainsSubstring("pick"));
  REQUIRE_THROWS_WITH(t.softmax(m34), ContainsSubstring("softmax"));
}

TEST_CASE("backward rejects bad losses and eval-mode tapes") {
  Tape t;
  NodeId v = t.input(Array::vec({1.0, 2.0}));
  REQUIRE_THROWS_WITH(t.backward(v), ContainsSubstring("scalar"));
  REQUIRE_THROWS_WITH(t.backward(static_cast<NodeId>(99)), ContainsSubstring("tape"));

  Tape eval(false);
  NodeId s = eval.sum(eval.input(Array::vec({1.0})));
  REQUIRE_THROWS_WITH(eval.backward(s), ContainsSubstring("gradient"));
}

TEST_CASE("non-finite gradients are rejected by parameter name") {
  ParamStore ps;
  ps.add("task.w", Array::vec({1.0, 2.0}));
  GradMap grads;
  grads["task.w"] = Array::vec({1.0, std::nan("")});
  REQUIRE_THROWS_WITH(clip_and_step(ps, grads, 1e-4, 10.0), ContainsSubstring("task.w"));
}

TEST_CASE("parameter initialization stays inside the configured range") {
  ParamStore a, b;
  Rng ra(413), rb(413);
  a.init_uniform("w", {40, 25}, ra);
  b.init_uniform("w", {40, 25}, rb);
  REQUIRE(a.at("w").v == b.at("w").v);
  double lo = 1.0, hi = -1.0;
  for (double x : a.at("w").v) {
    REQUIRE(x >= -0.08);
    REQUIRE(x <= 0.08);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  REQUIRE(lo < -0.04);
  REQUIRE(hi > 0.04);
  REQUIRE_THROWS_WITH(a.init_uniform("w", {2}, ra), ContainsSubstring("duplicate"));
  REQUIRE_THROWS_WITH(a.at("missing"), ContainsSubstring("missing"));
}

TEST_CASE("checkpoints round trip bit for bit") {
  ParamStore ps;
  ps.add("enc.w", Array::mat(2, 3, {std::sqrt(2.0), 1.0 / 3.0, 3.141592653589793,
                                    -1e-300, 0.0, -7.25}));
  ps.add("enc.b", Array::vec({-0.1, 1e17}));
  GradMap grads;
  grads["enc.w"] = Array::mat(2, 3, {0.1, -0.2, 0.3, -0.4, 0.5, -0.6});
  grads["enc.b"] = Array::vec({0.7, -0.8});
  clip_and_step(ps, grads, 1e-4, 10.0);

  const std::string path = "ckpt_roundtrip.json";
  ps.save(path);
  ParamStore loaded = ParamStore::load(path);
  for (const std::string& name : ps.names()) {
    REQUIRE(loaded.at(name).shape == ps.at(name).shape);
    REQUIRE(loaded.at(name).v == ps.at(name).v);
    REQUIRE(loaded.entry(name).m.v == ps.entry(name).m.v);
    REQUIRE(loaded.entry(name).v_.v == ps.entry(name).v_.v);
    REQUIRE(loaded.entry(name).step == ps.entry(name).step);
  }

  const std::string path2 = "ckpt_roundtrip2.json";
  loaded.save(path2);
  std::ifstream f1(path), f2(path2);
  std::stringstream s1, s2;
  s1 << f1.rdbuf();
  s2 << f2.rdbuf();
  REQUIRE(s1.str() == s2.str());
  REQUIRE(!s1.str().empty());

  // values-only checkpoints drop optimizer state but keep every weight
  const std::string slim = "ckpt_values.json";
  ps.save(slim, /*with_optimizer_state=*/false);
  ParamStore lean = ParamStore::load(slim);
  REQUIRE(lean.at("enc.w").v == ps.at("enc.w").v);
  REQUIRE(lean.entry("enc.w").step == 0);
  for (double x : lean.entry("enc.w").m.v) REQUIRE(x == 0.0);
  std::remove(path.c_str());
  std::remove(path2.c_str());
  std::remove(slim.c_str());
}

TEST_CASE("tape truncation rewinds to a mark and stays usable") {
  ParamStore ps;
  Rng rng(414);
  ps.init_uniform("w", {3, 3}, rng);
  ps.init_uniform("b", {3}, rng);
  Array x = rand_vec(3, rng);

  Tape t;
  NodeId h = t.tanh_(t.affine(t.param("w", ps.at("w")), t.input(x), t.param("b", ps.at("b"))));
  std::size_t mark = t.size();

  NodeId loss1 = t.sum(t.mul(h, h));
  double v1 = t.value(loss1)[0];
  GradMap g1 = t.backward(loss1);

  t.truncate(mark);
  NodeId loss2 = t.logsumexp(h);
  double v2 = t.value(loss2)[0];
  GradMap g2 = t.backward(loss2);

  // fresh tapes must agree with the rewound one
  Tape f1, f2;
  NodeId fh1 = f1.tanh_(f1.affine(f1.param("w", ps.at("w")), f1.input(x), f1.param("b", ps.at("b"))));
  REQUIRE(f1.value(f1.sum(f1.mul(fh1, fh1)))[0] == v1);
  NodeId fh2 = f2.tanh_(f2.affine(f2.param("w", ps.at("w")), f2.input(x), f2.param("b", ps.at("b"))));
  NodeId floss2 = f2.logsumexp(fh2);
  REQUIRE(f2.value(floss2)[0] == v2);
  GradMap fg2 = f2.backward(floss2);
  REQUIRE(fg2.at("w").v == g2.at("w").v);
  REQUIRE(g1.count("w") == 1);

  // params rebind cleanly after their dedup entry was truncated away
  t.truncate(0);
  NodeId w2 = t.param("w", ps.at("w"));
  REQUIRE(t.value(w2).v == ps.at("w").v);
  REQUIRE_THROWS_WITH(t.truncate(999), ContainsSubstring("truncate"));
}
