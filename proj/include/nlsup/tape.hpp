#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nlsup/array.hpp"

namespace nlsup {

using NodeId = std::int32_t;
using GradMap = std::map<std::string, Array>;

// Recorded forward graph for one pass.  Nodes are appended in evaluation
// order, so walking ids from the loss down to zero is already a reverse
// topological order and backward() visits each node once.  truncate() rewinds
// to an earlier mark so a shared prefix (an encoded utterance, typically) can
// be reused across many decodes without re-running it.
class Tape {
 public:
  explicit Tape(bool record_grad = true) : record_(record_grad) {}

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  const Array& value(NodeId id) const {
    check_id(id, "value");
    return nodes_[static_cast<std::size_t>(id)].val;
  }

  void truncate(std::size_t mark) {
    if (mark > nodes_.size())
      throw std::invalid_argument("truncate: mark " + std::to_string(mark) +
                                  " beyond tape of size " + std::to_string(nodes_.size()));
    nodes_.resize(mark);
    for (auto it = param_ids_.begin(); it != param_ids_.end();) {
      if (static_cast<std::size_t>(it->second) >= mark)
        it = param_ids_.erase(it);
      else
        ++it;
    }
  }

  NodeId input(Array a) { return push(Op::input, std::move(a)); }

  // Parameters dedup by name: reusing a weight matrix inside one pass points
  // at the same node, so its gradient accumulates in one place.
  NodeId param(const std::string& name, const Array& a) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return it->second;
    NodeId id = push(Op::param, a);
    nodes_.back().pname = name;
    param_ids_.emplace(name, id);
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return ew2("add", Op::add, a, b, [](double x, double y) { return x + y; }); }
  NodeId sub(NodeId a, NodeId b) { return ew2("sub", Op::sub, a, b, [](double x, double y) { return x - y; }); }
  NodeId mul(NodeId a, NodeId b) { return ew2("mul", Op::mul, a, b, [](double x, double y) { return x * y; }); }

  NodeId scale(NodeId a, double k) {
    Array out = value_checked(a, "scale");
    for (auto& x : out.v) x *= k;
    NodeId id = push(Op::scale, std::move(out), a);
    nodes_.back().k = k;
    return id;
  }

  NodeId neg(NodeId a) { return scale(a, -1.0); }

  NodeId concat(NodeId a, NodeId b) {
    const Array& va = value_checked(a, "concat");
    const Array& vb = value_checked(b, "concat");
    if (va.shape.size() != 1 || vb.shape.size() != 1)
      throw std::invalid_argument("concat: arguments must be vectors, got " + va.shape_str() +
                                  " and " + vb.shape_str());
    Array out = Array::zeros({va.numel() + vb.numel()});
    std::copy(va.v.begin(), va.v.end(), out.v.begin());
    std::copy(vb.v.begin(), vb.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(va.numel()));
    return push(Op::concat, std::move(out), a, b);
  }

  NodeId tanh_(NodeId a) {
    Array out = value_checked(a, "tanh");
    for (auto& x : out.v) x = std::tanh(x);
    return push(Op::tanh, std::move(out), a);
  }

  NodeId sigmoid_(NodeId a) {
    Array out = value_checked(a, "sigmoid");
    for (auto& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
    return push(Op::sigmoid, std::move(out), a);
  }

  NodeId softmax(NodeId a) {
    const Array& va = require_vector(a, "softmax");
    Array out = va;
    double m = *std::max_element(out.v.begin(), out.v.end());
    double total = 0.0;
    for (auto& x : out.v) {
      x = std::exp(x - m);
      total += x;
    }
    for (auto& x : out.v) x /= total;
    return push(Op::softmax, std::move(out), a);
  }

  NodeId logsumexp(NodeId a) {
    const Array& va = require_vector(a, "logsumexp");
    double m = *std::max_element(va.v.begin(), va.v.end());
    double total = 0.0;
    for (double x : va.v) total += std::exp(x - m);
    return push(Op::logsumexp, Array::vec({m + std::log(total)}), a);
  }

  NodeId matvec(NodeId A, NodeId x) {
    const Array& a = value_checked(A, "matvec");
    const Array& b = value_checked(x, "matvec");
    if (a.shape.size() != 2 || b.shape.size() != 1 || a.cols() != b.numel())
      throw std::invalid_argument("matvec: A is " + a.shape_str() + " but x is " + b.shape_str());
    Array out = Array::zeros({a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double acc = 0.0;
      const double* row = a.v.data() + i * a.cols();
      for (std::size_t j = 0; j < a.cols(); ++j) acc += row[j] * b.v[j];
      out.v[i] = acc;
    }
    return push(Op::matvec, std::move(out), A, x);
  }

  NodeId matvec_t(NodeId A, NodeId x) {
    const Array& a = value_checked(A, "matvec_t");
    const Array& b = value_checked(x, "matvec_t");
    if (a.shape.size() != 2 || b.shape.size() != 1 || a.rows() != b.numel())
      throw std::invalid_argument("matvec_t: A is " + a.shape_str() + " but x is " + b.shape_str());
    Array out = Array::zeros({a.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const double* row = a.v.data() + i * a.cols();
      double xi = b.v[i];
      for (std::size_t j = 0; j < a.cols(); ++j) out.v[j] += row[j] * xi;
    }
    return push(Op::matvec_t, std::move(out), A, x);
  }

  NodeId affine(NodeId W, NodeId x, NodeId b) {
    const Array& w = value_checked(W, "affine");
    const Array& xv = value_checked(x, "affine");
    const Array& bv = value_checked(b, "affine");
    if (w.shape.size() != 2 || xv.shape.size() != 1 || bv.shape.size() != 1 ||
        w.cols() != xv.numel() || w.rows() != bv.numel())
      throw std::invalid_argument("affine: W is " + w.shape_str() + ", x is " + xv.shape_str() +
                                  ", b is " + bv.shape_str());
    Array out = bv;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      double acc = out.v[i];
      const double* row = w.v.data() + i * w.cols();
      for (std::size_t j = 0; j < w.cols(); ++j) acc += row[j] * xv.v[j];
      out.v[i] = acc;
    }
    return push(Op::affine, std::move(out), W, x, b);
  }

  NodeId dot(NodeId a, NodeId b) {
    const Array& va = value_checked(a, "dot");
    const Array& vb = value_checked(b, "dot");
    if (va.shape.size() != 1 || vb.shape.size() != 1 || va.numel() != vb.numel())
      throw std::invalid_argument("dot: shapes " + va.shape_str() + " vs " + vb.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < va.numel(); ++i) acc += va.v[i] * vb.v[i];
    return push(Op::dot, Array::vec({acc}), a, b);
  }

  // s^T W h, recorded as one node so the three gradients are cheap.
  NodeId bilinear(NodeId s, NodeId W, NodeId h) {
    const Array& sv = value_checked(s, "bilinear");
    const Array& w = value_checked(W, "bilinear");
    const Array& hv = value_checked(h, "bilinear");
    if (w.shape.size() != 2 || sv.numel() != w.rows() || hv.numel() != w.cols())
      throw std::invalid_argument("bilinear: s is " + sv.shape_str() + ", W is " + w.shape_str() +
                                  ", h is " + hv.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < w.rows(); ++i) {
      const double* row = w.v.data() + i * w.cols();
      double partial = 0.0;
      for (std::size_t j = 0; j < w.cols(); ++j) partial += row[j] * hv.v[j];
      acc += sv.v[i] * partial;
    }
    return push(Op::bilinear, Array::vec({acc}), s, W, h);
  }

  NodeId embed(NodeId M, std::size_t row) {
    const Array& m = value_checked(M, "embed");
    if (m.shape.size() != 2 || row >= m.rows())
      throw std::invalid_argument("embed: row " + std::to_string(row) + " out of range for " +
                                  m.shape_str());
    Array out = Array::zeros({m.cols()});
    std::copy(m.v.begin() + static_cast<std::ptrdiff_t>(row * m.cols()),
              m.v.begin() + static_cast<std::ptrdiff_t>((row + 1) * m.cols()), out.v.begin());
    NodeId id = push(Op::embed, std::move(out), M);
    nodes_.back().idx = {row};
    return id;
  }

  NodeId pick(NodeId a, std::size_t i) {
    const Array& va = require_vector(a, "pick");
    if (i >= va.numel())
      throw std::invalid_argument("pick: index " + std::to_string(i) + " out of range for length " +
                                  std::to_string(va.numel()));
    NodeId id = push(Op::pick, Array::vec({va.v[i]}), a);
    nodes_.back().idx = {i};
    return id;
  }

  NodeId gather(NodeId a, std::vector<std::size_t> idx) {
    const Array& va = require_vector(a, "gather");
    Array out = Array::zeros({idx.size()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= va.numel())
        throw std::invalid_argument("gather: index " + std::to_string(idx[k]) +
                                    " out of range for length " + std::to_string(va.numel()));
      out.v[k] = va.v[idx[k]];
    }
    NodeId id = push(Op::gather, std::move(out), a);
    nodes_.back().idx = std::move(idx);
    return id;
  }

  NodeId stack_rows(const std::vector<NodeId>& rows) {
    if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
    const Array& first = require_vector(rows[0], "stack_rows");
    std::size_t n = first.numel();
    Array out = Array::zeros({rows.size(), n});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Array& row = require_vector(rows[r], "stack_rows");
      if (row.numel() != n)
        throw std::invalid_argument("stack_rows: row lengths " + std::to_string(n) + " vs " +
                                    std::to_string(row.numel()));
      std::copy(row.v.begin(), row.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(r * n));
    }
    NodeId id = push(Op::stack_rows, std::move(out));
    nodes_.back().many = rows;
    return id;
  }

  NodeId sum(NodeId a) {
    const Array& va = value_checked(a, "sum");
    double acc = 0.0;
    for (double x : va.v) acc += x;
    return push(Op::sum, Array::vec({acc}), a);
  }

  GradMap backward(NodeId loss) {
    if (!record_)
      throw std::runtime_error("backward: tape was built without gradient recording");
    check_id(loss, "backward");
    const std::size_t li = static_cast<std::size_t>(loss);
    if (nodes_[li].val.numel() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  nodes_[li].val.shape_str());

    std::vector<Array> grad(li + 1);
    grad[li] = Array::zeros(nodes_[li].val.shape);
    grad[li].v[0] = 1.0;

    GradMap out;
    for (std::size_t pos = li + 1; pos-- > 0;) {
      if (grad[pos].v.empty()) continue;
      const Node& n = nodes_[pos];
      const Array& gy = grad[pos];
      switch (n.op) {
        case Op::input:
          break;
        case Op::param: {
          auto it = out.find(n.pname);
          if (it == out.end())
            out.emplace(n.pname, gy);
          else
            for (std::size_t i = 0; i < gy.numel(); ++i) it->second.v[i] += gy.v[i];
          break;
        }
        case Op::add:
          axpy(grad, n.a, gy, 1.0);
          axpy(grad, n.b, gy, 1.0);
          break;
        case Op::sub:
          axpy(grad, n.a, gy, 1.0);
          axpy(grad, n.b, gy, -1.0);
          break;
        case Op::mul: {
          Array& ga = ensure(grad, n.a);
          Array& gb = ensure(grad, n.b);
          const Array& va = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& vb = nodes_[static_cast<std::size_t>(n.b)].val;
          for (std::size_t i = 0; i < gy.numel(); ++i) {
            ga.v[i] += gy.v[i] * vb.v[i];
            gb.v[i] += gy.v[i] * va.v[i];
          }
          break;
        }
        case Op::scale:
          axpy(grad, n.a, gy, n.k);
          break;
        case Op::concat: {
          Array& ga = ensure(grad, n.a);
          Array& gb = ensure(grad, n.b);
          for (std::size_t i = 0; i < ga.numel(); ++i) ga.v[i] += gy.v[i];
          for (std::size_t i = 0; i < gb.numel(); ++i) gb.v[i] += gy.v[ga.numel() + i];
          break;
        }
        case Op::tanh: {
          Array& ga = ensure(grad, n.a);
          for (std::size_t i = 0; i < gy.numel(); ++i)
            ga.v[i] += gy.v[i] * (1.0 - n.val.v[i] * n.val.v[i]);
          break;
        }
        case Op::sigmoid: {
          Array& ga = ensure(grad, n.a);
          for (std::size_t i = 0; i < gy.numel(); ++i)
            ga.v[i] += gy.v[i] * n.val.v[i] * (1.0 - n.val.v[i]);
          break;
        }
        case Op::softmax: {
          Array& ga = ensure(grad, n.a);
          double inner = 0.0;
          for (std::size_t i = 0; i < gy.numel(); ++i) inner += gy.v[i] * n.val.v[i];
          for (std::size_t i = 0; i < gy.numel(); ++i)
            ga.v[i] += n.val.v[i] * (gy.v[i] - inner);
          break;
        }
        case Op::logsumexp: {
          Array& ga = ensure(grad, n.a);
          const Array& va = nodes_[static_cast<std::size_t>(n.a)].val;
          for (std::size_t i = 0; i < va.numel(); ++i)
            ga.v[i] += gy.v[0] * std::exp(va.v[i] - n.val.v[0]);
          break;
        }
        case Op::matvec: {
          Array& gA = ensure(grad, n.a);
          Array& gx = ensure(grad, n.b);
          const Array& a = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& x = nodes_[static_cast<std::size_t>(n.b)].val;
          for (std::size_t i = 0; i < a.rows(); ++i) {
            double gi = gy.v[i];
            double* grow = gA.v.data() + i * a.cols();
            const double* row = a.v.data() + i * a.cols();
            for (std::size_t j = 0; j < a.cols(); ++j) {
              grow[j] += gi * x.v[j];
              gx.v[j] += row[j] * gi;
            }
          }
          break;
        }
        case Op::matvec_t: {
          Array& gA = ensure(grad, n.a);
          Array& gx = ensure(grad, n.b);
          const Array& a = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& x = nodes_[static_cast<std::size_t>(n.b)].val;
          for (std::size_t i = 0; i < a.rows(); ++i) {
            double xi = x.v[i];
            double acc = 0.0;
            double* grow = gA.v.data() + i * a.cols();
            const double* row = a.v.data() + i * a.cols();
            for (std::size_t j = 0; j < a.cols(); ++j) {
              grow[j] += xi * gy.v[j];
              acc += row[j] * gy.v[j];
            }
            gx.v[i] += acc;
          }
          break;
        }
        case Op::affine: {
          Array& gW = ensure(grad, n.a);
          Array& gx = ensure(grad, n.b);
          Array& gb = ensure(grad, n.c);
          const Array& w = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& x = nodes_[static_cast<std::size_t>(n.b)].val;
          for (std::size_t i = 0; i < w.rows(); ++i) {
            double gi = gy.v[i];
            gb.v[i] += gi;
            double* grow = gW.v.data() + i * w.cols();
            const double* row = w.v.data() + i * w.cols();
            for (std::size_t j = 0; j < w.cols(); ++j) {
              grow[j] += gi * x.v[j];
              gx.v[j] += row[j] * gi;
            }
          }
          break;
        }
        case Op::dot: {
          Array& ga = ensure(grad, n.a);
          Array& gb = ensure(grad, n.b);
          const Array& va = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& vb = nodes_[static_cast<std::size_t>(n.b)].val;
          for (std::size_t i = 0; i < va.numel(); ++i) {
            ga.v[i] += gy.v[0] * vb.v[i];
            gb.v[i] += gy.v[0] * va.v[i];
          }
          break;
        }
        case Op::bilinear: {
          Array& gs = ensure(grad, n.a);
          Array& gW = ensure(grad, n.b);
          Array& gh = ensure(grad, n.c);
          const Array& s = nodes_[static_cast<std::size_t>(n.a)].val;
          const Array& w = nodes_[static_cast<std::size_t>(n.b)].val;
          const Array& h = nodes_[static_cast<std::size_t>(n.c)].val;
          double g0 = gy.v[0];
          for (std::size_t i = 0; i < w.rows(); ++i) {
            double si = s.v[i];
            double acc = 0.0;
            double* grow = gW.v.data() + i * w.cols();
            const double* row = w.v.data() + i * w.cols();
            for (std::size_t j = 0; j < w.cols(); ++j) {
              grow[j] += g0 * si * h.v[j];
              acc += row[j] * h.v[j];
              gh.v[j] += g0 * row[j] * si;
            }
            gs.v[i] += g0 * acc;
          }
          break;
        }
        case Op::embed: {
          Array& gM = ensure(grad, n.a);
          std::size_t c = gy.numel();
          for (std::size_t j = 0; j < c; ++j) gM.v[n.idx[0] * c + j] += gy.v[j];
          break;
        }
        case Op::pick:
          ensure(grad, n.a).v[n.idx[0]] += gy.v[0];
          break;
        case Op::gather: {
          Array& ga = ensure(grad, n.a);
          for (std::size_t k = 0; k < n.idx.size(); ++k) ga.v[n.idx[k]] += gy.v[k];
          break;
        }
        case Op::stack_rows: {
          std::size_t c = n.val.cols();
          for (std::size_t r = 0; r < n.many.size(); ++r) {
            Array& gr = ensure(grad, n.many[r]);
            for (std::size_t j = 0; j < c; ++j) gr.v[j] += gy.v[r * c + j];
          }
          break;
        }
        case Op::sum: {
          Array& ga = ensure(grad, n.a);
          for (auto& x : ga.v) x += gy.v[0];
          break;
        }
      }
    }
    return out;
  }

 private:
  enum class Op : std::uint8_t {
    input, param, add, sub, mul, scale, concat, tanh, sigmoid, softmax,
    logsumexp, matvec, matvec_t, affine, dot, bilinear, embed, pick, gather,
    stack_rows, sum
  };

  struct Node {
    Op op;
    NodeId a = -1, b = -1, c = -1;
    double k = 0.0;
    Array val;
    std::vector<std::size_t> idx;
    std::vector<NodeId> many;
    std::string pname;
  };

  NodeId push(Op op, Array val, NodeId a = -1, NodeId b = -1, NodeId c = -1) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.c = c;
    n.val = std::move(val);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  void check_id(NodeId id, const char* where) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::invalid_argument(std::string(where) + ": node does not belong to this tape");
  }

  const Array& value_checked(NodeId id, const char* where) const {
    check_id(id, where);
    return nodes_[static_cast<std::size_t>(id)].val;
  }

  const Array& require_vector(NodeId id, const char* where) const {
    const Array& a = value_checked(id, where);
    if (a.shape.size() != 1)
      throw std::invalid_argument(std::string(where) + ": needs a vector, got " + a.shape_str());
    return a;
  }

  template <class F>
  NodeId ew2(const char* name, Op op, NodeId a, NodeId b, F f) {
    const Array& va = value_checked(a, name);
    const Array& vb = value_checked(b, name);
    if (!va.same_shape(vb))
      throw std::invalid_argument(std::string(name) + ": shape " + va.shape_str() + " vs " +
                                  vb.shape_str());
    Array out = va;
    for (std::size_t i = 0; i < out.numel(); ++i) out.v[i] = f(va.v[i], vb.v[i]);
    return push(op, std::move(out), a, b);
  }

  Array& ensure(std::vector<Array>& grad, NodeId id) const {
    Array& g = grad[static_cast<std::size_t>(id)];
    if (g.v.empty()) g = Array::zeros(nodes_[static_cast<std::size_t>(id)].val.shape);
    return g;
  }

  void axpy(std::vector<Array>& grad, NodeId id, const Array& gy, double k) const {
    Array& g = ensure(grad, id);
    for (std::size_t i = 0; i < gy.numel(); ++i) g.v[i] += k * gy.v[i];
  }

  std::deque<Node> nodes_;  // deque: value() references survive later pushes
  std::unordered_map<std::string, NodeId> param_ids_;
  bool record_;
};

}  // namespace nlsup
