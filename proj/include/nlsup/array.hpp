#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace nlsup {

// Dense row-major buffer of doubles.  Only rank 1 and rank 2 show up in
// practice (vectors and weight matrices).
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  static Array zeros(std::vector<std::size_t> shp) {
    Array a;
    a.shape = std::move(shp);
    a.v.assign(a.count_from_shape(), 0.0);
    return a;
  }

  static Array vec(std::vector<double> values) {
    Array a;
    a.shape = {values.size()};
    a.v = std::move(values);
    return a;
  }

  static Array mat(std::size_t r, std::size_t c, std::vector<double> values) {
    if (values.size() != r * c)
      throw std::invalid_argument("array: " + std::to_string(values.size()) +
                                  " values for a " + std::to_string(r) + "x" +
                                  std::to_string(c) + " matrix");
    Array a;
    a.shape = {r, c};
    a.v = std::move(values);
    return a;
  }

  std::size_t count_from_shape() const {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::size_t numel() const { return v.size(); }

  std::size_t rows() const {
    require_rank(2);
    return shape[0];
  }
  std::size_t cols() const {
    require_rank(2);
    return shape[1];
  }

  double& at(std::size_t i) {
    require_rank(1);
    return v[i];
  }
  double at(std::size_t i) const {
    require_rank(1);
    return v[i];
  }
  double& at(std::size_t i, std::size_t j) { return v[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * cols() + j]; }

  double operator[](std::size_t i) const { return v[i]; }
  double& operator[](std::size_t i) { return v[i]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += 'x';
      s += std::to_string(shape[i]);
    }
    return s.empty() ? "scalar" : s;
  }

 private:
  void require_rank(std::size_t r) const {
    if (shape.size() != r)
      throw std::logic_error("array: rank " + std::to_string(shape.size()) +
                             " used as rank " + std::to_string(r));
  }
};

}  // namespace nlsup
