#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace nlsup {

// splitmix64, used to spread a root seed into independent stream seeds.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes a root seed with stream tags so that every corpus record, epoch and
// experiment cell gets its own reproducible stream regardless of evaluation
// order.
inline uint64_t derive_seed(uint64_t root, uint64_t a, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t s = root;
  uint64_t r = splitmix64(s);
  s ^= a + 0x632be59bd9b4e019ULL;
  r ^= splitmix64(s);
  s ^= b + 0x9e3779b97f4a7c15ULL;
  r ^= splitmix64(s);
  s ^= c + 0xd1b54a32d192ed03ULL;
  r ^= splitmix64(s);
  return r;
}

inline uint64_t hash_string_seed(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// All randomness goes through this wrapper. The engine is mt19937_64 (its
// output sequence is pinned by the standard) and the distributions below are
// hand rolled, so runs are reproducible across platforms and compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  size_t uniform_int(size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: empty range");
    size_t k = static_cast<size_t>(uniform() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // index draw proportional to the given nonnegative weights
  size_t categorical(const std::vector<double>& weights) {
    double total = 0;
    for (double w : weights) {
      if (w < 0) throw std::invalid_argument("categorical: negative weight");
      total += w;
    }
    if (total <= 0)
      throw std::invalid_argument("categorical: weights sum to zero");
    double u = uniform() * total;
    double acc = 0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return i;
    }
    return weights.size() - 1;
  }

  template <typename T>
  const T& pick(const std::vector<T>& v) {
    if (v.empty()) throw std::invalid_argument("pick: empty vector");
    return v[uniform_int(v.size())];
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nlsup
