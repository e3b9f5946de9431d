#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "ibpd/tensor.hpp"

namespace ibpd {

// Seeded generator with portable transforms. The engine is std::mt19937_64,
// whose output sequence is fixed by the standard; the uniform/normal/gamma
// transforms are written out here because the std:: distributions are
// implementation-defined, and results must be reproducible from a seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  // Marsaglia-Tsang; shape > 0.
  double gamma(double shape);
  double beta(double a, double b);
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n).
  std::size_t index(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

  Tensor uniform_tensor(Shape shape);
  Tensor normal_tensor(Shape shape);

  // Independent child stream, e.g. one per module or per parameter.
  Rng split();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ibpd
