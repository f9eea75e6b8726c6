#pragma once

// Small random models and data shared by several test files.

#include <random>
#include <vector>

#include "oracles.hpp"
#include "ssn/ssn.hpp"

namespace ssn::fixture {

inline DesignLayout plain_layout(Index p) {
  DesignLayout l;
  l.cols = p;
  return l;
}

inline SSNModel small_model(Index p, Index d, std::vector<Index> hidden, Index q, TrainingMode mode, std::uint64_t seed,
                     bool randomize_head = true) {
  std::vector<Index> sizes{d};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(q);
  MLPConfig cfg{sizes, Activation::ReLU, 0.0, {}, true};
  auto m = make_ssn_model(plain_layout(p), cfg, mode, seed);
  if (randomize_head) {
    Rng rng(seed + 1);
    m.beta = ssn::oracle::random_vector(p, rng);
    m.gamma = ssn::oracle::random_vector(q, rng);
    std::normal_distribution<double> nd(0.0, 0.2);
    for (auto& l : m.mlp.layers)
      for (auto& b : l.b) b = nd(rng);
  }
  return m;
}

struct Data {
  DenseMatrix X, Z;
  DenseVector y;
};

inline Data sample_data(Index n, Index p, Index d, std::uint64_t seed) {
  Rng rng(seed);
  return {ssn::oracle::random_matrix(n, p, rng), ssn::oracle::random_matrix(n, d, rng), ssn::oracle::random_vector(n, rng)};
}

}  // namespace ssn::fixture
