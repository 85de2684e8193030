#pragma once

#include "clustcr/data.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace testdata {

struct RandomSpec {
  int n_clusters = 20;
  int min_size = 1;
  int max_size = 5;
  int p = 2;
  int q = 0;
  int k = 2;
  double missing = 0.3;   // probability a failure's cause is unobserved
  double censored = 0.25;
  bool ties = false;      // round times to a coarse grid
};

// Random clustered competing-risks data satisfying every Subject invariant.
inline clustcr::Dataset random_dataset(std::mt19937_64& rng, const RandomSpec& spec) {
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> size(spec.min_size, spec.max_size);
  std::uniform_int_distribution<int> cause(1, spec.k);
  std::vector<clustcr::Cluster> clusters;
  for (int i = 0; i < spec.n_clusters; ++i) {
    clustcr::Cluster c;
    c.id = "c" + std::to_string(i);
    const double frail = std::exp(0.5 * norm(rng));
    const int m = size(rng);
    for (int j = 0; j < m; ++j) {
      clustcr::Subject s;
      s.z = Eigen::VectorXd(spec.p);
      for (int a = 0; a < spec.p; ++a) s.z[a] = a % 2 == 0 ? norm(rng) : (unif(rng) < 0.5 ? 1.0 : 0.0);
      s.a = Eigen::VectorXd(spec.q);
      for (int a = 0; a < spec.q; ++a) s.a[a] = norm(rng);
      double t = -std::log(unif(rng)) / (frail * std::exp(0.3 * s.z[0]));
      if (spec.ties) t = std::ceil(t * 8.0) / 8.0;
      s.x = t;
      if (unif(rng) < spec.censored) {
        s.delta = 0;
        s.cause = 0;
        s.r = 1;
      } else {
        s.delta = 1;
        const int l = cause(rng);
        s.r = unif(rng) < spec.missing ? 0 : 1;
        s.cause = s.r == 1 ? l : 0;
      }
      c.subjects.push_back(s);
    }
    clusters.push_back(std::move(c));
  }
  return clustcr::Dataset(std::move(clusters), spec.k);
}

}  // namespace testdata
