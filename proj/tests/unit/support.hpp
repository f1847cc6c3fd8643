// Copyright (c) 2026 The wdlab Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <functional>
#include <random>

#include "wdlab/nn.hpp"

namespace wdlab::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

inline Matrix random_symmetric(Rng& rng, Eigen::Index n) {
  const Matrix m = random_matrix(rng, n, n);
  return 0.5 * (m + m.transpose());
}

inline Matrix random_psd(Rng& rng, Eigen::Index n, Eigen::Index rank = -1) {
  const Matrix b = random_matrix(rng, n, rank < 0 ? n : rank);
  return b * b.transpose();
}

// Central differences of a scalar function of theta.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& theta,
                               double h = 1e-5) {
  Vector g(theta.size());
  Vector t = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const double up = f(t);
    t[i] = keep - h;
    const double down = f(t);
    t[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Central differences of a vector-valued function, one column per coordinate.
inline Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h = 1e-6) {
  const Vector f0 = f(x);
  Matrix jac(f0.size(), x.size());
  Vector t = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = t[i];
    t[i] = keep + h;
    const Vector up = f(t);
    t[i] = keep - h;
    const Vector down = f(t);
    t[i] = keep;
    jac.col(i) = (up - down) / (2.0 * h);
  }
  return jac;
}

}  // namespace wdlab::testing
