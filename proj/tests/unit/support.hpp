#pragma once

#include "enkf/gaussian.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

namespace enkf::testing {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng)
{
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

inline Matrix random_spd(Eigen::Index n, Rng& rng, double floor = 0.3)
{
    const Matrix g = random_matrix(n, n, rng);
    return g * g.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n);
}

/// Orthogonal matrix scaled to spectral radius `radius`.
inline Matrix random_stable(Eigen::Index n, Rng& rng, double radius = 0.9)
{
    const Eigen::HouseholderQR<Matrix> qr(random_matrix(n, n, rng));
    return radius * Matrix(qr.householderQ());
}

}  // namespace enkf::testing
