#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "odml/error.hpp"

namespace odml {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Floor applied to the second KL argument inside the logarithm.
inline constexpr double kLogFloor = 1e-12;
/// Guard added to near-zero norms.
inline constexpr double kNormEps = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
softmax_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (!all_finite(m)) throw Error("softmax_rows: non-finite input");
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
      (m.colwise() - m.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// Throws unless every row of p is a probability distribution.
template <typename Derived>
void check_distribution_rows(const Eigen::MatrixBase<Derived>& p,
                             const char* what) {
  for (Index r = 0; r < p.rows(); ++r) {
    const auto row = p.row(r);
    if (!all_finite(row) || (row.array() < 0).any() ||
        std::abs(row.sum() - 1.0) > 1e-9) {
      throw Error(std::string(what) + ": row " + std::to_string(r) +
                  " is not a probability distribution");
    }
  }
}

/// Mean over rows of KL(p_row || q_row). The first argument is the target.
/// Uses 0 ln 0 = 0 and floors q at kLogFloor inside the logarithm.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_rows(const Eigen::MatrixBase<DerivedP>& p,
                                  const Eigen::MatrixBase<DerivedQ>& q) {
  using Scalar = typename DerivedP::Scalar;
  if (p.rows() != q.rows() || p.cols() != q.cols()) {
    throw Error("kl_rows: shape mismatch");
  }
  if (p.rows() == 0) throw Error("kl_rows: empty input");
  check_distribution_rows(p, "kl_rows(p)");
  check_distribution_rows(q, "kl_rows(q)");
  Scalar total = 0;
  for (Index r = 0; r < p.rows(); ++r) {
    for (Index c = 0; c < p.cols(); ++c) {
      const Scalar pv = p(r, c);
      if (pv == 0) continue;
      total += pv * (std::log(pv) - std::log(std::max<Scalar>(q(r, c), kLogFloor)));
    }
  }
  return total / static_cast<Scalar>(p.rows());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> l2_normalize(
    const Eigen::MatrixBase<Derived>& v) {
  const auto norm = v.norm();
  if (norm < kNormEps) return v / (norm + kNormEps);
  return v / norm;
}

/// Normalizes every row to unit L2 norm with the same guard as l2_normalize.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
l2_normalize_rows(const Eigen::MatrixBase<Derived>& m) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out =
      m;
  for (Index r = 0; r < out.rows(); ++r) {
    const auto norm = out.row(r).norm();
    out.row(r) /= norm < kNormEps ? norm + kNormEps : norm;
  }
  return out;
}

template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_sim(const Eigen::MatrixBase<DerivedA>& a,
                                     const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) throw Error("cosine_sim: dimension mismatch");
  const Scalar denom = std::max<Scalar>(a.norm() * b.norm(), kNormEps);
  return std::clamp<Scalar>(a.dot(b) / denom, -1, 1);
}

}  // namespace odml
