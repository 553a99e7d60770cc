#pragma once

// Discrete energy of the frozen-coefficient problem
//
//   J(u) = integral alpha(x, v) / p(x) <A grad u, grad u>^{p(x)/2} - integral f u
//
// with its gradient over the free nodes (the weak-form residual) and a
// curvature-regularized Hessian.

#include "apx/coefficients.hpp"
#include "apx/error.hpp"
#include "apx/geometry.hpp"
#include "apx/parallel.hpp"
#include "apx/varexp.hpp"

#include <Eigen/Sparse>

#include <array>
#include <cmath>
#include <memory>
#include <vector>

namespace apx {

/// Problem data bound to one function space, with the structural hypotheses
/// validated on construction and coefficient samples cached.
class ProblemData {
public:
  ProblemData(std::shared_ptr<const FunctionSpace> space, ExponentField p, MatrixField a,
              AlphaCoefficient alpha, SourceTerm f, double alpha_t_check = 1e3)
      : space_(std::move(space)), p_(std::move(p)), a_(std::move(a)), alpha_(std::move(alpha)),
        f_(std::move(f)) {
    if (p_.samples().size() != space_->num_points()) {
      throw InvariantViolation("exponent field was sampled on a different function space");
    }
    a_.check_ellipticity(*space_);
    alpha_.check_bounds(*space_, alpha_t_check);
    a_samples_ = a_.sample(*space_);
    f_samples_ = f_.sample(*space_);
  }

  const FunctionSpace& space() const { return *space_; }
  const std::shared_ptr<const FunctionSpace>& space_ptr() const noexcept { return space_; }
  const ExponentField& exponent() const noexcept { return p_; }
  const MatrixField& matrix() const noexcept { return a_; }
  const AlphaCoefficient& alpha() const noexcept { return alpha_; }
  const SourceTerm& source() const noexcept { return f_; }
  const std::vector<Sym2>& matrix_samples() const noexcept { return a_samples_; }
  const std::vector<double>& source_samples() const noexcept { return f_samples_; }

private:
  std::shared_ptr<const FunctionSpace> space_;
  ExponentField p_;
  MatrixField a_;
  AlphaCoefficient alpha_;
  SourceTerm f_;
  std::vector<Sym2> a_samples_;
  std::vector<double> f_samples_;
};

using SparseMatrix = Eigen::SparseMatrix<double>;

/// The problem with alpha's state argument frozen at a given field v.
class FrozenProblem {
public:
  FrozenProblem(std::shared_ptr<const ProblemData> data, const DiscreteField& v_frozen)
      : data_(std::move(data)) {
    const auto& space = data_->space();
    if (&v_frozen.mesh() != &space.mesh()) {
      throw InvariantViolation("frozen field lives on a different mesh");
    }
    alpha_samples_ = data_->alpha().sample(space, space.sample(v_frozen));
  }

  FrozenProblem(std::shared_ptr<const ProblemData> data, std::vector<double> alpha_samples)
      : data_(std::move(data)), alpha_samples_(std::move(alpha_samples)) {
    if (alpha_samples_.size() != data_->space().num_points()) {
      throw InvariantViolation("alpha samples do not match the quadrature point count");
    }
  }

  const ProblemData& data() const { return *data_; }
  const std::shared_ptr<const ProblemData>& data_ptr() const noexcept { return data_; }
  const FunctionSpace& space() const { return data_->space(); }
  const std::vector<double>& alpha_samples() const noexcept { return alpha_samples_; }

  double energy(const DiscreteField& u) const {
    const auto& space = data_->space();
    const std::size_t nq = space.points_per_element();
    const auto& rule = space.rule();
    const auto& p = data_->exponent().samples();
    const auto& a = data_->matrix_samples();
    const auto& f = data_->source_samples();
    const auto& w = space.weights();
    std::vector<double> local(space.num_elements());
    parallel_for(space.num_elements(), [&](std::size_t e) {
      const auto xi = space.gradient(u, e);
      const auto& t = space.mesh().triangle(e);
      double sum = 0.0;
      for (std::size_t k = 0; k < nq; ++k) {
        const std::size_t i = e * nq + k;
        const auto& b = rule.points[k];
        const double uq = b[0] * u[t[0]] + b[1] * u[t[1]] + b[2] * u[t[2]];
        const double q = a[i].quadratic(xi);
        const double density = q > 0.0 ? alpha_samples_[i] / p[i] * std::pow(q, 0.5 * p[i]) : 0.0;
        sum += w[i] * (density - f[i] * uq);
      }
      local[e] = sum;
    });
    double total = 0.0;
    for (double v : local) total += v;
    return total;
  }

  /// Component k is <J'(u), phi_k> for the hat function of the k-th free node.
  Eigen::VectorXd residual(const DiscreteField& u) const {
    const auto& space = data_->space();
    const std::size_t nq = space.points_per_element();
    const auto& rule = space.rule();
    const auto& p = data_->exponent().samples();
    const auto& a = data_->matrix_samples();
    const auto& f = data_->source_samples();
    const auto& w = space.weights();
    std::vector<std::array<double, 3>> local(space.num_elements());
    parallel_for(space.num_elements(), [&](std::size_t e) {
      const auto xi = space.gradient(u, e);
      const auto& g = space.gradients(e);
      std::array<double, 3> r{0.0, 0.0, 0.0};
      for (std::size_t k = 0; k < nq; ++k) {
        const std::size_t i = e * nq + k;
        const auto& b = rule.points[k];
        const double q = a[i].quadratic(xi);
        const double c = q > 0.0 ? alpha_samples_[i] * std::pow(q, 0.5 * (p[i] - 2.0)) : 0.0;
        const auto flux = a[i].apply(xi);
        for (int j = 0; j < 3; ++j) {
          r[j] += w[i] * (c * (flux[0] * g[j][0] + flux[1] * g[j][1]) - f[i] * b[j]);
        }
      }
      local[e] = r;
    });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space.num_free()));
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      const auto& t = space.mesh().triangle(e);
      for (int j = 0; j < 3; ++j) {
        const int k = space.free_index(t[j]);
        if (k >= 0) out[k] += local[e][j];
      }
    }
    return out;
  }

  /// Hessian of J over the free nodes with q replaced by q + eps_reg^2:
  ///   alpha [ (p-2) q^{(p-4)/2} (A xi)(A xi)^T + q^{(p-2)/2} A ].
  SparseMatrix hessian(const DiscreteField& u, double eps_reg) const {
    const auto& space = data_->space();
    const std::size_t nq = space.points_per_element();
    const auto& p = data_->exponent().samples();
    const auto& a = data_->matrix_samples();
    const auto& w = space.weights();
    const double reg = eps_reg * eps_reg;
    std::vector<std::array<double, 9>> local(space.num_elements());
    parallel_for(space.num_elements(), [&](std::size_t e) {
      const auto xi = space.gradient(u, e);
      const auto& g = space.gradients(e);
      std::array<double, 9> h{};
      for (std::size_t k = 0; k < nq; ++k) {
        const std::size_t i = e * nq + k;
        const double q = a[i].quadratic(xi) + reg;
        const auto axi = a[i].apply(xi);
        double c_iso = 0.0;
        double c_rank1 = 0.0;
        if (q > 0.0) {
          c_iso = alpha_samples_[i] * std::pow(q, 0.5 * (p[i] - 2.0));
          if (p[i] != 2.0) c_rank1 = alpha_samples_[i] * (p[i] - 2.0) * std::pow(q, 0.5 * (p[i] - 4.0));
        } else if (p[i] == 2.0) {
          c_iso = alpha_samples_[i];
        }
        std::array<double, 3> proj{};
        std::array<Vec2, 3> ag{};
        for (int j = 0; j < 3; ++j) {
          proj[j] = axi[0] * g[j][0] + axi[1] * g[j][1];
          ag[j] = a[i].apply(g[j]);
        }
        for (int r = 0; r < 3; ++r) {
          for (int c = r; c < 3; ++c) {
            double iso = g[r][0] * ag[c][0] + g[r][1] * ag[c][1];
            h[3 * r + c] += w[i] * (c_iso * iso + c_rank1 * proj[r] * proj[c]);
          }
        }
      }
      // mirror so the assembled matrix is exactly symmetric
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < r; ++c) h[3 * r + c] = h[3 * c + r];
      }
      local[e] = h;
    });
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * space.num_elements());
    for (std::size_t e = 0; e < space.num_elements(); ++e) {
      const auto& t = space.mesh().triangle(e);
      for (int r = 0; r < 3; ++r) {
        const int kr = space.free_index(t[r]);
        if (kr < 0) continue;
        for (int c = 0; c < 3; ++c) {
          const int kc = space.free_index(t[c]);
          if (kc < 0) continue;
          triplets.emplace_back(kr, kc, local[e][3 * r + c]);
        }
      }
    }
    const auto n = static_cast<Eigen::Index>(space.num_free());
    SparseMatrix h(n, n);
    h.setFromTriplets(triplets.begin(), triplets.end());
    return h;
  }

private:
  std::shared_ptr<const ProblemData> data_;
  std::vector<double> alpha_samples_;
};

} // namespace apx
