#pragma once

// P1 assembly and the two sparse direct solvers used throughout: a Dirichlet
// problem with zero boundary values and a pure Neumann problem with the
// boundary-mean gauge.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "eitpress/error.hpp"
#include "eitpress/mesh.hpp"

namespace eitpress {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Tensor = Eigen::Matrix2d;

/// Stiffness matrix of  -div(C grad u)  with per-element constant tensors C.
inline SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const Tensor> coefficient) {
    detail::require(static_cast<int>(coefficient.size()) == mesh.num_elements(),
                    "one coefficient tensor per element is required");
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * mesh.elements.size());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto& tri = mesh.elements[k];
        const auto& g = mesh.gradients[k];
        for (int a = 0; a < 3; ++a) {
            const Point flux = coefficient[k] * g[a];
            for (int b = 0; b < 3; ++b) triplets.emplace_back(tri[b], tri[a], mesh.areas[k] * flux.dot(g[b]));
        }
    }
    SparseMatrix A(mesh.num_nodes(), mesh.num_nodes());
    A.setFromTriplets(triplets.begin(), triplets.end());
    return A;
}

inline SparseMatrix assemble_stiffness(const Mesh& mesh, std::span<const double> coefficient) {
    detail::require(static_cast<int>(coefficient.size()) == mesh.num_elements(),
                    "one coefficient per element is required");
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(9 * mesh.elements.size());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto& tri = mesh.elements[k];
        const auto& g = mesh.gradients[k];
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                triplets.emplace_back(tri[b], tri[a], coefficient[k] * mesh.areas[k] * g[a].dot(g[b]));
    }
    SparseMatrix A(mesh.num_nodes(), mesh.num_nodes());
    A.setFromTriplets(triplets.begin(), triplets.end());
    return A;
}

inline SparseMatrix assemble_laplacian(const Mesh& mesh) {
    const std::vector<double> ones(mesh.num_elements(), 1.0);
    return assemble_stiffness(mesh, ones);
}

/// Load vector of a per-element constant source:  (f, phi_v).
inline Eigen::VectorXd element_load(const Mesh& mesh, std::span<const double> source) {
    detail::require(static_cast<int>(source.size()) == mesh.num_elements(), "one source value per element is required");
    Eigen::VectorXd f = Eigen::VectorXd::Zero(mesh.num_nodes());
    for (int k = 0; k < mesh.num_elements(); ++k)
        for (int v : mesh.elements[k]) f[v] += source[k] * mesh.areas[k] / 3.0;
    return f;
}

/// Sparse LDL^T of a stiffness matrix restricted to the interior nodes.
/// The symbolic analysis is kept so that refactorize() only redoes the
/// numeric phase when the coefficient changes.
class DirichletSolver {
public:
    explicit DirichletSolver(const Mesh& mesh) : num_nodes_(mesh.num_nodes()), free_index_(mesh.num_nodes(), -1) {
        for (int v = 0; v < num_nodes_; ++v)
            if (!mesh.boundary_node[v]) {
                free_index_[v] = static_cast<int>(free_nodes_.size());
                free_nodes_.push_back(v);
            }
        if (free_nodes_.empty()) throw InvalidArgument("mesh has no interior nodes");
    }

    DirichletSolver(const Mesh& mesh, const SparseMatrix& stiffness) : DirichletSolver(mesh) { refactorize(stiffness); }

    void refactorize(const SparseMatrix& stiffness) {
        SparseMatrix reduced = restrict(stiffness);
        if (!analyzed_) {
            ldlt_.analyzePattern(reduced);
            analyzed_ = true;
        }
        ldlt_.factorize(reduced);
        if (ldlt_.info() != Eigen::Success) throw SolverError("Dirichlet stiffness factorization failed");
        if (ldlt_.vectorD().minCoeff() <= 0.0) throw SolverError("Dirichlet stiffness is not positive definite");
    }

    /// Solves for every column of `loads` (full nodal loads); boundary values
    /// of the result are exactly zero.
    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& loads) const {
        Eigen::MatrixXd rhs(free_nodes_.size(), loads.cols());
        for (std::size_t i = 0; i < free_nodes_.size(); ++i) rhs.row(i) = loads.row(free_nodes_[i]);
        const Eigen::MatrixXd x = ldlt_.solve(rhs);
        if (ldlt_.info() != Eigen::Success) throw SolverError("Dirichlet solve failed");
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(num_nodes_, loads.cols());
        for (std::size_t i = 0; i < free_nodes_.size(); ++i) out.row(free_nodes_[i]) = x.row(i);
        return out;
    }

    [[nodiscard]] Eigen::VectorXd solve(const Eigen::VectorXd& load) const {
        return solve(Eigen::MatrixXd(load)).col(0);
    }

    [[nodiscard]] const std::vector<int>& free_nodes() const { return free_nodes_; }

private:
    SparseMatrix restrict(const SparseMatrix& A) const {
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(A.nonZeros());
        for (int col = 0; col < A.outerSize(); ++col) {
            const int c = free_index_[col];
            if (c < 0) continue;
            for (SparseMatrix::InnerIterator it(A, col); it; ++it) {
                const int r = free_index_[it.row()];
                if (r >= 0) triplets.emplace_back(r, c, it.value());
            }
        }
        SparseMatrix reduced(free_nodes_.size(), free_nodes_.size());
        reduced.setFromTriplets(triplets.begin(), triplets.end());
        return reduced;
    }

    int num_nodes_;
    std::vector<int> free_index_;
    std::vector<int> free_nodes_;
    bool analyzed_ = false;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

/// Pure Neumann problem. One node is grounded to remove the constant kernel;
/// solutions are then shifted to zero mean over the boundary nodes.
class NeumannSolver {
public:
    NeumannSolver(const Mesh& mesh, SparseMatrix stiffness) : stiffness_(std::move(stiffness)) {
        for (int v = 0; v < mesh.num_nodes(); ++v)
            if (mesh.boundary_node[v]) boundary_nodes_.push_back(v);
        grounded_ = boundary_nodes_.front();

        SparseMatrix pinned = stiffness_;
        for (int col = 0; col < pinned.outerSize(); ++col)
            for (SparseMatrix::InnerIterator it(pinned, col); it; ++it)
                if (it.row() == grounded_ || it.col() == grounded_) it.valueRef() = (it.row() == it.col()) ? 1.0 : 0.0;
        ldlt_.compute(pinned);
        if (ldlt_.info() != Eigen::Success) throw SolverError("Neumann stiffness factorization failed");
        if (ldlt_.vectorD().minCoeff() <= 0.0)
            throw SolverError("Neumann stiffness is not positive semidefinite with a constant kernel");
    }

    /// Solves every column of `loads`; each column must carry zero net current.
    [[nodiscard]] Eigen::MatrixXd solve(const Eigen::MatrixXd& loads, double residual_tol = 1e-10) const {
        for (Eigen::Index c = 0; c < loads.cols(); ++c) {
            const double net = loads.col(c).sum();
            const double scale = loads.col(c).cwiseAbs().sum();
            if (std::abs(net) > 1e-12 * std::max(scale, 1e-300))
                throw InvalidArgument("incompatible Neumann data: net current " + std::to_string(net));
        }
        Eigen::MatrixXd rhs = loads;
        rhs.row(grounded_).setZero();
        Eigen::MatrixXd u = ldlt_.solve(rhs);
        if (ldlt_.info() != Eigen::Success) throw SolverError("Neumann solve failed");
        for (Eigen::Index c = 0; c < u.cols(); ++c) {
            double mean = 0.0;
            for (int v : boundary_nodes_) mean += u(v, c);
            mean /= static_cast<double>(boundary_nodes_.size());
            u.col(c).array() -= mean;
            const double norm = loads.col(c).norm();
            if (norm > 0.0) {
                const double residual = (stiffness_ * u.col(c) - loads.col(c)).norm() / norm;
                if (residual > residual_tol)
                    throw SolverError("Neumann solve residual " + std::to_string(residual) + " above tolerance");
            }
        }
        return u;
    }

    [[nodiscard]] const SparseMatrix& stiffness() const { return stiffness_; }

private:
    SparseMatrix stiffness_;
    std::vector<int> boundary_nodes_;
    int grounded_ = 0;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

} // namespace eitpress
