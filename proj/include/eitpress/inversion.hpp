#pragma once

// Ridge-regularized solve of the reduced quadratic system, square-root
// extraction of the pressure magnitude, a linearized isotropic EIT baseline
// and reconstruction scoring.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitpress/error.hpp"
#include "eitpress/forward.hpp"
#include "eitpress/membrane.hpp"
#include "eitpress/mesh.hpp"
#include "eitpress/sensitivity.hpp"

namespace eitpress {

/// Solves  (A^T A + c I) x = A^T b  for any ridge c > 0 through the spectral
/// decomposition of the smaller Gram matrix. When A has fewer rows than
/// columns this is the dual form  x = A^T (A A^T + c I)^{-1} b.
class RidgeSolver {
public:
    RidgeSolver(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) : A_(&A), b_(b) {
        detail::require(A.rows() == b.size(), "data length does not match the matrix rows");
        dual_ = A.rows() <= A.cols();
        Eigen::MatrixXd gram(dual_ ? A.rows() : A.cols(), dual_ ? A.rows() : A.cols());
        if (dual_) gram.noalias() = A * A.transpose();
        else gram.noalias() = A.transpose() * A;
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        if (eig.info() != Eigen::Success) throw SolverError("Gram eigendecomposition failed");
        values_ = eig.eigenvalues().cwiseMax(0.0);
        vectors_ = eig.eigenvectors();
        projected_ = vectors_.transpose() * (dual_ ? b_ : Eigen::VectorXd(A.transpose() * b_));
    }

    [[nodiscard]] Eigen::VectorXd solve(double ridge) const {
        detail::require(ridge > 0.0, "ridge term must be positive");
        const Eigen::VectorXd z = vectors_ * (projected_.array() / (values_.array() + ridge)).matrix();
        return dual_ ? Eigen::VectorXd(A_->transpose() * z) : z;
    }

    /// ||A x(ridge) - b||.
    [[nodiscard]] double residual(double ridge) const {
        if (dual_) {
            // A x - b = -ridge * (A A^T + ridge I)^{-1} b
            return ridge * (projected_.array() / (values_.array() + ridge)).matrix().norm();
        }
        return ((*A_) * solve(ridge) - b_).norm();
    }

    /// Largest ridge in [lo, hi] (log-bisection) whose residual does not
    /// exceed target. Residuals grow monotonically with the ridge.
    [[nodiscard]] double ridge_for_residual(double target, double lo, double hi, int steps = 200) const {
        if (residual(hi) <= target) return hi;
        if (residual(lo) >= target) return lo;
        double a = std::log(lo);
        double b = std::log(hi);
        for (int s = 0; s < steps && b - a > 1e-12; ++s) {
            const double mid = 0.5 * (a + b);
            if (residual(std::exp(mid)) <= target) a = mid;
            else b = mid;
        }
        return std::exp(a);
    }

    [[nodiscard]] double max_eigenvalue() const { return values_.size() ? values_.maxCoeff() : 0.0; }
    [[nodiscard]] bool dual() const { return dual_; }

private:
    const Eigen::MatrixXd* A_;
    Eigen::VectorXd b_;
    bool dual_ = true;
    Eigen::VectorXd values_;
    Eigen::MatrixXd vectors_;
    Eigen::VectorXd projected_;
};

/// Solution of the reduced system over the retained pairs.
struct QuadraticUnknown {
    Eigen::VectorXd values;
    std::vector<ElementPair> pair_map;
    int num_elements = 0;
    double beta = 0.0;
    double residual = 0.0;
    double solve_seconds = 0.0;
};

namespace detail {

inline Eigen::VectorXd checked_data(const SensitivitySystem& system, const VoltageDataset& W) {
    detail::require(W.count() == system.electrodes && system.rows() == static_cast<Eigen::Index>(W.values.size()),
                    "dataset size does not match the sensitivity rows");
    return W.flattened();
}

} // namespace detail

/// Ridge parameter convention: the normal equations carry sqrt(beta) on the
/// diagonal,  (S^T S + sqrt(beta) I) q = S^T W.
inline double ridge_from_beta(double beta) { return std::sqrt(beta); }
inline double beta_from_ridge(double ridge) { return ridge * ridge; }

inline QuadraticUnknown solve_reduced(const SensitivitySystem& system, const VoltageDataset& W, double beta) {
    detail::require(beta > 0.0, "beta must be positive");
    const auto start = std::chrono::steady_clock::now();
    const RidgeSolver ridge(system.entries, detail::checked_data(system, W));
    QuadraticUnknown q;
    q.values = ridge.solve(ridge_from_beta(beta));
    q.pair_map = system.pair_map;
    q.num_elements = system.num_elements;
    q.beta = beta;
    q.residual = ridge.residual(ridge_from_beta(beta));
    q.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return q;
}

/// Discrepancy principle: the largest beta whose data residual stays within
/// target_residual.
inline double discrepancy_beta(const Eigen::MatrixXd& A, const Eigen::VectorXd& data, double target_residual) {
    const RidgeSolver ridge(A, data);
    const double top = std::max(ridge.max_eigenvalue(), std::numeric_limits<double>::min());
    return beta_from_ridge(ridge.ridge_for_residual(target_residual, 1e-14 * top, 1e4 * top));
}

/// Reduced solve with beta picked by the discrepancy principle, sharing one
/// decomposition between the parameter search and the solve.
inline QuadraticUnknown solve_reduced_discrepancy(const SensitivitySystem& system, const VoltageDataset& W,
                                                  double target_residual) {
    const auto start = std::chrono::steady_clock::now();
    const RidgeSolver ridge(system.entries, detail::checked_data(system, W));
    const double top = std::max(ridge.max_eigenvalue(), std::numeric_limits<double>::min());
    const double c = ridge.ridge_for_residual(target_residual, 1e-14 * top, 1e4 * top);
    QuadraticUnknown q;
    q.values = ridge.solve(c);
    q.pair_map = system.pair_map;
    q.num_elements = system.num_elements;
    q.beta = beta_from_ridge(c);
    q.residual = ridge.residual(c);
    q.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return q;
}

/// Expected norm of i.i.d. noise at the given relative level.
inline double noise_norm(const VoltageDataset& W, double level) {
    return level * W.values.cwiseAbs().maxCoeff() * std::sqrt(static_cast<double>(W.values.size()));
}

struct ReconstructionResult {
    std::vector<double> pressure;  // per element; magnitudes, or signed for the baseline
    double residual = 0.0;
    int truncated = 0;
    double beta = 0.0;
    double solve_seconds = 0.0;
    bool baseline = false;
};

/// Pressure magnitude sqrt(max(q_kk, 0)) on every masked element; negative
/// diagonals are truncated and counted. Off-diagonal entries are not read.
inline ReconstructionResult extract_pressure(const QuadraticUnknown& q, const InteriorMask& mask) {
    detail::require(static_cast<int>(mask.flags.size()) == q.num_elements, "mask does not match the system");
    ReconstructionResult out;
    out.pressure.assign(q.num_elements, 0.0);
    std::vector<char> seen(q.num_elements, 0);
    for (std::size_t c = 0; c < q.pair_map.size(); ++c) {
        const auto& [k, l] = q.pair_map[c];
        if (k != l) continue;
        const double v = q.values[static_cast<Eigen::Index>(c)];
        if (v < 0.0) ++out.truncated;
        out.pressure[k] = std::sqrt(std::max(v, 0.0));
        seen[k] = 1;
    }
    for (int k : mask.elements)
        if (!seen[k]) throw InvalidArgument("system has no diagonal column for element " + std::to_string(k));
    for (int k = 0; k < q.num_elements; ++k)
        if (!mask.contains(k)) out.pressure[k] = 0.0;
    out.residual = q.residual;
    out.beta = q.beta;
    out.solve_seconds = q.solve_seconds;
    return out;
}

/// Linearized isotropic sensitivity  J_(ij),k = -area_k grad u_i . grad u_j.
inline Eigen::MatrixXd conventional_jacobian(const Mesh& mesh, const InjectionGradients& u0) {
    const int N = u0.count();
    Eigen::MatrixXd J(static_cast<Eigen::Index>(N) * N, mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k)
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < N; ++j)
                J(i * N + j, k) = -mesh.areas[k] * (u0.gx(i, k) * u0.gx(j, k) + u0.gy(i, k) * u0.gy(j, k));
    return J;
}

/// Conventional linearized difference imaging: per-element isotropic
/// conductivity change from ridge-regularized normal equations, using the
/// same sqrt(beta) ridge convention as the pressure solve.
inline ReconstructionResult conventional_recon(const VoltageDataset& W, const Mesh& mesh, const InjectionGradients& u0,
                                               double beta) {
    if (W.kind != DataKind::difference) throw InvalidArgument("conventional reconstruction needs difference data");
    detail::require(W.count() == u0.count(), "dataset size does not match the injection count");
    detail::require(beta > 0.0, "beta must be positive");
    const auto start = std::chrono::steady_clock::now();
    const Eigen::MatrixXd J = conventional_jacobian(mesh, u0);
    const RidgeSolver ridge(J, W.flattened());
    const Eigen::VectorXd sigma = ridge.solve(ridge_from_beta(beta));
    ReconstructionResult out;
    out.pressure.assign(sigma.data(), sigma.data() + sigma.size());
    out.residual = ridge.residual(ridge_from_beta(beta));
    out.beta = beta;
    out.baseline = true;
    out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline ReconstructionResult conventional_recon(const VoltageDataset& W, const Mesh& mesh, const ElectrodeLayout& layout,
                                               double beta, InjectionProtocol protocol = {}) {
    protocol.count = layout.count;
    return conventional_recon(W, mesh, homogeneous_gradients(mesh, layout, protocol), beta);
}

struct ReconstructionScore {
    double iou = 0.0;
    double magnitude_error = 0.0;
    std::vector<Point> true_centers;
    std::vector<Point> recon_centers;
    std::vector<double> center_errors;  // one per connected true component

    [[nodiscard]] double max_center_error() const {
        double m = 0.0;
        for (double e : center_errors) m = std::max(m, e);
        return m;
    }
};

/// Connected components (edge adjacency) of the elements with nonzero truth.
inline std::vector<std::vector<int>> support_components(const Mesh& mesh, std::span<const double> truth) {
    const auto adj = element_neighbors(mesh);
    std::vector<int> label(mesh.num_elements(), -1);
    std::vector<std::vector<int>> components;
    for (int seed = 0; seed < mesh.num_elements(); ++seed) {
        if (truth[seed] == 0.0 || label[seed] >= 0) continue;
        std::vector<int> stack = {seed};
        std::vector<int> members;
        label[seed] = static_cast<int>(components.size());
        while (!stack.empty()) {
            const int k = stack.back();
            stack.pop_back();
            members.push_back(k);
            for (int n : adj[k])
                if (truth[n] != 0.0 && label[n] < 0) {
                    label[n] = label[seed];
                    stack.push_back(n);
                }
        }
        std::sort(members.begin(), members.end());
        components.push_back(std::move(members));
    }
    return components;
}

/// Scores a magnitude reconstruction against the true pressure:
///  - IoU (area weighted) of {p_hat >= max(p_hat)/2} against the true support;
///  - relative L2 magnitude error on the true support;
///  - per true component, distance between its centroid and the centroid of
///    the reconstruction over the elements closest to that component, weighted
///    by the excess of p_hat over half of its maximum there.
inline ReconstructionScore score(const Mesh& mesh, const ReconstructionResult& result, const PressureField& truth) {
    const int K = mesh.num_elements();
    detail::require(static_cast<int>(result.pressure.size()) == K && static_cast<int>(truth.values.size()) == K,
                    "fields do not match the mesh");
    ReconstructionScore s;
    double peak = 0.0;
    for (double v : result.pressure) peak = std::max(peak, v);

    double inter = 0.0;
    double uni = 0.0;
    double err = 0.0;
    double ref = 0.0;
    for (int k = 0; k < K; ++k) {
        const bool in_truth = truth.values[k] != 0.0;
        const bool in_recon = peak > 0.0 && result.pressure[k] >= 0.5 * peak;
        if (in_truth && in_recon) inter += mesh.areas[k];
        if (in_truth || in_recon) uni += mesh.areas[k];
        if (in_truth) {
            err += mesh.areas[k] * std::pow(result.pressure[k] - std::abs(truth.values[k]), 2);
            ref += mesh.areas[k] * truth.values[k] * truth.values[k];
        }
    }
    s.iou = uni > 0.0 ? inter / uni : 1.0;
    s.magnitude_error = ref > 0.0 ? std::sqrt(err / ref) : 0.0;

    const auto components = support_components(mesh, truth.values);
    if (components.empty()) return s;
    std::vector<int> owner(K, 0);
    for (int k = 0; k < K; ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < components.size(); ++c)
            for (int m : components[c]) {
                const double d = (mesh.centroids[k] - mesh.centroids[m]).squaredNorm();
                if (d < best) {
                    best = d;
                    owner[k] = static_cast<int>(c);
                }
            }
    }
    for (std::size_t c = 0; c < components.size(); ++c) {
        Point center = Point::Zero();
        double mass = 0.0;
        for (int m : components[c]) {
            center += mesh.areas[m] * mesh.centroids[m];
            mass += mesh.areas[m];
        }
        center /= mass;
        double cell_peak = 0.0;
        for (int k = 0; k < K; ++k)
            if (owner[k] == static_cast<int>(c)) cell_peak = std::max(cell_peak, result.pressure[k]);
        Point recon = Point::Zero();
        double weight = 0.0;
        for (int k = 0; k < K; ++k) {
            if (owner[k] != static_cast<int>(c)) continue;
            const double w = mesh.areas[k] * std::max(result.pressure[k] - 0.5 * cell_peak, 0.0);
            recon += w * mesh.centroids[k];
            weight += w;
        }
        s.true_centers.push_back(center);
        if (weight > 0.0) {
            recon /= weight;
            s.recon_centers.push_back(recon);
            s.center_errors.push_back((recon - center).norm());
        } else {
            s.recon_centers.push_back(Point::Constant(std::numeric_limits<double>::quiet_NaN()));
            s.center_errors.push_back(std::numeric_limits<double>::infinity());
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline void write_element_csv(std::ostream& out, const std::string& column, std::span<const double> values) {
    out << std::setprecision(17) << "element," << column << "\n";
    for (std::size_t k = 0; k < values.size(); ++k) out << k << "," << values[k] << "\n";
}

/// Binary PGM of per-element values sampled on a regular grid over the
/// bounding box. Non-negative fields map [0, max] to [0, 255]; signed fields
/// map [-m, m] to [0, 255]. Pixels outside the domain are black.
inline void write_pgm(std::ostream& out, const Mesh& mesh, std::span<const double> values, int resolution = 128) {
    detail::require(static_cast<int>(values.size()) == mesh.num_elements(), "one value per element is required");
    double lo_x = std::numeric_limits<double>::infinity();
    double lo_y = lo_x;
    double hi_x = -lo_x;
    double hi_y = -lo_x;
    for (const auto& p : mesh.nodes) {
        lo_x = std::min(lo_x, p.x());
        lo_y = std::min(lo_y, p.y());
        hi_x = std::max(hi_x, p.x());
        hi_y = std::max(hi_y, p.y());
    }
    double vmax = 0.0;
    bool signed_field = false;
    for (double v : values) {
        vmax = std::max(vmax, std::abs(v));
        signed_field = signed_field || v < 0.0;
    }

    // bucket elements on a coarse grid for point location
    const int cells = std::max(1, static_cast<int>(std::sqrt(mesh.num_elements() / 2.0)));
    const double cw = (hi_x - lo_x) / cells;
    const double ch = (hi_y - lo_y) / cells;
    std::vector<std::vector<int>> bucket(static_cast<std::size_t>(cells) * cells);
    const auto cell_of = [&](double x, double lo, double w) { return std::clamp(static_cast<int>((x - lo) / w), 0, cells - 1); };
    for (int k = 0; k < mesh.num_elements(); ++k) {
        double ex0 = std::numeric_limits<double>::infinity(), ey0 = ex0, ex1 = -ex0, ey1 = -ex0;
        for (int v : mesh.elements[k]) {
            ex0 = std::min(ex0, mesh.nodes[v].x());
            ey0 = std::min(ey0, mesh.nodes[v].y());
            ex1 = std::max(ex1, mesh.nodes[v].x());
            ey1 = std::max(ey1, mesh.nodes[v].y());
        }
        for (int cy = cell_of(ey0, lo_y, ch); cy <= cell_of(ey1, lo_y, ch); ++cy)
            for (int cx = cell_of(ex0, lo_x, cw); cx <= cell_of(ex1, lo_x, cw); ++cx)
                bucket[static_cast<std::size_t>(cy) * cells + cx].push_back(k);
    }

    out << "P5\n" << resolution << " " << resolution << "\n255\n";
    std::vector<unsigned char> row(resolution);
    for (int py = resolution - 1; py >= 0; --py) {
        for (int px = 0; px < resolution; ++px) {
            const Point p(lo_x + (px + 0.5) * (hi_x - lo_x) / resolution, lo_y + (py + 0.5) * (hi_y - lo_y) / resolution);
            int found = -1;
            for (int k : bucket[static_cast<std::size_t>(cell_of(p.y(), lo_y, ch)) * cells + cell_of(p.x(), lo_x, cw)]) {
                const auto& t = mesh.elements[k];
                const double a = detail::signed_area(p, mesh.nodes[t[0]], mesh.nodes[t[1]]);
                const double b = detail::signed_area(p, mesh.nodes[t[1]], mesh.nodes[t[2]]);
                const double c = detail::signed_area(p, mesh.nodes[t[2]], mesh.nodes[t[0]]);
                if (a >= 0.0 && b >= 0.0 && c >= 0.0) {
                    found = k;
                    break;
                }
            }
            double level = 0.0;
            if (found >= 0 && vmax > 0.0)
                level = signed_field ? 0.5 + 0.5 * values[found] / vmax : values[found] / vmax;
            row[px] = static_cast<unsigned char>(std::lround(255.0 * std::clamp(level, 0.0, 1.0)));
        }
        out.write(reinterpret_cast<const char*>(row.data()), resolution);
    }
}

} // namespace eitpress
