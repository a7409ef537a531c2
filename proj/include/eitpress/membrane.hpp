#pragma once

// Membrane deflection under pressure: the prescribed mean curvature equation
//     div( grad w / sqrt(1 + |grad w|^2) ) = p  in the domain,  w = 0 on the boundary,
// its small-slope Poisson limit, and a closed-form radial test case.

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitpress/error.hpp"
#include "eitpress/fem.hpp"
#include "eitpress/mesh.hpp"

namespace eitpress {

/// Piecewise constant pressure, one value per element.
struct PressureField {
    std::vector<double> values;

    [[nodiscard]] double max_abs() const {
        double m = 0.0;
        for (double v : values) m = std::max(m, std::abs(v));
        return m;
    }

    [[nodiscard]] PressureField scaled(double factor) const {
        PressureField out = *this;
        for (double& v : out.values) v *= factor;
        return out;
    }
};

/// True when the pressure vanishes outside the mask.
inline bool supported_in(const PressureField& p, const InteriorMask& mask) {
    for (std::size_t k = 0; k < p.values.size(); ++k)
        if (p.values[k] != 0.0 && !mask.contains(static_cast<int>(k))) return false;
    return true;
}

/// Nodal deflection with its per-element constant gradient.
struct DisplacementField {
    Eigen::VectorXd nodal;
    std::vector<Point> gradients;

    [[nodiscard]] double max_slope() const {
        double m = 0.0;
        for (const auto& g : gradients) m = std::max(m, g.norm());
        return m;
    }
};

inline DisplacementField displacement_gradient(const Mesh& mesh, Eigen::VectorXd nodal) {
    detail::require(nodal.size() == mesh.num_nodes(), "nodal values must cover every node");
    DisplacementField w;
    w.gradients = element_gradients(mesh, nodal);
    w.nodal = std::move(nodal);
    return w;
}

/// Energy seminorm  sqrt( sum_k area_k |grad w_k|^2 ).
inline double energy_norm(const Mesh& mesh, const std::vector<Point>& gradients) {
    double e = 0.0;
    for (int k = 0; k < mesh.num_elements(); ++k) e += mesh.areas[k] * gradients[k].squaredNorm();
    return std::sqrt(e);
}

/// Solution of  Laplace(v) = rhs  with zero boundary values.
inline DisplacementField poisson_solve(const Mesh& mesh, std::span<const double> rhs) {
    for (double v : rhs)
        if (!std::isfinite(v)) throw InvalidArgument("Poisson right-hand side is not finite");
    const DirichletSolver solver(mesh, assemble_laplacian(mesh));
    return displacement_gradient(mesh, solver.solve(Eigen::VectorXd(-element_load(mesh, rhs))));
}

struct MembraneSettings {
    double tol = 1e-8;      // relative update and relative residual threshold
    int max_iter = 100;
    double alpha = 10.0;    // admissible bound on max |p|
    double slope_warning = 0.5;
    bool warn = true;
};

struct MembraneSolution {
    DisplacementField w;
    int iterations = 0;
    std::vector<double> residuals;  // relative residual before each update, then after
    bool steep = false;             // max slope exceeded slope_warning
};

namespace detail {

inline Eigen::VectorXd membrane_residual(const Mesh& mesh, const DisplacementField& w, const Eigen::VectorXd& load) {
    std::vector<double> coeff(mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k) coeff[k] = 1.0 / std::sqrt(1.0 + w.gradients[k].squaredNorm());
    Eigen::VectorXd r = assemble_stiffness(mesh, coeff) * w.nodal + load;
    for (int v = 0; v < mesh.num_nodes(); ++v)
        if (mesh.boundary_node[v]) r[v] = 0.0;
    return r;
}

} // namespace detail

/// Picard (frozen coefficient) iteration from w = 0:
///   div( a_n grad w_{n+1} ) = p,  a_n = 1 / sqrt(1 + |grad w_n|^2).
/// Stops when both the relative update and the relative residual of the
/// nonlinear weak form drop below tol. The residual must decrease strictly
/// at every step; a stall raises NonConvergence.
inline MembraneSolution solve_membrane(const Mesh& mesh, const PressureField& p, const MembraneSettings& settings = {}) {
    detail::require(static_cast<int>(p.values.size()) == mesh.num_elements(), "one pressure value per element is required");
    detail::require(settings.tol > 0.0, "tolerance must be positive");
    for (double v : p.values)
        if (!std::isfinite(v)) throw InvalidArgument("pressure is not finite");
    if (!(p.max_abs() < settings.alpha))
        throw InvalidArgument("max |p| = " + std::to_string(p.max_abs()) + " violates the admissible bound " +
                              std::to_string(settings.alpha));

    const Eigen::VectorXd load = element_load(mesh, p.values);
    Eigen::VectorXd free_load = load;
    for (int v = 0; v < mesh.num_nodes(); ++v)
        if (mesh.boundary_node[v]) free_load[v] = 0.0;
    const double load_norm = free_load.norm();

    MembraneSolution sol;
    sol.w = displacement_gradient(mesh, Eigen::VectorXd::Zero(mesh.num_nodes()));
    if (load_norm == 0.0) {
        sol.residuals.push_back(0.0);
        return sol;
    }
    sol.residuals.push_back(1.0);

    DirichletSolver solver(mesh);
    std::vector<double> coeff(mesh.num_elements());
    for (int n = 1; n <= settings.max_iter; ++n) {
        for (int k = 0; k < mesh.num_elements(); ++k)
            coeff[k] = 1.0 / std::sqrt(1.0 + sol.w.gradients[k].squaredNorm());
        solver.refactorize(assemble_stiffness(mesh, coeff));
        DisplacementField next = displacement_gradient(mesh, solver.solve(Eigen::VectorXd(-load)));

        const double next_norm = next.nodal.norm();
        const double update = next_norm > 0.0 ? (next.nodal - sol.w.nodal).norm() / next_norm : 0.0;
        sol.w = std::move(next);
        sol.iterations = n;
        const double residual = detail::membrane_residual(mesh, sol.w, load).norm() / load_norm;
        const double previous = sol.residuals.back();
        sol.residuals.push_back(residual);

        if (update <= settings.tol && residual <= settings.tol) {
            sol.steep = sol.w.max_slope() > settings.slope_warning;
            if (sol.steep && settings.warn)
                std::cerr << "warning: membrane slope " << sol.w.max_slope() << " exceeds "
                          << settings.slope_warning << "; small-slope approximations degrade\n";
            return sol;
        }
        if (!(residual < previous))
            throw NonConvergence("membrane Picard iteration stalled at step " + std::to_string(n) +
                                 " (residual " + std::to_string(residual) + ")");
    }
    throw NonConvergence("membrane Picard iteration did not converge in " + std::to_string(settings.max_iter) +
                         " iterations");
}

/// Radially symmetric deflection on the disk of radius 5 that is identical
/// outside the disk of radius 2 for every value of the shape parameter rho.
/// Outside, the profile is the catenoid  a*log(r + sqrt(r^2 - a^2)) with
/// a^2 = 1/2, which has zero mean curvature; inside, a cubic joined with C^1
/// continuity at r = 2.
class RadialExample {
public:
    static constexpr double domain_radius = 5.0;
    static constexpr double inner_radius = 2.0;

    explicit RadialExample(double rho) : rho_(rho) {}

    [[nodiscard]] double rho() const { return rho_; }

    [[nodiscard]] static double psi(double r) { return neck * std::log(r + std::sqrt(r * r - neck * neck)); }
    [[nodiscard]] static double dpsi(double r) { return neck / std::sqrt(r * r - neck * neck); }

    [[nodiscard]] double w(double r) const {
        if (r >= inner_radius) return psi(r) - psi(domain_radius);
        const double c2 = -3.0 * rho_ + dpsi(inner_radius) / 4.0;
        const double c0 = psi(inner_radius) - psi(domain_radius) - dpsi(inner_radius) + 4.0 * rho_;
        return rho_ * r * r * r + c2 * r * r + c0;
    }

    [[nodiscard]] double dw(double r) const {
        if (r >= inner_radius) return dpsi(r);
        const double c2 = -3.0 * rho_ + dpsi(inner_radius) / 4.0;
        return 3.0 * rho_ * r * r + 2.0 * c2 * r;
    }

    /// Mean-curvature pressure  (1/r) d/dr ( r w' / sqrt(1 + w'^2) ),
    /// differentiated by central differences.
    [[nodiscard]] double pressure(double r) const {
        const auto flux = [this](double s) {
            const double d = dw(s);
            return s * d / std::sqrt(1.0 + d * d);
        };
        const double step = std::min(1e-5, 0.5 * r);
        return (flux(r + step) - flux(r - step)) / (2.0 * step * r);
    }

private:
    static constexpr double neck = 0.70710678118654752440;  // sqrt(1/2)
    double rho_;
};

namespace detail {

// 7-point degree-5 rule on the reference triangle (barycentric weights).
inline constexpr double dunavant5[7][4] = {
    {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.225},
    {0.059715871789770, 0.470142064105115, 0.470142064105115, 0.132394152788506},
    {0.470142064105115, 0.059715871789770, 0.470142064105115, 0.132394152788506},
    {0.470142064105115, 0.470142064105115, 0.059715871789770, 0.132394152788506},
    {0.797426985353087, 0.101286507323456, 0.101286507323456, 0.125939180544827},
    {0.101286507323456, 0.797426985353087, 0.101286507323456, 0.125939180544827},
    {0.101286507323456, 0.101286507323456, 0.797426985353087, 0.125939180544827},
};

inline double origin_distance(const Point& a, const Point& b, const Point& c) {
    const double s0 = signed_area(Point::Zero(), a, b);
    const double s1 = signed_area(Point::Zero(), b, c);
    const double s2 = signed_area(Point::Zero(), c, a);
    if ((s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0)) return 0.0;
    const Point o = Point::Zero();
    return std::min({segment_distance(o, a, b), segment_distance(o, b, c), segment_distance(o, c, a)});
}

// Integral of f(|x|) over a triangle, subdividing pieces cut by the circle
// of radius `kink` where f jumps.
template <class F>
double radial_integral(const F& f, const Point& a, const Point& b, const Point& c, double kink, int depth) {
    const double r_max = std::max({a.norm(), b.norm(), c.norm()});
    if (depth > 0 && origin_distance(a, b, c) < kink && r_max > kink) {
        const Point ab = 0.5 * (a + b);
        const Point bc = 0.5 * (b + c);
        const Point ca = 0.5 * (c + a);
        return radial_integral(f, a, ab, ca, kink, depth - 1) + radial_integral(f, ab, b, bc, kink, depth - 1) +
               radial_integral(f, ca, bc, c, kink, depth - 1) + radial_integral(f, ab, bc, ca, kink, depth - 1);
    }
    const double area = std::abs(signed_area(a, b, c));
    double sum = 0.0;
    for (const auto& q : dunavant5) sum += q[3] * f((q[0] * a + q[1] * b + q[2] * c).norm());
    return area * sum;
}

} // namespace detail

struct RadialSample {
    DisplacementField w;
    PressureField p;
};

/// Nodal closed-form deflection and element-averaged pressure of the radial
/// example on a mesh of the radius-5 disk.
inline RadialSample radial_example(double rho, const Mesh& mesh) {
    detail::require(mesh.shape == Shape::disk && std::abs(mesh.size - RadialExample::domain_radius) < 1e-12,
                    "radial example needs a mesh of the disk of radius 5");
    detail::require(std::isfinite(rho), "rho must be finite");
    const RadialExample ex(rho);

    Eigen::VectorXd nodal(mesh.num_nodes());
    for (int v = 0; v < mesh.num_nodes(); ++v) nodal[v] = mesh.boundary_node[v] ? 0.0 : ex.w(mesh.nodes[v].norm());

    RadialSample out;
    out.w = displacement_gradient(mesh, std::move(nodal));
    out.p.values.resize(mesh.num_elements());
    const auto f = [&ex](double r) { return r < RadialExample::inner_radius ? ex.pressure(r) : 0.0; };
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto& t = mesh.elements[k];
        const double integral = detail::radial_integral(f, mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]],
                                                        RadialExample::inner_radius, 12);
        out.p.values[k] = integral / mesh.areas[k];
    }
    return out;
}

// CSV: "element,pressure" and "node,w".

inline void write_pressure_csv(std::ostream& out, const PressureField& p) {
    out << std::setprecision(17) << "element,pressure\n";
    for (std::size_t k = 0; k < p.values.size(); ++k) out << k << "," << p.values[k] << "\n";
}

inline void write_displacement_csv(std::ostream& out, const DisplacementField& w) {
    out << std::setprecision(17) << "node,w\n";
    for (Eigen::Index v = 0; v < w.nodal.size(); ++v) out << v << "," << w.nodal[v] << "\n";
}

namespace detail {

inline std::vector<double> read_indexed_csv(std::istream& in, const std::string& header) {
    std::string line;
    if (!std::getline(in, line) || line != header) throw FormatError("expected CSV header '" + header + "'");
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw FormatError("malformed CSV row '" + line + "'");
        const long index = std::stol(line.substr(0, comma));
        if (index != static_cast<long>(values.size())) throw FormatError("CSV index out of sequence");
        values.push_back(std::stod(line.substr(comma + 1)));
    }
    return values;
}

} // namespace detail

inline PressureField read_pressure_csv(std::istream& in) { return {detail::read_indexed_csv(in, "element,pressure")}; }

inline DisplacementField read_displacement_csv(std::istream& in, const Mesh& mesh) {
    const auto values = detail::read_indexed_csv(in, "node,w");
    if (static_cast<int>(values.size()) != mesh.num_nodes()) throw FormatError("displacement CSV does not match mesh");
    return displacement_gradient(mesh, Eigen::Map<const Eigen::VectorXd>(values.data(), values.size()));
}

} // namespace eitpress
