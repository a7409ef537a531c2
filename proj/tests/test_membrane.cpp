#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "eitpress/membrane.hpp"
#include "eitpress/sensitivity.hpp"

using namespace eitpress;

namespace {

PressureField central_patch(const Mesh& m, double value, double half_width = 0.2) {
    PressureField p;
    p.values.assign(m.num_elements(), 0.0);
    for (int k = 0; k < m.num_elements(); ++k)
        if ((m.centroids[k] - Point(0.5, 0.5)).cwiseAbs().maxCoeff() < half_width) p.values[k] = value;
    return p;
}

MembraneSettings quiet() {
    MembraneSettings s;
    s.warn = false;
    return s;
}

} // namespace

TEST(Membrane, ZeroPressureNeedsNoIteration) {
    const Mesh m = build_square(32, 1.0);
    const auto sol = solve_membrane(m, PressureField{std::vector<double>(32, 0.0)});
    EXPECT_EQ(sol.iterations, 0);
    EXPECT_EQ(sol.w.nodal.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Membrane, ConvergesWithStrictlyDecreasingResidual) {
    const Mesh m = build_square(512, 1.0);
    const auto sol = solve_membrane(m, central_patch(m, 2.0));
    ASSERT_GE(sol.residuals.size(), 3u);
    for (std::size_t i = 1; i < sol.residuals.size(); ++i) EXPECT_LT(sol.residuals[i], sol.residuals[i - 1]);
    EXPECT_LE(sol.residuals.back(), 1e-8);
    EXPECT_LT(sol.iterations, 20);
}

TEST(Membrane, ClampedBoundaryIsExactlyZero) {
    const Mesh m = build_disk(661, 5.0);
    PressureField p;
    p.values.assign(m.num_elements(), 0.0);
    for (int k = 0; k < m.num_elements(); ++k)
        if (m.centroids[k].norm() < 2.0) p.values[k] = 0.05;
    const auto sol = solve_membrane(m, p);
    for (int v = 0; v < m.num_nodes(); ++v)
        if (m.boundary_node[v]) EXPECT_EQ(sol.w.nodal[v], 0.0);
}

TEST(Membrane, SignSymmetry) {
    const Mesh m = build_square(128, 1.0);
    const PressureField p = central_patch(m, 1.5);
    const auto plus = solve_membrane(m, p);
    const auto minus = solve_membrane(m, p.scaled(-1.0));
    EXPECT_LE((plus.w.nodal + minus.w.nodal).cwiseAbs().maxCoeff(), 1e-12 * plus.w.nodal.cwiseAbs().maxCoeff());
}

TEST(Membrane, SmallPressureApproachesPoisson) {
    // || w - v ||_E / || v ||_E scales like eps^2, where Laplace v = p
    const Mesh m = build_square(512, 1.0);
    const PressureField base = central_patch(m, 4.0);
    const auto gap = [&](double eps) {
        const PressureField p = base.scaled(eps);
        const auto w = solve_membrane(m, p, quiet()).w;
        const auto v = poisson_solve(m, p.values);
        std::vector<Point> diff(m.num_elements());
        for (int k = 0; k < m.num_elements(); ++k) diff[k] = w.gradients[k] - v.gradients[k];
        return energy_norm(m, diff) / energy_norm(m, v.gradients);
    };
    const double C = gap(0.2) / (0.2 * 0.2);
    EXPECT_GT(C, 0.0);
    for (double eps : {0.1, 0.05}) EXPECT_LE(gap(eps), C * eps * eps) << eps;
}

TEST(Membrane, RejectsPressureBeyondBound) {
    const Mesh m = build_square(32, 1.0);
    MembraneSettings s;
    s.alpha = 1.0;
    EXPECT_THROW(solve_membrane(m, central_patch(m, 1.5), s), InvalidArgument);
}

TEST(Membrane, ReportsNonConvergence) {
    const Mesh m = build_square(128, 1.0);
    MembraneSettings s = quiet();
    s.max_iter = 2;
    EXPECT_THROW(solve_membrane(m, central_patch(m, 3.0), s), NonConvergence);
}

TEST(Poisson, ZeroRightHandSide) {
    const Mesh m = build_square(32, 1.0);
    EXPECT_EQ(poisson_solve(m, std::vector<double>(32, 0.0)).nodal.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Poisson, IndicatorIsMinusBasisSolution) {
    const Mesh m = build_square(128, 1.0);
    const InteriorMask mask = interior_mask(m, 0.0);
    const BasisBank basis = build_basis(m, mask);
    const int k = 77;
    std::vector<double> chi(m.num_elements(), 0.0);
    chi[k] = 1.0;
    const auto v = poisson_solve(m, chi);
    EXPECT_LE((v.nodal + basis.nodal.col(k)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Poisson, ConstantSourceOnUnitDisk) {
    // Laplace v = 1, v = 0 on r = 1:  v = (r^2 - 1) / 4,  grad v = (r/2) e_r
    Mesh m = build_disk(661, 1.0);
    std::vector<double> value_err;
    std::vector<double> grad_err;
    std::vector<double> h;
    for (int level = 0; level < 3; ++level) {
        const auto v = poisson_solve(m, std::vector<double>(m.num_elements(), 1.0));
        double e = 0.0;
        for (int i = 0; i < m.num_nodes(); ++i) e += std::pow(v.nodal[i] - (m.nodes[i].squaredNorm() - 1.0) / 4.0, 2);
        e = std::sqrt(e / m.num_nodes());
        double g = 0.0;
        for (int k = 0; k < m.num_elements(); ++k) g += m.areas[k] * (v.gradients[k] - 0.5 * m.centroids[k]).squaredNorm();
        g = std::sqrt(g);
        value_err.push_back(e);
        grad_err.push_back(g);
        h.push_back(m.h);
        m = refine(m);
    }
    for (int level = 1; level < 3; ++level) {
        // O(h^2) rms values, O(h) L2 gradients
        EXPECT_LE(value_err[level] / (h[level] * h[level]), 1.2 * value_err[0] / (h[0] * h[0])) << level;
        EXPECT_LE(grad_err[level] / h[level], 1.2 * grad_err[0] / h[0]) << level;
        EXPECT_LT(value_err[level], value_err[level - 1]);
    }
}

TEST(DisplacementGradient, LinearFieldsAreExact) {
    const Mesh m = build_disk(200, 1.0);
    Eigen::VectorXd x(m.num_nodes());
    for (int v = 0; v < m.num_nodes(); ++v) x[v] = 3.0 * m.nodes[v].x() - 2.0 * m.nodes[v].y();
    for (const auto& g : displacement_gradient(m, x).gradients) EXPECT_LT((g - Point(3.0, -2.0)).norm(), 1e-12);
    EXPECT_THROW(displacement_gradient(m, Eigen::VectorXd::Zero(3)), InvalidArgument);
}

TEST(RadialExample, ProfileIsContinuouslyDifferentiableAtTheInnerCircle) {
    for (double rho : {-0.1, 0.0, 0.05, 0.3}) {
        const RadialExample ex(rho);
        EXPECT_NEAR(ex.w(2.0 - 1e-9), ex.w(2.0 + 1e-9), 1e-8);
        EXPECT_NEAR(ex.dw(2.0 - 1e-9), ex.dw(2.0 + 1e-9), 1e-8);
        EXPECT_NEAR(ex.w(5.0), 0.0, 1e-15);
    }
}

TEST(RadialExample, OuterProfileHasZeroMeanCurvature) {
    const RadialExample ex(0.05);
    for (double r : {2.1, 3.0, 4.0, 4.9}) EXPECT_NEAR(ex.pressure(r), 0.0, 1e-8) << r;
}

TEST(RadialExample, PressureMatchesExpandedCurvature) {
    // (w'' + w'/r + w'^3/r) / (1 + w'^2)^{3/2}, with w'' from the cubic
    for (double rho : {-0.05, 0.02, 0.1}) {
        const RadialExample ex(rho);
        const double c2 = -3.0 * rho + RadialExample::dpsi(2.0) / 4.0;
        for (double r : {0.3, 1.0, 1.7}) {
            const double d1 = ex.dw(r);
            const double d2 = 6.0 * rho * r + 2.0 * c2;
            const double expected = (d2 + d1 / r + d1 * d1 * d1 / r) / std::pow(1.0 + d1 * d1, 1.5);
            EXPECT_NEAR(ex.pressure(r), expected, 1e-7) << rho << " " << r;
        }
    }
}

TEST(RadialExample, OutsideInnerDiskIndependentOfRho) {
    const Mesh m = build_disk(661, 5.0);
    const auto a = radial_example(0.05, m);
    const auto b = radial_example(-0.2, m);
    for (int v = 0; v < m.num_nodes(); ++v)
        if (m.nodes[v].norm() >= 2.0) EXPECT_EQ(a.w.nodal[v], b.w.nodal[v]);
    for (int k = 0; k < m.num_elements(); ++k) {
        const auto& t = m.elements[k];
        if (detail::origin_distance(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]) >= 2.0) {
            EXPECT_EQ(a.p.values[k], 0.0);
            EXPECT_EQ(b.p.values[k], 0.0);
        }
    }
}

TEST(RadialExample, MembraneRecoversProfileAtSecondOrder) {
    // root-mean-square nodal error over three nested meshes
    for (double rho : {0.0, 0.02, 0.05}) {
        Mesh m = build_disk(661, 5.0);
        std::vector<double> rms;
        for (int level = 0; level < 3; ++level) {
            const auto s = radial_example(rho, m);
            const auto w = solve_membrane(m, s.p, quiet()).w;
            rms.push_back((w.nodal - s.w.nodal).norm() / std::sqrt(static_cast<double>(m.num_nodes())));
            m = refine(m);
        }
        EXPECT_GE(rms[0] / rms[1], 3.5) << rho;
        EXPECT_GE(rms[1] / rms[2], 3.5) << rho;
    }
}

TEST(RadialExample, NeedsTheRadiusFiveDisk) {
    EXPECT_THROW(radial_example(0.1, build_disk(661, 1.0)), InvalidArgument);
    EXPECT_THROW(radial_example(0.1, build_square(32, 1.0)), InvalidArgument);
}

TEST(FieldFiles, RoundTrip) {
    const Mesh m = build_square(128, 1.0);
    const PressureField p = central_patch(m, 1.0 / 3.0);
    const auto w = solve_membrane(m, p).w;
    std::stringstream pbuf;
    write_pressure_csv(pbuf, p);
    EXPECT_EQ(read_pressure_csv(pbuf).values, p.values);
    std::stringstream wbuf;
    write_displacement_csv(wbuf, w);
    const auto back = read_displacement_csv(wbuf, m);
    EXPECT_EQ(back.nodal, w.nodal);
    for (int k = 0; k < m.num_elements(); ++k) EXPECT_EQ(back.gradients[k], w.gradients[k]);
}
