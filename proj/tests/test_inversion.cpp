#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "eitpress/inversion.hpp"

using namespace eitpress;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd A(rows, cols);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    return A;
}

Eigen::VectorXd dense_ridge(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, double c) {
    const Eigen::MatrixXd normal = A.transpose() * A + c * Eigen::MatrixXd::Identity(A.cols(), A.cols());
    return normal.ldlt().solve(A.transpose() * b);
}

struct Problem {
    Mesh mesh;
    ElectrodeLayout layout;
    InteriorMask mask;
    InjectionGradients u0;
    PressureField truth;
    VoltageDataset W;
};

// square with one pressed patch; W from the full nonlinear chain
Problem pressed_square(int K, int N, double magnitude) {
    Problem pr{build_square(K, 1.0), {}, {}, {}, {}, {}};
    pr.layout = place_electrodes(pr.mesh, N, 0.5);
    pr.mask = interior_mask(pr.mesh, 0.1);
    const InjectionProtocol protocol{N, 1.0};
    pr.u0 = homogeneous_gradients(pr.mesh, pr.layout, protocol);
    pr.truth.values.assign(pr.mesh.num_elements(), 0.0);
    for (int k = 0; k < pr.mesh.num_elements(); ++k) {
        const Point c = pr.mesh.centroids[k];
        if (c.x() > 0.25 && c.x() < 0.5 && c.y() > 0.5 && c.y() < 0.75) pr.truth.values[k] = magnitude;
    }
    const auto gamma = gamma_from_displacement(solve_membrane(pr.mesh, pr.truth).w);
    const auto loaded = simulate_voltages(pr.mesh, pr.layout, gamma, protocol).voltages;
    const auto reference = simulate_voltages(pr.mesh, pr.layout, isotropic_conductivity(pr.mesh), protocol).voltages;
    pr.W = difference_data(loaded, reference);
    return pr;
}

SensitivitySystem toy_system(const Eigen::MatrixXd& entries, int elements) {
    SensitivitySystem sys;
    sys.electrodes = static_cast<int>(std::lround(std::sqrt(static_cast<double>(entries.rows()))));
    sys.num_elements = elements;
    for (int k = 0; k < elements; ++k) sys.pair_map.push_back({k, k});
    sys.entries = entries;
    return sys;
}

VoltageDataset dataset(const Eigen::VectorXd& flat) {
    const int N = static_cast<int>(std::lround(std::sqrt(static_cast<double>(flat.size()))));
    VoltageDataset d;
    d.kind = DataKind::difference;
    d.values.resize(N, N);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) d.values(i, j) = flat[i * N + j];
    return d;
}

} // namespace

TEST(RidgeSolver, ScalarClosedForm) {
    Eigen::MatrixXd A(1, 1);
    A << 3.0;
    const RidgeSolver r(A, Eigen::VectorXd::Constant(1, 2.0));
    EXPECT_NEAR(r.solve(0.5)[0], 3.0 * 2.0 / (9.0 + 0.5), 1e-15);
    EXPECT_NEAR(r.residual(0.5), std::abs(3.0 * 6.0 / 9.5 - 2.0), 1e-15);
    EXPECT_THROW(r.solve(0.0), InvalidArgument);
}

TEST(RidgeSolver, DualAndPrimalMatchDenseNormalEquations) {
    for (const auto& [rows, cols] : {std::pair{16, 60}, std::pair{60, 16}}) {
        const Eigen::MatrixXd A = random_matrix(rows, cols, 3);
        const Eigen::VectorXd b = random_matrix(rows, 1, 4);
        const RidgeSolver r(A, b);
        EXPECT_EQ(r.dual(), rows <= cols);
        for (double c : {1e-3, 0.1, 10.0}) {
            const Eigen::VectorXd x = r.solve(c);
            const Eigen::VectorXd ref = dense_ridge(A, b, c);
            EXPECT_LE((x - ref).norm(), 1e-10 * ref.norm()) << rows << "x" << cols << " c=" << c;
            EXPECT_NEAR(r.residual(c), (A * x - b).norm(), 1e-10 * b.norm());
        }
    }
}

TEST(RidgeSolver, ResidualGrowsWithTheRidge) {
    const Eigen::MatrixXd A = random_matrix(20, 50, 8);
    const RidgeSolver r(A, random_matrix(20, 1, 9));
    double previous = 0.0;
    for (double c = 1e-6; c < 1e6; c *= 3.0) {
        const double res = r.residual(c);
        EXPECT_GE(res, previous);
        previous = res;
    }
    const double target = 0.5 * r.residual(1e6);
    const double c = r.ridge_for_residual(target, 1e-8, 1e8);
    EXPECT_LE(r.residual(c), target);
    EXPECT_NEAR(r.residual(c), target, 1e-6 * target);
}

TEST(ReducedSolve, ZeroDataGivesZero) {
    const SensitivitySystem sys = toy_system(random_matrix(16, 10, 1), 10);
    const VoltageDataset W = dataset(Eigen::VectorXd::Zero(16));
    const QuadraticUnknown q = solve_reduced(sys, W, 1e-4);
    EXPECT_EQ(q.values.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(q.residual, 0.0);
}

TEST(ReducedSolve, UsesSquareRootOfBeta) {
    const Eigen::MatrixXd A = random_matrix(16, 30, 2);
    const Eigen::VectorXd b = random_matrix(16, 1, 3);
    const QuadraticUnknown q = solve_reduced(toy_system(A, 30), dataset(b), 0.04);
    EXPECT_LE((q.values - dense_ridge(A, b, 0.2)).norm(), 1e-10 * q.values.norm());
    EXPECT_EQ(q.beta, 0.04);
    EXPECT_NEAR(q.residual, (A * q.values - b).norm(), 1e-12);
    EXPECT_THROW(solve_reduced(toy_system(A, 30), dataset(b), 0.0), InvalidArgument);
    EXPECT_THROW(solve_reduced(toy_system(A, 30), dataset(Eigen::VectorXd::Zero(9)), 1.0), InvalidArgument);
}

TEST(ReducedSolve, RecoversSmallDiagonalSystemExactly) {
    // W generated by the linear model itself; 8 electrodes give 20 independent
    // adjacent measurements for the few central unknowns
    const Mesh mesh = build_square(128, 1.0);
    const ElectrodeLayout layout = place_electrodes(mesh, 8, 0.5);
    const InteriorMask mask = interior_mask(mesh, 0.3);
    ASSERT_LE(mask.size(), 20);
    const auto u0 = homogeneous_gradients(mesh, layout, InjectionProtocol{8, 1.0});
    const auto sys = assemble_sensitivity(mesh, mask, build_basis(mesh, mask), u0, 0.0);
    std::vector<double> p(128, 0.0);
    for (int c = 0; c < mask.size(); ++c) p[mask.elements[c]] = 0.5 + 0.1 * c;
    const Eigen::VectorXd q_true = quadratic_unknowns(sys, p);
    const VoltageDataset W = dataset(sys.entries * q_true);
    const auto q = solve_reduced(sys, W, 1e-40);
    EXPECT_LE((q.values - q_true).norm(), 1e-6 * q_true.norm());
    const auto rec = extract_pressure(q, mask);
    for (int k = 0; k < 128; ++k) EXPECT_NEAR(rec.pressure[k], p[k], 1e-6);
}

TEST(ReducedSolve, SingleDiagonalPairAgainstDenseSolve) {
    // four electrodes see only two independent adjacent measurements, so the
    // vanishing-ridge limit is the minimum-norm solution
    const Mesh mesh = build_square(8, 1.0);
    const ElectrodeLayout layout = place_electrodes(mesh, 4, 0.5);
    const InteriorMask mask = interior_mask(mesh, 0.0);
    const auto u0 = homogeneous_gradients(mesh, layout, InjectionProtocol{4, 1.0});
    const auto sys = assemble_sensitivity(mesh, mask, build_basis(mesh, mask), u0, 0.0);
    Eigen::VectorXd q_star = Eigen::VectorXd::Zero(8);
    q_star[3] = 1.0;
    const Eigen::VectorXd b = sys.entries * q_star;
    // ridge 1e-14 sits far below the nonzero Gram spectrum (~1e-6) and far
    // above round-off in the null directions
    const auto q = solve_reduced(sys, dataset(b), 1e-28);
    const Eigen::VectorXd dense = sys.entries.completeOrthogonalDecomposition().pseudoInverse() * b;
    EXPECT_LE((q.values - dense).norm(), 1e-6 * dense.norm());
    EXPECT_LE((sys.entries * q.values - b).norm(), 1e-6 * b.norm());
}

TEST(ReducedSolve, NormShrinksAsBetaGrows) {
    const Problem pr = pressed_square(128, 8, 2.0);
    const auto sys = assemble_sensitivity(pr.mesh, pr.mask, build_basis(pr.mesh, pr.mask), pr.u0, 2.0 * pr.mesh.h, true);
    double previous = std::numeric_limits<double>::infinity();
    for (double beta = 1e-24; beta <= 1e-8; beta *= 10.0) {
        const double norm = solve_reduced(sys, pr.W, beta).values.norm();
        EXPECT_LE(norm, previous) << beta;
        previous = norm;
    }
}

TEST(Discrepancy, MatchesTheTargetResidual) {
    const Problem pr = pressed_square(128, 8, 2.0);
    const auto basis = build_basis(pr.mesh, pr.mask);
    const auto sys = assemble_sensitivity(pr.mesh, pr.mask, basis, pr.u0, 3.0 * pr.mesh.h, true);
    const VoltageDataset noisy = add_noise(pr.W, 0.01, 21);
    const double target = noise_norm(noisy, 0.01);
    EXPECT_NEAR(target, 0.01 * noisy.values.cwiseAbs().maxCoeff() * 8.0, 1e-15);
    const auto q = solve_reduced_discrepancy(sys, noisy, target);
    EXPECT_NEAR(q.residual, target, 1e-6 * target);
    const double injected = (noisy.values - pr.W.values).norm();
    EXPECT_LT(q.residual, 2.0 * injected);
    EXPECT_GT(q.residual, 0.5 * injected);
    // same beta through the standalone search
    EXPECT_NEAR(discrepancy_beta(sys.entries, noisy.flattened(), target), q.beta, 1e-9 * q.beta);
    const auto again = solve_reduced(sys, noisy, q.beta);
    EXPECT_LE((again.values - q.values).norm(), 1e-9 * q.values.norm());
}

TEST(Extraction, SquareRootOfDiagonalWithTruncation) {
    const Mesh mesh = build_square(8, 1.0);
    const InteriorMask mask = interior_mask(mesh, 0.0);
    QuadraticUnknown q;
    q.num_elements = 8;
    for (int k = 0; k < 8; ++k) q.pair_map.push_back({k, k});
    q.pair_map.push_back({0, 1});
    q.values = Eigen::VectorXd::Zero(9);
    q.values << 4.0, -0.3, 0.0, 1.0, 2.25, 0.01, -1.0, 9.0, 123.0;
    const auto out = extract_pressure(q, mask);
    const std::vector<double> expected = {2.0, 0.0, 0.0, 1.0, 1.5, 0.1, 0.0, 3.0};
    for (int k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(out.pressure[k], expected[k]);
    EXPECT_EQ(out.truncated, 2);
    EXPECT_FALSE(out.baseline);

    // squaring the extracted magnitudes and extracting again is the identity
    QuadraticUnknown squared = q;
    for (int k = 0; k < 8; ++k) squared.values[k] = out.pressure[k] * out.pressure[k];
    EXPECT_EQ(extract_pressure(squared, mask).pressure, out.pressure);

    // off-diagonal entries are never read
    QuadraticUnknown perturbed = q;
    perturbed.values[8] = -1e6;
    EXPECT_EQ(extract_pressure(perturbed, mask).pressure, out.pressure);

    q.pair_map[3] = {0, 2};
    EXPECT_THROW(extract_pressure(q, mask), InvalidArgument);
}

TEST(Extraction, OutsideTheMaskIsZero) {
    const Mesh mesh = build_square(128, 1.0);
    const InteriorMask mask = interior_mask(mesh, 0.2);
    QuadraticUnknown q;
    q.num_elements = 128;
    for (int k : mask.elements) q.pair_map.push_back({k, k});
    q.values = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(q.pair_map.size()));
    const auto out = extract_pressure(q, mask);
    for (int k = 0; k < 128; ++k) EXPECT_EQ(out.pressure[k], mask.contains(k) ? 1.0 : 0.0);
}

TEST(Conventional, ZeroDataAndKindCheck) {
    const Problem pr = pressed_square(128, 8, 2.0);
    VoltageDataset zero = pr.W;
    zero.values.setZero();
    const auto out = conventional_recon(zero, pr.mesh, pr.u0, 1e-6);
    EXPECT_TRUE(out.baseline);
    for (double v : out.pressure) EXPECT_EQ(v, 0.0);
    VoltageDataset absolute = pr.W;
    absolute.kind = DataKind::absolute;
    EXPECT_THROW(conventional_recon(absolute, pr.mesh, pr.u0, 1e-6), InvalidArgument);
}

TEST(Conventional, StrongerRegularizationShrinksTheImage) {
    const Problem pr = pressed_square(128, 8, 2.0);
    double previous = std::numeric_limits<double>::infinity();
    double previous_residual = 0.0;
    for (double beta : {1e-12, 1e-9, 1e-6, 1e-3}) {
        const auto out = conventional_recon(pr.W, pr.mesh, pr.u0, beta);
        double norm = 0.0;
        for (double v : out.pressure) norm += v * v;
        EXPECT_LT(norm, previous);
        EXPECT_GE(out.residual, previous_residual);
        previous = norm;
        previous_residual = out.residual;
    }
}

TEST(Conventional, ConductivityDropsUnderThePatch) {
    // gamma <= I, so the isotropic fit sees lower conductivity where pressed
    const Problem pr = pressed_square(512, 16, 2.0);
    const auto J = conventional_jacobian(pr.mesh, pr.u0);
    const double beta = discrepancy_beta(J, pr.W.flattened(), 0.05 * pr.W.flattened().norm());
    const auto out = conventional_recon(pr.W, pr.mesh, pr.layout, beta, InjectionProtocol{16, 1.0});
    double inside = 0.0;
    for (int k = 0; k < pr.mesh.num_elements(); ++k)
        if (pr.truth.values[k] != 0.0) inside += pr.mesh.areas[k] * out.pressure[k];
    EXPECT_LT(inside, 0.0);
}

TEST(Score, PerfectAndEmptyReconstructions) {
    const Mesh mesh = build_square(512, 1.0);
    PressureField truth;
    truth.values.assign(512, 0.0);
    for (int k = 0; k < 512; ++k) {
        const Point c = mesh.centroids[k];
        if (c.x() > 0.1875 && c.x() < 0.4375 && c.y() > 0.1875 && c.y() < 0.4375) truth.values[k] = 1.0;
        if ((c - Point(0.7, 0.7)).norm() < 0.12) truth.values[k] = -2.0;
    }
    ReconstructionResult exact;
    exact.pressure.resize(512);
    for (int k = 0; k < 512; ++k) exact.pressure[k] = std::abs(truth.values[k]) > 0 ? 1.0 : 0.0;
    const auto s = score(mesh, exact, truth);
    EXPECT_DOUBLE_EQ(s.iou, 1.0);
    ASSERT_EQ(s.center_errors.size(), 2u);
    EXPECT_NEAR(s.max_center_error(), 0.0, 1e-12);
    EXPECT_NEAR(s.true_centers[0].x(), 0.3125, 1e-12);

    ReconstructionResult none;
    none.pressure.assign(512, 0.0);
    const auto z = score(mesh, none, truth);
    EXPECT_EQ(z.iou, 0.0);
    EXPECT_NEAR(z.magnitude_error, 1.0, 1e-12);
    EXPECT_TRUE(std::isinf(z.max_center_error()));
}

TEST(Score, ShiftedBlobHasMatchingCenterError) {
    const Mesh mesh = build_square(512, 1.0);
    PressureField truth;
    truth.values.assign(512, 0.0);
    ReconstructionResult shifted;
    shifted.pressure.assign(512, 0.0);
    for (int k = 0; k < 512; ++k) {
        const Point c = mesh.centroids[k];
        if (c.x() > 0.25 && c.x() < 0.5 && c.y() > 0.25 && c.y() < 0.5) truth.values[k] = 1.0;
        if (c.x() > 0.3125 && c.x() < 0.5625 && c.y() > 0.25 && c.y() < 0.5) shifted.pressure[k] = 1.0;
    }
    const auto s = score(mesh, shifted, truth);
    EXPECT_NEAR(s.max_center_error(), 0.0625, 1e-12);
    EXPECT_NEAR(s.iou, 12.0 / 20.0, 1e-12);
}

TEST(Output, CsvAndPgm) {
    const Mesh mesh = build_square(32, 1.0);
    std::vector<double> values(32);
    for (int k = 0; k < 32; ++k) values[k] = k / 31.0;
    std::stringstream csv;
    write_element_csv(csv, "pressure", values);
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "element,pressure");

    std::stringstream pgm;
    write_pgm(pgm, mesh, values, 16);
    const std::string bytes = pgm.str();
    const std::string head = "P5\n16 16\n255\n";
    ASSERT_EQ(bytes.size(), head.size() + 256);
    EXPECT_EQ(bytes.substr(0, head.size()), head);
    int brightest = 0;
    for (std::size_t i = head.size(); i < bytes.size(); ++i) brightest = std::max(brightest, static_cast<unsigned char>(bytes[i]) + 0);
    EXPECT_GT(brightest, 200);
    EXPECT_THROW(write_pgm(pgm, mesh, std::vector<double>(3), 16), InvalidArgument);
}
