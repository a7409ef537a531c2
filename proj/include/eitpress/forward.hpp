#pragma once

// Forward EIT model of the deformed membrane: apparent conductivity tensor,
// adjacent-drive injection solves (gap electrode model) and voltage datasets.

#include <cmath>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitpress/error.hpp"
#include "eitpress/fem.hpp"
#include "eitpress/membrane.hpp"
#include "eitpress/mesh.hpp"

namespace eitpress {

/// Per-element 2x2 tensor  I - grad w grad w^T / (1 + |grad w|^2).
struct ConductivityField {
    std::vector<Tensor> tensors;
};

inline Tensor apparent_conductivity(const Point& slope) {
    return Tensor::Identity() - slope * slope.transpose() / (1.0 + slope.squaredNorm());
}

inline ConductivityField gamma_from_displacement(const DisplacementField& w) {
    ConductivityField gamma;
    gamma.tensors.reserve(w.gradients.size());
    for (const auto& g : w.gradients) gamma.tensors.push_back(apparent_conductivity(g));
    return gamma;
}

inline ConductivityField isotropic_conductivity(const Mesh& mesh, double sigma = 1.0) {
    return {std::vector<Tensor>(mesh.num_elements(), sigma * Tensor::Identity())};
}

struct SpdViolation {
    int element = -1;
    std::string reason;
};

/// First element whose tensor is not symmetric positive definite, if any.
inline std::optional<SpdViolation> find_spd_violation(const ConductivityField& gamma, double symmetry_tol = 1e-12) {
    for (std::size_t k = 0; k < gamma.tensors.size(); ++k) {
        const Tensor& t = gamma.tensors[k];
        if (std::abs(t(0, 1) - t(1, 0)) > symmetry_tol * std::max(1.0, t.cwiseAbs().maxCoeff()))
            return SpdViolation{static_cast<int>(k), "tensor is not symmetric"};
        if (!(t(0, 0) > 0.0) || !(t.determinant() > 0.0))
            return SpdViolation{static_cast<int>(k), "tensor is not positive definite"};
    }
    return std::nullopt;
}

/// Adjacent drive: pattern j injects +I0 through electrode j and extracts it
/// through electrode j+1 (cyclic), with uniform current density on each arc.
struct InjectionProtocol {
    int count = 16;
    double current = 1.0;  // I0

    /// Nodal Neumann load of pattern j.
    [[nodiscard]] Eigen::VectorXd load(const ElectrodeLayout& layout, int j) const {
        detail::require(j >= 0 && j < count && count == layout.count, "injection pattern out of range");
        return current * (layout.weights.col(j) - layout.weights.col((j + 1) % count));
    }

    [[nodiscard]] Eigen::MatrixXd loads(const ElectrodeLayout& layout) const {
        Eigen::MatrixXd out(layout.weights.rows(), count);
        for (int j = 0; j < count; ++j) out.col(j) = load(layout, j);
        return out;
    }
};

/// One factorization of the anisotropic stiffness shared by every injection.
class ForwardSolver {
public:
    ForwardSolver(const Mesh& mesh, const ElectrodeLayout& layout, const ConductivityField& gamma,
                  InjectionProtocol protocol = {})
        : layout_(&layout), protocol_(protocol),
          solver_(mesh, assemble_stiffness(mesh, std::span<const Tensor>(gamma.tensors))) {
        detail::require(protocol_.count == layout.count, "protocol and layout disagree on electrode count");
    }

    /// Potential of injection pattern j (boundary mean zero).
    [[nodiscard]] Eigen::VectorXd solve_injection(int j) const {
        return solver_.solve(Eigen::MatrixXd(protocol_.load(*layout_, j))).col(0);
    }

    /// Potentials of all patterns, column j = pattern j.
    [[nodiscard]] Eigen::MatrixXd solve_all() const { return solver_.solve(protocol_.loads(*layout_)); }

    [[nodiscard]] const SparseMatrix& stiffness() const { return solver_.stiffness(); }
    [[nodiscard]] const InjectionProtocol& protocol() const { return protocol_; }

private:
    const ElectrodeLayout* layout_;
    InjectionProtocol protocol_;
    NeumannSolver solver_;
};

enum class DataKind { absolute, difference };

inline std::string to_string(DataKind kind) { return kind == DataKind::absolute ? "absolute" : "difference"; }

/// N x N boundary voltages; entry (i, j) is the i-th adjacent voltage under
/// the j-th injection.
struct VoltageDataset {
    Eigen::MatrixXd values;
    DataKind kind = DataKind::absolute;
    double current = 1.0;
    double noise_level = 0.0;

    [[nodiscard]] int count() const { return static_cast<int>(values.rows()); }

    /// Row-major flattening: index i*N + j holds entry (i, j).
    [[nodiscard]] Eigen::VectorXd flattened() const {
        Eigen::VectorXd out(values.size());
        for (int i = 0; i < count(); ++i)
            for (int j = 0; j < count(); ++j) out[i * count() + j] = values(i, j);
        return out;
    }
};

/// V(i, j) = I0 * (mean of u^j over arc i  -  mean over arc i+1).
inline VoltageDataset measure_voltages(const ElectrodeLayout& layout, const Eigen::MatrixXd& potentials, double current) {
    const int N = layout.count;
    detail::require(potentials.cols() == N && potentials.rows() == layout.weights.rows(),
                    "one potential per injection pattern is required");
    const Eigen::MatrixXd arc_means = layout.weights.transpose() * potentials;  // N x N
    VoltageDataset data;
    data.values.resize(N, N);
    for (int i = 0; i < N; ++i) data.values.row(i) = current * (arc_means.row(i) - arc_means.row((i + 1) % N));
    data.kind = DataKind::absolute;
    data.current = current;
    return data;
}

/// Potentials for all patterns and the resulting absolute dataset.
struct ForwardResult {
    Eigen::MatrixXd potentials;
    VoltageDataset voltages;
};

inline ForwardResult simulate_voltages(const Mesh& mesh, const ElectrodeLayout& layout, const ConductivityField& gamma,
                                       InjectionProtocol protocol = {}) {
    const ForwardSolver solver(mesh, layout, gamma, protocol);
    ForwardResult out;
    out.potentials = solver.solve_all();
    out.voltages = measure_voltages(layout, out.potentials, protocol.current);
    return out;
}

inline VoltageDataset difference_data(const VoltageDataset& loaded, const VoltageDataset& reference) {
    if (loaded.kind != DataKind::absolute || reference.kind != DataKind::absolute)
        throw InvalidArgument("difference data needs two absolute datasets");
    detail::require(loaded.values.rows() == reference.values.rows() && loaded.values.cols() == reference.values.cols(),
                    "datasets have different sizes");
    VoltageDataset out;
    out.values = loaded.values - reference.values;
    out.kind = DataKind::difference;
    out.current = loaded.current;
    out.noise_level = loaded.noise_level;
    return out;
}

/// Adds i.i.d. Gaussian noise with standard deviation level * max |entry|.
inline VoltageDataset add_noise(const VoltageDataset& data, double level, std::uint64_t seed) {
    detail::require(level >= 0.0, "noise level must be non-negative");
    VoltageDataset out = data;
    out.noise_level = level;
    if (level == 0.0) return out;
    const double sigma = level * data.values.cwiseAbs().maxCoeff();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < out.values.rows(); ++i)
        for (int j = 0; j < out.values.cols(); ++j) out.values(i, j) += sigma * gauss(rng);
    return out;
}

/// Largest |V(i,j) - V(j,i)| relative to max |V|.
inline double reciprocity_error(const VoltageDataset& data) {
    const double scale = data.values.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    return (data.values - data.values.transpose()).cwiseAbs().maxCoeff() / scale;
}

// CSV layout: one header line "# kind=<k>,N=<n>,I0=<i>,noise=<l>", then N rows.

inline void write_dataset_csv(std::ostream& out, const VoltageDataset& data) {
    out << std::setprecision(17);
    out << "# kind=" << to_string(data.kind) << ",N=" << data.count() << ",I0=" << data.current
        << ",noise=" << data.noise_level << "\n";
    for (int i = 0; i < data.count(); ++i) {
        for (int j = 0; j < data.count(); ++j) out << (j ? "," : "") << data.values(i, j);
        out << "\n";
    }
}

inline VoltageDataset read_dataset_csv(std::istream& in) {
    std::string header;
    if (!std::getline(in, header) || header.rfind("# ", 0) != 0) throw FormatError("dataset CSV: missing header");
    VoltageDataset data;
    int N = -1;
    std::stringstream fields(header.substr(2));
    std::string field;
    while (std::getline(fields, field, ',')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw FormatError("dataset CSV: malformed header field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        if (key == "kind") {
            if (value == "absolute") data.kind = DataKind::absolute;
            else if (value == "difference") data.kind = DataKind::difference;
            else throw FormatError("dataset CSV: unknown kind '" + value + "'");
        } else if (key == "N") {
            N = std::stoi(value);
        } else if (key == "I0") {
            data.current = std::stod(value);
        } else if (key == "noise") {
            data.noise_level = std::stod(value);
        }
    }
    if (N <= 0) throw FormatError("dataset CSV: missing N");
    data.values.resize(N, N);
    std::string line;
    for (int i = 0; i < N; ++i) {
        if (!std::getline(in, line)) throw FormatError("dataset CSV: truncated");
        std::stringstream row(line);
        std::string cell;
        for (int j = 0; j < N; ++j) {
            if (!std::getline(row, cell, ',')) throw FormatError("dataset CSV: short row");
            data.values(i, j) = std::stod(cell);
        }
    }
    return data;
}

} // namespace eitpress
