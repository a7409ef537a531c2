#pragma once

// Quadratic sensitivity of difference voltages with respect to products of
// element pressures, and its reduction to nearby element pairs.
//
// For interior elements k, l and injections i, j:
//   S_kl^ij = 1/2 * integral of (grad v_k . grad u_i)(grad v_l . grad u_j)
//                             + (grad v_l . grad u_i)(grad v_k . grad u_j)
// where -Laplace(v_k) = indicator of T_k with v_k = 0 on the boundary and u_i
// is the homogeneous (unit conductivity) potential of injection i. Every
// factor is constant per element, so the integral is an exact sum.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "eitpress/error.hpp"
#include "eitpress/fem.hpp"
#include "eitpress/forward.hpp"
#include "eitpress/mesh.hpp"

namespace eitpress {

using ElementPair = std::array<int, 2>;

/// Sparse operators mapping nodal values to per-element gradient components.
struct GradientOperator {
    SparseMatrix dx;  // K x nodes
    SparseMatrix dy;
};

inline GradientOperator gradient_operator(const Mesh& mesh) {
    std::vector<Eigen::Triplet<double>> tx;
    std::vector<Eigen::Triplet<double>> ty;
    tx.reserve(3 * mesh.elements.size());
    ty.reserve(3 * mesh.elements.size());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        for (int a = 0; a < 3; ++a) {
            tx.emplace_back(k, mesh.elements[k][a], mesh.gradients[k][a].x());
            ty.emplace_back(k, mesh.elements[k][a], mesh.gradients[k][a].y());
        }
    }
    GradientOperator op{SparseMatrix(mesh.num_elements(), mesh.num_nodes()),
                        SparseMatrix(mesh.num_elements(), mesh.num_nodes())};
    op.dx.setFromTriplets(tx.begin(), tx.end());
    op.dy.setFromTriplets(ty.begin(), ty.end());
    return op;
}

/// Basis solutions v_k for the interior elements, one column per element.
struct BasisBank {
    std::vector<int> elements;  // column c belongs to element elements[c]
    Eigen::MatrixXd nodal;      // nodes x K_int
    Eigen::MatrixXd grad_x;     // K x K_int
    Eigen::MatrixXd grad_y;

    [[nodiscard]] int size() const { return static_cast<int>(elements.size()); }
};

inline BasisBank build_basis(const Mesh& mesh, const InteriorMask& mask) {
    if (mask.elements.empty()) throw InvalidArgument("basis bank needs a nonempty interior mask");
    BasisBank bank;
    bank.elements = mask.elements;
    const int n = bank.size();
    Eigen::MatrixXd loads = Eigen::MatrixXd::Zero(mesh.num_nodes(), n);
    for (int c = 0; c < n; ++c) {
        const int k = bank.elements[c];
        for (int v : mesh.elements[k]) loads(v, c) += mesh.areas[k] / 3.0;
    }
    const DirichletSolver solver(mesh, assemble_laplacian(mesh));
    bank.nodal = solver.solve(loads);
    const GradientOperator grad = gradient_operator(mesh);
    bank.grad_x = grad.dx * bank.nodal;
    bank.grad_y = grad.dy * bank.nodal;
    return bank;
}

/// Per-element gradients of the N homogeneous injection potentials.
struct InjectionGradients {
    Eigen::MatrixXd gx;  // N x K
    Eigen::MatrixXd gy;

    [[nodiscard]] int count() const { return static_cast<int>(gx.rows()); }
};

inline InjectionGradients injection_gradients(const Mesh& mesh, const Eigen::MatrixXd& potentials) {
    const GradientOperator grad = gradient_operator(mesh);
    return {(grad.dx * potentials).transpose(), (grad.dy * potentials).transpose()};
}

/// Homogeneous potentials for the adjacent protocol and their gradients.
inline InjectionGradients homogeneous_gradients(const Mesh& mesh, const ElectrodeLayout& layout,
                                                InjectionProtocol protocol = {}) {
    const ForwardSolver solver(mesh, layout, isotropic_conductivity(mesh), protocol);
    return injection_gradients(mesh, solver.solve_all());
}

/// Centroid distance between elements k and l.
inline double pair_distance(const Mesh& mesh, int k, int l) {
    detail::require(k >= 0 && l >= 0 && k < mesh.num_elements() && l < mesh.num_elements(), "element index out of range");
    return (mesh.centroids[k] - mesh.centroids[l]).norm();
}

namespace detail {

// Distances equal to delta up to rounding count as retained.
inline bool within(double distance, double delta) { return distance <= delta * (1.0 + 1e-12) + 1e-300; }

} // namespace detail

/// Retained pairs in column order: diagonal pairs (k, k) by k first, then
/// off-diagonal pairs with centroid distance <= delta in lexicographic order
/// (k < l only when merged).
inline std::vector<ElementPair> retained_pairs(const Mesh& mesh, const InteriorMask& mask, double delta, bool merged) {
    detail::require(delta >= 0.0, "reduction radius must be non-negative");
    std::vector<ElementPair> pairs;
    for (int k : mask.elements) pairs.push_back({k, k});
    for (int k : mask.elements)
        for (int l : mask.elements) {
            if (l == k || (merged && l < k)) continue;
            if (detail::within(pair_distance(mesh, k, l), delta)) pairs.push_back({k, l});
        }
    return pairs;
}

/// Column count of the reduced matrix without materializing the pair list.
inline std::int64_t count_columns(const Mesh& mesh, const InteriorMask& mask, double delta, bool merged) {
    detail::require(delta >= 0.0, "reduction radius must be non-negative");
    std::int64_t count = 0;
    for (int k : mask.elements)
        for (int l : mask.elements) {
            if (merged && l < k) continue;
            if (l == k || detail::within(pair_distance(mesh, k, l), delta)) ++count;
        }
    return count;
}

/// Reduced sensitivity matrix. Row i*N + j holds injection pair (i, j);
/// column c holds element pair pair_map[c].
struct SensitivitySystem {
    int electrodes = 0;
    int num_elements = 0;  // elements of the underlying mesh
    double delta = 0.0;
    bool merged = false;
    std::vector<ElementPair> pair_map;
    Eigen::MatrixXd entries;

    [[nodiscard]] Eigen::Index rows() const { return entries.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return entries.cols(); }
};

namespace detail {

// a_c(i, e) = grad v_c(e) . grad u_i(e), stored transposed as K x N blocks.
inline Eigen::MatrixXd projected_gradients(const BasisBank& basis, const InjectionGradients& u0) {
    const Eigen::Index K = basis.grad_x.rows();
    const int N = u0.count();
    Eigen::MatrixXd blocks(K, static_cast<Eigen::Index>(N) * basis.size());
    for (int c = 0; c < basis.size(); ++c)
        blocks.middleCols(static_cast<Eigen::Index>(c) * N, N) =
            (u0.gx.transpose().array().colwise() * basis.grad_x.col(c).array() +
             u0.gy.transpose().array().colwise() * basis.grad_y.col(c).array())
                .matrix();
    return blocks;
}

} // namespace detail

/// Streams every column of the sensitivity matrix for the given pairs.
/// `sink(column, entries)` is called once per column in ascending order
/// within each group of pairs sharing a first element.
inline void for_each_column(const Mesh& mesh, const BasisBank& basis, const InjectionGradients& u0,
                            const std::vector<ElementPair>& pairs, bool merged,
                            const std::function<void(std::size_t, const Eigen::Ref<const Eigen::VectorXd>&)>& sink) {
    const int N = u0.count();
    detail::require(u0.gx.cols() == mesh.num_elements(), "injection gradients do not match the mesh");
    std::vector<int> column_of(mesh.num_elements(), -1);
    for (int c = 0; c < basis.size(); ++c) column_of[basis.elements[c]] = c;

    const Eigen::MatrixXd blocks = detail::projected_gradients(basis, u0);
    const Eigen::Map<const Eigen::VectorXd> area(mesh.areas.data(), mesh.num_elements());

    std::vector<std::vector<std::size_t>> by_first(basis.size());
    for (std::size_t c = 0; c < pairs.size(); ++c) {
        const int ck = column_of[pairs[c][0]];
        if (ck < 0 || column_of[pairs[c][1]] < 0) throw InvalidArgument("pair references an element without basis");
        by_first[ck].push_back(c);
    }

    Eigen::VectorXd column(static_cast<Eigen::Index>(N) * N);
    for (int ck = 0; ck < basis.size(); ++ck) {
        const auto& group = by_first[ck];
        if (group.empty()) continue;
        const Eigen::MatrixXd weighted =
            (blocks.middleCols(static_cast<Eigen::Index>(ck) * N, N).array().colwise() * area.array()).matrix().transpose();
        Eigen::MatrixXd gathered(blocks.rows(), static_cast<Eigen::Index>(N) * group.size());
        for (std::size_t g = 0; g < group.size(); ++g)
            gathered.middleCols(static_cast<Eigen::Index>(g) * N, N) =
                blocks.middleCols(static_cast<Eigen::Index>(column_of[pairs[group[g]][1]]) * N, N);
        const Eigen::MatrixXd products = weighted * gathered;  // N x (N * group)
        for (std::size_t g = 0; g < group.size(); ++g) {
            const auto M = products.middleCols(static_cast<Eigen::Index>(g) * N, N);
            const auto& pair = pairs[group[g]];
            const double scale = (merged && pair[0] != pair[1]) ? 2.0 : 1.0;
            for (int i = 0; i < N; ++i)
                for (int j = 0; j < N; ++j) column[i * N + j] = 0.5 * scale * (M(i, j) + M(j, i));
            sink(group[g], column);
        }
    }
}

inline SensitivitySystem assemble_sensitivity(const Mesh& mesh, const InteriorMask& mask, const BasisBank& basis,
                                              const InjectionGradients& u0, double delta, bool merged = false) {
    SensitivitySystem sys;
    sys.electrodes = u0.count();
    sys.num_elements = mesh.num_elements();
    sys.delta = delta;
    sys.merged = merged;
    sys.pair_map = retained_pairs(mesh, mask, delta, merged);
    if (sys.pair_map.empty()) throw InvalidArgument("no element pairs retained");
    sys.entries.resize(static_cast<Eigen::Index>(sys.electrodes) * sys.electrodes,
                       static_cast<Eigen::Index>(sys.pair_map.size()));
    for_each_column(mesh, basis, u0, sys.pair_map, merged,
                    [&sys](std::size_t c, const Eigen::Ref<const Eigen::VectorXd>& col) {
                        sys.entries.col(static_cast<Eigen::Index>(c)) = col;
                    });
    return sys;
}

/// q with q_c = p_k p_l for every column pair (k, l).
inline Eigen::VectorXd quadratic_unknowns(const SensitivitySystem& sys, std::span<const double> pressure) {
    detail::require(static_cast<int>(pressure.size()) == sys.num_elements, "one pressure value per element is required");
    Eigen::VectorXd q(sys.cols());
    for (Eigen::Index c = 0; c < sys.cols(); ++c) q[c] = pressure[sys.pair_map[c][0]] * pressure[sys.pair_map[c][1]];
    return q;
}

/// Largest |S| over each centroid-distance bin [b*width, (b+1)*width).
inline std::vector<double> binned_column_max(const Mesh& mesh, const BasisBank& basis, const InjectionGradients& u0,
                                             const InteriorMask& mask, double width) {
    detail::require(width > 0.0, "bin width must be positive");
    const auto pairs = retained_pairs(mesh, mask, mesh.diameter() * 2.0, true);
    std::vector<double> bins;
    for_each_column(mesh, basis, u0, pairs, false, [&](std::size_t c, const Eigen::Ref<const Eigen::VectorXd>& col) {
        const auto bin = static_cast<std::size_t>(pair_distance(mesh, pairs[c][0], pairs[c][1]) / width);
        if (bins.size() <= bin) bins.resize(bin + 1, 0.0);
        bins[bin] = std::max(bins[bin], col.cwiseAbs().maxCoeff());
    });
    return bins;
}

// ---------------------------------------------------------------------------
// On-disk layout of a SensitivitySystem (directory):
//   sensitivity.txt  key/value header
//   pair_map.csv     "column,k,l"
//   entries.bin      rows*cols little-endian float64, column-major
//   entries.csv      same payload as text, only written for small systems
// ---------------------------------------------------------------------------

inline constexpr Eigen::Index csv_fallback_columns = 4096;

inline void write_sensitivity(const std::filesystem::path& dir, const SensitivitySystem& sys) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream out(dir / "sensitivity.txt");
        out << std::setprecision(17);
        out << "eitpress-sensitivity 1\n"
            << "rows " << sys.rows() << "\n"
            << "cols " << sys.cols() << "\n"
            << "electrodes " << sys.electrodes << "\n"
            << "elements " << sys.num_elements << "\n"
            << "delta " << sys.delta << "\n"
            << "merged " << (sys.merged ? 1 : 0) << "\n"
            << "payload entries.bin float64-le column-major\n";
    }
    {
        std::ofstream out(dir / "pair_map.csv");
        out << "column,k,l\n";
        for (std::size_t c = 0; c < sys.pair_map.size(); ++c)
            out << c << "," << sys.pair_map[c][0] << "," << sys.pair_map[c][1] << "\n";
    }
    {
        std::ofstream out(dir / "entries.bin", std::ios::binary);
        if constexpr (std::endian::native == std::endian::little) {
            out.write(reinterpret_cast<const char*>(sys.entries.data()),
                      static_cast<std::streamsize>(sys.entries.size() * sizeof(double)));
        } else {
            for (Eigen::Index i = 0; i < sys.entries.size(); ++i) {
                auto bits = std::bit_cast<std::uint64_t>(sys.entries.data()[i]);
                bits = __builtin_bswap64(bits);
                out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
            }
        }
        if (!out) throw Error("failed writing " + (dir / "entries.bin").string());
    }
    if (sys.cols() <= csv_fallback_columns) {
        std::ofstream out(dir / "entries.csv");
        out << std::setprecision(17);
        for (Eigen::Index r = 0; r < sys.rows(); ++r) {
            for (Eigen::Index c = 0; c < sys.cols(); ++c) out << (c ? "," : "") << sys.entries(r, c);
            out << "\n";
        }
    }
}

inline SensitivitySystem read_sensitivity(const std::filesystem::path& dir) {
    SensitivitySystem sys;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    {
        std::ifstream in(dir / "sensitivity.txt");
        if (!in) throw FormatError("missing " + (dir / "sensitivity.txt").string());
        std::string key;
        std::string line;
        in >> key;
        if (key != "eitpress-sensitivity") throw FormatError("not a sensitivity header");
        std::getline(in, line);
        while (in >> key) {
            if (key == "rows") in >> rows;
            else if (key == "cols") in >> cols;
            else if (key == "electrodes") in >> sys.electrodes;
            else if (key == "elements") in >> sys.num_elements;
            else if (key == "delta") in >> sys.delta;
            else if (key == "merged") {
                int m = 0;
                in >> m;
                sys.merged = m != 0;
            } else std::getline(in, line);
        }
    }
    if (rows != static_cast<Eigen::Index>(sys.electrodes) * sys.electrodes || cols <= 0)
        throw FormatError("inconsistent sensitivity header");
    {
        std::ifstream in(dir / "pair_map.csv");
        std::string line;
        std::getline(in, line);
        sys.pair_map.reserve(cols);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream row(line);
            std::string cell;
            std::array<long, 3> v{};
            for (auto& x : v) {
                if (!std::getline(row, cell, ',')) throw FormatError("malformed pair_map row");
                x = std::stol(cell);
            }
            if (v[0] != static_cast<long>(sys.pair_map.size())) throw FormatError("pair_map out of sequence");
            sys.pair_map.push_back({static_cast<int>(v[1]), static_cast<int>(v[2])});
        }
        if (static_cast<Eigen::Index>(sys.pair_map.size()) != cols) throw FormatError("pair_map length mismatch");
    }
    sys.entries.resize(rows, cols);
    std::ifstream bin(dir / "entries.bin", std::ios::binary);
    if (bin) {
        bin.read(reinterpret_cast<char*>(sys.entries.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
        if (bin.gcount() != static_cast<std::streamsize>(rows * cols * sizeof(double)))
            throw FormatError("entries.bin truncated");
        if constexpr (std::endian::native != std::endian::little) {
            for (Eigen::Index i = 0; i < sys.entries.size(); ++i)
                sys.entries.data()[i] = std::bit_cast<double>(__builtin_bswap64(std::bit_cast<std::uint64_t>(sys.entries.data()[i])));
        }
    } else {
        std::ifstream csv(dir / "entries.csv");
        if (!csv) throw FormatError("sensitivity payload missing");
        std::string line;
        for (Eigen::Index r = 0; r < rows; ++r) {
            if (!std::getline(csv, line)) throw FormatError("entries.csv truncated");
            std::stringstream row(line);
            std::string cell;
            for (Eigen::Index c = 0; c < cols; ++c) {
                if (!std::getline(row, cell, ',')) throw FormatError("entries.csv short row");
                sys.entries(r, c) = std::stod(cell);
            }
        }
    }
    return sys;
}

} // namespace eitpress
