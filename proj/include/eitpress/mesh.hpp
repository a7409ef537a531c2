#pragma once

// Triangular meshes of the square and disk domains, boundary electrodes and
// the P1 geometric scaffolding shared by every solver.

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eitpress/error.hpp"

namespace eitpress {

using Point = Eigen::Vector2d;

enum class Shape { square, disk };

inline std::string to_string(Shape shape) { return shape == Shape::square ? "square" : "disk"; }

inline Shape parse_shape(const std::string& name) {
    if (name == "square") return Shape::square;
    if (name == "disk" || name == "circle") return Shape::disk;
    throw InvalidArgument("unknown domain shape '" + name + "'");
}

/// Triangulated 2D domain. Elements are counterclockwise; boundary edges are
/// stored as one closed counterclockwise loop starting at the reference point
/// of the shape (lower-left corner of the square, positive x-axis of the disk).
struct Mesh {
    Shape shape = Shape::square;
    double size = 1.0;  // side length (square) or radius (disk)
    // Nominal element side length: the leg of a right isosceles triangle
    // with the mean element area (exactly the grid spacing of the square).
    double h = 0.0;

    std::vector<Point> nodes;
    std::vector<std::array<int, 3>> elements;
    std::vector<std::array<int, 2>> boundary_edges;

    // derived by finalize()
    std::vector<double> areas;
    std::vector<std::array<Point, 3>> gradients;  // P1 basis gradients per element
    std::vector<Point> centroids;
    std::vector<char> boundary_node;

    [[nodiscard]] int num_nodes() const { return static_cast<int>(nodes.size()); }
    [[nodiscard]] int num_elements() const { return static_cast<int>(elements.size()); }
    [[nodiscard]] int num_boundary_edges() const { return static_cast<int>(boundary_edges.size()); }

    [[nodiscard]] double edge_length(int e) const {
        const auto& [a, b] = boundary_edges[e];
        return (nodes[b] - nodes[a]).norm();
    }

    [[nodiscard]] double perimeter() const {
        double total = 0.0;
        for (int e = 0; e < num_boundary_edges(); ++e) total += edge_length(e);
        return total;
    }

    [[nodiscard]] double area() const {
        double total = 0.0;
        for (double a : areas) total += a;
        return total;
    }

    /// Analytic area of the continuous domain.
    [[nodiscard]] double domain_area() const {
        return shape == Shape::square ? size * size : std::numbers::pi * size * size;
    }

    [[nodiscard]] double diameter() const {
        return shape == Shape::square ? std::sqrt(2.0) * size : 2.0 * size;
    }
};

namespace detail {

inline double signed_area(const Point& a, const Point& b, const Point& c) {
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

inline double segment_distance(const Point& p, const Point& a, const Point& b) {
    const Point ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

inline Point reference_point(const Mesh& mesh) {
    return mesh.shape == Shape::square ? Point(0.0, 0.0) : Point(mesh.size, 0.0);
}

} // namespace detail

/// Computes areas, gradients, centroids and the ordered boundary loop.
/// Throws FormatError when the connectivity is not a valid single-loop
/// triangulation.
inline void finalize(Mesh& mesh) {
    const int K = mesh.num_elements();
    mesh.areas.resize(K);
    mesh.gradients.resize(K);
    mesh.centroids.resize(K);

    std::map<std::pair<int, int>, std::pair<int, std::array<int, 2>>> edge_use;
    for (int k = 0; k < K; ++k) {
        auto& tri = mesh.elements[k];
        for (int v : tri) {
            if (v < 0 || v >= mesh.num_nodes())
                throw FormatError("element " + std::to_string(k) + " references missing node");
        }
        double area = detail::signed_area(mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]);
        if (area < 0.0) {
            std::swap(tri[1], tri[2]);
            area = -area;
        }
        if (!(area > 0.0)) throw FormatError("element " + std::to_string(k) + " is degenerate");
        mesh.areas[k] = area;

        const Point& p0 = mesh.nodes[tri[0]];
        const Point& p1 = mesh.nodes[tri[1]];
        const Point& p2 = mesh.nodes[tri[2]];
        const std::array<const Point*, 3> p = {&p0, &p1, &p2};
        for (int a = 0; a < 3; ++a) {
            const Point& pb = *p[(a + 1) % 3];
            const Point& pc = *p[(a + 2) % 3];
            mesh.gradients[k][a] = Point(pb.y() - pc.y(), pc.x() - pb.x()) / (2.0 * area);
        }
        mesh.centroids[k] = (p0 + p1 + p2) / 3.0;

        for (int a = 0; a < 3; ++a) {
            const int u = tri[a];
            const int v = tri[(a + 1) % 3];
            auto key = std::minmax(u, v);
            auto [it, inserted] = edge_use.try_emplace({key.first, key.second}, 0, std::array<int, 2>{u, v});
            ++it->second.first;
        }
    }

    std::vector<int> next(mesh.num_nodes(), -1);
    int boundary_count = 0;
    for (const auto& [key, use] : edge_use) {
        if (use.first > 2) throw FormatError("non-manifold edge in mesh");
        if (use.first == 1) {
            if (next[use.second[0]] != -1) throw FormatError("boundary is not a simple loop");
            next[use.second[0]] = use.second[1];
            ++boundary_count;
        }
    }

    mesh.boundary_node.assign(mesh.num_nodes(), 0);
    const Point ref = detail::reference_point(mesh);
    int start = -1;
    double best = std::numeric_limits<double>::infinity();
    for (int v = 0; v < mesh.num_nodes(); ++v) {
        if (next[v] < 0) continue;
        const double d = (mesh.nodes[v] - ref).norm();
        if (d < best) {
            best = d;
            start = v;
        }
    }
    if (start < 0) throw FormatError("mesh has no boundary");

    mesh.boundary_edges.clear();
    int v = start;
    do {
        mesh.boundary_edges.push_back({v, next[v]});
        mesh.boundary_node[v] = 1;
        v = next[v];
        if (v < 0 || static_cast<int>(mesh.boundary_edges.size()) > boundary_count)
            throw FormatError("boundary edges do not close");
    } while (v != start);
    if (static_cast<int>(mesh.boundary_edges.size()) != boundary_count)
        throw FormatError("boundary consists of more than one loop");
}

/// Structured square: m x m cells, each split along its rising diagonal,
/// so K = 2 m^2 exactly.
inline Mesh build_square(int target_K, double side) {
    detail::require(target_K >= 8, "square mesh needs at least 8 elements");
    detail::require(side > 0.0, "domain size must be positive");
    const int m = static_cast<int>(std::lround(std::sqrt(target_K / 2.0)));
    if (2 * m * m != target_K)
        throw InvalidArgument("square mesh requires K = 2 m^2, got K = " + std::to_string(target_K));

    Mesh mesh;
    mesh.shape = Shape::square;
    mesh.size = side;
    mesh.h = side / m;
    const auto id = [m](int i, int j) { return j * (m + 1) + i; };
    mesh.nodes.reserve((m + 1) * (m + 1));
    for (int j = 0; j <= m; ++j)
        for (int i = 0; i <= m; ++i) mesh.nodes.emplace_back(side * i / m, side * j / m);
    mesh.elements.reserve(target_K);
    for (int j = 0; j < m; ++j) {
        for (int i = 0; i < m; ++i) {
            mesh.elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            mesh.elements.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    }
    finalize(mesh);
    return mesh;
}

/// Polar disk mesh: concentric rings of nodes joined by triangle strips. Ring
/// i carries about c*i nodes; the outer ring count is chosen so that the
/// element count hits target_K exactly.
inline Mesh build_disk(int target_K, double radius) {
    detail::require(target_K >= 8, "disk mesh needs at least 8 elements");
    detail::require(radius > 0.0, "domain size must be positive");

    const int rings = std::max(1, static_cast<int>(std::lround(std::sqrt(target_K / 6.0))));
    const double density = static_cast<double>(target_K) / (rings * rings);
    std::vector<int> counts(rings + 1, 0);
    long inner_sum = 0;
    for (int i = 1; i < rings; ++i) {
        counts[i] = std::max(3, static_cast<int>(std::lround(density * i)));
        inner_sum += counts[i];
    }
    counts[rings] = static_cast<int>(target_K - 2 * inner_sum);
    // rounding drift lands on the outer ring; push it back onto the inner rings
    const long ideal = std::lround(density * rings);
    for (int i = rings - 1; rings > 1 && counts[rings] < ideal - 1; i = (i > 1 ? i - 1 : rings - 1)) {
        if (counts[i] <= 3) break;
        --counts[i];
        counts[rings] += 2;
    }
    for (int i = rings - 1; rings > 1 && counts[rings] > ideal + 1; i = (i > 1 ? i - 1 : rings - 1)) {
        ++counts[i];
        counts[rings] -= 2;
    }
    if (counts[rings] < std::max(3, counts[rings - 1]))
        throw InvalidArgument("cannot build a disk mesh with K = " + std::to_string(target_K));

    Mesh mesh;
    mesh.shape = Shape::disk;
    mesh.size = radius;
    mesh.nodes.emplace_back(0.0, 0.0);
    std::vector<int> first(rings + 1, 0);
    for (int i = 1; i <= rings; ++i) {
        first[i] = mesh.num_nodes();
        const double r = radius * i / rings;
        for (int m = 0; m < counts[i]; ++m) {
            const double t = 2.0 * std::numbers::pi * m / counts[i];
            mesh.nodes.emplace_back(r * std::cos(t), r * std::sin(t));
        }
    }

    mesh.elements.reserve(target_K);
    for (int m = 0; m < counts[1]; ++m) mesh.elements.push_back({0, first[1] + m, first[1] + (m + 1) % counts[1]});

    for (int i = 2; i <= rings; ++i) {
        const int a = counts[i - 1];
        const int b = counts[i];
        const auto inner = [&](int m) { return first[i - 1] + m % a; };
        const auto outer = [&](int m) { return first[i] + m % b; };
        int ia = 0;
        int ib = 0;
        while (ia < a || ib < b) {
            const double next_inner = static_cast<double>(ia + 1) / a;
            const double next_outer = static_cast<double>(ib + 1) / b;
            if (ib == b || (ia < a && next_inner < next_outer)) {
                mesh.elements.push_back({inner(ia), outer(ib), inner(ia + 1)});
                ++ia;
            } else {
                mesh.elements.push_back({inner(ia), outer(ib), outer(ib + 1)});
                ++ib;
            }
        }
    }
    finalize(mesh);
    mesh.h = std::sqrt(2.0 * mesh.area() / mesh.num_elements());
    return mesh;
}

inline Mesh build_mesh(Shape shape, int target_K, double size) {
    return shape == Shape::square ? build_square(target_K, size) : build_disk(target_K, size);
}

namespace detail {

// Mean radius along the angle bisector, so rings of a polar mesh stay circles.
inline Point polar_midpoint(const Point& a, const Point& b) {
    const double ra = a.norm();
    const double rb = b.norm();
    if (ra == 0.0 || rb == 0.0) return 0.5 * (a + b);
    const Point dir = a / ra + b / rb;
    if (dir.norm() < 1e-12) return 0.5 * (a + b);
    return 0.5 * (ra + rb) * dir.normalized();
}

} // namespace detail

/// Uniform red refinement: every triangle splits into four through its edge
/// midpoints. On a disk the midpoints follow the polar structure, which keeps
/// the boundary and every node ring on its circle.
inline Mesh refine(const Mesh& coarse) {
    Mesh mesh;
    mesh.shape = coarse.shape;
    mesh.size = coarse.size;
    mesh.nodes = coarse.nodes;
    std::map<std::pair<int, int>, int> midpoint;
    const auto mid = [&](int a, int b) {
        const auto key = std::minmax(a, b);
        auto [it, inserted] = midpoint.try_emplace(key, mesh.num_nodes());
        if (inserted) {
            mesh.nodes.push_back(coarse.shape == Shape::disk ? detail::polar_midpoint(coarse.nodes[a], coarse.nodes[b])
                                                             : Point(0.5 * (coarse.nodes[a] + coarse.nodes[b])));
        }
        return it->second;
    };
    mesh.elements.reserve(4 * coarse.elements.size());
    for (const auto& [a, b, c] : coarse.elements) {
        const int ab = mid(a, b);
        const int bc = mid(b, c);
        const int ca = mid(c, a);
        mesh.elements.push_back({a, ab, ca});
        mesh.elements.push_back({ab, b, bc});
        mesh.elements.push_back({ca, bc, c});
        mesh.elements.push_back({ab, bc, ca});
    }
    finalize(mesh);
    mesh.h = coarse.shape == Shape::square ? 0.5 * coarse.h : std::sqrt(2.0 * mesh.area() / mesh.num_elements());
    return mesh;
}

/// N electrodes as contiguous groups of boundary edges, equally spaced along
/// the boundary loop and numbered counterclockwise.
struct ElectrodeLayout {
    int count = 0;
    double coverage = 0.5;
    std::vector<std::vector<int>> arcs;  // indices into Mesh::boundary_edges
    std::vector<double> lengths;
    // weights(v, e) = integral of the hat function of node v over arc e,
    // divided by the arc length. Used both as the uniform current density
    // load and as the arc-average voltage readout.
    Eigen::MatrixXd weights;
};

namespace detail {

inline void fill_electrode_weights(const Mesh& mesh, ElectrodeLayout& layout) {
    layout.lengths.assign(layout.count, 0.0);
    layout.weights = Eigen::MatrixXd::Zero(mesh.num_nodes(), layout.count);
    for (int e = 0; e < layout.count; ++e) {
        if (layout.arcs[e].empty()) throw InvalidArgument("electrode arc without edges");
        for (int edge : layout.arcs[e]) {
            const double len = mesh.edge_length(edge);
            layout.lengths[e] += len;
            layout.weights(mesh.boundary_edges[edge][0], e) += 0.5 * len;
            layout.weights(mesh.boundary_edges[edge][1], e) += 0.5 * len;
        }
        layout.weights.col(e) /= layout.lengths[e];
    }
}

} // namespace detail

inline ElectrodeLayout place_electrodes(const Mesh& mesh, int count, double coverage) {
    detail::require(count >= 4, "at least 4 electrodes are required");
    detail::require(coverage > 0.0 && coverage <= 1.0, "electrode coverage must lie in (0, 1]");
    const int E = mesh.num_boundary_edges();
    if (E < 2 * count)
        throw InvalidArgument("boundary has " + std::to_string(E) + " edges, fewer than 2N = " +
                              std::to_string(2 * count));

    ElectrodeLayout layout;
    layout.count = count;
    layout.coverage = coverage;
    layout.arcs.resize(count);
    const double period = static_cast<double>(E) / count;
    for (int e = 0; e < count; ++e) {
        const long start = std::lround(e * period);
        const long next_start = std::lround((e + 1) * period);
        long stop = std::lround(e * period + coverage * period);
        stop = std::clamp(stop, start + 1, next_start);
        for (long edge = start; edge < stop; ++edge) layout.arcs[e].push_back(static_cast<int>(edge % E));
    }
    detail::fill_electrode_weights(mesh, layout);
    return layout;
}

/// Elements whose centroid lies farther than d0 from the boundary.
struct InteriorMask {
    double d0 = 0.0;
    std::vector<char> flags;
    std::vector<int> elements;  // flagged element ids, ascending

    [[nodiscard]] bool contains(int k) const { return flags[k] != 0; }
    [[nodiscard]] int size() const { return static_cast<int>(elements.size()); }
};

inline double boundary_distance(const Mesh& mesh, const Point& p) {
    double d = std::numeric_limits<double>::infinity();
    for (const auto& [a, b] : mesh.boundary_edges)
        d = std::min(d, detail::segment_distance(p, mesh.nodes[a], mesh.nodes[b]));
    return d;
}

inline InteriorMask interior_mask(const Mesh& mesh, double d0) {
    detail::require(d0 >= 0.0, "boundary standoff d0 must be non-negative");
    InteriorMask mask;
    mask.d0 = d0;
    mask.flags.assign(mesh.num_elements(), 0);
    for (int k = 0; k < mesh.num_elements(); ++k) {
        if (boundary_distance(mesh, mesh.centroids[k]) > d0) {
            mask.flags[k] = 1;
            mask.elements.push_back(k);
        }
    }
    if (mask.elements.empty()) throw InvalidArgument("interior mask is empty for d0 = " + std::to_string(d0));
    return mask;
}

/// Per-element constant gradient of a P1 field given by nodal values.
template <class Nodal>
std::vector<Point> element_gradients(const Mesh& mesh, const Nodal& values) {
    std::vector<Point> grads(mesh.num_elements());
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto& tri = mesh.elements[k];
        Point g = Point::Zero();
        for (int a = 0; a < 3; ++a) g += values[tri[a]] * mesh.gradients[k][a];
        grads[k] = g;
    }
    return grads;
}

/// Elements sharing an edge.
inline std::vector<std::vector<int>> element_neighbors(const Mesh& mesh) {
    std::map<std::pair<int, int>, std::vector<int>> by_edge;
    for (int k = 0; k < mesh.num_elements(); ++k) {
        const auto& tri = mesh.elements[k];
        for (int a = 0; a < 3; ++a) {
            auto key = std::minmax(tri[a], tri[(a + 1) % 3]);
            by_edge[{key.first, key.second}].push_back(k);
        }
    }
    std::vector<std::vector<int>> adj(mesh.num_elements());
    for (const auto& [edge, ks] : by_edge) {
        if (ks.size() == 2) {
            adj[ks[0]].push_back(ks[1]);
            adj[ks[1]].push_back(ks[0]);
        }
    }
    return adj;
}

// ---------------------------------------------------------------------------
// Plain-text mesh format (0-based indices):
//
//   eitpress-mesh 1
//   shape <square|disk> size <s> h <h>
//   nodes <n>          followed by n lines "x y"
//   elements <K>       followed by K lines "a b c"
//   boundary_edges <E> followed by E lines "a b"
//   electrodes <N> <coverage>   followed by N lines "m e_1 ... e_m"
// ---------------------------------------------------------------------------

struct MeshFile {
    Mesh mesh;
    std::optional<ElectrodeLayout> layout;
};

inline void write_mesh(std::ostream& out, const Mesh& mesh, const ElectrodeLayout* layout = nullptr) {
    out << std::setprecision(17);
    out << "eitpress-mesh 1\n";
    out << "shape " << to_string(mesh.shape) << " size " << mesh.size << " h " << mesh.h << "\n";
    out << "nodes " << mesh.num_nodes() << "\n";
    for (const auto& p : mesh.nodes) out << p.x() << " " << p.y() << "\n";
    out << "elements " << mesh.num_elements() << "\n";
    for (const auto& t : mesh.elements) out << t[0] << " " << t[1] << " " << t[2] << "\n";
    out << "boundary_edges " << mesh.num_boundary_edges() << "\n";
    for (const auto& e : mesh.boundary_edges) out << e[0] << " " << e[1] << "\n";
    if (layout != nullptr) {
        out << "electrodes " << layout->count << " " << layout->coverage << "\n";
        for (const auto& arc : layout->arcs) {
            out << arc.size();
            for (int e : arc) out << " " << e;
            out << "\n";
        }
    }
}

inline MeshFile read_mesh(std::istream& in) {
    const auto expect = [&in](const std::string& word) {
        std::string token;
        if (!(in >> token) || token != word) throw FormatError("mesh file: expected '" + word + "'");
    };
    MeshFile file;
    Mesh& mesh = file.mesh;
    expect("eitpress-mesh");
    int version = 0;
    in >> version;
    if (version != 1) throw FormatError("mesh file: unsupported version");
    std::string shape;
    expect("shape");
    in >> shape;
    mesh.shape = parse_shape(shape);
    expect("size");
    in >> mesh.size;
    expect("h");
    in >> mesh.h;

    int n = 0;
    expect("nodes");
    in >> n;
    mesh.nodes.resize(n);
    for (auto& p : mesh.nodes) in >> p.x() >> p.y();
    int K = 0;
    expect("elements");
    in >> K;
    mesh.elements.resize(K);
    for (auto& t : mesh.elements) in >> t[0] >> t[1] >> t[2];
    int E = 0;
    expect("boundary_edges");
    in >> E;
    std::vector<std::array<int, 2>> stored(E);
    for (auto& e : stored) in >> e[0] >> e[1];
    if (!in) throw FormatError("mesh file: truncated");

    finalize(mesh);
    if (mesh.boundary_edges != stored) throw FormatError("mesh file: boundary edges inconsistent with elements");

    std::string token;
    if (in >> token) {
        if (token != "electrodes") throw FormatError("mesh file: unexpected '" + token + "'");
        ElectrodeLayout layout;
        in >> layout.count >> layout.coverage;
        layout.arcs.resize(layout.count);
        for (auto& arc : layout.arcs) {
            int m = 0;
            in >> m;
            arc.resize(m);
            for (auto& e : arc) {
                in >> e;
                if (e < 0 || e >= E) throw FormatError("mesh file: electrode edge out of range");
            }
        }
        if (!in) throw FormatError("mesh file: truncated electrode section");
        detail::fill_electrode_weights(mesh, layout);
        file.layout = std::move(layout);
    }
    return file;
}

} // namespace eitpress
