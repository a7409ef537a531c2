#pragma once

// Scenario configuration: domain, electrodes, pressure pattern and
// reconstruction settings, read from a JSON file with explicit keys.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eitpress/error.hpp"
#include "eitpress/forward.hpp"
#include "eitpress/membrane.hpp"
#include "eitpress/mesh.hpp"

namespace eitpress {

using Json = nlohmann::json;

/// Rectangle [x0, x1] x [y0, y1] or disk with center and radius. An element
/// belongs to a region when its centroid does.
struct Region {
    enum class Kind { rectangle, disk };
    Kind kind = Kind::rectangle;
    std::array<double, 4> geometry{};  // x0 y0 x1 y1 | cx cy r -
    double magnitude = 1.0;

    [[nodiscard]] bool contains(const Point& p) const {
        if (kind == Kind::rectangle)
            return p.x() > geometry[0] && p.x() < geometry[2] && p.y() > geometry[1] && p.y() < geometry[3];
        return (p - Point(geometry[0], geometry[1])).norm() < geometry[2];
    }
};

struct Scenario {
    std::string name = "scenario";
    Shape shape = Shape::square;
    double size = 1.0;
    int elements = 512;
    int electrodes = 16;
    double coverage = 0.5;
    double current = 1.0;
    double d0 = 0.0;
    std::vector<Region> regions;
    std::optional<double> p0;  // fixed amplitude; otherwise scaled to target_slope
    double target_slope = 0.2;
    std::string delta = "5h";
    std::optional<double> beta;  // otherwise discrepancy principle
    double residual_floor = 1e-3;
    bool merge_pairs = false;
    double noise = 0.0;
    std::uint64_t seed = 1;
};

namespace detail {

inline void check_keys(const Json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) throw FormatError("scenario: '" + where + "' must be an object");
    const std::set<std::string> known(allowed.begin(), allowed.end());
    for (const auto& [key, value] : obj.items())
        if (!known.count(key)) throw FormatError("scenario: unknown key '" + key + "' in " + where);
}

inline double finite_number(const Json& v, const std::string& what) {
    if (!v.is_number()) throw FormatError("scenario: " + what + " must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw FormatError("scenario: " + what + " must be finite");
    return x;
}

inline int positive_int(const Json& v, const std::string& what) {
    if (!v.is_number_integer() || v.get<long long>() <= 0) throw FormatError("scenario: " + what + " must be a positive integer");
    return v.get<int>();
}

// Smallest distance from the region to the domain boundary (negative when it
// leaves the domain).
inline double region_clearance(const Region& r, Shape shape, double size) {
    const auto& g = r.geometry;
    if (shape == Shape::square) {
        if (r.kind == Region::Kind::rectangle) return std::min({g[0], g[1], size - g[2], size - g[3]});
        return std::min({g[0], g[1], size - g[0], size - g[1]}) - g[2];
    }
    if (r.kind == Region::Kind::rectangle) {
        double far = 0.0;
        for (double x : {g[0], g[2]})
            for (double y : {g[1], g[3]}) far = std::max(far, std::hypot(x, y));
        return size - far;
    }
    return size - std::hypot(g[0], g[1]) - g[2];
}

} // namespace detail

/// Checks ranges and that every region lies inside the standoff domain.
inline void validate(const Scenario& s) {
    const auto fail = [&s](const std::string& msg) { throw InvalidArgument("scenario '" + s.name + "': " + msg); };
    if (!(s.size > 0.0)) fail("domain size must be positive");
    if (s.elements < 8) fail("element count must be at least 8");
    if (s.electrodes < 4) fail("at least 4 electrodes are required");
    if (!(s.coverage > 0.0 && s.coverage <= 1.0)) fail("electrode coverage must be in (0, 1]");
    if (!(s.current > 0.0)) fail("injection current must be positive");
    if (!(s.d0 >= 0.0)) fail("d0 must be non-negative");
    if (s.p0 && !std::isfinite(*s.p0)) fail("p0 must be finite");
    if (!(s.target_slope > 0.0)) fail("target slope must be positive");
    if (s.beta && !(*s.beta > 0.0)) fail("beta must be positive");
    if (!(s.residual_floor >= 0.0)) fail("residual floor must be non-negative");
    if (!(s.noise >= 0.0)) fail("noise level must be non-negative");
    for (std::size_t i = 0; i < s.regions.size(); ++i) {
        const auto& r = s.regions[i];
        if (r.kind == Region::Kind::rectangle && !(r.geometry[2] > r.geometry[0] && r.geometry[3] > r.geometry[1]))
            fail("region " + std::to_string(i) + " is an empty rectangle");
        if (r.kind == Region::Kind::disk && !(r.geometry[2] > 0.0)) fail("region " + std::to_string(i) + " has no radius");
        if (!std::isfinite(r.magnitude)) fail("region " + std::to_string(i) + " magnitude must be finite");
        if (detail::region_clearance(r, s.shape, s.size) < s.d0)
            fail("region " + std::to_string(i) + " reaches closer than d0 to the boundary");
    }
}

inline Scenario scenario_from_json(const Json& j) {
    detail::check_keys(j, "scenario", {"name", "domain", "electrodes", "d0", "pressure", "reconstruction", "noise"});
    Scenario s;
    if (j.contains("name")) s.name = j.at("name").get<std::string>();
    if (j.contains("domain")) {
        const auto& d = j.at("domain");
        detail::check_keys(d, "domain", {"shape", "size", "elements"});
        if (d.contains("shape")) s.shape = parse_shape(d.at("shape").get<std::string>());
        s.size = s.shape == Shape::square ? 1.0 : 5.0;
        s.elements = s.shape == Shape::square ? 512 : 661;
        if (d.contains("size")) s.size = detail::finite_number(d.at("size"), "domain.size");
        if (d.contains("elements")) s.elements = detail::positive_int(d.at("elements"), "domain.elements");
    }
    if (j.contains("electrodes")) {
        const auto& e = j.at("electrodes");
        detail::check_keys(e, "electrodes", {"count", "coverage", "current"});
        if (e.contains("count")) s.electrodes = detail::positive_int(e.at("count"), "electrodes.count");
        if (e.contains("coverage")) s.coverage = detail::finite_number(e.at("coverage"), "electrodes.coverage");
        if (e.contains("current")) s.current = detail::finite_number(e.at("current"), "electrodes.current");
    }
    if (j.contains("d0")) s.d0 = detail::finite_number(j.at("d0"), "d0");
    if (j.contains("pressure")) {
        const auto& p = j.at("pressure");
        detail::check_keys(p, "pressure", {"regions", "p0", "target_slope"});
        if (p.contains("p0")) s.p0 = detail::finite_number(p.at("p0"), "pressure.p0");
        if (p.contains("target_slope")) s.target_slope = detail::finite_number(p.at("target_slope"), "pressure.target_slope");
        if (p.contains("regions")) {
            for (const auto& r : p.at("regions")) {
                detail::check_keys(r, "pressure region", {"rectangle", "disk", "magnitude"});
                Region region;
                if (r.contains("rectangle") == r.contains("disk"))
                    throw FormatError("scenario: a region needs exactly one of 'rectangle' or 'disk'");
                const bool rect = r.contains("rectangle");
                const auto& g = rect ? r.at("rectangle") : r.at("disk");
                if (!g.is_array() || g.size() != (rect ? 4u : 3u))
                    throw FormatError(rect ? "scenario: rectangle needs [x0, y0, x1, y1]" : "scenario: disk needs [cx, cy, r]");
                region.kind = rect ? Region::Kind::rectangle : Region::Kind::disk;
                for (std::size_t i = 0; i < g.size(); ++i) region.geometry[i] = detail::finite_number(g[i], "region coordinate");
                if (r.contains("magnitude")) region.magnitude = detail::finite_number(r.at("magnitude"), "region magnitude");
                s.regions.push_back(region);
            }
        }
    }
    if (j.contains("reconstruction")) {
        const auto& r = j.at("reconstruction");
        detail::check_keys(r, "reconstruction", {"delta", "beta", "residual_floor", "merge_pairs"});
        if (r.contains("delta")) {
            const auto& d = r.at("delta");
            s.delta = d.is_string() ? d.get<std::string>() : Json(detail::finite_number(d, "delta")).dump();
        }
        if (r.contains("beta")) {
            const auto& b = r.at("beta");
            if (b.is_string()) {
                if (b.get<std::string>() != "discrepancy") throw FormatError("scenario: beta must be a number or \"discrepancy\"");
            } else {
                s.beta = detail::finite_number(b, "beta");
            }
        }
        if (r.contains("residual_floor")) s.residual_floor = detail::finite_number(r.at("residual_floor"), "residual_floor");
        if (r.contains("merge_pairs")) s.merge_pairs = r.at("merge_pairs").get<bool>();
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        detail::check_keys(n, "noise", {"level", "seed"});
        if (n.contains("level")) s.noise = detail::finite_number(n.at("level"), "noise.level");
        if (n.contains("seed")) s.seed = n.at("seed").get<std::uint64_t>();
    }
    validate(s);
    return s;
}

inline Json scenario_to_json(const Scenario& s) {
    Json regions = Json::array();
    for (const auto& r : s.regions) {
        Json g = Json::array();
        const int n = r.kind == Region::Kind::rectangle ? 4 : 3;
        for (int i = 0; i < n; ++i) g.push_back(r.geometry[i]);
        regions.push_back({{r.kind == Region::Kind::rectangle ? "rectangle" : "disk", g}, {"magnitude", r.magnitude}});
    }
    Json pressure = {{"regions", regions}, {"target_slope", s.target_slope}};
    if (s.p0) pressure["p0"] = *s.p0;
    Json recon = {{"delta", s.delta}, {"residual_floor", s.residual_floor}, {"merge_pairs", s.merge_pairs}};
    recon["beta"] = s.beta ? Json(*s.beta) : Json("discrepancy");
    return {{"name", s.name},
            {"domain", {{"shape", to_string(s.shape)}, {"size", s.size}, {"elements", s.elements}}},
            {"electrodes", {{"count", s.electrodes}, {"coverage", s.coverage}, {"current", s.current}}},
            {"d0", s.d0},
            {"pressure", pressure},
            {"reconstruction", recon},
            {"noise", {{"level", s.noise}, {"seed", s.seed}}}};
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scenario " + path.string());
    Json j;
    try {
        j = Json::parse(in, nullptr, true, true);
    } catch (const Json::parse_error& e) {
        throw FormatError("scenario " + path.string() + ": " + e.what());
    }
    return scenario_from_json(j);
}

/// Reduction radius from "0", "<x>h", "diam" or a plain number.
inline double resolve_delta(const std::string& text, const Mesh& mesh) {
    if (text == "diam") return mesh.diameter();
    try {
        std::size_t used = 0;
        const double value = std::stod(text, &used);
        const std::string rest = text.substr(used);
        if (rest.empty() && value >= 0.0) return value;
        if (rest == "h" && value >= 0.0) return value * mesh.h;
    } catch (const std::logic_error&) {
    }
    throw InvalidArgument("cannot read reduction radius '" + text + "' (use 0, 5h, diam or a number)");
}

/// Unit-magnitude pattern: sum of the magnitudes of the regions containing
/// each element centroid.
inline PressureField pressure_pattern(const Scenario& s, const Mesh& mesh) {
    PressureField p;
    p.values.assign(mesh.num_elements(), 0.0);
    for (int k = 0; k < mesh.num_elements(); ++k)
        for (const auto& r : s.regions)
            if (r.contains(mesh.centroids[k])) p.values[k] += r.magnitude;
    return p;
}

struct ScenarioPressure {
    PressureField field;
    double scale = 1.0;        // multiplier applied to the pattern
    double pilot_slope = 0.0;  // max |grad w| of the unscaled pattern (0 when p0 is fixed)
};

/// The scenario pressure. Without an explicit p0 the pattern is scaled so the
/// membrane reaches the target slope, using one pilot solve.
inline ScenarioPressure scenario_pressure(const Scenario& s, const Mesh& mesh, const InteriorMask& mask,
                                          const MembraneSettings& settings = {}) {
    ScenarioPressure out;
    const PressureField pattern = pressure_pattern(s, mesh);
    if (!supported_in(pattern, mask)) throw InvalidArgument("scenario '" + s.name + "': pressure leaves the interior mask");
    if (s.p0) {
        out.scale = *s.p0;
    } else {
        MembraneSettings quiet = settings;
        quiet.warn = false;
        out.pilot_slope = solve_membrane(mesh, pattern, quiet).w.max_slope();
        out.scale = out.pilot_slope > 0.0 ? s.target_slope / out.pilot_slope : 1.0;
    }
    out.field = pattern.scaled(out.scale);
    return out;
}

} // namespace eitpress
