#pragma once

// Pipeline drivers behind the command-line tool: simulate, reconstruct,
// Column-count tables and the verification suite. Every run that writes
// files also writes manifest.json (artifacts with SHA-256 digests and run
// parameters) and timings.json (wall-clock seconds, kept out of the manifest
// so manifests are reproducible).

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "eitpress/error.hpp"
#include "eitpress/forward.hpp"
#include "eitpress/inversion.hpp"
#include "eitpress/membrane.hpp"
#include "eitpress/mesh.hpp"
#include "eitpress/scenario.hpp"
#include "eitpress/sensitivity.hpp"

namespace eitpress {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    std::ostringstream out;
    out << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
    return out.str();
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

/// Collects artifacts of one run and writes manifest.json / timings.json.
class RunRecorder {
public:
    RunRecorder(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
        if (!dir_.empty()) fs::create_directories(dir_);
    }

    [[nodiscard]] bool enabled() const { return !dir_.empty(); }
    [[nodiscard]] const fs::path& dir() const { return dir_; }

    void write(const std::string& name, const std::function<void(std::ostream&)>& body, bool binary = false) {
        if (!enabled()) return;
        std::ostringstream buf(binary ? std::ios::out | std::ios::binary : std::ios::out);
        body(buf);
        const std::string bytes = buf.str();
        std::ofstream out(dir_ / name, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("failed writing " + (dir_ / name).string());
        artifacts_[name] = {{"bytes", bytes.size()}, {"sha256", sha256_hex(bytes)}};
    }

    Json& parameters() { return parameters_; }
    Json& inputs() { return inputs_; }

    template <class F>
    auto timed(const std::string& stage, F&& f) {
        const auto start = std::chrono::steady_clock::now();
        struct Stop {
            RunRecorder* self;
            std::string stage;
            std::chrono::steady_clock::time_point start;
            ~Stop() {
                self->timings_[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            }
        } stop{this, stage, start};
        return f();
    }

    [[nodiscard]] const Json& timings() const { return timings_; }

    /// Writes manifest.json and timings.json; returns the manifest text.
    std::string finish() {
        Json manifest = {{"format", "eitpress-manifest 1"},
                         {"command", command_},
                         {"parameters", parameters_},
                         {"inputs", inputs_},
                         {"artifacts", artifacts_},
                         {"unhashed", Json::array({"timings.json"})}};
        const std::string text = manifest.dump(2) + "\n";
        if (enabled()) {
            std::ofstream(dir_ / "manifest.json", std::ios::binary) << text;
            std::ofstream(dir_ / "timings.json", std::ios::binary) << timings_.dump(2) << "\n";
        }
        return text;
    }

private:
    fs::path dir_;
    std::string command_;
    Json parameters_ = Json::object();
    Json inputs_ = Json::object();
    Json artifacts_ = Json::object();
    Json timings_ = Json::object();
};

namespace detail {

// Re-throws solver failures with the pipeline stage in the message.
template <class F>
auto stage(const std::string& name, F&& f) {
    try {
        return f();
    } catch (const NonConvergence& e) {
        throw NonConvergence(name + " stage: " + e.what());
    } catch (const SolverError& e) {
        throw SolverError(name + " stage: " + e.what());
    }
}

inline void write_gamma_csv(std::ostream& out, const ConductivityField& gamma) {
    out << std::setprecision(17) << "element,g11,g12,g22,det\n";
    for (std::size_t k = 0; k < gamma.tensors.size(); ++k) {
        const Tensor& t = gamma.tensors[k];
        out << k << "," << t(0, 0) << "," << t(0, 1) << "," << t(1, 1) << "," << t.determinant() << "\n";
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// shared setup
// ---------------------------------------------------------------------------

struct ScenarioModel {
    Scenario scenario;
    Mesh mesh;
    ElectrodeLayout layout;
    InteriorMask mask;
    InjectionProtocol protocol;
    ScenarioPressure pressure;
};

inline ScenarioModel build_model(const Scenario& scenario) {
    validate(scenario);
    ScenarioModel m;
    m.scenario = scenario;
    m.mesh = build_mesh(scenario.shape, scenario.elements, scenario.size);
    m.layout = place_electrodes(m.mesh, scenario.electrodes, scenario.coverage);
    m.mask = interior_mask(m.mesh, scenario.d0);
    m.protocol = InjectionProtocol{scenario.electrodes, scenario.current};
    m.pressure = detail::stage("pilot membrane", [&] { return scenario_pressure(scenario, m.mesh, m.mask); });
    return m;
}

/// Settings that override the scenario file on the command line.
struct RunOptions {
    fs::path out;  // empty: keep everything in memory
    std::optional<double> noise;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> delta;
    std::optional<double> beta;
    std::optional<bool> merge_pairs;
};

inline Scenario apply_options(Scenario s, const RunOptions& opt) {
    if (opt.noise) s.noise = *opt.noise;
    if (opt.seed) s.seed = *opt.seed;
    if (opt.delta) s.delta = *opt.delta;
    if (opt.beta) s.beta = *opt.beta;
    if (opt.merge_pairs) s.merge_pairs = *opt.merge_pairs;
    validate(s);
    return s;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulationRun {
    ScenarioModel model;
    MembraneSolution membrane;
    ConductivityField gamma;
    VoltageDataset loaded;     // V_p
    VoltageDataset reference;  // V_0
    VoltageDataset difference; // W, noise included
    std::string manifest;
};

inline SimulationRun run_simulate(const Scenario& input, const RunOptions& options = {}) {
    const Scenario scenario = apply_options(input, options);
    RunRecorder rec(options.out, "simulate");
    SimulationRun run;
    run.model = rec.timed("setup", [&] { return build_model(scenario); });
    const auto& m = run.model;

    run.membrane = rec.timed("membrane", [&] {
        return detail::stage("membrane", [&] { return solve_membrane(m.mesh, m.pressure.field); });
    });
    run.gamma = gamma_from_displacement(run.membrane.w);
    if (const auto bad = find_spd_violation(run.gamma))
        throw SolverError("conductivity stage: element " + std::to_string(bad->element) + ": " + bad->reason);

    run.loaded = rec.timed("forward_loaded", [&] {
        return detail::stage("forward (loaded)", [&] { return simulate_voltages(m.mesh, m.layout, run.gamma, m.protocol).voltages; });
    });
    run.reference = rec.timed("forward_reference", [&] {
        return detail::stage("forward (reference)", [&] {
            return simulate_voltages(m.mesh, m.layout, isotropic_conductivity(m.mesh), m.protocol).voltages;
        });
    });
    run.difference = add_noise(difference_data(run.loaded, run.reference), scenario.noise, scenario.seed);

    if (rec.enabled()) {
        rec.write("mesh.txt", [&](std::ostream& o) { write_mesh(o, m.mesh, &m.layout); });
        rec.write("pressure.csv", [&](std::ostream& o) { write_pressure_csv(o, m.pressure.field); });
        rec.write("displacement.csv", [&](std::ostream& o) { write_displacement_csv(o, run.membrane.w); });
        rec.write("gamma.csv", [&](std::ostream& o) { detail::write_gamma_csv(o, run.gamma); });
        rec.write("V_p.csv", [&](std::ostream& o) { write_dataset_csv(o, run.loaded); });
        rec.write("V_0.csv", [&](std::ostream& o) { write_dataset_csv(o, run.reference); });
        rec.write("W.csv", [&](std::ostream& o) { write_dataset_csv(o, run.difference); });
        rec.write("pressure.pgm", [&](std::ostream& o) { write_pgm(o, m.mesh, m.pressure.field.values); }, true);
    }
    double min_eig = 1.0;
    for (const auto& t : run.gamma.tensors)
        min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Tensor>(t).eigenvalues().minCoeff());
    rec.parameters() = {{"scenario", scenario_to_json(scenario)},
                        {"elements", m.mesh.num_elements()},
                        {"nodes", m.mesh.num_nodes()},
                        {"h", m.mesh.h},
                        {"pressure_scale", m.pressure.scale},
                        {"max_pressure", m.pressure.field.max_abs()},
                        {"max_slope", run.membrane.w.max_slope()},
                        {"picard_iterations", run.membrane.iterations},
                        {"gamma_min_eigenvalue", min_eig},
                        {"reciprocity_error", reciprocity_error(run.loaded)},
                        {"W_max_abs", run.difference.values.cwiseAbs().maxCoeff()}};
    run.manifest = rec.finish();
    return run;
}

// ---------------------------------------------------------------------------
// reconstruct
// ---------------------------------------------------------------------------

struct ReconstructionRun {
    ScenarioModel model;
    double delta = 0.0;
    Eigen::Index rows = 0;
    Eigen::Index columns = 0;
    double target_residual = 0.0;  // discrepancy target (0 when beta was fixed)
    ReconstructionResult result;
    ReconstructionResult baseline;
    ReconstructionScore score;
    ReconstructionScore baseline_score;
    std::string manifest;
};

namespace detail {

inline Json score_json(const ReconstructionScore& s, double h) {
    Json centers = Json::array();
    for (std::size_t c = 0; c < s.center_errors.size(); ++c) {
        const double e = s.center_errors[c];
        centers.push_back({{"true_center", {s.true_centers[c].x(), s.true_centers[c].y()}},
                           {"error", std::isfinite(e) ? Json(e) : Json(nullptr)},
                           {"error_over_h", std::isfinite(e) ? Json(e / h) : Json(nullptr)}});
    }
    const double worst = s.max_center_error();
    return {{"iou", s.iou},
            {"magnitude_error", s.magnitude_error},
            {"components", centers},
            {"max_center_error_over_h", std::isfinite(worst) ? Json(worst / h) : Json(nullptr)}};
}

} // namespace detail

inline ReconstructionRun run_reconstruct(const Scenario& input, const VoltageDataset& W, const RunOptions& options = {},
                                         const std::string& data_digest = {}) {
    const Scenario scenario = apply_options(input, options);
    if (W.kind != DataKind::difference) throw InvalidArgument("reconstruction needs a difference dataset");
    if (W.count() != scenario.electrodes)
        throw InvalidArgument("dataset has " + std::to_string(W.count()) + " electrodes, scenario has " +
                              std::to_string(scenario.electrodes));
    RunRecorder rec(options.out, "reconstruct");
    ReconstructionRun run;
    run.model = rec.timed("setup", [&] { return build_model(scenario); });
    const auto& m = run.model;
    run.delta = resolve_delta(scenario.delta, m.mesh);

    const InjectionGradients u0 = rec.timed("homogeneous", [&] {
        return detail::stage("homogeneous forward", [&] { return homogeneous_gradients(m.mesh, m.layout, m.protocol); });
    });
    const BasisBank basis = rec.timed("basis", [&] { return detail::stage("basis", [&] { return build_basis(m.mesh, m.mask); }); });
    const SensitivitySystem system = rec.timed("sensitivity", [&] {
        return assemble_sensitivity(m.mesh, m.mask, basis, u0, run.delta, scenario.merge_pairs);
    });
    run.rows = system.rows();
    run.columns = system.cols();

    const double level = std::max(W.noise_level, scenario.residual_floor);
    const Eigen::MatrixXd J = conventional_jacobian(m.mesh, u0);
    double baseline_beta = 0.0;
    QuadraticUnknown q = rec.timed("solve", [&] {
        if (scenario.beta) return solve_reduced(system, W, *scenario.beta);
        run.target_residual = noise_norm(W, level);
        return solve_reduced_discrepancy(system, W, run.target_residual);
    });
    run.result = extract_pressure(q, m.mask);
    rec.timed("baseline", [&] {
        baseline_beta = scenario.beta ? *scenario.beta : discrepancy_beta(J, W.flattened(), run.target_residual);
        run.baseline = conventional_recon(W, m.mesh, u0, baseline_beta);
        return 0;
    });

    run.score = score(m.mesh, run.result, m.pressure.field);
    ReconstructionResult magnitude = run.baseline;
    for (double& v : magnitude.pressure) v = std::abs(v);
    run.baseline_score = score(m.mesh, magnitude, m.pressure.field);

    if (rec.enabled()) {
        rec.write("pressure_hat.csv", [&](std::ostream& o) { write_element_csv(o, "pressure", run.result.pressure); });
        rec.write("baseline.csv", [&](std::ostream& o) { write_element_csv(o, "delta_sigma", run.baseline.pressure); });
        rec.write("truth.csv", [&](std::ostream& o) { write_pressure_csv(o, m.pressure.field); });
        rec.write("pressure_hat.pgm", [&](std::ostream& o) { write_pgm(o, m.mesh, run.result.pressure); }, true);
        rec.write("baseline.pgm", [&](std::ostream& o) { write_pgm(o, m.mesh, run.baseline.pressure); }, true);
        rec.write("truth.pgm", [&](std::ostream& o) { write_pgm(o, m.mesh, m.pressure.field.values); }, true);
    }
    const Json metrics = {{"delta", run.delta},
                          {"delta_over_h", run.delta / m.mesh.h},
                          {"rows", run.rows},
                          {"columns", run.columns},
                          {"merged", scenario.merge_pairs},
                          {"beta", q.beta},
                          {"beta_rule", scenario.beta ? "fixed" : "discrepancy"},
                          {"target_residual", run.target_residual},
                          {"residual", run.result.residual},
                          {"truncated", run.result.truncated},
                          {"score", detail::score_json(run.score, m.mesh.h)},
                          {"baseline", {{"beta", baseline_beta},
                                        {"residual", run.baseline.residual},
                                        {"score", detail::score_json(run.baseline_score, m.mesh.h)}}}};
    rec.write("metrics.json", [&](std::ostream& o) { o << metrics.dump(2) << "\n"; });
    rec.parameters() = {{"scenario", scenario_to_json(scenario)}, {"h", m.mesh.h}, {"pressure_scale", m.pressure.scale}};
    if (!data_digest.empty()) rec.inputs()["W"] = {{"sha256", data_digest}};
    run.manifest = rec.finish();
    return run;
}

inline ReconstructionRun run_reconstruct(const Scenario& scenario, const fs::path& W_file, const RunOptions& options = {}) {
    const std::string bytes = read_file(W_file);
    std::istringstream in(bytes);
    return run_reconstruct(scenario, read_dataset_csv(in), options, sha256_hex(bytes));
}

// ---------------------------------------------------------------------------
// Column-count table
// ---------------------------------------------------------------------------

struct Table1Row {
    std::string label;
    double delta = 0.0;
    std::int64_t unmerged = 0;
    std::int64_t merged = 0;
    std::int64_t published = 0;

    /// Relative deviation of a count from the published column count.
    [[nodiscard]] double deviation(std::int64_t count) const {
        return static_cast<double>(count - published) / static_cast<double>(published);
    }
};

struct Table1Report {
    Shape shape = Shape::square;
    int elements = 0;
    double h = 0.0;
    int rows = 0;
    std::vector<Table1Row> entries;
};

/// Column counts of the reduced matrix on the meshes of the published
/// experiments (16 electrodes, every element interior).
inline Table1Report run_table1(Shape shape) {
    const bool square = shape == Shape::square;
    const Mesh mesh = square ? build_square(512, 1.0) : build_disk(661, 5.0);
    const InteriorMask mask = interior_mask(mesh, 0.0);
    Table1Report r;
    r.shape = shape;
    r.elements = mesh.num_elements();
    r.h = mesh.h;
    r.rows = 16 * 16;
    const std::array<std::int64_t, 3> published = square ? std::array<std::int64_t, 3>{512, 28018, 262144}
                                                     : std::array<std::int64_t, 3>{661, 43814, 436921};
    const std::array<std::pair<std::string, double>, 3> deltas = {
        {{"delta<h", 0.0}, {"delta=5h", 5.0 * mesh.h}, {"full", mesh.diameter()}}};
    for (std::size_t i = 0; i < deltas.size(); ++i) {
        Table1Row row;
        row.label = deltas[i].first;
        row.delta = deltas[i].second;
        row.unmerged = count_columns(mesh, mask, row.delta, false);
        row.merged = count_columns(mesh, mask, row.delta, true);
        row.published = published[i];
        r.entries.push_back(row);
    }
    return r;
}

inline std::string format_table1(const Table1Report& r) {
    std::ostringstream out;
    out << to_string(r.shape) << " K=" << r.elements << " h=" << std::setprecision(6) << r.h << " rows=" << r.rows << "\n";
    out << std::left << std::setw(10) << "delta" << std::right << std::setw(12) << "unmerged" << std::setw(12) << "merged"
        << std::setw(12) << "published" << std::setw(14) << "dev(unmerged)" << std::setw(12) << "dev(merged)" << "\n";
    out << std::fixed << std::setprecision(1);
    for (const auto& e : r.entries)
        out << std::left << std::setw(10) << e.label << std::right << std::setw(12) << e.unmerged << std::setw(12)
            << e.merged << std::setw(12) << e.published << std::setw(13) << 100.0 * e.deviation(e.unmerged) << "%"
            << std::setw(11) << 100.0 * e.deviation(e.merged) << "%\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct VerifyReport {
    std::vector<CheckResult> checks;

    [[nodiscard]] bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

struct VerifyOptions {
    std::optional<int> corrupt_gamma_element;  // break symmetry of one tensor
};

/// The three-patch square scenario used by the built-in checks.
inline Scenario reference_scenario() {
    Scenario s;
    s.name = "reference-square";
    s.d0 = 0.1;
    s.regions = {{Region::Kind::rectangle, {0.125, 0.5625, 0.3125, 0.75}, 1.0},
                 {Region::Kind::rectangle, {0.625, 0.5625, 0.8125, 0.75}, 1.0},
                 {Region::Kind::rectangle, {0.4375, 0.1875, 0.625, 0.375}, 1.0}};
    return s;
}

namespace checks {

inline std::string fmt(double v) {
    std::ostringstream o;
    o << std::setprecision(3) << v;
    return o.str();
}

inline CheckResult reciprocity(const SimulationRun& sim) {
    const double e = std::max(reciprocity_error(sim.loaded), reciprocity_error(sim.reference));
    return {"reciprocity", e <= 1e-8, "max |V(i,j) - V(j,i)| / max |V| = " + fmt(e)};
}

inline CheckResult spd(const ConductivityField& gamma, const DisplacementField& w) {
    if (const auto bad = find_spd_violation(gamma))
        return {"spd", false, "element " + std::to_string(bad->element) + ": " + bad->reason};
    double worst = 0.0;
    int where = -1;
    for (std::size_t k = 0; k < gamma.tensors.size(); ++k) {
        const double s = w.gradients[k].squaredNorm();
        const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Tensor>(gamma.tensors[k]).eigenvalues();
        const double e = std::max({std::abs(ev[0] - 1.0 / (1.0 + s)), std::abs(ev[1] - 1.0),
                                   std::abs(gamma.tensors[k].determinant() - 1.0 / (1.0 + s))});
        if (e > worst) {
            worst = e;
            where = static_cast<int>(k);
        }
    }
    if (worst > 1e-12) return {"spd", false, "element " + std::to_string(where) + ": spectrum off by " + fmt(worst)};
    return {"spd", true, "eigenvalues and determinant within " + fmt(worst)};
}

inline CheckResult picard(const MembraneSolution& sol) {
    bool decreasing = true;
    for (std::size_t i = 1; i < sol.residuals.size(); ++i) decreasing = decreasing && sol.residuals[i] < sol.residuals[i - 1];
    const bool ok = decreasing && sol.residuals.back() <= 1e-8;
    return {"picard", ok, std::to_string(sol.iterations) + " iterations, final residual " + fmt(sol.residuals.back()) +
                              (decreasing ? ", strictly decreasing" : ", NOT decreasing")};
}

/// Max nodal error of the membrane solver on the radial example over three
/// uniformly refined disk meshes; also checks that the closed form outside
/// the inner disk does not depend on rho.
inline CheckResult radial_oracle(const std::vector<double>& rhos = {0.05, 0.1}) {
    std::vector<Mesh> meshes = {build_disk(661, RadialExample::domain_radius)};
    meshes.push_back(refine(meshes[0]));
    meshes.push_back(refine(meshes[1]));
    bool ok = true;
    std::ostringstream detail;
    for (double rho : rhos) {
        std::vector<double> err;
        for (const auto& mesh : meshes) {
            const RadialSample s = radial_example(rho, mesh);
            MembraneSettings quiet;
            quiet.warn = false;
            err.push_back((solve_membrane(mesh, s.p, quiet).w.nodal - s.w.nodal).cwiseAbs().maxCoeff());
        }
        const double r1 = err[0] / err[1];
        const double r2 = err[1] / err[2];
        ok = ok && r1 >= 3.0 && r2 >= 3.0;
        detail << "rho=" << rho << " ratios " << fmt(r1) << ", " << fmt(r2) << "; ";
    }
    const RadialExample a(rhos.front());
    const RadialExample b(rhos.back());
    bool same = true;
    for (const auto& p : meshes.back().nodes)
        if (p.norm() >= RadialExample::inner_radius) same = same && a.w(p.norm()) == b.w(p.norm());
    detail << (same ? "closed forms agree outside r=2" : "closed forms DIFFER outside r=2");
    return {"radial-oracle", ok && same, detail.str()};
}

/// ||W(eps p)|| / ||W(p)|| against eps^2 for eps in {1/2, 1/4}.
inline CheckResult quadratic_scaling(const ScenarioModel& m) {
    const auto norm_at = [&](double eps) {
        MembraneSettings quiet;
        quiet.warn = false;
        const auto w = solve_membrane(m.mesh, m.pressure.field.scaled(eps), quiet).w;
        const auto Vp = simulate_voltages(m.mesh, m.layout, gamma_from_displacement(w), m.protocol).voltages;
        const auto V0 = simulate_voltages(m.mesh, m.layout, isotropic_conductivity(m.mesh), m.protocol).voltages;
        return difference_data(Vp, V0).values.norm();
    };
    const double base = norm_at(1.0);
    bool ok = base > 0.0;
    std::ostringstream detail;
    for (double eps : {0.5, 0.25}) {
        const double ratio = norm_at(eps) / base;
        const double rel = std::abs(ratio / (eps * eps) - 1.0);
        ok = ok && rel <= 0.1;
        detail << (eps == 0.5 ? "" : "; ") << "eps=" << eps << " ratio/eps^2=" << fmt(ratio / (eps * eps));
    }
    return {"quadratic-scaling", ok, detail.str()};
}

/// Linear form S q against the quadratic form evaluated from one Poisson
/// solve of the whole pressure, on the 8-element square, 20 random p.
inline CheckResult linear_form(std::uint64_t seed = 20240601) {
    const Mesh mesh = build_square(8, 1.0);
    const ElectrodeLayout layout = place_electrodes(mesh, 4, 0.5);
    const InteriorMask mask = interior_mask(mesh, 0.0);
    const InjectionGradients u0 = homogeneous_gradients(mesh, layout, InjectionProtocol{4, 1.0});
    const SensitivitySystem sys = assemble_sensitivity(mesh, mask, build_basis(mesh, mask), u0, mesh.diameter());
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
        std::vector<double> p(mesh.num_elements());
        for (double& x : p) x = uni(rng);
        const Eigen::VectorXd linear = sys.entries * quadratic_unknowns(sys, p);
        std::vector<double> minus(p.size());
        for (std::size_t k = 0; k < p.size(); ++k) minus[k] = -p[k];
        const DisplacementField v = poisson_solve(mesh, minus);  // -Laplace v = p
        Eigen::VectorXd direct = Eigen::VectorXd::Zero(sys.rows());
        for (int i = 0; i < u0.count(); ++i)
            for (int j = 0; j < u0.count(); ++j)
                for (int k = 0; k < mesh.num_elements(); ++k)
                    direct[i * u0.count() + j] += mesh.areas[k] * v.gradients[k].dot(Point(u0.gx(i, k), u0.gy(i, k))) *
                                                  v.gradients[k].dot(Point(u0.gx(j, k), u0.gy(j, k)));
        worst = std::max(worst, (linear - direct).norm() / direct.norm());
    }
    return {"linear-form", worst <= 1e-10, "max relative gap over 20 pressures = " + fmt(worst)};
}

/// Binned max |S| over centroid distance on the 512-element square.
inline CheckResult decay() {
    const Mesh mesh = build_square(512, 1.0);
    const ElectrodeLayout layout = place_electrodes(mesh, 16, 0.5);
    const InteriorMask mask = interior_mask(mesh, 0.0);
    const auto bins = binned_column_max(mesh, build_basis(mesh, mask), homogeneous_gradients(mesh, layout), mask, mesh.h);
    for (std::size_t b = 1; b < bins.size(); ++b)
        if (bins[b] > bins[b - 1])
            return {"decay", false, "bin " + std::to_string(b) + " exceeds bin " + std::to_string(b - 1)};
    return {"decay", true, std::to_string(bins.size()) + " bins of width h, non-increasing"};
}

} // namespace checks

inline VerifyReport run_verify(const VerifyOptions& options = {}) {
    VerifyReport report;
    const auto guarded = [&report](const std::string& name, const std::function<CheckResult()>& f) {
        try {
            report.checks.push_back(f());
        } catch (const std::exception& e) {
            report.checks.push_back({name, false, std::string("error: ") + e.what()});
        }
    };
    std::optional<SimulationRun> sim;
    guarded("simulate", [&] {
        sim = run_simulate(reference_scenario());
        return CheckResult{"simulate", true, "reference square scenario"};
    });
    if (sim) {
        guarded("reciprocity", [&] { return checks::reciprocity(*sim); });
        guarded("spd", [&] {
            ConductivityField gamma = sim->gamma;
            if (options.corrupt_gamma_element) {
                const int k = *options.corrupt_gamma_element;
                detail::require(k >= 0 && k < static_cast<int>(gamma.tensors.size()), "corrupted element out of range");
                gamma.tensors[k](0, 1) += 0.25;
            }
            return checks::spd(gamma, sim->membrane.w);
        });
        guarded("picard", [&] { return checks::picard(sim->membrane); });
        guarded("quadratic-scaling", [&] { return checks::quadratic_scaling(sim->model); });
    }
    guarded("radial-oracle", [] { return checks::radial_oracle(); });
    guarded("linear-form", [] { return checks::linear_form(); });
    guarded("decay", [] { return checks::decay(); });
    return report;
}

} // namespace eitpress
