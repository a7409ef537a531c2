// eitpress: simulate, reconstruct, table1, verify.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "eitpress/harness.hpp"

namespace {

using namespace eitpress;

void print_checks(const VerifyReport& report) {
    for (const auto& c : report.checks)
        std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EIT pressure-sensor simulation and reconstruction"};
    app.require_subcommand(1);

    std::string scenario_path;
    std::string data_path;
    std::string shape_name;
    std::string sim_out = "out/simulate";
    std::string rec_out = "out/reconstruct";
    std::string table_out;
    std::optional<double> noise;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> delta;
    std::optional<double> beta;
    bool merge = false;
    std::optional<int> corrupt;

    auto* sim = app.add_subcommand("simulate", "membrane, conductivity and boundary voltages for a scenario");
    sim->add_option("scenario", scenario_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
    sim->add_option("--noise", noise, "relative noise level added to W");
    sim->add_option("--seed", seed, "noise seed");
    sim->add_option("--out", sim_out, "output directory")->capture_default_str();

    auto* rec = app.add_subcommand("reconstruct", "pressure magnitude from difference data");
    rec->add_option("scenario", scenario_path, "scenario JSON file")->required()->check(CLI::ExistingFile);
    rec->add_option("W", data_path, "difference dataset CSV")->required()->check(CLI::ExistingFile);
    rec->add_option("--delta", delta, "reduction radius: 0, <x>h, diam or a number");
    rec->add_option("--beta", beta, "fixed regularization weight (default: discrepancy principle)");
    rec->add_flag("--merge-pairs", merge, "merge symmetric element pairs into one column");
    rec->add_option("--out", rec_out, "output directory")->capture_default_str();

    auto* tab = app.add_subcommand("table1", "column counts of the reduced sensitivity matrix");
    tab->add_option("shape", shape_name, "square or disk")->required();
    tab->add_option("--out", table_out, "write table1_<shape>.txt here");

    auto* ver = app.add_subcommand("verify", "run the invariant checks");
    ver->add_option("--corrupt-gamma", corrupt, "break the symmetry of one conductivity tensor (fault injection)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sim) {
            RunOptions opt;
            opt.out = sim_out;
            opt.noise = noise;
            opt.seed = seed;
            const auto run = run_simulate(load_scenario(scenario_path), opt);
            std::cout << "W: " << run.difference.count() << "x" << run.difference.count()
                      << ", max |W| = " << run.difference.values.cwiseAbs().maxCoeff()
                      << ", max slope = " << run.membrane.w.max_slope() << "\n"
                      << "wrote " << sim_out << "\n";
        } else if (*rec) {
            RunOptions opt;
            opt.out = rec_out;
            opt.delta = delta;
            opt.beta = beta;
            if (merge) opt.merge_pairs = true;
            const auto run = run_reconstruct(load_scenario(scenario_path), fs::path(data_path), opt);
            std::cout << "system " << run.rows << "x" << run.columns << ", delta = " << run.delta
                      << ", beta = " << run.result.beta << "\n"
                      << "IoU " << run.score.iou << ", worst center error " << run.score.max_center_error() / run.model.mesh.h
                      << " h, baseline IoU " << run.baseline_score.iou << "\n"
                      << "wrote " << rec_out << "\n";
        } else if (*tab) {
            const auto text = format_table1(run_table1(parse_shape(shape_name)));
            std::cout << text;
            if (!table_out.empty()) {
                fs::create_directories(table_out);
                std::ofstream(fs::path(table_out) / ("table1_" + shape_name + ".txt")) << text;
            }
        } else if (*ver) {
            VerifyOptions opt;
            opt.corrupt_gamma_element = corrupt;
            const auto report = run_verify(opt);
            print_checks(report);
            return report.passed() ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
