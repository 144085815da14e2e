// mechsyn: dimensional synthesis of planar truss mechanisms by deformed
// energy minimization.
//
//   mechsyn run     --problem file.json --out dir    synthesize and report
//   mechsyn compare --problem file.json --out dir    coordinates vs dimensions
//   mechsyn check   --problem file.json              derivatives vs finite differences
//   mechsyn render  --problem file.json --out dir    draw the initial guess
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mechsyn/check.hpp"
#include "mechsyn/io.hpp"
#include "mechsyn/model.hpp"
#include "mechsyn/position.hpp"
#include "mechsyn/svg.hpp"
#include "mechsyn/synthesis.hpp"

namespace fs = std::filesystem;
using namespace mechsyn;

namespace {

struct Options {
    std::string problem_path;
    std::string out_dir = ".";
    int max_iter = -1;
    double gtol = -1.0;
    std::string formulation;
    unsigned seed = 1;
    int trials = 6;
    bool quiet = false;
    bool corrupt = false;  // test fixture: bias the analytic gradient in `check`
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SynthesisProblem load_with_overrides(const Options& opt) {
    SynthesisProblem p = load_problem(slurp(opt.problem_path));
    if (opt.max_iter >= 0) p.options.tol.max_iterations = opt.max_iter;
    if (opt.gtol > 0.0) p.options.tol.gradient = opt.gtol;
    if (opt.formulation == "coords") p.options.formulation = Formulation::coordinates;
    if (opt.formulation == "dims") p.options.formulation = Formulation::dimensions;
    if (!opt.quiet)
        for (const std::string& w : p.warnings) std::cerr << "warning: " << w << "\n";
    return p;
}

nlohmann::json result_json(const SynthesisProblem& p, const SynthesisResult& res,
                           const std::vector<double>& min_distances) {
    nlohmann::json j;
    j["formulation"] = res.formulation == Formulation::coordinates ? "coordinates" : "dimensions";
    j["fitness"] = res.fitness;
    j["termination"] = to_string(res.reason);
    j["iterations"] = res.iterations;
    j["config_flips"] = res.config_flips;
    j["nodes"] = nlohmann::json::array();
    for (int s = 0; s < p.mechanism.node_count(); ++s) {
        const Node& n = p.mechanism.nodes()[s];
        nlohmann::json jn{{"id", n.id}, {"x", res.final_coords.at(s).x()}, {"y", res.final_coords.at(s).y()}};
        if (!n.label.empty()) jn["label"] = n.label;
        j["nodes"].push_back(jn);
    }
    j["dimensions"] = nlohmann::json::array();
    for (std::size_t t = 0; t < res.final_dimensions.size(); ++t)
        j["dimensions"].push_back({{"truss", p.mechanism.trusses()[t].id}, {"length", res.final_dimensions[t]}});
    j["points"] = nlohmann::json::array();
    for (std::size_t i = 0; i < res.states.size(); ++i) {
        nlohmann::json jp{{"index", i},
                          {"energy", res.states[i].energy},
                          {"converged", res.states[i].converged}};
        if (i < min_distances.size() && min_distances[i] >= 0.0) jp["min_distance"] = min_distances[i];
        j["points"].push_back(jp);
    }
    return j;
}

/// Deformed state and rigid minimum-distance pose for every precision point.
void write_snapshots(const SynthesisProblem& p, const SynthesisResult& res, const fs::path& dir,
                     std::vector<double>& min_distances) {
    fs::create_directories(dir);
    min_distances.assign(p.points.size(), -1.0);
    const std::vector<double> L = res.final_dimensions;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        SvgCanvas canvas;
        MechanismLayer deformed;
        deformed.coords = &res.states[i].coords;
        deformed.stroke = "#1f77b4";
        deformed.label = "deformed position, point " + std::to_string(i);
        canvas.add_mechanism(p.mechanism, deformed);

        MinimumDistancePose pose;
        bool have_pose = false;
        if (!p.points[i].pins.empty()) {
            PrecisionPoint unpinned = p.points[i];
            unpinned.pins.clear();
            const LinearRestrictions r = build_restrictions(p, res.final_coords, unpinned);
            const int tracer = p.mechanism.node_slot(p.points[i].pins.front().node);
            pose = minimum_distance_pose(p.mechanism, L, r, tracer, p.points[i].pins.front().target,
                                         res.states[i].coords, p.length_floor());
            min_distances[i] = pose.distance;
            have_pose = true;
        }
        MechanismLayer rigid;
        if (have_pose) {
            rigid.coords = &pose.coords;
            rigid.stroke = "#2ca02c";
            rigid.dash = "6,4";
            rigid.label = "minimum-distance pose" + std::string(pose.rigid ? "" : " (not rigid)");
            canvas.add_mechanism(p.mechanism, rigid);
        }
        for (const PinTarget& pin : p.points[i].pins) canvas.add_target(pin.target);
        write_text_file((dir / ("point_" + std::to_string(i) + ".svg")).string(), canvas.render());
    }
}

int cmd_run(const Options& opt) {
    SynthesisProblem p = load_with_overrides(opt);
    fs::create_directories(opt.out_dir);

    if (p.options.formulation == Formulation::dimensions && p.options.optimize_fixed_nodes && !opt.quiet)
        std::cerr << "warning: the dimensions formulation does not optimize fixed-node positions\n";

    const SynthesisResult res = optimize(p);

    std::vector<double> min_distances;
    write_snapshots(p, res, fs::path(opt.out_dir) / "snapshots", min_distances);
    write_text_file((fs::path(opt.out_dir) / "trace.csv").string(), trace_csv(res.trace));
    write_text_file((fs::path(opt.out_dir) / "result.json").string(),
                    result_json(p, res, min_distances).dump(2) + "\n");

    if (!opt.quiet) {
        std::cout << "initial fitness  " << format_sig9(res.trace.front().fitness) << "\n"
                  << "final fitness    " << format_sig9(res.fitness) << "\n"
                  << "iterations       " << res.iterations << "\n"
                  << "termination      " << to_string(res.reason) << "\n";
        if (res.config_flips > 0)
            std::cout << "note: assembly configuration changed sign " << res.config_flips
                      << " time(s) between accepted iterates\n";
    }
    return res.reason == StopReason::max_iterations ? 2 : 0;
}

int cmd_compare(const Options& opt) {
    SynthesisProblem p = load_with_overrides(opt);
    fs::create_directories(opt.out_dir);

    if (p.options.optimize_fixed_nodes && !opt.quiet)
        std::cerr << "warning: the dimensions formulation ignores fixed-node optimization; "
                     "comparing with fixed nodes pinned in both runs\n";
    p.options.optimize_fixed_nodes = false;  // identical pinning for both formulations

    SynthesisProblem pc = p;
    pc.options.formulation = Formulation::coordinates;
    const SynthesisResult rc = optimize_coordinates(pc);

    SynthesisProblem pd = p;
    pd.options.formulation = Formulation::dimensions;
    const SynthesisResult rd = optimize_dimensions(pd);

    write_text_file((fs::path(opt.out_dir) / "compare.csv").string(), compare_csv(rc.trace, rd.trace));
    auto accepted = [](const SynthesisResult& r) {
        std::vector<double> f;
        for (const TraceRecord& t : r.trace)
            if (t.accepted) f.push_back(t.fitness);
        return f;
    };
    write_text_file((fs::path(opt.out_dir) / "compare.svg").string(),
                    fitness_plot_svg(accepted(rc), "coordinates", accepted(rd), "dimensions"));

    if (!opt.quiet) {
        std::cout << "coordinates: final fitness " << format_sig9(rc.fitness) << " (" << to_string(rc.reason)
                  << ", " << rc.iterations << " iterations)\n";
        std::cout << "dimensions:  final fitness " << format_sig9(rd.fitness) << " (" << to_string(rd.reason)
                  << ", " << rd.iterations << " iterations)\n";
    }
    return (rc.reason == StopReason::max_iterations || rd.reason == StopReason::max_iterations) ? 2 : 0;
}

int cmd_check(const Options& opt) {
    SynthesisProblem p = load_with_overrides(opt);

    const GradientCheckReport grad =
        check_synthesis_gradient(p, opt.seed, opt.trials, opt.corrupt ? 1e-2 : 0.0);
    const ElementCheckReport elem = check_element_kernels(opt.seed, 50);

    if (grad.design_dimension == 0) {
        std::cout << "design space is zero-dimensional: gradient check is vacuous\n";
    } else {
        std::cout << "synthesis gradient vs finite differences (" << grad.probes
                  << " probes, dim " << grad.design_dimension
                  << "): max rel error " << format_sig9(grad.max_rel_error) << "\n";
    }
    std::cout << "element outer hessian:  max rel error " << format_sig9(elem.outer_hessian_error) << "\n"
              << "element inner hessian:  max rel error " << format_sig9(elem.inner_hessian_error) << "\n"
              << "element bc hessian:     max rel error " << format_sig9(elem.bc_hessian_error) << "\n";

    const bool ok = grad.max_rel_error < 1e-4;
    std::cout << (ok ? "gradient check PASSED\n" : "gradient check FAILED\n");
    return ok ? 0 : 3;
}

int cmd_render(const Options& opt) {
    SynthesisProblem p = load_with_overrides(opt);
    fs::create_directories(opt.out_dir);
    SvgCanvas canvas;
    MechanismLayer initial;
    initial.coords = &p.x0;
    initial.label = "initial configuration";
    canvas.add_mechanism(p.mechanism, initial);
    for (const PrecisionPoint& pp : p.points)
        for (const PinTarget& pin : pp.pins) canvas.add_target(pin.target);
    write_text_file((fs::path(opt.out_dir) / "problem.svg").string(), canvas.render());
    if (!opt.quiet) std::cout << "wrote " << (fs::path(opt.out_dir) / "problem.svg").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Optimal dimensional synthesis of planar truss mechanisms"};
    app.require_subcommand(1);

    Options opt;
    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--problem", opt.problem_path, "problem file (JSON)")->required();
        if (needs_out) sub->add_option("--out", opt.out_dir, "output directory");
        sub->add_option("--max-iter", opt.max_iter, "override maximum outer iterations");
        sub->add_option("--gtol", opt.gtol, "override gradient tolerance factor");
        sub->add_option("--formulation", opt.formulation, "coords|dims")
            ->check(CLI::IsMember({"coords", "dims"}));
        sub->add_option("--seed", opt.seed, "seed for perturbation checks");
        sub->add_flag("--quiet", opt.quiet, "suppress non-essential output");
    };

    CLI::App* run = app.add_subcommand("run", "synthesize a mechanism and write results");
    add_common(run, true);
    CLI::App* compare = app.add_subcommand("compare", "run both formulations under identical pinning");
    add_common(compare, true);
    CLI::App* check = app.add_subcommand("check", "verify analytic derivatives against finite differences");
    add_common(check, false);
    check->add_option("--trials", opt.trials, "number of gradient probes (x0 plus perturbations)");
    check->add_flag("--corrupt", opt.corrupt)->group("");  // hidden test fixture
    CLI::App* render = app.add_subcommand("render", "draw the problem's initial configuration");
    add_common(render, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(opt);
        if (compare->parsed()) return cmd_compare(opt);
        if (check->parsed()) return cmd_check(opt);
        if (render->parsed()) return cmd_render(opt);
    } catch (const ProblemError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
