// Outer synthesis loops.
//
// Coordinate formulation (the main one): the design vector is the set of
// initial nodal coordinates x0 (fixed nodes included unless pinned), and
// the fitness is
//     F(x0) = sum_i sum_j (L_j(x0) - l_ji(x_i))^2
// where each x_i minimizes the deformation energy for precision point i
// under that point's restrictions. Gradients and Hessians are assembled
// per element from the kernels; the derivative of the inner minimizers'
// free coordinates is dropped (uncoupled approximation) - exact for the
// first derivative, approximate for the second - while fixed-node tracking
// enters through the bc kernels.
//
// Dimension formulation (baseline): the design vector is the undeformed
// length of every truss, the assembly configuration comes from a constant
// reference coordinate set, and the uncoupled Newton step moves each length
// toward the arithmetic mean of its deformed lengths.
#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mechsyn/kernels.hpp"
#include "mechsyn/linalg.hpp"
#include "mechsyn/model.hpp"
#include "mechsyn/position.hpp"

namespace mechsyn {

enum class StopReason { converged, no_decrease, max_iterations };

inline const char* to_string(StopReason r) {
    switch (r) {
        case StopReason::converged: return "converged";
        case StopReason::no_decrease: return "no-decrease";
        case StopReason::max_iterations: return "max-iterations";
    }
    return "unknown";
}

struct TraceRecord {
    int iteration = 0;
    double fitness = 0.0;
    double grad_norm = 0.0;  // infinity norm over the design variables
    double step_norm = 0.0;
    bool accepted = false;
    double wall_seconds = 0.0;
};

struct SynthesisResult {
    Formulation formulation = Formulation::coordinates;
    CoordSet final_coords;                  // final x0 (coordinates) or the assembly reference (dimensions)
    std::vector<double> final_dimensions;   // truss slot order
    double fitness = 0.0;
    StopReason reason = StopReason::converged;
    std::vector<TraceRecord> trace;
    std::vector<DeformedState> states;      // one per precision point, final
    int iterations = 0;
    int config_flips = 0;                   // assembly-configuration sign changes between accepted iterates
};

/// Which flat coordinates form the outer design vector. Pinned entries come
/// from VariableOptions (explicit pins, plus all fixed-node coordinates when
/// optimize_fixed_nodes is off).
class DesignMap {
public:
    static DesignMap build(const SynthesisProblem& p) {
        DesignMap m;
        const int nc = 2 * p.mechanism.node_count();
        std::vector<bool> pinned(nc, false);
        if (!p.options.optimize_fixed_nodes) {
            for (int s = 0; s < p.mechanism.node_count(); ++s)
                if (p.mechanism.nodes()[s].fixed) pinned[2 * s] = pinned[2 * s + 1] = true;
        }
        for (auto [node, axis] : p.options.pinned) pinned[2 * p.mechanism.node_slot(node) + axis] = true;
        m.var_of_coord_.assign(nc, -1);
        for (int i = 0; i < nc; ++i) {
            if (!pinned[i]) {
                m.var_of_coord_[i] = static_cast<int>(m.coord_of_var_.size());
                m.coord_of_var_.push_back(i);
            }
        }
        return m;
    }

    int variable_count() const { return static_cast<int>(coord_of_var_.size()); }
    int var_of_coord(int coord) const { return var_of_coord_[coord]; }
    int coord_of_var(int var) const { return coord_of_var_[var]; }

    Eigen::VectorXd extract(const Eigen::VectorXd& x_full) const {
        Eigen::VectorXd v(variable_count());
        for (int i = 0; i < variable_count(); ++i) v[i] = x_full[coord_of_var_[i]];
        return v;
    }
    Eigen::VectorXd inject(const Eigen::VectorXd& vars, Eigen::VectorXd x_full) const {
        for (int i = 0; i < variable_count(); ++i) x_full[coord_of_var_[i]] = vars[i];
        return x_full;
    }
    ElementDofs element_dofs(int slot_k, int slot_l) const {
        return ElementDofs{{var_of_coord_[2 * slot_k], var_of_coord_[2 * slot_k + 1],
                            var_of_coord_[2 * slot_l], var_of_coord_[2 * slot_l + 1]}};
    }

private:
    std::vector<int> coord_of_var_;
    std::vector<int> var_of_coord_;
};

namespace detail {

struct FitnessEval {
    bool ok = false;
    int failed_point = -1;
    double fitness = std::numeric_limits<double>::infinity();
    std::vector<DeformedState> states;
};

/// Solve all inner problems at x0. Warm starts come from `warm` when given
/// (previous accepted states); on a fresh evaluation each point chains from
/// the previous point's solution, which keeps the branch choice stable when
/// the requirements sweep smoothly. Never throws for geometric failures;
/// ok = false marks the offending point instead.
inline FitnessEval try_evaluate_coords(const SynthesisProblem& p, const CoordSet& x0,
                                       const std::vector<DeformedState>* warm) {
    FitnessEval ev;
    const double floor = p.length_floor();
    std::vector<double> L;
    try {
        L = lengths(p.mechanism, x0, floor);
    } catch (const ProblemError&) {
        ev.failed_point = -1;
        return ev;
    }
    ev.states.reserve(p.points.size());
    double f = 0.0;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        const LinearRestrictions r = build_restrictions(p, x0, p.points[i]);
        const CoordSet& start = warm ? (*warm)[i].coords : (i == 0 ? x0 : ev.states.back().coords);
        DeformedState st;
        try {
            st = solve_deformed_position(p.mechanism, L, r, start, p.options.tol.inner, 100, floor,
                                         p.options.tol.max_line_evals);
        } catch (const ProblemError&) {
            ev.failed_point = static_cast<int>(i);
            return ev;
        }
        if (!st.converged) {
            ev.failed_point = static_cast<int>(i);
            return ev;
        }
        f += st.energy;
        ev.states.push_back(std::move(st));
    }
    ev.ok = true;
    ev.fitness = f;
    return ev;
}

inline FitnessEval try_evaluate_dims(const SynthesisProblem& p, const std::vector<double>& L,
                                     const CoordSet& assembly_ref, const std::vector<DeformedState>* warm) {
    FitnessEval ev;
    const double floor = p.length_floor();
    for (double Lj : L)
        if (!(Lj > floor)) return ev;
    ev.states.reserve(p.points.size());
    double f = 0.0;
    for (std::size_t i = 0; i < p.points.size(); ++i) {
        const LinearRestrictions r = build_restrictions(p, assembly_ref, p.points[i]);
        const CoordSet& start =
            warm ? (*warm)[i].coords : (i == 0 ? assembly_ref : ev.states.back().coords);
        DeformedState st;
        try {
            st = solve_deformed_position(p.mechanism, L, r, start, p.options.tol.inner, 100, floor,
                                         p.options.tol.max_line_evals);
        } catch (const ProblemError&) {
            ev.failed_point = static_cast<int>(i);
            return ev;
        }
        if (!st.converged) {
            ev.failed_point = static_cast<int>(i);
            return ev;
        }
        f += st.energy;
        ev.states.push_back(std::move(st));
    }
    ev.ok = true;
    ev.fitness = f;
    return ev;
}

/// Orientation signature used to report assembly-configuration changes:
/// the sign of the cross product of each node-sharing truss pair.
inline std::vector<int> configuration_signature(const Mechanism& mech, const CoordSet& coords) {
    std::vector<int> sig;
    const auto& trusses = mech.trusses();
    for (std::size_t a = 0; a < trusses.size(); ++a) {
        for (std::size_t b = a + 1; b < trusses.size(); ++b) {
            int shared = -1, ka = -1, kb = -1;
            for (int na : {trusses[a].k, trusses[a].l})
                for (int nb : {trusses[b].k, trusses[b].l})
                    if (na == nb) {
                        shared = na;
                        ka = trusses[a].k == na ? trusses[a].l : trusses[a].k;
                        kb = trusses[b].k == nb ? trusses[b].l : trusses[b].k;
                    }
            if (shared < 0) continue;
            const Vec2 o = coords.at(mech.node_slot(shared));
            const Vec2 u = coords.at(mech.node_slot(ka)) - o;
            const Vec2 v = coords.at(mech.node_slot(kb)) - o;
            const double cross = u.x() * v.y() - u.y() * v.x();
            sig.push_back(cross > 0 ? 1 : (cross < 0 ? -1 : 0));
        }
    }
    return sig;
}

inline int count_sign_flips(const std::vector<int>& a, const std::vector<int>& b) {
    int flips = 0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i)
        if (a[i] != 0 && b[i] != 0 && a[i] != b[i]) ++flips;
    return flips;
}

}  // namespace detail

/// F(x0) and the per-point deformed states. Throws if an inner problem
/// fails to converge, naming the precision point.
inline std::pair<double, std::vector<DeformedState>> evaluate_fitness_coords(
    const SynthesisProblem& p, const CoordSet& x0, const std::vector<DeformedState>* warm = nullptr) {
    detail::FitnessEval ev = detail::try_evaluate_coords(p, x0, warm);
    if (!ev.ok)
        throw ProblemError("inner deformed-position solve failed for precision point " +
                           std::to_string(ev.failed_point));
    return {ev.fitness, std::move(ev.states)};
}

/// F(L) for the dimension formulation, assembly configuration taken from
/// assembly_ref (typically the problem's x0).
inline std::pair<double, std::vector<DeformedState>> evaluate_fitness_dims(
    const SynthesisProblem& p, const std::vector<double>& L, const CoordSet& assembly_ref,
    const std::vector<DeformedState>* warm = nullptr) {
    detail::FitnessEval ev = detail::try_evaluate_dims(p, L, assembly_ref, warm);
    if (!ev.ok)
        throw ProblemError("inner deformed-position solve failed for precision point " +
                           std::to_string(ev.failed_point));
    return {ev.fitness, std::move(ev.states)};
}

/// Assembled outer gradient over the free design variables: the plain
/// outer element gradients plus the fixed-node coupling terms.
inline Eigen::VectorXd synthesis_gradient_coords(const SynthesisProblem& p, const CoordSet& x0,
                                                 const std::vector<DeformedState>& states,
                                                 const DesignMap& dm) {
    const Mechanism& mech = p.mechanism;
    const double floor = p.length_floor();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dm.variable_count());
    std::vector<double> lji(states.size());
    for (std::size_t j = 0; j < mech.trusses().size(); ++j) {
        const Truss& t = mech.trusses()[j];
        const int sk = mech.node_slot(t.k), sl = mech.node_slot(t.l);
        const ElementDofs dofs = dm.element_dofs(sk, sl);
        for (std::size_t i = 0; i < states.size(); ++i) lji[i] = states[i].deformed_lengths[j];
        scatter_add(g, outer_element_gradient(x0.at(sk), x0.at(sl), lji, floor), dofs);

        const FixedSelector sel{mech.nodes()[sk].fixed ? 1.0 : 0.0, mech.nodes()[sl].fixed ? 1.0 : 0.0};
        if (sel.fk == 0.0 && sel.fl == 0.0) continue;
        for (const DeformedState& st : states) {
            scatter_add(g,
                        bc_element_gradient(sel, x0.at(sk), x0.at(sl), st.coords.at(sk), st.coords.at(sl),
                                            floor),
                        dofs);
        }
    }
    return g;
}

/// Assembled outer Hessian (uncoupled approximation plus fixed-node
/// coupling terms), symmetrized.
inline Eigen::MatrixXd synthesis_hessian_coords(const SynthesisProblem& p, const CoordSet& x0,
                                                const std::vector<DeformedState>& states,
                                                const DesignMap& dm) {
    const Mechanism& mech = p.mechanism;
    const double floor = p.length_floor();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dm.variable_count(), dm.variable_count());
    std::vector<double> lji(states.size());
    for (std::size_t j = 0; j < mech.trusses().size(); ++j) {
        const Truss& t = mech.trusses()[j];
        const int sk = mech.node_slot(t.k), sl = mech.node_slot(t.l);
        const ElementDofs dofs = dm.element_dofs(sk, sl);
        for (std::size_t i = 0; i < states.size(); ++i) lji[i] = states[i].deformed_lengths[j];
        scatter_add(H, outer_element_hessian(x0.at(sk), x0.at(sl), lji, floor), dofs);

        const FixedSelector sel{mech.nodes()[sk].fixed ? 1.0 : 0.0, mech.nodes()[sl].fixed ? 1.0 : 0.0};
        if (sel.fk == 0.0 && sel.fl == 0.0) continue;
        for (const DeformedState& st : states) {
            const BcHessianTerms terms = bc_element_hessian_terms(sel, x0.at(sk), x0.at(sl),
                                                                  st.coords.at(sk), st.coords.at(sl), floor);
            scatter_add(H, terms.sum(), dofs);
        }
    }
    H = 0.5 * (H + H.transpose()).eval();
    return H;
}

/// dF/dL_j = 2 sum_i (L_j - l_ji); exact despite the uncoupled approximation.
inline Eigen::VectorXd dim_gradient(const std::vector<double>& L, const std::vector<DeformedState>& states) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(L.size()));
    for (std::size_t j = 0; j < L.size(); ++j) {
        double s = 0.0;
        for (const DeformedState& st : states) s += L[j] - st.deformed_lengths[j];
        g[static_cast<Eigen::Index>(j)] = 2.0 * s;
    }
    return g;
}

namespace detail {

/// Shared outer SQP loop. `evaluate` maps design variables (and warm
/// states) to a FitnessEval; `gradient` and `hessian` see the current
/// variables and accepted states. A single outer step never moves the
/// design vector by more than `step_cap`: the uncoupled Hessian wildly
/// understates how far the inner solutions can relax, and unbounded early
/// steps throw the iterate into degenerate low-stiffness basins.
template <typename Evaluate, typename Gradient, typename Hessian>
SynthesisResult outer_loop(const SolveTolerances& tol, double step_cap, Eigen::VectorXd vars,
                           Eigen::VectorXd& final_vars, Evaluate&& evaluate, Gradient&& gradient,
                           Hessian&& hessian, const Mechanism& mech_for_signature,
                           const DesignMap* dm_for_signature, const CoordSet* x0_for_signature) {
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t_start).count(); };

    SynthesisResult res;
    FitnessEval cur = evaluate(vars, nullptr);
    if (!cur.ok)
        throw ProblemError("initial fitness evaluation failed (precision point " +
                           std::to_string(cur.failed_point) + ")");

    std::vector<int> signature;
    if (x0_for_signature)
        signature = configuration_signature(mech_for_signature, CoordSet(dm_for_signature->inject(
                                                                    vars, x0_for_signature->flat())));

    int stagnant = 0;
    res.reason = StopReason::max_iterations;
    for (int it = 0;; ++it) {
        const Eigen::VectorXd g = gradient(vars, cur.states);
        const double gnorm = g.size() > 0 ? g.cwiseAbs().maxCoeff() : 0.0;

        if (it == 0)
            res.trace.push_back({0, cur.fitness, gnorm, 0.0, true, elapsed()});

        if (gnorm < tol.gradient * (1.0 + cur.fitness)) {
            res.reason = StopReason::converged;
            break;
        }
        if (it >= tol.max_iterations) {
            res.reason = StopReason::max_iterations;
            break;
        }

        const Eigen::MatrixXd H = hessian(vars, cur.states);
        const Eigen::VectorXd p = descent_step(factor(H), g);
        const double slope = g.dot(p);
        if (!(slope < 0.0)) {
            res.reason = StopReason::no_decrease;
            break;
        }

        const double alpha_cap = step_cap / std::max(p.norm(), 1e-300);

        // Cache trial evaluations so the accepted one is not recomputed.
        std::vector<std::pair<double, FitnessEval>> trials;
        auto phi = [&](double alpha) {
            if (alpha > alpha_cap) return std::numeric_limits<double>::infinity();
            FitnessEval ev = evaluate(vars + alpha * p, &cur.states);
            const double f = ev.ok ? ev.fitness : std::numeric_limits<double>::infinity();
            trials.emplace_back(alpha, std::move(ev));
            return f;
        };
        const LineSearchResult ls = line_search(phi, cur.fitness, slope, tol.max_line_evals);
        if (!ls.decreased) {
            res.trace.push_back({it + 1, cur.fitness, gnorm, 0.0, false, elapsed()});
            res.reason = StopReason::no_decrease;
            break;
        }

        const double prev_fitness = cur.fitness;
        vars += ls.alpha * p;
        bool reused = false;
        for (auto& tr : trials) {
            if (tr.first == ls.alpha && tr.second.ok) {
                cur = std::move(tr.second);
                reused = true;
                break;
            }
        }
        if (!reused) cur = evaluate(vars, &cur.states);
        res.trace.push_back({it + 1, cur.fitness, gnorm, ls.alpha * p.norm(), true, elapsed()});
        ++res.iterations;

        if (x0_for_signature) {
            const std::vector<int> next_sig = configuration_signature(
                mech_for_signature, CoordSet(dm_for_signature->inject(vars, x0_for_signature->flat())));
            res.config_flips += count_sign_flips(signature, next_sig);
            signature = next_sig;
        }

        const double rel_drop = (prev_fitness - cur.fitness) / std::max(prev_fitness, 1e-300);
        stagnant = rel_drop < tol.fitness_change ? stagnant + 1 : 0;
        if (stagnant >= 3) {
            res.reason = StopReason::converged;
            break;
        }
    }

    res.fitness = cur.fitness;
    res.states = std::move(cur.states);
    final_vars = std::move(vars);
    return res;
}

}  // namespace detail

/// Coordinate-formulation synthesis: iterate x0 by the curvature-corrected
/// Newton step with line search, accepting only strict decreases.
inline SynthesisResult optimize_coordinates(const SynthesisProblem& p) {
    const DesignMap dm = DesignMap::build(p);
    const CoordSet x0_ref = p.x0;

    auto evaluate = [&](const Eigen::VectorXd& vars, const std::vector<DeformedState>* warm) {
        return detail::try_evaluate_coords(p, CoordSet(dm.inject(vars, x0_ref.flat())), warm);
    };
    auto gradient = [&](const Eigen::VectorXd& vars, const std::vector<DeformedState>& states) {
        return synthesis_gradient_coords(p, CoordSet(dm.inject(vars, x0_ref.flat())), states, dm);
    };
    auto hessian = [&](const Eigen::VectorXd& vars, const std::vector<DeformedState>& states) {
        return synthesis_hessian_coords(p, CoordSet(dm.inject(vars, x0_ref.flat())), states, dm);
    };

    Eigen::VectorXd final_vars;
    SynthesisResult res =
        detail::outer_loop(p.options.tol, 0.05 * p.geometry_scale(), dm.extract(x0_ref.flat()), final_vars,
                           evaluate, gradient, hessian, p.mechanism, &dm, &x0_ref);
    res.formulation = Formulation::coordinates;
    res.final_coords = CoordSet(dm.inject(final_vars, x0_ref.flat()));
    res.final_dimensions = lengths(p.mechanism, res.final_coords, p.length_floor());
    return res;
}

/// Dimension-formulation synthesis (baseline). Fixed-node positions are not
/// variables here; the assembly reference is the problem's x0 throughout.
inline SynthesisResult optimize_dimensions(const SynthesisProblem& p) {
    const CoordSet assembly_ref = p.x0;
    const std::vector<double> L0 = lengths(p.mechanism, assembly_ref, p.length_floor());
    const int nb = static_cast<int>(L0.size());
    const double np = static_cast<double>(p.points.size());

    auto evaluate = [&](const Eigen::VectorXd& vars, const std::vector<DeformedState>* warm) {
        std::vector<double> L(vars.data(), vars.data() + vars.size());
        return detail::try_evaluate_dims(p, L, assembly_ref, warm);
    };
    auto gradient = [&](const Eigen::VectorXd& vars, const std::vector<DeformedState>& states) {
        std::vector<double> L(vars.data(), vars.data() + vars.size());
        return dim_gradient(L, states);
    };
    auto hessian = [&](const Eigen::VectorXd&, const std::vector<DeformedState>&) {
        return Eigen::MatrixXd((2.0 * np) * Eigen::MatrixXd::Identity(nb, nb));
    };

    Eigen::VectorXd vars(nb);
    for (int j = 0; j < nb; ++j) vars[j] = L0[j];

    Eigen::VectorXd final_vars;
    SynthesisResult res = detail::outer_loop(p.options.tol, 0.05 * p.geometry_scale(), vars, final_vars,
                                             evaluate, gradient, hessian, p.mechanism, nullptr, nullptr);
    res.formulation = Formulation::dimensions;
    res.final_dimensions.assign(final_vars.data(), final_vars.data() + final_vars.size());
    res.final_coords = assembly_ref;
    return res;
}

/// Dispatch on the problem's formulation option.
inline SynthesisResult optimize(const SynthesisProblem& p) {
    return p.options.formulation == Formulation::coordinates ? optimize_coordinates(p)
                                                             : optimize_dimensions(p);
}

}  // namespace mechsyn
