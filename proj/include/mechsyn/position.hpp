// The inner deformed-position problem: find the coordinate set of minimum
// deformation energy sum_j (L_j - l_j(x))^2 subject to linear restrictions
// (pinned coordinates and prescribed-timing rays). Restrictions are applied
// by variable elimination, never by multipliers: the coordinate vector is
// written as x = T q + c and Newton iterations run on the reduced q.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mechsyn/kernels.hpp"
#include "mechsyn/linalg.hpp"
#include "mechsyn/model.hpp"

namespace mechsyn {

/// Scalar linear equality constraints over the flat coordinate vector.
struct LinearRestrictions {
    struct Pin {
        int coord = -1;  // flat coordinate index
        double value = 0.0;
    };
    // a*(x_to - x_from) + b*(y_to - y_from) = 0 with a = -sin(angle),
    // b = cos(angle): the to-node lies on the ray of that angle from from.
    struct RayEq {
        int from_slot = -1;
        int to_slot = -1;
        double a = 0.0;
        double b = 0.0;
    };
    std::vector<Pin> pins;
    std::vector<RayEq> rays;
};

/// Restrictions for one precision point: every fixed node is pinned to its
/// current design coordinates, every target node to its target, and each
/// prescribed-timing entry contributes one ray equation.
inline LinearRestrictions build_restrictions(const SynthesisProblem& problem, const CoordSet& x0,
                                             const PrecisionPoint& point) {
    const Mechanism& mech = problem.mechanism;
    LinearRestrictions r;
    for (int s = 0; s < mech.node_count(); ++s) {
        if (!mech.nodes()[s].fixed) continue;
        r.pins.push_back({2 * s, x0.at(s).x()});
        r.pins.push_back({2 * s + 1, x0.at(s).y()});
    }
    for (const PinTarget& pin : point.pins) {
        const int s = mech.node_slot(pin.node);
        r.pins.push_back({2 * s, pin.target.x()});
        r.pins.push_back({2 * s + 1, pin.target.y()});
    }
    for (const TimingRay& ray : point.rays) {
        if (!mech.node(ray.from).fixed)
            throw ProblemError("ray from node " + mech.node_name(ray.from) + ": from-node must be fixed");
        if (ray.from == ray.to)
            throw ProblemError("ray from node " + mech.node_name(ray.from) + " to itself");
        r.rays.push_back({mech.node_slot(ray.from), mech.node_slot(ray.to),
                          -std::sin(ray.angle), std::cos(ray.angle)});
    }
    return r;
}

/// Variable elimination for linear equality constraints: x = T q + c where
/// q collects the surviving free coordinates. Pins fix a coordinate to a
/// constant; a ray equation either checks consistency (all its coordinates
/// already bound), pins its one unbound coordinate, or slaves one coordinate
/// to another. Mutually inconsistent constraints are rejected.
class AffineReduction {
public:
    static AffineReduction build(const LinearRestrictions& r, int coord_count, double scale) {
        AffineReduction red;
        red.bind_.assign(coord_count, Binding{});
        const double tol = 1e-9 * std::max(scale, 1e-300);

        for (const auto& pin : r.pins) red.apply_pin(pin.coord, pin.value, tol);

        for (const auto& ray : r.rays) {
            // Coefficients over (x_from, y_from, x_to, y_to).
            const int coords[4] = {2 * ray.from_slot, 2 * ray.from_slot + 1, 2 * ray.to_slot,
                                   2 * ray.to_slot + 1};
            const double coeffs[4] = {-ray.a, -ray.b, ray.a, ray.b};
            red.apply_equation(coords, coeffs, 4, 0.0, tol);
        }

        for (int i = 0; i < coord_count; ++i) {
            if (red.bind_[i].kind == Binding::Free) {
                red.bind_[i].index = static_cast<int>(red.free_coords_.size());
                red.free_coords_.push_back(i);
            }
        }
        red.T_ = Eigen::MatrixXd::Zero(coord_count, static_cast<Eigen::Index>(red.free_coords_.size()));
        red.c_ = Eigen::VectorXd::Zero(coord_count);
        for (int i = 0; i < coord_count; ++i) {
            const Binding& b = red.bind_[i];
            switch (b.kind) {
                case Binding::Free:
                    red.T_(i, b.index) = 1.0;
                    break;
                case Binding::Pinned:
                    red.c_[i] = b.offset;
                    break;
                case Binding::Slaved:
                    red.T_(i, red.bind_[b.index].index) = b.coeff;
                    red.c_[i] = b.offset;
                    break;
            }
        }
        return red;
    }

    int full_size() const { return static_cast<int>(bind_.size()); }
    int reduced_size() const { return static_cast<int>(free_coords_.size()); }
    const std::vector<int>& free_coords() const { return free_coords_; }

    Eigen::VectorXd expand(const Eigen::VectorXd& q) const { return T_ * q + c_; }
    Eigen::VectorXd reduce_point(const Eigen::VectorXd& x) const {
        Eigen::VectorXd q(reduced_size());
        for (int i = 0; i < reduced_size(); ++i) q[i] = x[free_coords_[i]];
        return q;
    }
    /// Substitute pins/slaves into x: expand(reduce_point(x)).
    Eigen::VectorXd project(const Eigen::VectorXd& x) const { return expand(reduce_point(x)); }

    Eigen::VectorXd reduce_gradient(const Eigen::VectorXd& g) const { return T_.transpose() * g; }
    Eigen::MatrixXd reduce_hessian(const Eigen::MatrixXd& H) const { return T_.transpose() * H * T_; }

private:
    struct Binding {
        enum Kind { Free, Pinned, Slaved } kind = Free;
        int index = -1;      // Free: q column; Slaved: master's flat coordinate
        double coeff = 0.0;  // Slaved: x = coeff * x_master + offset
        double offset = 0.0; // Pinned: the value; Slaved: the affine offset
    };

    void apply_pin(int coord, double value, double tol) {
        Binding& b = bind_[coord];
        if (b.kind == Binding::Pinned) {
            if (std::abs(b.offset - value) > tol)
                throw ProblemError("inconsistent restrictions: coordinate " + std::to_string(coord) +
                                   " pinned to two different values");
            return;
        }
        if (b.kind == Binding::Slaved) {
            // The slave relation plus this pin determines the master.
            const int master = b.index;
            if (std::abs(b.coeff) <= tol * 1e-3)
                throw ProblemError("inconsistent restrictions: degenerate slave relation");
            const double master_value = (value - b.offset) / b.coeff;
            b = Binding{Binding::Pinned, -1, 0.0, value};
            apply_pin(master, master_value, tol);
            return;
        }
        b = Binding{Binding::Pinned, -1, 0.0, value};
        // Existing slaves of this coordinate become pins.
        for (std::size_t i = 0; i < bind_.size(); ++i) {
            Binding& s = bind_[i];
            if (s.kind == Binding::Slaved && s.index == coord)
                s = Binding{Binding::Pinned, -1, 0.0, s.coeff * value + s.offset};
        }
    }

    // Apply sum_t coeffs[t] * x[coords[t]] = rhs after substituting current bindings.
    void apply_equation(const int* coords, const double* coeffs, int nterms, double rhs, double tol) {
        // Collect into (free coordinate -> net coefficient).
        std::vector<std::pair<int, double>> unknowns;
        auto add_unknown = [&](int coord, double coeff) {
            for (auto& u : unknowns) {
                if (u.first == coord) {
                    u.second += coeff;
                    return;
                }
            }
            unknowns.emplace_back(coord, coeff);
        };
        for (int t = 0; t < nterms; ++t) {
            const Binding& b = bind_[coords[t]];
            switch (b.kind) {
                case Binding::Free:
                    add_unknown(coords[t], coeffs[t]);
                    break;
                case Binding::Pinned:
                    rhs -= coeffs[t] * b.offset;
                    break;
                case Binding::Slaved:
                    add_unknown(b.index, coeffs[t] * b.coeff);
                    rhs -= coeffs[t] * b.offset;
                    break;
            }
        }
        unknowns.erase(std::remove_if(unknowns.begin(), unknowns.end(),
                                      [&](const auto& u) { return std::abs(u.second) <= tol * 1e-3; }),
                       unknowns.end());

        if (unknowns.empty()) {
            if (std::abs(rhs) > tol)
                throw ProblemError("inconsistent restrictions: contradictory ray equation");
            return;
        }
        if (unknowns.size() == 1) {
            apply_pin(unknowns[0].first, rhs / unknowns[0].second, tol);
            return;
        }
        if (unknowns.size() > 2)
            throw ProblemError("unsupported restriction pattern: equation couples more than two free coordinates");

        // Slave the larger-coefficient coordinate to the other.
        int s = 0, m = 1;
        if (std::abs(unknowns[1].second) > std::abs(unknowns[0].second)) std::swap(s, m);
        const int slave = unknowns[s].first, master = unknowns[m].first;
        const double coeff = -unknowns[m].second / unknowns[s].second;
        const double offset = rhs / unknowns[s].second;
        bind_[slave] = Binding{Binding::Slaved, master, coeff, offset};
        // Re-point anything that was slaved to the new slave.
        for (std::size_t i = 0; i < bind_.size(); ++i) {
            if (static_cast<int>(i) == slave) continue;
            Binding& o = bind_[i];
            if (o.kind == Binding::Slaved && o.index == slave) {
                const double chain = o.coeff;  // x_o = chain * x_slave + o.offset
                o.coeff = chain * coeff;
                o.offset += chain * offset;
                o.index = master;
            }
        }
    }

    std::vector<Binding> bind_;
    std::vector<int> free_coords_;
    Eigen::MatrixXd T_;
    Eigen::VectorXd c_;
};

/// Converged inner-solve result for one precision point.
struct DeformedState {
    CoordSet coords;
    std::vector<double> deformed_lengths;  // truss slot order
    double energy = 0.0;
    bool converged = false;
    int iterations = 0;
};

namespace detail {

/// sum_j (L_j - l_j(x))^2, or nullopt if any truss length collapses.
inline std::optional<double> deformation_energy(const Mechanism& mech, const std::vector<double>& L,
                                                const Eigen::VectorXd& x, double floor,
                                                std::vector<double>* lengths_out = nullptr) {
    double e = 0.0;
    if (lengths_out) lengths_out->assign(mech.trusses().size(), 0.0);
    for (std::size_t j = 0; j < mech.trusses().size(); ++j) {
        const Truss& t = mech.trusses()[j];
        const Eigen::Vector2d pk = x.segment<2>(2 * mech.node_slot(t.k));
        const Eigen::Vector2d pl = x.segment<2>(2 * mech.node_slot(t.l));
        const double l = (pk - pl).norm();
        if (l <= floor) return std::nullopt;
        if (lengths_out) (*lengths_out)[j] = l;
        const double d = L[j] - l;
        e += d * d;
    }
    return e;
}

}  // namespace detail

/// Newton iteration on the free coordinates, restricted dofs eliminated.
/// Monotone energy decrease is enforced by the line search; convergence is
/// reached when the projected gradient infinity norm drops below
/// tol * (1 + energy), or when the line search stalls with the gradient
/// already at the floating-point stationarity floor (energy differences
/// below rounding). On max_iter the state is returned with converged = false.
inline DeformedState solve_deformed_position(const Mechanism& mech, const std::vector<double>& L,
                                             const LinearRestrictions& restrictions, const CoordSet& start,
                                             double tol = 1e-10, int max_iter = 100,
                                             double length_floor = 0.0, int max_line_evals = 30) {
    const int nc = 2 * mech.node_count();
    const double scale = std::max(start.flat().cwiseAbs().maxCoeff(), 1.0);
    const AffineReduction red = AffineReduction::build(restrictions, nc, scale);

    Eigen::VectorXd q = red.reduce_point(start.flat());
    Eigen::VectorXd x = red.expand(q);

    DeformedState state;
    std::vector<double> lengths_now;
    auto energy0 = detail::deformation_energy(mech, L, x, length_floor, &lengths_now);
    if (!energy0)
        throw ProblemError("deformed-position solve started from a zero-length configuration");
    double energy = *energy0;

    const int nq = red.reduced_size();
    int it = 0;
    bool converged = (nq == 0);
    while (!converged && it < max_iter) {
        Eigen::VectorXd g_full = Eigen::VectorXd::Zero(nc);
        Eigen::MatrixXd h_full = Eigen::MatrixXd::Zero(nc, nc);
        for (std::size_t j = 0; j < mech.trusses().size(); ++j) {
            const Truss& t = mech.trusses()[j];
            const int sk = mech.node_slot(t.k), sl = mech.node_slot(t.l);
            const Vec2 pk = x.segment<2>(2 * sk), pl = x.segment<2>(2 * sl);
            const ElementDofs dofs{{2 * sk, 2 * sk + 1, 2 * sl, 2 * sl + 1}};
            scatter_add(g_full, inner_element_gradient(L[j], pk, pl, length_floor), dofs);
            scatter_add(h_full, inner_element_hessian(L[j], pk, pl, length_floor), dofs);
        }
        const Eigen::VectorXd g = red.reduce_gradient(g_full);
        const double gnorm = g.cwiseAbs().maxCoeff();
        if (gnorm < tol * (1.0 + energy)) {
            converged = true;
            break;
        }
        Eigen::MatrixXd h = red.reduce_hessian(h_full);
        h = 0.5 * (h + h.transpose()).eval();

        // Below this, energy differences along any step are lost to rounding,
        // so a stalled line search means stationarity at machine precision.
        const double curvature = h.diagonal().cwiseAbs().maxCoeff();
        const double fp_floor = std::sqrt(std::numeric_limits<double>::epsilon() * (1.0 + energy) *
                                          (1.0 + curvature));

        const Eigen::VectorXd p = descent_step(factor(h), g);
        const double slope = g.dot(p);
        if (!(slope < 0.0)) {
            converged = gnorm < fp_floor;
            break;
        }

        auto phi = [&](double alpha) {
            const auto e = detail::deformation_energy(mech, L, red.expand(q + alpha * p), length_floor);
            return e ? *e : std::numeric_limits<double>::infinity();
        };
        const LineSearchResult ls = line_search(phi, energy, slope, max_line_evals);
        if (!ls.decreased) {
            converged = gnorm < fp_floor;
            break;
        }

        q += ls.alpha * p;
        x = red.expand(q);
        energy = ls.value;
        ++it;
    }

    auto efinal = detail::deformation_energy(mech, L, x, length_floor, &lengths_now);
    if (!efinal) throw ProblemError("deformed-position solve reached a zero-length configuration");
    state.coords = CoordSet(x);
    state.deformed_lengths = lengths_now;
    state.energy = *efinal;
    state.converged = converged;
    state.iterations = it;
    return state;
}

struct MinimumDistancePose {
    CoordSet coords;
    double distance = 0.0;
    bool rigid = false;  // every length within 1e-6 relative of its target
};

/// Pose of the rigid mechanism minimizing squared tracer-to-target distance,
/// by penalty continuation: minimize w * sum_j (L_j - l_j)^2 + |tracer - target|^2
/// with w stepping through 1e2, 1e4, 1e6, 1e8, warm-starting each stage.
/// Restrictions should carry fixed-node pins (and rays) but no target pins.
inline MinimumDistancePose minimum_distance_pose(const Mechanism& mech, const std::vector<double>& L,
                                                 const LinearRestrictions& restrictions, int tracer_slot,
                                                 const Vec2& target, const CoordSet& start,
                                                 double length_floor = 0.0) {
    const int nc = 2 * mech.node_count();
    const double scale = std::max(start.flat().cwiseAbs().maxCoeff(), 1.0);
    const AffineReduction red = AffineReduction::build(restrictions, nc, scale);

    Eigen::VectorXd q = red.reduce_point(start.flat());

    auto objective = [&](double w, const Eigen::VectorXd& qq) -> double {
        const Eigen::VectorXd x = red.expand(qq);
        const auto e = detail::deformation_energy(mech, L, x, length_floor);
        if (!e) return std::numeric_limits<double>::infinity();
        const Vec2 tracer = x.segment<2>(2 * tracer_slot);
        return w * *e + (tracer - target).squaredNorm();
    };

    for (const double w : {1e2, 1e4, 1e6, 1e8}) {
        double value = objective(w, q);
        for (int it = 0; it < 120; ++it) {
            const Eigen::VectorXd x = red.expand(q);
            Eigen::VectorXd g_full = Eigen::VectorXd::Zero(nc);
            Eigen::MatrixXd h_full = Eigen::MatrixXd::Zero(nc, nc);
            for (std::size_t j = 0; j < mech.trusses().size(); ++j) {
                const Truss& t = mech.trusses()[j];
                const int sk = mech.node_slot(t.k), sl = mech.node_slot(t.l);
                const Vec2 pk = x.segment<2>(2 * sk), pl = x.segment<2>(2 * sl);
                const ElementDofs dofs{{2 * sk, 2 * sk + 1, 2 * sl, 2 * sl + 1}};
                scatter_add(g_full, Vec4(w * inner_element_gradient(L[j], pk, pl, length_floor)), dofs);
                scatter_add(h_full, Mat4(w * inner_element_hessian(L[j], pk, pl, length_floor)), dofs);
            }
            const Vec2 tracer = x.segment<2>(2 * tracer_slot);
            g_full.segment<2>(2 * tracer_slot) += 2.0 * (tracer - target);
            h_full(2 * tracer_slot, 2 * tracer_slot) += 2.0;
            h_full(2 * tracer_slot + 1, 2 * tracer_slot + 1) += 2.0;

            const Eigen::VectorXd g = red.reduce_gradient(g_full);
            if (g.size() == 0 || g.cwiseAbs().maxCoeff() < 1e-12 * (1.0 + std::abs(value))) break;
            Eigen::MatrixXd h = red.reduce_hessian(h_full);
            h = 0.5 * (h + h.transpose()).eval();
            const Eigen::VectorXd p = descent_step(factor(h), g);
            const double slope = g.dot(p);
            if (!(slope < 0.0)) break;
            const LineSearchResult ls =
                line_search([&](double a) { return objective(w, q + a * p); }, value, slope, 30);
            if (!ls.decreased) break;
            q += ls.alpha * p;
            value = ls.value;
        }
    }

    const Eigen::VectorXd x = red.expand(q);
    MinimumDistancePose pose;
    std::vector<double> lens;
    const auto e = detail::deformation_energy(mech, L, x, length_floor, &lens);
    pose.coords = CoordSet(x);
    const Vec2 tracer = x.segment<2>(2 * tracer_slot);
    pose.distance = (tracer - target).norm();
    pose.rigid = e.has_value();
    if (e) {
        for (std::size_t j = 0; j < lens.size(); ++j)
            if (std::abs(lens[j] - L[j]) > 1e-6 * std::max(L[j], 1e-300)) pose.rigid = false;
    }
    return pose;
}

}  // namespace mechsyn
