// Finite-difference verification of the analytic derivatives, exposed both
// to the CLI `check` subcommand and to the test suites.
#pragma once

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "mechsyn/kernels.hpp"
#include "mechsyn/model.hpp"
#include "mechsyn/synthesis.hpp"

namespace mechsyn {

/// Central finite differences of a scalar function of a vector.
template <typename F>
Eigen::VectorXd central_difference_gradient(F&& f, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Central finite differences of a vector function; column i holds df/dx_i.
template <typename F>
Eigen::MatrixXd central_difference_jacobian(F&& f, const Eigen::VectorXd& x, double h) {
    Eigen::VectorXd xp = x;
    xp[0] = x[0] + h;
    Eigen::VectorXd probe = f(xp);
    xp[0] = x[0];
    Eigen::MatrixXd J(probe.size(), x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const Eigen::VectorXd fp = f(xp);
        xp[i] = x[i] - h;
        const Eigen::VectorXd fm = f(xp);
        xp[i] = x[i];
        J.col(i) = (fp - fm) / (2.0 * h);
    }
    return J;
}

struct GradientCheckReport {
    int design_dimension = 0;
    int probes = 0;
    double max_rel_error = 0.0;
};

/// Compare the assembled synthesis gradient against central finite
/// differences of the fitness (inner problems re-solved per probe, warm
/// started from the base point's states). Probes the given x0 plus
/// `probes - 1` seeded random perturbations of it.
inline GradientCheckReport check_synthesis_gradient(const SynthesisProblem& p, unsigned seed, int probes,
                                                    double corruption = 0.0) {
    GradientCheckReport rep;
    const DesignMap dm = DesignMap::build(p);
    rep.design_dimension = dm.variable_count();
    if (rep.design_dimension == 0) {
        rep.probes = probes;
        return rep;  // zero-dimensional design space: vacuous pass
    }

    const double scale = p.geometry_scale();
    const double h = 1e-6 * scale;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.02 * scale, 0.02 * scale);

    Eigen::VectorXd base = dm.extract(p.x0.flat());
    for (int probe = 0; probe < probes; ++probe) {
        Eigen::VectorXd vars = base;
        if (probe > 0)
            for (Eigen::Index i = 0; i < vars.size(); ++i) vars[i] += jitter(rng);

        const CoordSet x0(dm.inject(vars, p.x0.flat()));
        detail::FitnessEval ev = detail::try_evaluate_coords(p, x0, nullptr);
        if (!ev.ok) continue;  // perturbation broke assembly; skip the probe

        Eigen::VectorXd analytic = synthesis_gradient_coords(p, x0, ev.states, dm);
        analytic.array() += corruption;

        auto fitness_at = [&](const Eigen::VectorXd& v) {
            detail::FitnessEval e = detail::try_evaluate_coords(p, CoordSet(dm.inject(v, p.x0.flat())),
                                                                &ev.states);
            return e.ok ? e.fitness : std::numeric_limits<double>::quiet_NaN();
        };
        const Eigen::VectorXd fd = central_difference_gradient(fitness_at, vars, h);
        if (!fd.allFinite()) continue;

        const double err = (analytic - fd).cwiseAbs().maxCoeff() /
                           std::max(fd.cwiseAbs().maxCoeff(), 1e-12);
        rep.max_rel_error = std::max(rep.max_rel_error, err);
        ++rep.probes;
    }
    return rep;
}

struct ElementCheckReport {
    double outer_hessian_error = 0.0;
    double inner_hessian_error = 0.0;
    double bc_hessian_error = 0.0;
    double outer_gradient_error = 0.0;
    double inner_gradient_error = 0.0;
    int elements = 0;
};

/// Random-element finite-difference checks of every kernel. Each random
/// element is a single truss with random design and deformed endpoint
/// positions, random deformed lengths where needed, and (for the bc terms)
/// a random fixed-endpoint selector; the deformed coordinates of selected
/// endpoints track the design coordinates, which is the substitution rule
/// the bc kernels differentiate under.
inline ElementCheckReport check_element_kernels(unsigned seed, int count) {
    ElementCheckReport rep;
    rep.elements = count;
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> pos(-2.0, 2.0);
    std::uniform_real_distribution<double> len(0.4, 3.0);
    std::uniform_int_distribution<int> flag(0, 1);
    const double h = 1e-6;

    for (int e = 0; e < count; ++e) {
        Eigen::Vector4d x0v, xiv;
        do {
            for (int i = 0; i < 4; ++i) x0v[i] = pos(rng);
        } while ((x0v.head<2>() - x0v.tail<2>()).norm() < 0.3);
        do {
            for (int i = 0; i < 4; ++i) xiv[i] = pos(rng);
        } while ((xiv.head<2>() - xiv.tail<2>()).norm() < 0.3);

        const int np = 3;
        std::vector<double> lji(np);
        for (double& l : lji) l = len(rng);
        const double L = len(rng);

        // Outer: energy sum_i (|k-l| - l_i)^2 with l_i frozen.
        auto outer_energy = [&](const Eigen::VectorXd& v) {
            const double Lx = (v.head<2>() - v.tail<2>()).norm();
            double s = 0.0;
            for (double l : lji) s += (Lx - l) * (Lx - l);
            return s;
        };
        auto outer_grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            return outer_element_gradient(v.head<2>(), v.tail<2>(), lji);
        };
        {
            const Eigen::VectorXd g = outer_grad(x0v);
            const Eigen::VectorXd g_fd = central_difference_gradient(outer_energy, x0v, h);
            rep.outer_gradient_error =
                std::max(rep.outer_gradient_error,
                         (g - g_fd).cwiseAbs().maxCoeff() / std::max(g_fd.cwiseAbs().maxCoeff(), 1.0));
            const Eigen::MatrixXd H = outer_element_hessian(x0v.head<2>(), x0v.tail<2>(), lji);
            const Eigen::MatrixXd H_fd = central_difference_jacobian(outer_grad, x0v, h);
            rep.outer_hessian_error =
                std::max(rep.outer_hessian_error,
                         (H - H_fd).cwiseAbs().maxCoeff() / std::max(H_fd.cwiseAbs().maxCoeff(), 1.0));
        }

        // Inner: energy (L - l(x))^2 in the deformed coordinates.
        auto inner_energy = [&](const Eigen::VectorXd& v) {
            const double lx = (v.head<2>() - v.tail<2>()).norm();
            return (L - lx) * (L - lx);
        };
        auto inner_grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            return inner_element_gradient(L, v.head<2>(), v.tail<2>());
        };
        {
            const Eigen::VectorXd g = inner_grad(xiv);
            const Eigen::VectorXd g_fd = central_difference_gradient(inner_energy, xiv, h);
            rep.inner_gradient_error =
                std::max(rep.inner_gradient_error,
                         (g - g_fd).cwiseAbs().maxCoeff() / std::max(g_fd.cwiseAbs().maxCoeff(), 1.0));
            const Eigen::MatrixXd H = inner_element_hessian(L, xiv.head<2>(), xiv.tail<2>());
            const Eigen::MatrixXd H_fd = central_difference_jacobian(inner_grad, xiv, h);
            rep.inner_hessian_error =
                std::max(rep.inner_hessian_error,
                         (H - H_fd).cwiseAbs().maxCoeff() / std::max(H_fd.cwiseAbs().maxCoeff(), 1.0));
        }

        // Boundary coupling: selected deformed coordinates track the design
        // coordinates, the rest of xi is held constant.
        FixedSelector sel{static_cast<double>(flag(rng)), static_cast<double>(flag(rng))};
        if (sel.fk == 0.0 && sel.fl == 0.0) sel.fk = 1.0;
        auto tracked = [&](const Eigen::VectorXd& v) -> Eigen::Vector4d {
            Eigen::Vector4d t = xiv;
            if (sel.fk > 0.0) t.head<2>() = v.head<2>();
            if (sel.fl > 0.0) t.tail<2>() = v.tail<2>();
            return t;
        };
        auto total_grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            const Eigen::Vector4d t = tracked(v);
            Eigen::VectorXd g = outer_element_gradient(v.head<2>(), v.tail<2>(),
                                                       std::vector<double>{(t.head<2>() - t.tail<2>()).norm()});
            g += bc_element_gradient(sel, v.head<2>(), v.tail<2>(), t.head<2>(), t.tail<2>());
            return g;
        };
        {
            const Eigen::Vector4d t = tracked(x0v);
            const std::vector<double> one_l{(t.head<2>() - t.tail<2>()).norm()};
            const BcHessianTerms terms =
                bc_element_hessian_terms(sel, x0v.head<2>(), x0v.tail<2>(), t.head<2>(), t.tail<2>());
            const Eigen::MatrixXd H_total =
                outer_element_hessian(x0v.head<2>(), x0v.tail<2>(), one_l) + terms.sum();
            const Eigen::MatrixXd H_fd = central_difference_jacobian(total_grad, x0v, h);
            rep.bc_hessian_error =
                std::max(rep.bc_hessian_error,
                         (H_total - H_fd).cwiseAbs().maxCoeff() / std::max(H_fd.cwiseAbs().maxCoeff(), 1.0));
        }
    }
    return rep;
}

}  // namespace mechsyn
