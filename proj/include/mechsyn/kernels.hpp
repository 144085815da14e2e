// Per-truss energy derivatives for the deformed-energy synthesis function.
//
// Every kernel works on the 4-dof local layout (x_k, y_k, x_l, y_l) of one
// truss joining nodes k and l. Conventions:
//   L      undeformed length, from the design coordinates x0
//   l_i    deformed length in precision point i, from the solved coordinates x_i
//   delta  the 4-vector (x_k - x_l, y_k - y_l, x_l - x_k, y_l - y_k); its
//          first pair has norm equal to the truss length, and d(length)/dx =
//          delta / length.
//
// The outer kernels differentiate sum_i (L(x0) - l_i)^2 with the deformed
// lengths frozen (uncoupled approximation). The inner kernels differentiate
// (L - l(x))^2 in the deformed coordinates. The bc kernels add the coupling
// that appears because a fixed node's deformed coordinates track its design
// coordinates; the selector (f_k, f_l) flags which endpoints are fixed.
#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mechsyn/model.hpp"

namespace mechsyn {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

/// Local-to-global scatter map for one truss, in (x_k, y_k, x_l, y_l)
/// order. An entry of -1 marks a pinned slot that is dropped on assembly.
struct ElementDofs {
    std::array<int, 4> global{-1, -1, -1, -1};
};

/// Diagonal selector (f_k, f_k, f_l, f_l); f is 1 for a fixed endpoint.
struct FixedSelector {
    double fk = 0.0;
    double fl = 0.0;

    Vec4 apply(const Vec4& v) const { return Vec4(fk * v[0], fk * v[1], fl * v[2], fl * v[3]); }
    Vec4 diagonal() const { return Vec4(fk, fk, fl, fl); }
};

inline Vec4 delta4(const Vec2& pk, const Vec2& pl) {
    const Vec2 d = pk - pl;
    return Vec4(d.x(), d.y(), -d.x(), -d.y());
}

inline Vec4 delta4(const Mechanism& mech, const CoordSet& coords, const Truss& t) {
    return delta4(coords.at(mech.node_slot(t.k)), coords.at(mech.node_slot(t.l)));
}

/// d(delta)/d(x): the constant 4x4 with +-1 in the two-node difference pattern.
inline const Mat4& delta_jacobian() {
    static const Mat4 J = [] {
        Mat4 m;
        m << 1, 0, -1, 0,
             0, 1, 0, -1,
             -1, 0, 1, 0,
             0, -1, 0, 1;
        return m;
    }();
    return J;
}

namespace detail {

inline double checked_length(const Vec4& delta, double min_len, const char* what) {
    const double len = delta.head<2>().norm();
    if (len <= min_len) throw std::domain_error(std::string(what) + ": zero-length truss");
    return len;
}

}  // namespace detail

/// Gradient of sum_i (L(x0) - l_i)^2 in the element's design coordinates,
/// deformed lengths held constant: 2 (P - sum_i l_i / L) * delta0.
inline Vec4 outer_element_gradient(const Vec2& k0, const Vec2& l0, std::span<const double> deformed,
                                   double min_len = 0.0) {
    const Vec4 d0 = delta4(k0, l0);
    const double L = detail::checked_length(d0, min_len, "outer_element_gradient");
    double sum_l = 0.0;
    for (double li : deformed) sum_l += li;
    const double factor = 2.0 * (static_cast<double>(deformed.size()) - sum_l / L);
    return factor * d0;
}

/// Hessian of the same element function:
/// 2 (P - sum l/L) * d(delta)/dx + 2 (sum l / L^3) * delta0 delta0^T.
inline Mat4 outer_element_hessian(const Vec2& k0, const Vec2& l0, std::span<const double> deformed,
                                  double min_len = 0.0) {
    const Vec4 d0 = delta4(k0, l0);
    const double L = detail::checked_length(d0, min_len, "outer_element_hessian");
    double sum_l = 0.0;
    for (double li : deformed) sum_l += li;
    const double p = static_cast<double>(deformed.size());
    return 2.0 * (p - sum_l / L) * delta_jacobian() + (2.0 * sum_l / (L * L * L)) * (d0 * d0.transpose());
}

/// Gradient of (L - l(x))^2 in the deformed coordinates: 2 (1 - L/l) * delta_i.
inline Vec4 inner_element_gradient(double undeformed, const Vec2& ki, const Vec2& li,
                                   double min_len = 0.0) {
    const Vec4 di = delta4(ki, li);
    const double l = detail::checked_length(di, min_len, "inner_element_gradient");
    return 2.0 * (1.0 - undeformed / l) * di;
}

/// Hessian of (L - l(x))^2: 2 (1 - L/l) * d(delta)/dx + 2 (L/l^3) * delta_i delta_i^T.
inline Mat4 inner_element_hessian(double undeformed, const Vec2& ki, const Vec2& li,
                                  double min_len = 0.0) {
    const Vec4 di = delta4(ki, li);
    const double l = detail::checked_length(di, min_len, "inner_element_hessian");
    return 2.0 * (1.0 - undeformed / l) * delta_jacobian() +
           (2.0 * undeformed / (l * l * l)) * (di * di.transpose());
}

/// Coupling gradient for fixed endpoints, in the design coordinates:
/// 2 (1 - L/l) * selector * delta_i. Zero when neither endpoint is fixed.
inline Vec4 bc_element_gradient(const FixedSelector& sel, const Vec2& k0, const Vec2& l0,
                                const Vec2& ki, const Vec2& li, double min_len = 0.0) {
    const Vec4 d0 = delta4(k0, l0);
    const Vec4 di = delta4(ki, li);
    const double L = detail::checked_length(d0, min_len, "bc_element_gradient");
    const double l = detail::checked_length(di, min_len, "bc_element_gradient");
    return 2.0 * (1.0 - L / l) * sel.apply(di);
}

/// The three coupling Hessian contributions for one (truss, point) pair.
/// design_deformed is the derivative of the plain outer gradient through the
/// tracked coordinates; deformed_design and deformed_deformed make up the
/// derivative of bc_element_gradient. design_deformed and the rank-one part
/// of deformed_design are transposes of each other, so the summed element
/// Hessian is symmetric.
struct BcHessianTerms {
    Mat4 design_deformed = Mat4::Zero();   // d(outer gradient)/d(tracked coords)
    Mat4 deformed_design = Mat4::Zero();   // d(bc gradient)/d(design coords), direct part
    Mat4 deformed_deformed = Mat4::Zero(); // d(bc gradient)/d(tracked coords)

    Mat4 sum() const { return design_deformed + deformed_design + deformed_deformed; }
};

inline BcHessianTerms bc_element_hessian_terms(const FixedSelector& sel, const Vec2& k0, const Vec2& l0,
                                               const Vec2& ki, const Vec2& li, double min_len = 0.0) {
    const Vec4 d0 = delta4(k0, l0);
    const Vec4 di = delta4(ki, li);
    const double L = detail::checked_length(d0, min_len, "bc_element_hessian_terms");
    const double l = detail::checked_length(di, min_len, "bc_element_hessian_terms");

    BcHessianTerms out;
    if (sel.fk == 0.0 && sel.fl == 0.0) return out;

    const Vec4 sdi = sel.apply(di);
    out.design_deformed = (-2.0 / (L * l)) * (d0 * sdi.transpose());

    // Selector-product matrix: diagonal (f_k, f_k, f_l, f_l), off-diagonal
    // -f_k*f_l in the two-node difference pattern.
    Mat4 coupling = sel.diagonal().asDiagonal() * delta_jacobian() * sel.diagonal().asDiagonal();
    out.deformed_design = (-2.0 / (L * l)) * (sdi * d0.transpose()) + 2.0 * (1.0 - L / l) * coupling;

    out.deformed_deformed = (2.0 * L / (l * l * l)) * (sdi * sdi.transpose());
    return out;
}

inline void scatter_add(Eigen::VectorXd& g, const Vec4& ge, const ElementDofs& dofs) {
    for (int a = 0; a < 4; ++a) {
        const int i = dofs.global[a];
        if (i < 0) continue;
        if (i >= g.size()) throw std::out_of_range("scatter_add: dof index out of range");
        g[i] += ge[a];
    }
}

inline void scatter_add(Eigen::MatrixXd& H, const Mat4& He, const ElementDofs& dofs) {
    for (int a = 0; a < 4; ++a) {
        const int i = dofs.global[a];
        if (i < 0) continue;
        if (i >= H.rows()) throw std::out_of_range("scatter_add: dof index out of range");
        for (int b = 0; b < 4; ++b) {
            const int j = dofs.global[b];
            if (j < 0) continue;
            H(i, j) += He(a, b);
        }
    }
}

struct ElementContribution {
    Vec4 gradient = Vec4::Zero();
    Mat4 hessian = Mat4::Zero();
};

/// Scatter-add all element contributions into a dense global gradient and
/// symmetric matrix of the given dimension. The matrix is symmetrized by
/// averaging to scrub floating-point asymmetry from the cross terms.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> assemble(std::span<const ElementContribution> elements,
                                                            std::span<const ElementDofs> dofs, int dimension) {
    if (elements.size() != dofs.size())
        throw std::invalid_argument("assemble: one dof map per element required");
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dimension);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dimension, dimension);
    for (std::size_t e = 0; e < elements.size(); ++e) {
        scatter_add(g, elements[e].gradient, dofs[e]);
        scatter_add(H, elements[e].hessian, dofs[e]);
    }
    H = 0.5 * (H + H.transpose()).eval();
    return {std::move(g), std::move(H)};
}

}  // namespace mechsyn
