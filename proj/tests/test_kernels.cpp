#include <doctest.h>

#include <random>
#include <vector>

#include "mechsyn/kernels.hpp"
#include "oracles.hpp"

using namespace mechsyn;

namespace {

Eigen::Vector4d rand_element(std::mt19937& rng, double min_sep = 0.3) {
    std::uniform_real_distribution<double> pos(-2.0, 2.0);
    Eigen::Vector4d v;
    do {
        for (int i = 0; i < 4; ++i) v[i] = pos(rng);
    } while ((v.head<2>() - v.tail<2>()).norm() < min_sep);
    return v;
}

}  // namespace

TEST_CASE("delta4") {
    CHECK(delta4({0, 0}, {1, 0}) == Vec4(-1, 0, 1, 0));
    CHECK(delta4({1, 1}, {1, 1}) == Vec4(0, 0, 0, 0));
    const Vec4 d = delta4({1, 2}, {4, 6});
    CHECK(d == Vec4(-3, -4, 3, 4));
    CHECK(d.head<2>().norm() == doctest::Approx(5.0));
    // structural invariant: second pair is the negated first pair
    std::mt19937 rng(0);
    for (int i = 0; i < 50; ++i) {
        const Eigen::Vector4d v = rand_element(rng, 0.0);
        const Vec4 dd = delta4(v.head<2>(), v.tail<2>());
        CHECK(dd[2] == -dd[0]);
        CHECK(dd[3] == -dd[1]);
    }
}

TEST_CASE("outer element gradient: direct substitutions") {
    const Vec2 k{0, 0}, l{1, 0};  // L = 1, delta = (-1, 0, 1, 0)
    SUBCASE("undeformed state vanishes") {
        const std::vector<double> li{1.0};
        CHECK(outer_element_gradient(k, l, li).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    }
    SUBCASE("single stretched point") {
        const std::vector<double> li{2.0};
        CHECK(outer_element_gradient(k, l, li) == Vec4(2, 0, -2, 0));
    }
    SUBCASE("three points") {
        const std::vector<double> li{1.0, 2.0, 3.0};
        CHECK(outer_element_gradient(k, l, li) == Vec4(6, 0, -6, 0));
    }
    SUBCASE("zero undeformed length throws") {
        const std::vector<double> li{1.0};
        CHECK_THROWS_AS(outer_element_gradient({0, 0}, {0, 0}, li), std::domain_error);
    }
}

TEST_CASE("outer element hessian: direct substitutions") {
    const Vec2 k{0, 0}, l{1, 0};
    SUBCASE("stretched point") {
        const std::vector<double> li{2.0};
        const Mat4 H = outer_element_hessian(k, l, li);
        CHECK(H(0, 0) == doctest::Approx(2.0));   // 2(1-2)*1 + 2*2*1
        CHECK(H(1, 1) == doctest::Approx(-2.0));  // delta has no y component
    }
    SUBCASE("undeformed: only the rank-one term survives") {
        const std::vector<double> li{1.0};
        const Mat4 H = outer_element_hessian(k, l, li);
        const Vec4 d = delta4(k, l);
        CHECK(oracles::rel_inf_error(H, 2.0 * d * d.transpose()) < 1e-14);
    }
}

TEST_CASE("outer element derivatives match finite differences of the frozen-length energy") {
    std::mt19937 rng(42);
    std::uniform_real_distribution<double> len(0.4, 3.0);
    double worst_g = 0.0, worst_h = 0.0;
    for (int e = 0; e < 200; ++e) {
        const Eigen::Vector4d x0 = rand_element(rng);
        std::vector<double> li(3);
        for (double& v : li) v = len(rng);

        auto energy = [&](const Eigen::VectorXd& v) {
            const double L = (v.head<2>() - v.tail<2>()).norm();
            double s = 0.0;
            for (double l : li) s += (L - l) * (L - l);
            return s;
        };
        auto grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            return outer_element_gradient(v.head<2>(), v.tail<2>(), li);
        };
        const Eigen::VectorXd g_fd = oracles::fd_gradient(energy, x0, 1e-6);
        worst_g = std::max(worst_g, oracles::rel_inf_error(grad(x0), g_fd));
        const Eigen::MatrixXd h_fd = oracles::fd_jacobian(grad, x0, 1e-6);
        worst_h = std::max(worst_h,
                           oracles::rel_inf_error(outer_element_hessian(x0.head<2>(), x0.tail<2>(), li), h_fd));
    }
    CHECK(worst_g < 1e-6);
    CHECK(worst_h < 1e-6);
}

TEST_CASE("inner element gradient: direct substitutions") {
    SUBCASE("stationary at the undeformed length") {
        CHECK(inner_element_gradient(1.0, {0, 0}, {1, 0}).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    }
    SUBCASE("stretched to twice the length") {
        CHECK(inner_element_gradient(1.0, {0, 0}, {2, 0}) == Vec4(-2, 0, 2, 0));
    }
    SUBCASE("zero deformed length throws") {
        CHECK_THROWS_AS(inner_element_gradient(1.0, {1, 1}, {1, 1}), std::domain_error);
    }
}

TEST_CASE("inner element hessian: direct substitutions and limits") {
    SUBCASE("undeformed") {
        const Mat4 H = inner_element_hessian(1.0, {0, 0}, {1, 0});
        CHECK(H(0, 0) == doctest::Approx(2.0));
        const Vec4 d = delta4({0, 0}, {1, 0});
        CHECK(oracles::rel_inf_error(H, 2.0 * d * d.transpose()) < 1e-14);
    }
    SUBCASE("far-stretched limit approaches the constant difference pattern") {
        const Mat4 H = inner_element_hessian(1.0, {0, 0}, {1000.0, 0});
        CHECK(oracles::rel_inf_error(H, 2.0 * delta_jacobian()) < 1e-2);
    }
}

TEST_CASE("inner element derivatives match finite differences") {
    std::mt19937 rng(43);
    std::uniform_real_distribution<double> len(0.4, 3.0);
    double worst_g = 0.0, worst_h = 0.0;
    for (int e = 0; e < 200; ++e) {
        const Eigen::Vector4d xi = rand_element(rng);
        const double L = len(rng);
        auto energy = [&](const Eigen::VectorXd& v) {
            const double l = (v.head<2>() - v.tail<2>()).norm();
            return (L - l) * (L - l);
        };
        auto grad = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            return inner_element_gradient(L, v.head<2>(), v.tail<2>());
        };
        worst_g = std::max(worst_g, oracles::rel_inf_error(grad(xi), oracles::fd_gradient(energy, xi, 1e-6)));
        worst_h = std::max(worst_h, oracles::rel_inf_error(inner_element_hessian(L, xi.head<2>(), xi.tail<2>()),
                                                           oracles::fd_jacobian(grad, xi, 1e-6)));
    }
    CHECK(worst_g < 1e-6);
    CHECK(worst_h < 1e-5);
}

TEST_CASE("bc element gradient") {
    SUBCASE("no fixed endpoint, no coupling") {
        const Vec4 g = bc_element_gradient({0, 0}, {0, 0}, {1, 0}, {0, 0}, {0, 2});
        CHECK(g.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    }
    SUBCASE("worked example: k fixed, stretched to twice the length") {
        // L = 1, l = 2, delta_i = (0, -2, 0, 2), selector keeps the k slots
        const Vec4 g = bc_element_gradient({1, 0}, {0, 0}, {1, 0}, {0, 0}, {0, 2});
        CHECK(g == Vec4(0, -2, 0, 0));
    }
}

namespace {

// Total element gradient of sum_i (L(x0) - l(x_i(x0)))^2 under the
// substitution rule: selected coordinates of x_i track x0, the rest of x_i
// is a constant. This is the map whose Jacobian the bc Hessian terms build.
struct TrackedElement {
    FixedSelector sel;
    Eigen::Vector4d xi_const;
    std::vector<Eigen::Vector4d> xi_free;  // one per precision point

    Eigen::Vector4d tracked(const Eigen::VectorXd& x0, int i) const {
        Eigen::Vector4d t = xi_free[i];
        if (sel.fk > 0) t.head<2>() = x0.head<2>();
        if (sel.fl > 0) t.tail<2>() = x0.tail<2>();
        return t;
    }
    Eigen::VectorXd total_gradient(const Eigen::VectorXd& x0) const {
        std::vector<double> lji;
        for (std::size_t i = 0; i < xi_free.size(); ++i) {
            const Eigen::Vector4d t = tracked(x0, static_cast<int>(i));
            lji.push_back((t.head<2>() - t.tail<2>()).norm());
        }
        Eigen::VectorXd g = outer_element_gradient(x0.head<2>(), x0.tail<2>(), lji);
        for (std::size_t i = 0; i < xi_free.size(); ++i) {
            const Eigen::Vector4d t = tracked(x0, static_cast<int>(i));
            g += bc_element_gradient(sel, x0.head<2>(), x0.tail<2>(), t.head<2>(), t.tail<2>());
        }
        return g;
    }
    Eigen::MatrixXd total_hessian(const Eigen::VectorXd& x0) const {
        std::vector<double> lji;
        for (std::size_t i = 0; i < xi_free.size(); ++i) {
            const Eigen::Vector4d t = tracked(x0, static_cast<int>(i));
            lji.push_back((t.head<2>() - t.tail<2>()).norm());
        }
        Eigen::MatrixXd H = outer_element_hessian(x0.head<2>(), x0.tail<2>(), lji);
        for (std::size_t i = 0; i < xi_free.size(); ++i) {
            const Eigen::Vector4d t = tracked(x0, static_cast<int>(i));
            H += bc_element_hessian_terms(sel, x0.head<2>(), x0.tail<2>(), t.head<2>(), t.tail<2>()).sum();
        }
        return H;
    }
};

}  // namespace

TEST_CASE("bc hessian terms: zero selector and the worked example") {
    SUBCASE("selector all-zero gives three zero terms") {
        const BcHessianTerms t = bc_element_hessian_terms({0, 0}, {0, 0}, {1, 0}, {0, 0}, {0, 2});
        CHECK(t.design_deformed.cwiseAbs().maxCoeff() == 0.0);
        CHECK(t.deformed_design.cwiseAbs().maxCoeff() == 0.0);
        CHECK(t.deformed_deformed.cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("worked example, selector applied to the tracked coordinates") {
        // L = 1, l = 2, delta_0 = (-1,0,1,0), delta_i = (0,-2,0,2), f_k = 1.
        // The design/deformed cross block is -2/(L l) * delta_0 (D delta_i)^T;
        // its transpose appears in the deformed/design block, which keeps the
        // summed element Hessian symmetric and the finite-difference identity
        // below exact.
        const BcHessianTerms t = bc_element_hessian_terms({1, 0}, {0, 0}, {1, 0}, {0, 0}, {0, 2});
        Mat4 expected = Mat4::Zero();
        expected.row(0) = Vec4(0, -2, 0, 0);
        expected.row(2) = Vec4(0, 2, 0, 0);
        CHECK(oracles::rel_inf_error(t.design_deformed, expected) < 1e-14);
        // rank-one parts are mutual transposes
        const Mat4 rank1_ji0 = t.deformed_design - 2.0 * (1.0 - 1.0 / 2.0) *
                                                       (Vec4(1, 1, 0, 0).asDiagonal() * delta_jacobian() *
                                                        Vec4(1, 1, 0, 0).asDiagonal());
        CHECK(oracles::rel_inf_error(rank1_ji0, t.design_deformed.transpose()) < 1e-14);
    }
}

TEST_CASE("bc hessian terms match finite differences of the tracked total gradient") {
    std::mt19937 rng(44);
    std::uniform_int_distribution<int> flag(0, 1);
    double worst_total = 0.0, worst_outer_pair = 0.0, worst_bc_pair = 0.0;
    int checked = 0;
    while (checked < 150) {
        TrackedElement te;
        te.sel = {static_cast<double>(flag(rng)), static_cast<double>(flag(rng))};
        if (te.sel.fk == 0 && te.sel.fl == 0) continue;
        const Eigen::Vector4d x0 = rand_element(rng);
        for (int i = 0; i < 3; ++i) te.xi_free.push_back(rand_element(rng));

        // total Hessian vs FD of total gradient
        auto g_of = [&](const Eigen::VectorXd& v) { return te.total_gradient(v); };
        const Eigen::MatrixXd H_fd = oracles::fd_jacobian(g_of, x0, 1e-6);
        const Eigen::MatrixXd H = te.total_hessian(x0);
        worst_total = std::max(worst_total, oracles::rel_inf_error(H, H_fd, 1.0));
        CHECK(oracles::rel_inf_error(H, H.transpose(), 1.0) < 1e-12);  // summed contribution symmetric

        // pairwise FD identities: d(outer g)/dx0 = outer H + sum design_deformed,
        // d(bc g)/dx0 = deformed_design + deformed_deformed
        auto outer_g = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            std::vector<double> lji;
            for (int i = 0; i < 3; ++i) {
                const Eigen::Vector4d t = te.tracked(v, i);
                lji.push_back((t.head<2>() - t.tail<2>()).norm());
            }
            return outer_element_gradient(v.head<2>(), v.tail<2>(), lji);
        };
        auto bc_g0 = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
            const Eigen::Vector4d t = te.tracked(v, 0);
            return bc_element_gradient(te.sel, v.head<2>(), v.tail<2>(), t.head<2>(), t.tail<2>());
        };
        {
            std::vector<double> lji;
            for (int i = 0; i < 3; ++i) {
                const Eigen::Vector4d t = te.tracked(x0, i);
                lji.push_back((t.head<2>() - t.tail<2>()).norm());
            }
            Eigen::MatrixXd H_pair = outer_element_hessian(x0.head<2>(), x0.tail<2>(), lji);
            for (int i = 0; i < 3; ++i) {
                const Eigen::Vector4d t = te.tracked(x0, i);
                H_pair += bc_element_hessian_terms(te.sel, x0.head<2>(), x0.tail<2>(), t.head<2>(),
                                                   t.tail<2>())
                              .design_deformed;
            }
            worst_outer_pair =
                std::max(worst_outer_pair,
                         oracles::rel_inf_error(H_pair, oracles::fd_jacobian(outer_g, x0, 1e-6), 1.0));
        }
        {
            const Eigen::Vector4d t = te.tracked(x0, 0);
            const BcHessianTerms terms =
                bc_element_hessian_terms(te.sel, x0.head<2>(), x0.tail<2>(), t.head<2>(), t.tail<2>());
            worst_bc_pair = std::max(
                worst_bc_pair, oracles::rel_inf_error(terms.deformed_design + terms.deformed_deformed,
                                                      oracles::fd_jacobian(bc_g0, x0, 1e-6), 1.0));
        }
        ++checked;
    }
    CHECK(worst_total < 1e-5);
    CHECK(worst_outer_pair < 1e-5);
    CHECK(worst_bc_pair < 1e-5);
}

TEST_CASE("force-balance structure of every element gradient") {
    std::mt19937 rng(45);
    std::uniform_real_distribution<double> len(0.4, 3.0);
    for (int e = 0; e < 50; ++e) {
        const Eigen::Vector4d x0 = rand_element(rng), xi = rand_element(rng);
        const std::vector<double> lji{len(rng), len(rng)};
        const Vec4 g0 = outer_element_gradient(x0.head<2>(), x0.tail<2>(), lji);
        CHECK(g0[0] == doctest::Approx(-g0[2]));
        CHECK(g0[1] == doctest::Approx(-g0[3]));
        const Vec4 gi = inner_element_gradient(len(rng), xi.head<2>(), xi.tail<2>());
        CHECK(gi[0] == doctest::Approx(-gi[2]));
        CHECK(gi[1] == doctest::Approx(-gi[3]));
        // bc gradient: masked form of an equal-and-opposite vector
        const Vec4 gb = bc_element_gradient({1, 1}, x0.head<2>(), x0.tail<2>(), xi.head<2>(), xi.tail<2>());
        CHECK(gb[0] == doctest::Approx(-gb[2]));
        CHECK(gb[1] == doctest::Approx(-gb[3]));
    }
}

TEST_CASE("kernels are equivariant under endpoint relabeling") {
    std::mt19937 rng(46);
    std::uniform_real_distribution<double> len(0.4, 3.0);
    const std::array<int, 4> perm{2, 3, 0, 1};
    for (int e = 0; e < 50; ++e) {
        const Eigen::Vector4d x0 = rand_element(rng), xi = rand_element(rng);
        const std::vector<double> lji{len(rng), len(rng), len(rng)};
        const Vec4 g = outer_element_gradient(x0.head<2>(), x0.tail<2>(), lji);
        const Vec4 gs = outer_element_gradient(x0.tail<2>(), x0.head<2>(), lji);
        const Mat4 H = outer_element_hessian(x0.head<2>(), x0.tail<2>(), lji);
        const Mat4 Hs = outer_element_hessian(x0.tail<2>(), x0.head<2>(), lji);
        for (int a = 0; a < 4; ++a) {
            CHECK(gs[perm[a]] == doctest::Approx(g[a]));
            for (int b = 0; b < 4; ++b) CHECK(Hs(perm[a], perm[b]) == doctest::Approx(H(a, b)));
        }
        const FixedSelector sel{1, 0}, sel_sw{0, 1};
        const Vec4 gb = bc_element_gradient(sel, x0.head<2>(), x0.tail<2>(), xi.head<2>(), xi.tail<2>());
        const Vec4 gbs = bc_element_gradient(sel_sw, x0.tail<2>(), x0.head<2>(), xi.tail<2>(), xi.head<2>());
        for (int a = 0; a < 4; ++a) CHECK(gbs[perm[a]] == doctest::Approx(gb[a]));
    }
}

TEST_CASE("assemble") {
    SUBCASE("single element with identity dof map") {
        ElementContribution e;
        e.gradient = Vec4(1, 2, 3, 4);
        e.hessian = Mat4::Identity();
        const ElementDofs dofs{{0, 1, 2, 3}};
        auto [g, H] = assemble(std::vector{e}, std::vector{dofs}, 4);
        CHECK(g == Eigen::Vector4d(1, 2, 3, 4));
        CHECK(oracles::rel_inf_error(H, Eigen::MatrixXd::Identity(4, 4)) < 1e-15);
    }
    SUBCASE("two elements sharing a node add their contributions") {
        ElementContribution e1, e2;
        e1.gradient = Vec4::Ones();
        e1.hessian = Mat4::Ones();
        e2.gradient = 2 * Vec4::Ones();
        e2.hessian = 2 * Mat4::Ones();
        // elements 0-1 and 1-2 share node 1 (dofs 2, 3)
        const std::vector<ElementDofs> dofs{{{0, 1, 2, 3}}, {{2, 3, 4, 5}}};
        auto [g, H] = assemble(std::vector{e1, e2}, dofs, 6);
        CHECK(g[2] == doctest::Approx(3.0));
        CHECK(g[3] == doctest::Approx(3.0));
        CHECK(g[0] == doctest::Approx(1.0));
        CHECK(g[4] == doctest::Approx(2.0));
        CHECK(H(2, 2) == doctest::Approx(3.0));
        CHECK(H(2, 4) == doctest::Approx(2.0));
        CHECK(H(0, 2) == doctest::Approx(1.0));
    }
    SUBCASE("pinned slots are dropped") {
        ElementContribution e;
        e.gradient = Vec4(1, 2, 3, 4);
        e.hessian = Mat4::Ones();
        const ElementDofs dofs{{-1, -1, 0, 1}};
        auto [g, H] = assemble(std::vector{e}, std::vector{dofs}, 2);
        CHECK(g == Eigen::Vector2d(3, 4));
        CHECK(H(0, 0) == doctest::Approx(1.0));
    }
    SUBCASE("out-of-range dof errors") {
        ElementContribution e;
        const ElementDofs dofs{{0, 1, 2, 9}};
        CHECK_THROWS_AS(assemble(std::vector{e}, std::vector{dofs}, 4), std::out_of_range);
    }
}
