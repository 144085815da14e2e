#include <doctest.h>

#include <cmath>
#include <random>

#include "mechsyn/position.hpp"
#include "mechsyn/synthesis.hpp"
#include "oracles.hpp"

using namespace mechsyn;

namespace {

SynthesisProblem single_truss(bool k_fixed = true) {
    SynthesisProblem p;
    p.mechanism = Mechanism({{0, "A", k_fixed}, {1, "B", false}}, {{0, 0, 1}});
    p.x0 = CoordSet(2);
    p.x0.set(0, {0, 0});
    p.x0.set(1, {1, 0});
    p.points.resize(1);
    return p;
}

}  // namespace

TEST_CASE("build_restrictions") {
    SUBCASE("fourbar point 0: two fixed nodes plus the tracer pin") {
        SynthesisProblem p = oracles::load_bundled("fourbar.json");
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        CHECK(r.pins.size() == 6);  // A, D at x0 values; E at its target
        CHECK(r.rays.empty());
    }
    SUBCASE("no fixed nodes, no pins: empty") {
        SynthesisProblem p = single_truss(false);
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        CHECK(r.pins.empty());
        CHECK(r.rays.empty());
    }
    SUBCASE("horizontal ray reduces to equal y coordinates") {
        SynthesisProblem p = single_truss(true);
        p.points[0].rays.push_back({0, 1, 0.0});
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        REQUIRE(r.rays.size() == 1);
        const AffineReduction red = AffineReduction::build(r, 4, 1.0);
        // A pinned (0,0); the ray forces y_B = y_A = 0, so only x_B stays free
        CHECK(red.reduced_size() == 1);
        Eigen::VectorXd q(1);
        q << 5.0;
        const Eigen::VectorXd x = red.expand(q);
        CHECK(x[2] == doctest::Approx(5.0));
        CHECK(x[3] == doctest::Approx(0.0));
    }
}

TEST_CASE("affine reduction consistency checks") {
    SUBCASE("conflicting pins on one coordinate") {
        LinearRestrictions r;
        r.pins.push_back({0, 1.0});
        r.pins.push_back({0, 2.0});
        CHECK_THROWS_WITH_AS(AffineReduction::build(r, 4, 1.0), doctest::Contains("inconsistent"),
                             ProblemError);
    }
    SUBCASE("repeated identical pin is fine") {
        LinearRestrictions r;
        r.pins.push_back({0, 1.0});
        r.pins.push_back({0, 1.0});
        CHECK(AffineReduction::build(r, 4, 1.0).reduced_size() == 3);
    }
    SUBCASE("contradictory ray over fully pinned coordinates") {
        LinearRestrictions r;
        r.pins = {{0, 0.0}, {1, 0.0}, {2, 1.0}, {3, 5.0}};  // B at (1, 5)
        r.rays.push_back({0, 1, 0.0, 1.0});                 // y_B - y_A = 0, violated
        CHECK_THROWS_WITH_AS(AffineReduction::build(r, 4, 1.0), doctest::Contains("contradictory"),
                             ProblemError);
    }
    SUBCASE("ray consistent with pins passes") {
        LinearRestrictions r;
        r.pins = {{0, 0.0}, {1, 0.0}, {2, 1.0}, {3, 0.0}};
        r.rays.push_back({0, 1, 0.0, 1.0});
        CHECK(AffineReduction::build(r, 4, 1.0).reduced_size() == 0);
    }
    SUBCASE("ray plus one pinned coordinate pins the other") {
        LinearRestrictions r;
        r.pins = {{0, 0.0}, {1, 0.0}, {3, 2.0}};          // y_B = 2
        r.rays.push_back({0, 1, -std::sin(0.5), std::cos(0.5)});  // 45-ish degree ray
        const AffineReduction red = AffineReduction::build(r, 4, 1.0);
        CHECK(red.reduced_size() == 0);
        const Eigen::VectorXd x = red.expand(Eigen::VectorXd(0));
        // -sin(t) x_B + cos(t) y_B = 0  =>  x_B = y_B / tan(t)
        CHECK(x[2] == doctest::Approx(2.0 / std::tan(0.5)));
    }
    SUBCASE("two rays on one node pin it at their intersection") {
        // coordinates: A = (x0,x1) at (0,0), B = (x2,x3) at (4,0), C = (x4,x5) free
        LinearRestrictions r;
        r.pins = {{0, 0.0}, {1, 0.0}, {2, 4.0}, {3, 0.0}};
        const double q1 = M_PI / 4, q2 = 3 * M_PI / 4;
        r.rays.push_back({0, 2, -std::sin(q1), std::cos(q1)});  // from A toward C at 45 deg
        r.rays.push_back({1, 2, -std::sin(q2), std::cos(q2)});  // from B toward C at 135 deg
        const AffineReduction red = AffineReduction::build(r, 6, 1.0);
        CHECK(red.reduced_size() == 0);
        const Eigen::VectorXd x = red.expand(Eigen::VectorXd(0));
        CHECK(x[4] == doctest::Approx(2.0));  // lines y = x and y = 4 - x meet at (2, 2)
        CHECK(x[5] == doctest::Approx(2.0));
    }
}

TEST_CASE("solve_deformed_position") {
    SUBCASE("fully constrained single truss") {
        SynthesisProblem p = single_truss(true);
        p.points[0].pins.push_back({1, {2, 0}});
        const auto L = lengths(p.mechanism, p.x0);
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        const DeformedState st = solve_deformed_position(p.mechanism, L, r, p.x0);
        CHECK(st.converged);
        CHECK(st.iterations == 0);
        CHECK(st.energy == doctest::Approx(1.0));  // (1 - 2)^2
        CHECK(st.deformed_lengths[0] == doctest::Approx(2.0));
        CHECK(st.coords.at(1).x() == doctest::Approx(2.0));
    }
    SUBCASE("rigidly reachable triangle relaxes to zero energy") {
        SynthesisProblem p;
        p.mechanism = Mechanism({{0, "", false}, {1, "", false}, {2, "", false}},
                                {{0, 0, 1}, {1, 1, 2}, {2, 2, 0}});
        p.x0 = CoordSet(3);
        p.x0.set(0, {0, 0});
        p.x0.set(1, {1, 0});
        p.x0.set(2, {0.5, 0.9});
        p.points.resize(1);
        // pin all three nodes at a rigidly moved copy (rotation + shift)
        const Eigen::Rotation2D<double> rot(0.7);
        const Vec2 shift(3.0, -1.0);
        double sumL2 = 0.0;
        for (int s = 0; s < 3; ++s) p.points[0].pins.push_back({s, rot * p.x0.at(s) + shift});
        const auto L = lengths(p.mechanism, p.x0);
        for (double l : L) sumL2 += l * l;
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        const DeformedState st = solve_deformed_position(p.mechanism, L, r, p.x0);
        CHECK(st.converged);
        CHECK(st.iterations == 0);  // everything pinned
        CHECK(st.energy < 1e-12 * (1.0 + sumL2));
    }
    SUBCASE("energy decreases monotonically and matches a re-evaluation") {
        SynthesisProblem p = oracles::load_bundled("fourbar.json");
        const auto L = lengths(p.mechanism, p.x0);
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[8]);
        const DeformedState st = solve_deformed_position(p.mechanism, L, r, p.x0);
        CHECK(st.converged);
        double e = 0.0;
        for (std::size_t j = 0; j < L.size(); ++j) {
            const double d = L[j] - st.deformed_lengths[j];
            e += d * d;
        }
        CHECK(st.energy == doctest::Approx(e).epsilon(1e-12));
        // restrictions satisfied bitwise
        CHECK(st.coords.at(0).x() == p.x0.at(0).x());
        CHECK(st.coords.at(4).x() == p.points[8].pins[0].target.x());
    }
    SUBCASE("zero-length start is an error") {
        SynthesisProblem p = single_truss(true);
        p.points[0].pins.push_back({1, {0, 0}});  // pin B onto A
        const auto L = lengths(p.mechanism, p.x0);
        const LinearRestrictions r = build_restrictions(p, p.x0, p.points[0]);
        CHECK_THROWS_AS(solve_deformed_position(p.mechanism, L, r, p.x0), ProblemError);
    }
}

TEST_CASE("inner solve is equivariant under rigid motions") {
    SynthesisProblem p = oracles::load_bundled("fourbar.json");
    const auto L = lengths(p.mechanism, p.x0);
    const LinearRestrictions r = build_restrictions(p, p.x0, p.points[4]);
    const DeformedState base = solve_deformed_position(p.mechanism, L, r, p.x0);

    const Eigen::Rotation2D<double> rot(1.1);
    const Vec2 shift(-2.0, 4.0);
    SynthesisProblem q = p;
    for (Eigen::Index s = 0; s < p.x0.node_count(); ++s) q.x0.set(s, rot * p.x0.at(s) + shift);
    for (auto& pp : q.points)
        for (auto& pin : pp.pins) pin.target = rot * pin.target + shift;
    const auto Lq = lengths(q.mechanism, q.x0);
    const LinearRestrictions rq = build_restrictions(q, q.x0, q.points[4]);
    const DeformedState moved = solve_deformed_position(q.mechanism, Lq, rq, q.x0);

    CHECK(moved.energy == doctest::Approx(base.energy).epsilon(1e-10));
}

TEST_CASE("minimum_distance_pose") {
    SUBCASE("closest point on the circle of a single grounded truss") {
        SynthesisProblem p = single_truss(true);
        const auto L = lengths(p.mechanism, p.x0);  // L = 1
        PrecisionPoint no_pins;
        const LinearRestrictions r = build_restrictions(p, p.x0, no_pins);
        const MinimumDistancePose pose =
            minimum_distance_pose(p.mechanism, L, r, 1, Vec2(2, 0), p.x0);
        CHECK(pose.rigid);
        CHECK(pose.distance == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(pose.coords.at(1).x() == doctest::Approx(1.0).epsilon(1e-4));
        CHECK(pose.coords.at(1).y() == doctest::Approx(0.0).epsilon(1e-4));
    }
    SUBCASE("reachable target ends at negligible distance") {
        SynthesisProblem p = single_truss(true);
        const auto L = lengths(p.mechanism, p.x0);
        PrecisionPoint no_pins;
        const LinearRestrictions r = build_restrictions(p, p.x0, no_pins);
        const Vec2 target(std::cos(0.8), std::sin(0.8));  // on the unit circle
        const MinimumDistancePose pose = minimum_distance_pose(p.mechanism, L, r, 1, target, p.x0);
        CHECK(pose.rigid);
        CHECK(pose.distance < 1e-4);
    }
    SUBCASE("fourbar solution poses stay rigid near their targets") {
        SynthesisProblem p = oracles::load_bundled("fourbar.json");
        const auto L = lengths(p.mechanism, p.x0);
        PrecisionPoint unpinned = p.points[0];
        unpinned.pins.clear();
        const LinearRestrictions r = build_restrictions(p, p.x0, unpinned);
        const MinimumDistancePose pose =
            minimum_distance_pose(p.mechanism, L, r, 4, p.points[0].pins[0].target, p.x0,
                                  p.length_floor());
        CHECK(pose.rigid);  // every length back to within 1e-6 relative
        CHECK(pose.distance < 0.5);
    }
}

namespace {

/// Independent continuation endpoint: polish a pose at w = 1e10 with plain
/// Newton steps on the reduced penalty objective, solved by Eigen's LDLT
/// with a diagonal shift. Shares only the element kernels with the library
/// path it cross-checks.
double oracle_distance_at_w10(const SynthesisProblem& p, const std::vector<double>& L,
                              const LinearRestrictions& r, int tracer_slot, const Vec2& target,
                              const CoordSet& start) {
    const int nc = 2 * p.mechanism.node_count();
    const AffineReduction red = AffineReduction::build(r, nc, 10.0);
    Eigen::VectorXd q = red.reduce_point(start.flat());
    const double w = 1e10;
    for (int it = 0; it < 200; ++it) {
        const Eigen::VectorXd x = red.expand(q);
        Eigen::VectorXd g_full = Eigen::VectorXd::Zero(nc);
        Eigen::MatrixXd h_full = Eigen::MatrixXd::Zero(nc, nc);
        for (std::size_t j = 0; j < p.mechanism.trusses().size(); ++j) {
            const Truss& t = p.mechanism.trusses()[j];
            const int sk = p.mechanism.node_slot(t.k), sl = p.mechanism.node_slot(t.l);
            const Vec2 pk = x.segment<2>(2 * sk), pl = x.segment<2>(2 * sl);
            const ElementDofs dofs{{2 * sk, 2 * sk + 1, 2 * sl, 2 * sl + 1}};
            scatter_add(g_full, Vec4(w * inner_element_gradient(L[j], pk, pl)), dofs);
            scatter_add(h_full, Mat4(w * inner_element_hessian(L[j], pk, pl)), dofs);
        }
        const Vec2 tracer = x.segment<2>(2 * tracer_slot);
        g_full.segment<2>(2 * tracer_slot) += 2.0 * (tracer - target);
        h_full(2 * tracer_slot, 2 * tracer_slot) += 2.0;
        h_full(2 * tracer_slot + 1, 2 * tracer_slot + 1) += 2.0;
        const Eigen::VectorXd g = red.reduce_gradient(g_full);
        if (g.cwiseAbs().maxCoeff() < 1e-4) break;  // gradient carries the 1e10 weight
        Eigen::MatrixXd h = red.reduce_hessian(h_full);
        h.diagonal().array() += 1e-6 * h.diagonal().cwiseAbs().maxCoeff();
        const Eigen::VectorXd step = h.ldlt().solve(-g);
        q += step;
    }
    const Eigen::VectorXd x = red.expand(q);
    return (Eigen::Vector2d(x.segment<2>(2 * tracer_slot)) - target).norm();
}

}  // namespace

TEST_CASE("minimum-distance poses of the published fourbar solution match a high-weight oracle") {
    SynthesisProblem p = oracles::load_bundled("fourbar.json");
    // final coordinates reported for the free-pivot run
    p.x0.set(0, {-9.3343, 3.7231});
    p.x0.set(1, {-2.2052, 0.4771});
    p.x0.set(2, {-1.2526, 2.9409});
    p.x0.set(3, {-6.7509, -0.5369});
    p.x0.set(4, {-3.8337, 1.4035});
    const auto L = lengths(p.mechanism, p.x0);
    const auto [F, states] = evaluate_fitness_coords(p, p.x0);
    CHECK(F < 0.05);  // the reported solution is a near-exact tracer

    for (std::size_t i = 0; i < p.points.size(); ++i) {
        PrecisionPoint unpinned = p.points[i];
        unpinned.pins.clear();
        const LinearRestrictions r = build_restrictions(p, p.x0, unpinned);
        const Vec2 target = p.points[i].pins[0].target;
        const MinimumDistancePose pose =
            minimum_distance_pose(p.mechanism, L, r, 4, target, states[i].coords, p.length_floor());
        CHECK(pose.rigid);
        CHECK(pose.distance < 0.2);
        const double ref = oracle_distance_at_w10(p, L, r, 4, target, pose.coords);
        CHECK(pose.distance == doctest::Approx(ref).epsilon(1e-3));
    }
}

TEST_CASE("fitness evaluation failures name the precision point") {
    SynthesisProblem p = oracles::load_bundled("fourbar.json");
    // point 2 pins B exactly onto the fixed pivot A, collapsing truss A-B
    p.points[2].pins[0] = PinTarget{1, p.x0.at(0)};
    CHECK_THROWS_WITH_AS(evaluate_fitness_coords(p, p.x0), doctest::Contains("precision point 2"),
                         ProblemError);
}
