// Problem model for planar R-joint truss mechanism synthesis: mechanisms,
// coordinate sets, precision-point requirements, solver options, and the
// JSON problem-file format.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace mechsyn {

using Vec2 = Eigen::Vector2d;

/// Error raised by problem parsing or validation. what() names the
/// offending node/truss/point where applicable.
class ProblemError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Node {
    int id = -1;
    std::string label;   // optional short name, e.g. "A"
    bool fixed = false;  // ground pivot
};

// Two-node bar; the only deformation measure is length change.
struct Truss {
    int id = -1;
    int k = -1;  // first joint (node id)
    int l = -1;  // second joint (node id)
};

enum class Formulation { coordinates, dimensions };

struct SolveTolerances {
    double gradient = 1e-9;         // stop when ||g||_inf < gradient * (1 + F)
    double inner = 1e-10;           // inner stop factor on the projected gradient
    double fitness_change = 1e-14;  // relative decrease considered stagnant
    int max_iterations = 200;
    int max_line_evals = 30;
};

struct VariableOptions {
    bool optimize_fixed_nodes = true;
    // (node id, axis) pairs excluded from the outer design vector; axis 0 = x, 1 = y.
    std::vector<std::pair<int, int>> pinned;
    Formulation formulation = Formulation::coordinates;
    SolveTolerances tol;
};

/// Topology only: nodes with fixed flags plus trusses joining them.
/// Node and truss ids are arbitrary unique integers; internally everything
/// is addressed by dense slots in declaration order.
class Mechanism {
public:
    Mechanism() = default;
    Mechanism(std::vector<Node> nodes, std::vector<Truss> trusses)
        : nodes_(std::move(nodes)), trusses_(std::move(trusses)) {
        for (std::size_t s = 0; s < nodes_.size(); ++s) {
            if (!node_slot_.emplace(nodes_[s].id, static_cast<int>(s)).second)
                throw ProblemError("duplicate node id " + std::to_string(nodes_[s].id));
        }
        for (std::size_t s = 0; s < trusses_.size(); ++s) {
            const Truss& t = trusses_[s];
            if (!truss_slot_.emplace(t.id, static_cast<int>(s)).second)
                throw ProblemError("duplicate truss id " + std::to_string(t.id));
            if (t.k == t.l)
                throw ProblemError("truss " + std::to_string(t.id) + " is a self-loop (k == l == " +
                                   std::to_string(t.k) + ")");
            if (!node_slot_.count(t.k) || !node_slot_.count(t.l))
                throw ProblemError("truss " + std::to_string(t.id) + " references unknown node");
        }
        std::set<std::pair<int, int>> seen;
        for (const Truss& t : trusses_) {
            auto key = std::minmax(t.k, t.l);
            if (!seen.insert({key.first, key.second}).second)
                throw ProblemError("duplicate truss between nodes " + std::to_string(t.k) + " and " +
                                   std::to_string(t.l));
        }
    }

    const std::vector<Node>& nodes() const { return nodes_; }
    const std::vector<Truss>& trusses() const { return trusses_; }
    int node_count() const { return static_cast<int>(nodes_.size()); }
    int truss_count() const { return static_cast<int>(trusses_.size()); }

    bool has_node(int id) const { return node_slot_.count(id) != 0; }
    int node_slot(int id) const {
        auto it = node_slot_.find(id);
        if (it == node_slot_.end()) throw ProblemError("unknown node id " + std::to_string(id));
        return it->second;
    }
    int truss_slot(int id) const {
        auto it = truss_slot_.find(id);
        if (it == truss_slot_.end()) throw ProblemError("unknown truss id " + std::to_string(id));
        return it->second;
    }
    const Node& node(int id) const { return nodes_[node_slot(id)]; }

    std::string node_name(int id) const {
        const Node& n = nodes_[node_slot(id)];
        return n.label.empty() ? std::to_string(n.id) : n.label;
    }

private:
    std::vector<Node> nodes_;
    std::vector<Truss> trusses_;
    std::unordered_map<int, int> node_slot_;
    std::unordered_map<int, int> truss_slot_;
};

/// A full assignment of planar coordinates to mechanism nodes, stored as a
/// flat (x0, y0, x1, y1, ...) vector aligned with Mechanism node slots.
class CoordSet {
public:
    CoordSet() = default;
    explicit CoordSet(Eigen::Index node_count) : v_(Eigen::VectorXd::Zero(2 * node_count)) {}
    explicit CoordSet(Eigen::VectorXd flat) : v_(std::move(flat)) {
        if (v_.size() % 2 != 0) throw ProblemError("coordinate vector has odd length");
    }

    Eigen::Index node_count() const { return v_.size() / 2; }
    Vec2 at(Eigen::Index slot) const { return v_.segment<2>(2 * slot); }
    void set(Eigen::Index slot, const Vec2& p) { v_.segment<2>(2 * slot) = p; }
    double coord(Eigen::Index flat_index) const { return v_[flat_index]; }
    void set_coord(Eigen::Index flat_index, double value) { v_[flat_index] = value; }

    Eigen::VectorXd& flat() { return v_; }
    const Eigen::VectorXd& flat() const { return v_; }

private:
    Eigen::VectorXd v_;
};

struct PinTarget {
    int node = -1;
    Vec2 target = Vec2::Zero();
};

// Prescribed timing: the ray from a fixed node toward another node must
// point at the given angle (radians, measured from +x).
struct TimingRay {
    int from = -1;
    int to = -1;
    double angle = 0.0;
};

struct PrecisionPoint {
    std::vector<PinTarget> pins;
    std::vector<TimingRay> rays;
};

struct SynthesisProblem {
    Mechanism mechanism;
    CoordSet x0;
    std::vector<PrecisionPoint> points;
    VariableOptions options;
    std::vector<std::string> warnings;  // non-fatal validation notes

    /// Bounding-box diagonal of x0 together with all pin targets; the
    /// problem's characteristic length. Zero-length guards are scaled by it.
    double geometry_scale() const {
        double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
        double hi_x = -lo_x, hi_y = -lo_y;
        auto grow = [&](const Vec2& p) {
            lo_x = std::min(lo_x, p.x());
            hi_x = std::max(hi_x, p.x());
            lo_y = std::min(lo_y, p.y());
            hi_y = std::max(hi_y, p.y());
        };
        for (Eigen::Index s = 0; s < x0.node_count(); ++s) grow(x0.at(s));
        for (const PrecisionPoint& pp : points)
            for (const PinTarget& pin : pp.pins) grow(pin.target);
        const double d = std::hypot(hi_x - lo_x, hi_y - lo_y);
        return d > 0 ? d : 1.0;
    }

    double length_floor() const { return 1e-12 * geometry_scale(); }
};

/// Euclidean length of every truss under the given coordinates, in truss
/// slot order. Throws on (near-)zero length; `floor` defaults to exact zero.
inline std::vector<double> lengths(const Mechanism& mech, const CoordSet& coords, double floor = 0.0) {
    if (coords.node_count() != mech.node_count())
        throw ProblemError("coordinate set does not cover the mechanism's nodes");
    std::vector<double> out(mech.trusses().size());
    for (std::size_t s = 0; s < mech.trusses().size(); ++s) {
        const Truss& t = mech.trusses()[s];
        const Vec2 pk = coords.at(mech.node_slot(t.k));
        const Vec2 pl = coords.at(mech.node_slot(t.l));
        const double len = (pk - pl).norm();
        if (len <= floor)
            throw ProblemError("truss " + std::to_string(t.id) + " (" + mech.node_name(t.k) + "-" +
                               mech.node_name(t.l) + ") has zero length");
        out[s] = len;
    }
    return out;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key, const char* ctx) {
    auto it = j.find(key);
    if (it == j.end())
        throw ProblemError(std::string("missing field '") + key + "' in " + ctx);
    return *it;
}

}  // namespace detail

/// Parse and validate a problem file. See README for the schema. Throws
/// ProblemError with a parse diagnostic or the offending entity's name.
inline SynthesisProblem load_problem(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ProblemError(std::string("parse error: ") + e.what());
    }
    try {
        std::vector<Node> nodes;
        for (const auto& jn : detail::require_field(j, "nodes", "problem")) {
            Node n;
            n.id = detail::require_field(jn, "id", "node").get<int>();
            n.label = jn.value("label", std::string{});
            n.fixed = jn.value("fixed", false);
            nodes.push_back(n);
        }
        std::vector<Truss> trusses;
        for (const auto& jt : detail::require_field(j, "trusses", "problem")) {
            Truss t;
            t.id = detail::require_field(jt, "id", "truss").get<int>();
            t.k = detail::require_field(jt, "k", "truss").get<int>();
            t.l = detail::require_field(jt, "l", "truss").get<int>();
            trusses.push_back(t);
        }

        SynthesisProblem p;
        p.mechanism = Mechanism(std::move(nodes), std::move(trusses));
        p.x0 = CoordSet(p.mechanism.node_count());
        {
            int slot = 0;
            for (const auto& jn : j["nodes"]) {
                p.x0.set(slot++, Vec2(detail::require_field(jn, "x", "node").get<double>(),
                                      detail::require_field(jn, "y", "node").get<double>()));
            }
        }

        for (const auto& jp : detail::require_field(j, "precision_points", "problem")) {
            PrecisionPoint pp;
            std::set<int> pinned_nodes;
            for (const auto& jpin : detail::require_field(jp, "pins", "precision point")) {
                PinTarget pin;
                pin.node = detail::require_field(jpin, "node", "pin").get<int>();
                pin.target = Vec2(detail::require_field(jpin, "x", "pin").get<double>(),
                                  detail::require_field(jpin, "y", "pin").get<double>());
                if (!p.mechanism.has_node(pin.node))
                    throw ProblemError("precision point " + std::to_string(p.points.size()) +
                                       " pins unknown node " + std::to_string(pin.node));
                if (!pinned_nodes.insert(pin.node).second)
                    throw ProblemError("precision point " + std::to_string(p.points.size()) +
                                       " pins node " + p.mechanism.node_name(pin.node) + " twice");
                pp.pins.push_back(pin);
            }
            if (jp.contains("rays")) {
                for (const auto& jray : jp["rays"]) {
                    TimingRay ray;
                    ray.from = detail::require_field(jray, "from", "ray").get<int>();
                    ray.to = detail::require_field(jray, "to", "ray").get<int>();
                    ray.angle = detail::require_field(jray, "angle", "ray").get<double>();
                    if (!p.mechanism.has_node(ray.from) || !p.mechanism.has_node(ray.to))
                        throw ProblemError("ray in precision point " + std::to_string(p.points.size()) +
                                           " references unknown node");
                    if (ray.from == ray.to)
                        throw ProblemError("ray in precision point " + std::to_string(p.points.size()) +
                                           " points from node " + p.mechanism.node_name(ray.from) +
                                           " to itself");
                    if (!p.mechanism.node(ray.from).fixed)
                        throw ProblemError("ray from node " + p.mechanism.node_name(ray.from) +
                                           " in precision point " + std::to_string(p.points.size()) +
                                           ": from-node must be fixed");
                    pp.rays.push_back(ray);
                }
            }
            p.points.push_back(std::move(pp));
        }

        if (j.contains("options")) {
            const auto& jo = j["options"];
            p.options.optimize_fixed_nodes = jo.value("optimize_fixed_nodes", true);
            if (jo.contains("pinned")) {
                for (const auto& jpin : jo["pinned"]) {
                    const int node = detail::require_field(jpin, "node", "pinned variable").get<int>();
                    const std::string axis = detail::require_field(jpin, "axis", "pinned variable").get<std::string>();
                    if (!p.mechanism.has_node(node))
                        throw ProblemError("pinned variable references unknown node " + std::to_string(node));
                    if (axis != "x" && axis != "y")
                        throw ProblemError("pinned variable axis must be \"x\" or \"y\"");
                    p.options.pinned.emplace_back(node, axis == "x" ? 0 : 1);
                }
            }
            if (jo.contains("formulation")) {
                const std::string f = jo["formulation"].get<std::string>();
                if (f == "coordinates")
                    p.options.formulation = Formulation::coordinates;
                else if (f == "dimensions")
                    p.options.formulation = Formulation::dimensions;
                else
                    throw ProblemError("formulation must be \"coordinates\" or \"dimensions\"");
            }
            if (jo.contains("max_iterations"))
                p.options.tol.max_iterations = jo["max_iterations"].get<int>();
            if (jo.contains("tolerances")) {
                const auto& jt = jo["tolerances"];
                p.options.tol.gradient = jt.value("gradient", p.options.tol.gradient);
                p.options.tol.inner = jt.value("inner", p.options.tol.inner);
                p.options.tol.fitness_change = jt.value("fitness_change", p.options.tol.fitness_change);
                p.options.tol.max_line_evals = jt.value("max_line_evals", p.options.tol.max_line_evals);
            }
        }

        if (p.points.empty()) throw ProblemError("problem has no precision points");
        if (p.mechanism.truss_count() == 0) throw ProblemError("problem has no trusses");

        bool any_fixed = false;
        for (const Node& n : p.mechanism.nodes()) any_fixed |= n.fixed;
        if (!any_fixed) p.warnings.push_back("no fixed node: the problem is not well posed");

        // Every truss must have strictly positive length under x0.
        lengths(p.mechanism, p.x0, p.length_floor());

        return p;
    } catch (const nlohmann::json::exception& e) {
        throw ProblemError(std::string("invalid problem file: ") + e.what());
    }
}

/// Serialize back to the problem-file schema. load(save(p)) is semantically
/// identical to p; doubles are written at full round-trip precision.
inline std::string save_problem(const SynthesisProblem& p) {
    nlohmann::json j;
    j["nodes"] = nlohmann::json::array();
    for (int s = 0; s < p.mechanism.node_count(); ++s) {
        const Node& n = p.mechanism.nodes()[s];
        nlohmann::json jn{{"id", n.id}, {"x", p.x0.at(s).x()}, {"y", p.x0.at(s).y()}};
        if (!n.label.empty()) jn["label"] = n.label;
        if (n.fixed) jn["fixed"] = true;
        j["nodes"].push_back(jn);
    }
    j["trusses"] = nlohmann::json::array();
    for (const Truss& t : p.mechanism.trusses())
        j["trusses"].push_back({{"id", t.id}, {"k", t.k}, {"l", t.l}});
    j["precision_points"] = nlohmann::json::array();
    for (const PrecisionPoint& pp : p.points) {
        nlohmann::json jp;
        jp["pins"] = nlohmann::json::array();
        for (const PinTarget& pin : pp.pins)
            jp["pins"].push_back({{"node", pin.node}, {"x", pin.target.x()}, {"y", pin.target.y()}});
        if (!pp.rays.empty()) {
            jp["rays"] = nlohmann::json::array();
            for (const TimingRay& r : pp.rays)
                jp["rays"].push_back({{"from", r.from}, {"to", r.to}, {"angle", r.angle}});
        }
        j["precision_points"].push_back(jp);
    }
    nlohmann::json jo;
    jo["optimize_fixed_nodes"] = p.options.optimize_fixed_nodes;
    if (!p.options.pinned.empty()) {
        jo["pinned"] = nlohmann::json::array();
        for (auto [node, axis] : p.options.pinned)
            jo["pinned"].push_back({{"node", node}, {"axis", axis == 0 ? "x" : "y"}});
    }
    jo["formulation"] = p.options.formulation == Formulation::coordinates ? "coordinates" : "dimensions";
    jo["max_iterations"] = p.options.tol.max_iterations;
    jo["tolerances"] = {{"gradient", p.options.tol.gradient},
                        {"inner", p.options.tol.inner},
                        {"fitness_change", p.options.tol.fitness_change},
                        {"max_line_evals", p.options.tol.max_line_evals}};
    j["options"] = jo;
    return j.dump(2) + "\n";
}

}  // namespace mechsyn
