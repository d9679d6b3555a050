#pragma once

// JSON manifest: chart, diagonal metric and run options.
//
// {
//   "name": "ball",
//   "chart": [{"name": "r", "range": {"type": "interval", "a": 0, "b": 1}},
//             {"name": "phi", "range": {"type": "interval", "a": 0, "b": "2*pi"}, "identified": true}],
//   "metric": {"diag": ["1", "r^2"]},
//   "crfs": {"r": "1/r"},
//   "options": {"grid": 1024, "j_range": [-5, 5], "alphas": [0, 3.141592653589793], ...}
// }
//
// Range bounds may be numbers or constant expressions such as "2*pi".

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "igm/error.hpp"
#include "igm/expr.hpp"
#include "igm/manifold.hpp"

namespace igm {

/// Check tolerances; every reported value is compared against one of these.
struct Tolerances {
    double reconstruction = 1e-8;
    double mixed_partial = 1e-9;
    double divergence = 1e-12;
    double reciprocity = 1e-12;
    double inverse_derivative = 1e-8;
    double commutator = 1e-10;
    double quadrature = 1e-10;
    double hermiticity = 1e-10;
    double order = 0.3;
    /// Highest-grid eigenvalue error relative to max(1, |P|).
    double spectrum_relative_at_1024 = 1e-3;
    /// Minimum weighted overlap of a sampled eigenfunction with its numeric eigenspace.
    double overlap = 0.999;
    double gram = 1e-6;
    double boundary = 1e-8;
    /// Hamiltonian-form residual allowed at 256 points per axis; scaled by (256/N)^2 at other N.
    double hamiltonian_at_256 = 1e-3;
    double identities = 1e-10;
    double expectation = 1e-8;
    double uncertainty = 1e-6;
    double minimal_uncertainty = 1e-4;
    double normalization = 1e-6;
    double density = 1e-10;

    void scale(double factor) {
        for (double* t : {&reconstruction, &mixed_partial, &divergence, &reciprocity, &inverse_derivative, &commutator,
                          &quadrature, &hermiticity, &order, &spectrum_relative_at_1024, &gram, &boundary, &hamiltonian_at_256,
                          &identities, &expectation, &uncertainty, &minimal_uncertainty, &normalization, &density})
            *t *= factor;
    }
};

struct RunOptions {
    std::optional<std::vector<double>> anchor;
    double truncation = 50.0;
    /// Finest momentum grid; convergence uses N/4, N/2, N.
    int grid = 1024;
    /// Twist angles for every finite coordinate; empty means the physical set per coordinate.
    std::vector<double> alphas;
    int j_lo = -5;
    int j_hi = 5;
    double mass = 1.0;
    /// Hamiltonian grids per axis, coarse to fine.
    std::vector<int> ham_grid{32, 64, 128};
    int samples = 1000;
    std::uint64_t seed = 1;
    Tolerances tolerances;
};

struct Manifest {
    std::string name;
    Chart chart;
    std::vector<Expr> diagonal;
    /// CRF overrides by coordinate name, used instead of the derived ones.
    std::map<std::string, Expr> crf_overrides;
    RunOptions options;
};

namespace detail {

inline double constant_value(const nlohmann::json& j, const std::string& where) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        try {
            return evaluate(parse_expression(j.get<std::string>(), std::initializer_list<std::string>{}), {});
        } catch (const Error& e) {
            throw InputError(where + ": " + e.what());
        }
    }
    throw InputError(where + ": expected a number or a constant expression");
}

inline const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw InputError(where + ": missing \"" + key + "\"");
    return j.at(key);
}

inline Expr parse_in_chart(const nlohmann::json& j, const Chart& chart, const std::string& where) {
    if (!j.is_string()) throw InputError(where + ": expected an expression string");
    try {
        return parse_expression(j.get<std::string>(), chart.names());
    } catch (const Error& e) {
        throw InputError(where + ": " + e.what());
    }
}

}  // namespace detail

inline Manifest parse_manifest(const nlohmann::json& doc) {
    Manifest m;
    m.name = doc.value("name", std::string("manifest"));
    std::vector<Coordinate> coords;
    const auto& chart = detail::require(doc, "chart", "manifest");
    if (!chart.is_array()) throw InputError("manifest: \"chart\" must be an array");
    for (std::size_t i = 0; i < chart.size(); ++i) {
        const std::string where = "chart[" + std::to_string(i) + "]";
        const auto& c = chart[i];
        Coordinate coord;
        coord.name = detail::require(c, "name", where).get<std::string>();
        const auto& range = detail::require(c, "range", where);
        const std::string type = detail::require(range, "type", where + ".range").get<std::string>();
        if (type == "interval") {
            coord.range = FiniteInterval{detail::constant_value(detail::require(range, "a", where + ".range"), where + ".range.a"),
                                         detail::constant_value(detail::require(range, "b", where + ".range"), where + ".range.b")};
        } else if (type == "semi_axis") {
            coord.range = SemiAxis{detail::constant_value(detail::require(range, "a", where + ".range"), where + ".range.a")};
        } else if (type == "line") {
            coord.range = RealLine{};
        } else {
            throw InputError(where + ".range.type: unknown range type '" + type + "' (interval, semi_axis, line)");
        }
        coord.endpoints_identified = c.value("identified", false);
        coords.push_back(coord);
    }
    m.chart = Chart(coords);

    const auto& diag = detail::require(detail::require(doc, "metric", "manifest"), "diag", "metric");
    if (!diag.is_array() || diag.size() != m.chart.dimension())
        throw InputError("metric.diag must list one component per coordinate");
    for (std::size_t k = 0; k < diag.size(); ++k)
        m.diagonal.push_back(detail::parse_in_chart(diag[k], m.chart, "metric.diag[" + std::to_string(k) + "]"));

    if (doc.contains("crfs")) {
        for (const auto& [name, text] : doc.at("crfs").items()) {
            m.chart.index_of(name);
            m.crf_overrides.emplace(name, detail::parse_in_chart(text, m.chart, "crfs." + name));
        }
    }

    if (doc.contains("options")) {
        const auto& o = doc.at("options");
        auto& r = m.options;
        if (o.contains("anchor")) {
            std::vector<double> a;
            for (const auto& v : o.at("anchor")) a.push_back(detail::constant_value(v, "options.anchor"));
            r.anchor = a;
        }
        if (o.contains("truncation")) r.truncation = detail::constant_value(o.at("truncation"), "options.truncation");
        r.grid = o.value("grid", r.grid);
        if (o.contains("alphas"))
            for (const auto& v : o.at("alphas")) r.alphas.push_back(detail::constant_value(v, "options.alphas"));
        if (o.contains("j_range")) {
            const auto& jr = o.at("j_range");
            if (!jr.is_array() || jr.size() != 2) throw InputError("options.j_range must be [lo, hi]");
            r.j_lo = jr[0].get<int>();
            r.j_hi = jr[1].get<int>();
        }
        if (o.contains("mass")) r.mass = detail::constant_value(o.at("mass"), "options.mass");
        if (o.contains("ham_grid")) r.ham_grid = o.at("ham_grid").get<std::vector<int>>();
        r.samples = o.value("samples", r.samples);
        r.seed = o.value("seed", r.seed);
        if (o.contains("tolerances")) {
            const auto& t = o.at("tolerances");
            auto& tol = r.tolerances;
            const std::pair<const char*, double*> fields[] = {
                {"reconstruction", &tol.reconstruction}, {"mixed_partial", &tol.mixed_partial},
                {"divergence", &tol.divergence},         {"reciprocity", &tol.reciprocity},
                {"inverse_derivative", &tol.inverse_derivative},
                {"commutator", &tol.commutator},         {"quadrature", &tol.quadrature},
                {"hermiticity", &tol.hermiticity},       {"order", &tol.order},
                {"spectrum_relative_at_1024", &tol.spectrum_relative_at_1024},
                {"overlap", &tol.overlap},               {"gram", &tol.gram},
                {"boundary", &tol.boundary},             {"hamiltonian_at_256", &tol.hamiltonian_at_256},
                {"identities", &tol.identities},         {"expectation", &tol.expectation},
                {"uncertainty", &tol.uncertainty},       {"minimal_uncertainty", &tol.minimal_uncertainty},
                {"normalization", &tol.normalization},   {"density", &tol.density}};
            for (const auto& [key, value] : t.items()) {
                bool known = false;
                for (const auto& [name, slot] : fields)
                    if (key == name) {
                        *slot = value.get<double>();
                        known = true;
                    }
                if (!known) throw InputError("options.tolerances: unknown tolerance '" + key + "'");
            }
        }
    }
    if (m.options.grid < 64) throw InputError("options.grid must be at least 64");
    if (m.options.j_hi < m.options.j_lo) throw InputError("options.j_range is empty");
    if (m.options.ham_grid.size() < 2) throw InputError("options.ham_grid needs at least two grid sizes");
    if (m.options.samples < 1) throw InputError("options.samples must be positive");
    return m;
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open manifest '" + path.string() + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
        throw InputError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
    try {
        return parse_manifest(doc);
    } catch (const nlohmann::json::exception& e) {
        throw InputError("manifest '" + path.string() + "': " + e.what());
    }
}

/// The sphere-coordinate ball of radius a.
inline Manifest ball_manifest(double a) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InputError("ball radius must be positive");
    Manifest m;
    m.name = "ball";
    m.chart = Chart({{"r", FiniteInterval{0.0, a}}, {"theta", FiniteInterval{0.0, std::numbers::pi}},
                     {"phi", FiniteInterval{0.0, 2.0 * std::numbers::pi}, true}});
    m.diagonal = {Expr(1.0), parse_expression("r^2", m.chart.names()), parse_expression("r^2 * sin(theta)^2", m.chart.names())};
    return m;
}

}  // namespace igm
