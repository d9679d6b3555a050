#pragma once

// Verification reports. Every check carries its tolerance; a report passes when
// all of its checks pass. Sections for separate coordinates are built
// concurrently and merged in chart order, so output does not depend on timing.

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <complex>
#include <future>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "igm/conjugate.hpp"
#include "igm/crf.hpp"
#include "igm/error.hpp"
#include "igm/expr.hpp"
#include "igm/extensions.hpp"
#include "igm/manifest.hpp"
#include "igm/manifold.hpp"
#include "igm/numerics.hpp"

namespace igm {

using Json = nlohmann::ordered_json;

/// Decimal text with 15 significant digits.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (v == 0.0) v = 0.0;
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 15);
    return std::string(buf, ptr);
}

/// A JSON number rounded to 15 significant digits; non-finite values become strings.
inline Json number(double v) {
    if (!std::isfinite(v)) return format_number(v);
    const std::string text = format_number(v);
    double rounded = 0.0;
    std::from_chars(text.data(), text.data() + text.size(), rounded);
    return rounded == 0.0 ? 0.0 : rounded;
}

inline Json numbers(const std::vector<double>& v) {
    Json a = Json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

enum class Relation { AtMost, AtLeast, Within, Holds };

inline const char* to_string(Relation r) {
    switch (r) {
        case Relation::AtMost: return "<=";
        case Relation::AtLeast: return ">=";
        case Relation::Within: return "within";
        case Relation::Holds: return "holds";
    }
    return "?";
}

struct CheckRecord {
    std::string path;
    Relation relation = Relation::Holds;
    double value = 0.0;
    double tolerance = 0.0;
    double target = 0.0;
    bool pass = false;
    std::string detail;
};

class Section {
public:
    explicit Section(std::string label = {}) : label_(std::move(label)) {}

    Json body = Json::object();

    const std::string& label() const noexcept { return label_; }
    const std::vector<CheckRecord>& checks() const noexcept { return checks_; }
    bool pass() const {
        for (const auto& c : checks_)
            if (!c.pass) return false;
        return true;
    }

    bool at_most(const std::string& name, double value, double tolerance, std::string detail = {}) {
        return record(name, {name, Relation::AtMost, value, tolerance, 0.0, value <= tolerance, std::move(detail)});
    }
    bool at_least(const std::string& name, double value, double tolerance, std::string detail = {}) {
        return record(name, {name, Relation::AtLeast, value, tolerance, 0.0, value >= tolerance, std::move(detail)});
    }
    bool within(const std::string& name, double value, double target, double tolerance, std::string detail = {}) {
        return record(name, {name, Relation::Within, value, tolerance, target, std::abs(value - target) <= tolerance,
                             std::move(detail)});
    }
    bool holds(const std::string& name, bool ok, std::string detail = {}) {
        return record(name, {name, Relation::Holds, 0.0, 0.0, 0.0, ok, std::move(detail)});
    }

    /// Runs f; an exception becomes a failed check carrying the message.
    template <class F>
    void attempt(const std::string& name, F&& f) {
        try {
            f();
        } catch (const std::exception& e) {
            CheckRecord c{name, Relation::Holds, 0.0, 0.0, 0.0, false, e.what()};
            checks_.push_back(c);
            body["checks"].push_back(Json{{"name", name}, {"pass", false}, {"error", e.what()}});
        }
    }

    void note(const std::string& text) { body["notes"].push_back(text); }

    void attach(const std::string& key, Section child) {
        adopt(key, child);
        body[key] = std::move(child.body);
    }
    void append(const std::string& key, Section child) {
        adopt(key + "[" + child.label_ + "]", child);
        body[key].push_back(std::move(child.body));
    }

private:
    bool record(const std::string& name, CheckRecord c) {
        Json j{{"name", name}, {"relation", to_string(c.relation)}};
        if (c.relation != Relation::Holds) {
            j["value"] = number(c.value);
            if (c.relation == Relation::Within) j["target"] = number(c.target);
            j["tolerance"] = number(c.tolerance);
        }
        j["pass"] = c.pass;
        if (!c.detail.empty()) j["detail"] = c.detail;
        body["checks"].push_back(std::move(j));
        const bool ok = c.pass;
        checks_.push_back(std::move(c));
        return ok;
    }

    void adopt(const std::string& prefix, const Section& child) {
        for (auto c : child.checks_) {
            c.path = prefix + "/" + c.path;
            checks_.push_back(std::move(c));
        }
    }

    std::string label_;
    std::vector<CheckRecord> checks_;
};

// --------------------------------------------------------------------------
// Analysis state shared by the sections

/// Which parts of the suite to run.
struct SuiteParts {
    bool factorization = true;
    bool crf = false;
    bool conjugate = false;
    bool extension = false;
    bool spectra = false;
    bool verify_spectra = false;
    bool hamiltonian = false;
    bool identities = false;
    bool expectation = false;
    bool normalization = false;
    /// Restrict per-coordinate sections to one coordinate.
    std::optional<std::string> coordinate;
    bool plot_data = false;
};

struct Analysis {
    Manifest manifest;
    MetricSpec metric;
    std::optional<FactoredDeterminant> factored;
    std::optional<NotFactorable> witness;
    /// CRF per coordinate: manifest override, else derived from the factors.
    std::vector<std::optional<Expr>> mu;
    std::vector<std::string> mu_source;
    std::vector<std::optional<ConjugateCoordinate>> conjugates;
    std::vector<std::vector<double>> samples;

    explicit Analysis(Manifest m)
        : manifest(std::move(m)),
          metric(manifest.chart, manifest.diagonal, SamplingOptions{9, manifest.options.truncation}) {
        const auto& chart = manifest.chart;
        const auto f = check_factorizable(metric, manifest.options.anchor, manifest.options.tolerances.mixed_partial);
        if (auto* fd = std::get_if<FactoredDeterminant>(&f)) factored = *fd;
        else witness = std::get<NotFactorable>(f);
        for (std::size_t k = 0; k < chart.dimension(); ++k) {
            const auto& name = chart[k].name;
            if (auto it = manifest.crf_overrides.find(name); it != manifest.crf_overrides.end()) {
                mu.push_back(it->second);
                mu_source.push_back("manifest");
            } else if (factored) {
                mu.push_back(reciprocal(factored->factors[k]));
                mu_source.push_back("derived");
            } else {
                mu.push_back(std::nullopt);
                mu_source.push_back("unavailable");
            }
            conjugates.push_back(std::nullopt);
            if (!mu.back()) continue;
            try {
                ConjugateCoordinate::Settings s;
                s.truncation = manifest.options.truncation;
                if (!is_finite_interval(chart[k].range)) s.reference = default_anchor(chart)[k];
                conjugates.back().emplace(CrfFunction(*mu.back(), name), chart[k].range, s);
            } catch (const Error&) {
                // Reported by the sections that need it.
            }
        }
        samples = random_interior_points(chart, static_cast<std::size_t>(manifest.options.samples), manifest.options.seed,
                                         manifest.options.truncation);
    }

    const Chart& chart() const { return manifest.chart; }
    const Tolerances& tol() const { return manifest.options.tolerances; }
    Window window(std::size_t k) const { return sampling_window(chart()[k].range, manifest.options.truncation); }
    /// Sampling window shrunk by a relative margin at each edge.
    Window inner_window(std::size_t k, double margin = 1e-3) const {
        const Window w = window(k);
        const double pad = margin * (w.hi - w.lo);
        return {w.lo + pad, w.hi - pad};
    }
    std::vector<double> alphas_for(std::size_t k) const {
        if (!manifest.options.alphas.empty()) return manifest.options.alphas;
        return physical_alphas(chart()[k].endpoints_identified);
    }
    bool all_crfs_separable() const {
        for (const auto& c : conjugates)
            if (!c) return false;
        return true;
    }
};

namespace detail {

inline std::string num_text(double v) { return format_double(v); }

inline Json range_json(const CoordinateRange& r) {
    if (auto f = std::get_if<FiniteInterval>(&r)) return Json{{"type", "interval"}, {"a", number(f->a)}, {"b", number(f->b)}};
    if (auto s = std::get_if<SemiAxis>(&r)) return Json{{"type", "semi_axis"}, {"a", number(s->a)}};
    return Json{{"type", "line"}};
}

inline std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
    return v;
}

/// Complex eigenvalues of the twist as text-free JSON; only used for plot tables.
inline std::string csv_line(std::initializer_list<std::string> cells) {
    std::string out;
    bool first = true;
    for (const auto& c : cells) {
        if (!first) out += ',';
        out += c;
        first = false;
    }
    return out + '\n';
}

inline std::string refusal(const Coordinate& c) {
    if (std::holds_alternative<SemiAxis>(c.range))
        return "coordinate '" + c.name + "' ranges over a semi-axis: deficiency indices (1, 0), the momentum is maximal " +
               "symmetric with no self-adjoint extension, so no spectrum is produced";
    return "coordinate '" + c.name + "' ranges over the whole line: the momentum is essentially self-adjoint with a " +
           "continuous spectrum, so no discrete spectrum table is produced";
}

}  // namespace detail

using PlotFiles = std::map<std::string, std::string>;

// --------------------------------------------------------------------------
// Chart and factorization

inline Json chart_json(const Analysis& a) {
    Json c = Json::array();
    for (const auto& coord : a.chart().coordinates())
        c.push_back(Json{{"name", coord.name}, {"range", detail::range_json(coord.range)}, {"identified", coord.endpoints_identified}});
    return c;
}

inline Section factorization_section(const Analysis& a) {
    Section s("factorization");
    const auto& tol = a.tol();
    if (a.factored) {
        const auto& f = *a.factored;
        s.body["verdict"] = "factorable";
        s.body["method"] = f.symbolic ? "power_product" : "anchor_slices";
        s.body["anchor"] = numbers(f.anchor);
        Json factors = Json::array();
        for (const auto& e : f.factors) factors.push_back(to_string(e));
        s.body["factors"] = factors;
        s.at_most("max_mixed_partial", f.max_mixed_partial, tol.mixed_partial);
        s.at_most("reconstruction_error", f.reconstruction_error, tol.reconstruction);
    } else {
        const auto& w = *a.witness;
        s.body["verdict"] = "not_factorable";
        s.body["witness"] = Json{{"point", numbers(w.point)},
                                 {"coordinates", Json::array({a.chart()[w.i].name, a.chart()[w.j].name})},
                                 {"mixed_partial", number(w.mixed_partial)}};
        s.at_most("max_mixed_partial", std::abs(w.mixed_partial), tol.mixed_partial,
                  "d^2 log sqrt(g) / d" + a.chart()[w.i].name + " d" + a.chart()[w.j].name + " is nonzero at the witness point");
    }
    return s;
}

// --------------------------------------------------------------------------
// Per-coordinate sections

inline Section crf_section(const Analysis& a, std::size_t k) {
    Section s("crf");
    const auto& coord = a.chart()[k];
    const auto& tol = a.tol();
    s.body["source"] = a.mu_source[k];
    if (!a.mu[k]) {
        s.holds("available", false, "sqrt(g) does not factor, so no CRF is derived for '" + coord.name + "'");
        return s;
    }
    const Expr& mu = *a.mu[k];
    s.body["mu"] = to_string(mu);
    const Crf crf{k, coord.name, mu};
    s.holds("depends_only_on_own_coordinate", is_separable_crf(crf));
    s.attempt("divergence_residual", [&] {
        s.at_most("divergence_residual", divergence_residual(mu, a.metric.sqrt_g(), coord.name, a.chart(), a.samples),
                  tol.divergence);
    });
    if (a.factored)
        s.attempt("reciprocity", [&] {
            s.at_most("reciprocity", reciprocity_residual(crf, a.factored->factors[k], a.chart(), a.samples), tol.reciprocity);
        });
    if (a.conjugates[k]) {
        s.attempt("positive_on_interior", [&] {
            const Window w = a.inner_window(k);
            double lowest = std::numeric_limits<double>::infinity();
            for (double x : detail::linspace(w.lo, w.hi, 2001)) lowest = std::min(lowest, a.conjugates[k]->mu(x));
            s.holds("positive_on_interior", lowest > 0.0, "min mu = " + format_number(lowest));
        });
    }
    return s;
}

inline Section conjugate_section(const Analysis& a, std::size_t k) {
    Section s("conjugate");
    const auto& coord = a.chart()[k];
    const auto& tol = a.tol();
    if (!a.conjugates[k]) {
        s.holds("available", false, "no CRF depending on '" + coord.name + "' alone");
        return s;
    }
    const ConjugateCoordinate& cc = *a.conjugates[k];
    const Window w = a.inner_window(k);
    s.body["reference"] = number(is_finite_interval(coord.range) ? lower_bound(coord.range) : default_anchor(a.chart())[k]);

    s.attempt("monotone", [&] {
        const auto xs = detail::linspace(w.lo, w.hi, 201);
        double previous = -std::numeric_limits<double>::infinity(), worst_step = std::numeric_limits<double>::infinity();
        for (double x : xs) {
            const double X = cc(x);
            worst_step = std::min(worst_step, X - previous);
            previous = X;
        }
        s.body["X_range"] = numbers({cc(w.lo), cc(w.hi)});
        s.holds("monotone", worst_step > 0.0, "smallest increment " + format_number(worst_step));
    });
    s.attempt("inverse_roundtrip", [&] {
        double worst = 0.0;
        for (double x : detail::linspace(w.lo, w.hi, 41)) worst = std::max(worst, std::abs(cc.inverse(cc(x)) - x));
        s.at_most("inverse_roundtrip", worst / (w.hi - w.lo), tol.inverse_derivative, "relative to the window width");
    });
    if (auto f = std::get_if<FiniteInterval>(&coord.range)) {
        s.attempt("period", [&] {
            const PeriodLength L = period_length(cc.crf(), *f);
            s.body["period"] = number(L.value);
            s.body["period_error_estimate"] = number(L.error);
            s.holds("period_finite", L.finite);
            s.at_most("period_error_estimate", L.error, tol.quadrature);
        });
    }
    s.attempt("commutator", [&] {
        const double c = 0.5 * (w.lo + w.hi), width = 0.25 * (w.hi - w.lo);
        const std::string u = "((" + coord.name + " - " + detail::num_text(c) + ") / " + detail::num_text(width) + ")";
        const std::vector<std::string> corpus{"exp(-" + u + "^2)", "cos(3 * " + u + ") * exp(-" + u + "^2)",
                                              u + "^2 + " + u, "1 / (1 + " + u + "^2)"};
        const std::vector<std::string> vars{coord.name};
        const auto xs = detail::linspace(w.lo, w.hi, 101);
        double worst = 0.0;
        for (const auto& text : corpus) worst = std::max(worst, commutator_residual(cc, parse_expression(text, vars), xs));
        s.body["commutator_states"] = corpus.size();
        s.at_most("commutator", worst, tol.commutator);
    });
    s.attempt("uncertainty", [&] {
        const double X0 = cc(w.lo), X1 = cc(w.hi), span = X1 - X0;
        const auto gauss = gaussian_in_conjugate(cc, 0.5 * (X0 + X1), span / 16.0);
        const Uncertainty ug = uncertainty_product(gauss, cc, w);
        const double P = 6.0 * std::numbers::pi / span, amp = std::sqrt(2.0 / span), pi = std::numbers::pi;
        SampledWavefunction wave{
            [=](double x) { return amp * std::sin(pi * (cc(x) - X0) / span) * std::polar(1.0, P * cc(x)); },
            [=](double x) {
                const double X = cc(x), t = pi * (X - X0) / span;
                return amp * complex(pi / span * std::cos(t), P * std::sin(t)) * std::polar(1.0, P * X) * cc.derivative(x);
            }};
        const Uncertainty uw = uncertainty_product(wave, cc, w);
        s.body["uncertainty"] = Json{{"flattened_gaussian", number(ug.product)}, {"enveloped_plane_wave", number(uw.product)}};
        s.within("flattened_gaussian_product", ug.product, 0.5, tol.minimal_uncertainty);
        s.at_least("enveloped_plane_wave_product", uw.product, 0.5 - tol.uncertainty);
    });
    return s;
}

inline Section extension_section(const Analysis& a, std::size_t k) {
    Section s("extension");
    const auto& coord = a.chart()[k];
    const ExtensionClass by_range = classify_extension(coord.range);
    s.body["by_range"] = to_string(by_range);
    if (by_range == ExtensionClass::Family) s.body["alphas"] = numbers(a.alphas_for(k));
    if (!a.conjugates[k]) {
        s.holds("available", false, "no CRF depending on '" + coord.name + "' alone");
        return s;
    }
    s.attempt("deficiency_indices", [&] {
        const ExtensionReport r = analyze_extension(a.conjugates[k]->crf(), coord);
        s.body["deficiency_indices"] = Json::array({r.indices.plus, r.indices.minus});
        s.body["by_indices"] = to_string(r.by_indices);
        s.body["inconclusive"] = r.indices.inconclusive;
        s.body["agrees"] = r.agrees;
        if (!r.agrees)
            s.note("flag: the range of '" + coord.name + "' gives " + to_string(r.by_range) +
                   " but the deficiency indices give " + to_string(r.by_indices) +
                   "; the conjugate coordinate has a different kind of range; both are reported, neither is preferred");
    });
    return s;
}

inline Section spectrum_section(const Analysis& a, std::size_t k, double alpha, bool verify, PlotFiles* plots,
                                std::size_t alpha_index) {
    Section s("alpha=" + format_number(alpha));
    const auto& coord = a.chart()[k];
    const auto& opt = a.manifest.options;
    const auto& tol = a.tol();
    const auto range = std::get<FiniteInterval>(coord.range);
    const ConjugateCoordinate& cc = *a.conjugates[k];
    s.body["alpha"] = number(alpha);
    s.attempt("analytic_spectrum", [&] {
        const SpectrumTable table = analytic_spectrum(cc.crf(), range, alpha, opt.j_lo, opt.j_hi);
        s.body["period"] = number(table.period);
        s.body["normalization"] = number(table.normalization);
        Json entries = Json::array();
        for (const auto& e : table.entries) entries.push_back(Json{{"j", e.j}, {"analytic", number(e.eigenvalue)}});

        double worst_boundary = 0.0;
        const double Xa = cc(range.a), Xb = cc(range.b);
        for (const auto& e : table.entries) {
            const complex left = table.normalization * std::polar(1.0, e.eigenvalue * Xa);
            const complex right = table.normalization * std::polar(1.0, e.eigenvalue * Xb);
            worst_boundary = std::max(worst_boundary, std::abs(left - std::polar(1.0, alpha) * right));
        }
        s.at_most("boundary_condition", worst_boundary, tol.boundary, "psi(a) = e^{i alpha} psi(b) for every listed mode");

        if (verify) {
            const int N = opt.grid;
            const std::vector<int> grids{N / 4, N / 2, N};
            const SpectralConvergence conv = spectral_convergence(cc, range, table, grids, Scheme::XUniform);
            double worst_rel = 0.0, worst_order_gap = 0.0, worst_overlap = 1.0, order_value = 2.0;
            for (std::size_t c = 0; c < conv.modes.size(); ++c) {
                const auto& m = conv.modes[c];
                auto& e = entries[c];
                e["numeric"] = number(m.numeric.back());
                e["error"] = number(m.error.back());
                e["order"] = m.order ? number(*m.order) : Json(nullptr);
                e["overlap"] = number(m.overlap);
                worst_rel = std::max(worst_rel, m.error.back() / std::max(1.0, std::abs(m.analytic)));
                worst_overlap = std::min(worst_overlap, m.overlap);
                if (m.order && std::abs(*m.order - 2.0) >= worst_order_gap) {
                    worst_order_gap = std::abs(*m.order - 2.0);
                    order_value = *m.order;
                }
            }
            s.body["scheme"] = to_string(Scheme::XUniform);
            s.body["grids"] = grids;
            const double scale = std::pow(1024.0 / N, 2);
            s.at_most("max_relative_error_at_finest", worst_rel, tol.spectrum_relative_at_1024 * scale,
                      "error / max(1, |P|) at N = " + std::to_string(N));
            s.within("richardson_order", order_value, 2.0, tol.order, "mode farthest from order 2");
            s.at_least("eigenspace_overlap", worst_overlap, tol.overlap);
            s.at_most("hermiticity_defect", conv.hermiticity_defect, tol.hermiticity);
            s.at_most("gram_defect", conv.gram_defect, tol.gram);

            // The x-grid scheme is an independent cross-check; it is reported but not gated.
            const SpectralConvergence cross = spectral_convergence(cc, range, table, grids, Scheme::XCentral);
            Json orders = Json::array();
            double cross_rel = 0.0;
            for (const auto& m : cross.modes) {
                orders.push_back(m.order ? number(*m.order) : Json(nullptr));
                cross_rel = std::max(cross_rel, m.error.back() / std::max(1.0, std::abs(m.analytic)));
            }
            s.body["cross_check"] = Json{{"scheme", to_string(Scheme::XCentral)},
                                         {"max_relative_error_at_finest", number(cross_rel)},
                                         {"orders", orders},
                                         {"hermiticity_defect", number(cross.hermiticity_defect)}};

            if (plots) {
                std::string csv = "j,analytic,n,numeric,error\n";
                for (const auto& m : conv.modes)
                    for (std::size_t g = 0; g < grids.size(); ++g)
                        csv += detail::csv_line({std::to_string(m.j), format_number(m.analytic), std::to_string(grids[g]),
                                                 format_number(m.numeric[g]), format_number(m.error[g])});
                (*plots)["spectrum_" + coord.name + "_alpha" + std::to_string(alpha_index) + ".csv"] = csv;
            }
        }
        s.body["modes"] = entries;
    });
    return s;
}

struct CoordinateResult {
    Section section;
    PlotFiles plots;
};

inline CoordinateResult coordinate_section(const Analysis& a, std::size_t k, const SuiteParts& parts) {
    const auto& coord = a.chart()[k];
    CoordinateResult out{Section(coord.name), {}};
    Section& s = out.section;
    s.body["name"] = coord.name;
    s.body["range"] = detail::range_json(coord.range);
    if (parts.crf) s.attach("crf", crf_section(a, k));
    if (parts.conjugate) s.attach("conjugate", conjugate_section(a, k));
    if (parts.extension) s.attach("extension", extension_section(a, k));
    if (parts.spectra) {
        if (classify_extension(coord.range) != ExtensionClass::Family) {
            s.body["spectra"] = Json{{"refused", detail::refusal(coord)}};
        } else if (!a.conjugates[k]) {
            Section none("spectra");
            none.holds("available", false, "no CRF depending on '" + coord.name + "' alone");
            s.attach("spectra_unavailable", std::move(none));
        } else {
            const auto alphas = a.alphas_for(k);
            s.body["spectra"] = Json::array();
            for (std::size_t i = 0; i < alphas.size(); ++i)
                s.append("spectra", spectrum_section(a, k, alphas[i], parts.verify_spectra,
                                                     parts.plot_data ? &out.plots : nullptr, i));
            if (parts.plot_data) {
                const auto range = std::get<FiniteInterval>(coord.range);
                try {
                    const double L = period_length(a.conjugates[k]->crf(), range).value;
                    std::string csv = "alpha,j,eigenvalue\n";
                    for (int step = 0; step <= 64; ++step) {
                        const double alpha = 2.0 * std::numbers::pi * step / 64;
                        for (int j = a.manifest.options.j_lo; j <= a.manifest.options.j_hi; ++j)
                            csv += detail::csv_line({format_number(alpha), std::to_string(j),
                                                     format_number(twisted_eigenvalue(j, alpha, L))});
                    }
                    out.plots["ladder_" + coord.name + ".csv"] = csv;
                } catch (const Error&) {
                }
            }
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// Global sections

inline Section hamiltonian_section(const Analysis& a) {
    Section s("hamiltonian");
    const auto& opt = a.manifest.options;
    const auto& tol = a.tol();
    if (!a.all_crfs_separable()) {
        s.holds("available", false, "every coordinate needs a CRF depending on its own coordinate only");
        return s;
    }
    std::vector<Expr> mus;
    std::vector<ConjugateCoordinate> conjugates;
    for (std::size_t k = 0; k < a.chart().dimension(); ++k) {
        mus.push_back(*a.mu[k]);
        conjugates.push_back(*a.conjugates[k]);
    }
    s.body["mass"] = number(opt.mass);
    s.body["grids"] = opt.ham_grid;
    s.attempt("corpus", [&] {
        const auto corpus = hamiltonian_corpus(a.chart(), conjugates, opt.truncation);
        const int finest = opt.ham_grid.back();
        const double allowed = tol.hamiltonian_at_256 * std::pow(256.0 / finest, 2);
        s.body["coefficients_separable"] =
            HamiltonianStencil(a.metric, mus, box_axes(corpus.front(), opt.ham_grid.front()), opt.mass).coefficients_separable();
        s.body["states"] = Json::array();
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            Section st("state" + std::to_string(i));
            st.attempt("residual", [&] {
                const auto conv = hamiltonian_convergence(a.metric, mus, corpus[i], opt.ham_grid, opt.mass);
                Json levels = Json::array();
                for (const auto& l : conv.levels)
                    levels.push_back(Json{{"n", l.n}, {"max_difference", number(l.max_difference)},
                                          {"max_reference", number(l.max_reference)}, {"relative", number(l.relative())}});
                st.body["levels"] = levels;
                st.at_most("relative_residual_at_finest", conv.levels.back().relative(), allowed,
                           "N = " + std::to_string(finest) + " per axis");
                if (conv.order) st.within("order", *conv.order, 2.0, tol.order);
                else st.holds("order", false, "residual vanished on a grid");
            });
            s.append("states", std::move(st));
        }
    });
    return s;
}

inline Section identities_section(const Analysis& a) {
    Section s("identities");
    const auto& chart = a.chart();
    const std::size_t n = chart.dimension();
    std::string gauss;
    std::vector<std::string> u(n);
    for (std::size_t j = 0; j < n; ++j) {
        const Window w = a.window(j);
        u[j] = "((" + chart[j].name + " - " + detail::num_text(0.5 * (w.lo + w.hi)) + ") / " +
               detail::num_text(0.25 * (w.hi - w.lo)) + ")";
        gauss += (j ? " * " : "") + std::string("exp(-") + u[j] + "^2)";
    }
    s.body["coordinates"] = Json::array();
    for (std::size_t k = 0; k < n; ++k) {
        if (!a.mu[k]) continue;
        Section c(chart[k].name);
        c.body["name"] = chart[k].name;
        c.attempt("identities", [&] {
            const Expr psi = parse_expression("(1 + 0.5 * " + u[k] + ") * " + gauss, chart.names());
            c.body["divergence_of_coordinate_field"] = to_string(coordinate_divergence(a.metric.sqrt_g(), chart[k].name));
            const auto r = operator_identities(*a.mu[k], a.metric.sqrt_g(), chart[k].name, psi, chart, a.samples);
            c.at_most("q_vs_scaled_momentum", r.q_vs_scaled_momentum, a.tol().identities);
            c.at_most("adjoint_vs_momentum", r.adjoint_vs_momentum, a.tol().identities);
            c.at_most("symmetric_vs_divergence_form", r.symmetric_vs_divergence_form, a.tol().identities);
        });
        s.append("coordinates", std::move(c));
    }
    return s;
}

/// Five smooth states vanishing on the window faces: real, a plane wave in the first
/// coordinate and three seeded random complex superpositions.
inline std::vector<std::pair<std::string, ComplexExpr>> expectation_states(const Analysis& a) {
    const auto& chart = a.chart();
    const std::size_t n = chart.dimension();
    std::vector<std::string> s(n);
    std::string envelope;
    for (std::size_t j = 0; j < n; ++j) {
        const Window w = a.window(j);
        s[j] = "((" + chart[j].name + " - " + detail::num_text(w.lo) + ") / " + detail::num_text(w.hi - w.lo) + ")";
        envelope += (j ? " * " : "") + std::string("sin(pi * ") + s[j] + ")";
    }
    auto parse = [&](const std::string& t) { return parse_expression(t, chart.names()); };
    std::vector<std::pair<std::string, ComplexExpr>> out;
    out.push_back({"real", ComplexExpr{parse(envelope + " * (2 + cos(pi * " + s[0] + "))")}});
    out.push_back({"plane_wave", ComplexExpr{parse(envelope + " * cos(4 * pi * " + s[0] + ")"),
                                             parse(envelope + " * sin(4 * pi * " + s[0] + ")")}});
    std::mt19937_64 rng(a.manifest.options.seed);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    std::uniform_int_distribution<int> freq(1, 4);
    for (int r = 0; r < 3; ++r) {
        std::string re = "1.5", im = detail::num_text(coef(rng));
        for (std::size_t j = 0; j < n; ++j) {
            re += " + " + detail::num_text(coef(rng)) + " * cos(" + std::to_string(freq(rng)) + " * pi * " + s[j] + ")";
            im += " + " + detail::num_text(coef(rng)) + " * sin(" + std::to_string(freq(rng)) + " * pi * " + s[j] + ")";
        }
        out.push_back({"random" + std::to_string(r), ComplexExpr{parse(envelope + " * (" + re + ")"), parse(envelope + " * (" + im + ")")}});
    }
    return out;
}

inline Section expectation_section(const Analysis& a) {
    Section s("expectation");
    if (!a.factored || !a.mu[0]) {
        s.holds("available", false, "needs a factored sqrt(g) and a CRF for the first coordinate");
        return s;
    }
    s.body["coordinate"] = a.chart()[0].name;
    s.body["states"] = Json::array();
    const TensorRule rule = tensor_rule(a.chart(), 8, 8, a.manifest.options.truncation);
    for (const auto& [label, raw] : expectation_states(a)) {
        Section st(label);
        st.body["state"] = label;
        st.attempt("equivalence", [&, &raw = raw, &label = label] {
            const ComplexExpr psi = normalized(raw, a.metric.sqrt_g(), a.chart(), rule);
            const auto e = expectation_equivalence(psi, *a.mu[0], 0, a.metric.sqrt_g(), *a.factored, a.chart(), rule,
                                                   a.tol().normalization, a.manifest.options.truncation);
            st.body["full"] = numbers({e.full.real(), e.full.imag()});
            st.body["reduced"] = numbers({e.reduced.real(), e.reduced.imag()});
            st.at_most("full_vs_reduced", e.difference(), a.tol().expectation);
            if (label == "real") st.at_most("real_state_mean", std::abs(e.full), a.tol().expectation);
        });
        s.append("states", std::move(st));
    }
    return s;
}

/// The joint eigenfunction c exp(i sum P_k X_k) with c = prod L_k^{-1/2}, P_k from j = 1.
inline std::optional<PlaneWaveState> joint_eigenfunction(const Analysis& a, std::vector<double>* periods = nullptr) {
    PlaneWaveState state;
    double c = 1.0;
    for (std::size_t k = 0; k < a.chart().dimension(); ++k) {
        const auto* range = std::get_if<FiniteInterval>(&a.chart()[k].range);
        if (!range || !a.conjugates[k]) return std::nullopt;
        const PeriodLength L = period_length(a.conjugates[k]->crf(), *range);
        if (!L.finite) return std::nullopt;
        c /= std::sqrt(L.value);
        state.momenta.push_back(twisted_eigenvalue(1, a.alphas_for(k).front(), L.value));
        state.coordinates.push_back(*a.conjugates[k]);
        if (periods) periods->push_back(L.value);
    }
    state.normalization = c;
    return state;
}

inline Section normalization_section(const Analysis& a, PlotFiles* plots) {
    Section s("normalization");
    for (std::size_t k = 0; k < a.chart().dimension(); ++k)
        if (!is_finite_interval(a.chart()[k].range)) {
            s.note("the joint eigenfunction is not normalizable: '" + a.chart()[k].name + "' is not a finite interval");
            return s;
        }
    s.attempt("joint_eigenfunction", [&] {
        const auto state = joint_eigenfunction(a);
        if (!state) throw NumericsError("no finite period for every coordinate");
        s.body["normalization_constant"] = number(state->normalization.real());
        s.body["momenta"] = numbers(state->momenta);
        const TensorRule rule = tensor_rule(a.chart(), 8, 8, a.manifest.options.truncation);
        const CompiledExpr density(a.metric.sqrt_g(), a.chart().names());
        std::vector<std::size_t> all(a.chart().dimension());
        for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
        double integral = 0.0;
        detail::for_each_tensor_node(rule, all, [&](std::span<const double> x, double w) {
            integral += w * std::norm((*state)(x)) * density(x);
        });
        s.body["norm"] = number(integral);
        s.within("norm", integral, 1.0, a.tol().normalization, "tensor Gauss-Legendre of |psi|^2 sqrt(g)");
        const auto points = random_interior_points(a.chart(), 10 * static_cast<std::size_t>(a.manifest.options.samples),
                                                   a.manifest.options.seed + 1, a.manifest.options.truncation);
        std::vector<complex> values;
        for (const auto& p : points) values.push_back((*state)(p));
        s.at_most("density_uniformity", uniform_density_deviation(values), a.tol().density,
                  std::to_string(points.size()) + " random interior points");
        if (plots) {
            std::string csv;
            for (const auto& name : a.chart().names()) csv += name + ",";
            csv += "density\n";
            for (std::size_t i = 0; i < std::min<std::size_t>(points.size(), 1000); ++i) {
                for (double x : points[i]) csv += format_number(x) + ",";
                csv += format_number(std::norm(values[i])) + "\n";
            }
            (*plots)["density.csv"] = csv;
        }
    });
    return s;
}

// --------------------------------------------------------------------------
// Closed forms of the ball

inline Section ball_section(const Analysis& a, double radius) {
    Section s("closed_forms");
    const double pi = std::numbers::pi, a3 = radius * radius * radius;
    s.body["radius"] = number(radius);
    const std::vector<std::string> mu_text{"r^(-2)", "1 / sin(theta)", "1"};
    const std::vector<double> periods{a3 / 3.0, 2.0, 2.0 * pi};
    const auto& names = a.chart().names();
    for (std::size_t k = 0; k < 3; ++k) {
        s.attempt("mu_" + names[k], [&] {
            const Expr expected = parse_expression(mu_text[k], names);
            const CompiledExpr want(expected, names), got(*a.mu[k], names);
            double worst = 0.0;
            for (const auto& p : a.samples) worst = std::max(worst, std::abs(got(p) - want(p)) / std::abs(want(p)));
            s.body["mu_" + names[k]] = to_string(*a.mu[k]);
            s.at_most("mu_" + names[k], worst, 1e-12, "relative to " + mu_text[k]);
        });
        s.attempt("period_" + names[k], [&] {
            const PeriodLength L = period_length(a.conjugates[k]->crf(), std::get<FiniteInterval>(a.chart()[k].range));
            s.at_most("period_" + names[k], std::abs(L.value - periods[k]), a.tol().quadrature,
                      "against " + format_number(periods[k]));
        });
        s.attempt("spectrum_" + names[k], [&] {
            double worst = 0.0;
            for (double alpha : a.alphas_for(k)) {
                const auto t = analytic_spectrum(a.conjugates[k]->crf(), std::get<FiniteInterval>(a.chart()[k].range), alpha,
                                                 a.manifest.options.j_lo, a.manifest.options.j_hi);
                for (const auto& e : t.entries) {
                    double closed = 0.0;
                    if (k == 0) closed = 3.0 / a3 * (2.0 * pi * e.j - alpha);
                    if (k == 1) closed = pi * e.j - alpha / 2.0;
                    if (k == 2) closed = e.j - alpha / (2.0 * pi);
                    worst = std::max(worst, std::abs(e.eigenvalue - closed) / std::max(1.0, std::abs(closed)));
                }
            }
            s.at_most("spectrum_" + names[k], worst, a.tol().quadrature, "relative to the closed-form ladder");
        });
    }
    s.attempt("normalization_constant", [&] {
        const auto state = joint_eigenfunction(a);
        const double closed = std::sqrt(3.0 / (4.0 * pi * a3));
        s.body["normalization_constant"] = number(closed);
        s.at_most("normalization_constant", std::abs(state->normalization.real() - closed), a.tol().quadrature,
                  "against sqrt(3 / (4 pi a^3))");
    });
    s.attempt("coordinate_divergence", [&] {
        const CompiledExpr div_r(coordinate_divergence(a.metric.sqrt_g(), "r"), names);
        const CompiledExpr div_theta(coordinate_divergence(a.metric.sqrt_g(), "theta"), names);
        double worst_r = 0.0, worst_theta = 0.0;
        for (const auto& p : a.samples) {
            worst_r = std::max(worst_r, std::abs(div_r(p) - 2.0 / p[0]));
            worst_theta = std::max(worst_theta, std::abs(div_theta(p) - std::cos(p[1]) / std::sin(p[1])));
        }
        s.at_most("divergence_of_d_r", worst_r, a.tol().identities, "against 2 / r");
        s.at_most("divergence_of_d_theta", worst_theta, a.tol().identities, "against cot(theta)");
    });
    s.note("reported, not enforced: at the pole a wavefunction must agree along theta = 0 and theta = pi at fixed r and "
           "phi; read as a constraint between the theta and r boundary phases this excludes the antiperiodic theta "
           "extension for some radial extensions. Boundary conditions here are chosen per coordinate and no "
           "cross-coordinate constraint is imposed.");
    return s;
}

// --------------------------------------------------------------------------
// Assembly

inline Json options_json(const RunOptions& o) {
    const auto& t = o.tolerances;
    Json tol{{"reconstruction", number(t.reconstruction)},
             {"mixed_partial", number(t.mixed_partial)},
             {"divergence", number(t.divergence)},
             {"reciprocity", number(t.reciprocity)},
             {"inverse_derivative", number(t.inverse_derivative)},
             {"commutator", number(t.commutator)},
             {"quadrature", number(t.quadrature)},
             {"hermiticity", number(t.hermiticity)},
             {"order", number(t.order)},
             {"spectrum_relative_at_1024", number(t.spectrum_relative_at_1024)},
             {"overlap", number(t.overlap)},
             {"gram", number(t.gram)},
             {"boundary", number(t.boundary)},
             {"hamiltonian_at_256", number(t.hamiltonian_at_256)},
             {"identities", number(t.identities)},
             {"expectation", number(t.expectation)},
             {"uncertainty", number(t.uncertainty)},
             {"minimal_uncertainty", number(t.minimal_uncertainty)},
             {"normalization", number(t.normalization)},
             {"density", number(t.density)}};
    Json j{{"grid", o.grid},           {"j_range", Json::array({o.j_lo, o.j_hi})},
           {"alphas", numbers(o.alphas)}, {"mass", number(o.mass)},
           {"ham_grid", o.ham_grid},   {"samples", o.samples},
           {"seed", o.seed},           {"truncation", number(o.truncation)}};
    if (o.anchor) j["anchor"] = numbers(*o.anchor);
    j["tolerances"] = tol;
    return j;
}

struct SuiteResult {
    Json report;
    std::vector<CheckRecord> checks;
    bool pass = false;
    PlotFiles plots;
};

/// Runs the selected parts of the suite; `ball_radius` adds the closed forms of the ball.
inline SuiteResult run_suite(const Manifest& manifest, const std::string& command, const SuiteParts& parts,
                             std::optional<double> ball_radius = std::nullopt) {
    const Analysis a(manifest);
    Section root("report");
    PlotFiles plots;
    root.body["options"] = options_json(manifest.options);
    root.body["chart"] = chart_json(a);
    Json diag = Json::array();
    for (const auto& g : a.manifest.diagonal) diag.push_back(to_string(g));
    root.body["metric"] = Json{{"diag", diag}, {"sqrt_g", to_string(a.metric.sqrt_g())}};
    if (parts.factorization) root.attach("factorization", factorization_section(a));

    const bool per_coordinate = parts.crf || parts.conjugate || parts.extension || parts.spectra;
    if (per_coordinate) {
        std::vector<std::size_t> selected;
        for (std::size_t k = 0; k < a.chart().dimension(); ++k)
            if (!parts.coordinate || a.chart()[k].name == *parts.coordinate) selected.push_back(k);
        if (selected.empty()) throw InputError("unknown coordinate '" + parts.coordinate.value_or("") + "'");
        std::vector<std::future<CoordinateResult>> tasks;
        for (std::size_t k : selected)
            tasks.push_back(std::async(std::launch::async, [&a, &parts, k] { return coordinate_section(a, k, parts); }));
        root.body["coordinates"] = Json::array();
        for (auto& t : tasks) {
            CoordinateResult r = t.get();
            plots.merge(r.plots);
            root.append("coordinates", std::move(r.section));
        }
    }
    if (parts.hamiltonian) root.attach("hamiltonian", hamiltonian_section(a));
    if (parts.identities) root.attach("identities", identities_section(a));
    if (parts.expectation) root.attach("expectation", expectation_section(a));
    if (parts.normalization) root.attach("normalization", normalization_section(a, parts.plot_data ? &plots : nullptr));
    if (ball_radius) root.attach("closed_forms", ball_section(a, *ball_radius));

    SuiteResult out;
    out.checks = root.checks();
    out.pass = root.pass();
    out.plots = std::move(plots);
    Json failures = Json::array();
    for (const auto& c : out.checks)
        if (!c.pass) failures.push_back(c.path);
    out.report = Json{{"schema", "igm-report/1"},
                      {"command", command},
                      {"manifest", manifest.name},
                      {"overall", out.pass ? "PASS" : "FAIL"},
                      {"summary", Json{{"checks", out.checks.size()}, {"failed", failures.size()}, {"failures", failures}}}};
    for (auto& [key, value] : root.body.items()) out.report[key] = value;
    return out;
}

/// Every part of the suite.
inline SuiteParts full_suite() {
    SuiteParts p;
    p.crf = p.conjugate = p.extension = p.spectra = p.verify_spectra = true;
    p.hamiltonian = p.identities = p.expectation = p.normalization = true;
    return p;
}

/// One row per check: path, relation, value, target, tolerance, pass.
inline std::string checks_csv(const std::vector<CheckRecord>& checks) {
    std::string out = "check,relation,value,target,tolerance,pass,detail\n";
    for (const auto& c : checks) {
        std::string detail = c.detail;
        for (auto& ch : detail)
            if (ch == ',' || ch == '\n') ch = ';';
        const bool numeric = c.relation != Relation::Holds;
        out += detail::csv_line({c.path, to_string(c.relation), numeric ? format_number(c.value) : "",
                                 c.relation == Relation::Within ? format_number(c.target) : "",
                                 numeric ? format_number(c.tolerance) : "", c.pass ? "PASS" : "FAIL", detail});
    }
    return out;
}

/// Aligned human-readable listing of the checks.
inline std::string checks_table(const std::vector<CheckRecord>& checks) {
    std::size_t width = 5;
    for (const auto& c : checks) width = std::max(width, c.path.size());
    std::ostringstream out;
    auto pad = [](std::string s, std::size_t w) { return s.size() < w ? s + std::string(w - s.size(), ' ') : s; };
    out << pad("check", width) << "  " << pad("value", 22) << "  " << pad("bound", 26) << "  result\n";
    for (const auto& c : checks) {
        std::string value, bound;
        switch (c.relation) {
            case Relation::AtMost: value = format_number(c.value), bound = "<= " + format_number(c.tolerance); break;
            case Relation::AtLeast: value = format_number(c.value), bound = ">= " + format_number(c.tolerance); break;
            case Relation::Within:
                value = format_number(c.value);
                bound = format_number(c.target) + " +- " + format_number(c.tolerance);
                break;
            case Relation::Holds: value = "-", bound = "holds"; break;
        }
        out << pad(c.path, width) << "  " << pad(value, 22) << "  " << pad(bound, 26) << "  " << (c.pass ? "PASS" : "FAIL");
        if (!c.pass && !c.detail.empty()) out << "  (" << c.detail << ")";
        out << '\n';
    }
    return out.str();
}

}  // namespace igm
