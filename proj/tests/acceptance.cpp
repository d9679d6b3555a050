// Acceptance criteria, one PASS/FAIL line each. Exit status is nonzero if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "igm/igm.hpp"

using namespace igm;

namespace {

constexpr double pi = std::numbers::pi;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(double v) { return format_number(v); }

struct Ball {
    Chart chart;
    MetricSpec metric;
    FactoredDeterminant factored;
    std::vector<Crf> crfs;
    std::vector<ConjugateCoordinate> conjugates;

    explicit Ball(const Manifest& m)
        : chart(m.chart), metric(m.chart, m.diagonal), factored(std::get<FactoredDeterminant>(check_factorizable(metric))),
          crfs(compute_crfs(factored, chart)) {
        for (const auto& c : crfs) conjugates.emplace_back(CrfFunction(c.mu, c.coordinate), chart[c.index].range);
    }
    FiniteInterval range(std::size_t k) const { return std::get<FiniteInterval>(chart[k].range); }
};

Outcome crfs_from_manifest() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    const Manifest m = load_manifest(std::string(IGM_SOURCE_DIR) + "/manifests/ball.json");
    const MetricSpec metric(m.chart, m.diagonal);
    const auto factored = std::get<FactoredDeterminant>(check_factorizable(metric));
    const auto crfs = compute_crfs(factored, m.chart);
    const auto samples = random_interior_points(m.chart, 1000, 1);
    const char* expected[] = {"r^(-2)", "1 / sin(theta)", "1"};
    double worst = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        o.require(to_string(crfs[k].mu) == expected[k], "mu_" + crfs[k].coordinate + " = " + to_string(crfs[k].mu));
        worst = std::max(worst, divergence_residual(crfs[k].mu, metric.sqrt_g(), crfs[k].coordinate, m.chart, samples));
    }
    const double t = seconds_since(start);
    o.require(worst <= 1e-12, "divergence residual");
    o.require(t < 1.0, "runtime");
    o.detail << "mu = " << to_string(crfs[0].mu) << ", " << to_string(crfs[1].mu) << ", " << to_string(crfs[2].mu)
             << "; max divergence residual " << fmt(worst) << " on 1000 samples; " << fmt(std::round(t * 1000) / 1000) << " s";
    return o;
}

Outcome analytic_spectra() {
    Outcome o;
    double worst_period = 0.0, worst_value = 0.0;
    for (double a : {1.0, 2.0}) {
        const Ball b(ball_manifest(a));
        const double a3 = a * a * a;
        const double periods[] = {a3 / 3.0, 2.0, 2.0 * pi};
        for (std::size_t k = 0; k < 3; ++k) {
            const std::vector<double> alphas = k == 2 ? std::vector<double>{0.0} : std::vector<double>{0.0, pi, 1.0};
            for (double alpha : alphas) {
                const auto t = analytic_spectrum(b.conjugates[k].crf(), b.range(k), alpha, -5, 5);
                worst_period = std::max(worst_period, std::abs(t.period - periods[k]));
                for (const auto& e : t.entries) {
                    const double closed = k == 0 ? 3.0 / a3 * (2.0 * pi * e.j - alpha)
                                          : k == 1 ? pi * e.j - alpha / 2.0
                                                   : static_cast<double>(e.j);
                    worst_value = std::max(worst_value, std::abs(e.eigenvalue - closed) / std::max(1.0, std::abs(closed)));
                }
            }
        }
    }
    o.require(worst_period <= 1e-10, "period lengths");
    o.require(worst_value <= 1e-12, "eigenvalues");
    o.detail << "a in {1, 2}: max |L - closed form| " << fmt(worst_period) << ", max relative eigenvalue deviation "
             << fmt(worst_value);
    return o;
}

Outcome numeric_spectra() {
    Outcome o;
    const auto start = std::chrono::steady_clock::now();
    const Ball b(ball_manifest(1.0));
    double lo = 10.0, hi = -10.0, worst_rel = 0.0, worst_overlap = 1.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto table = analytic_spectrum(b.conjugates[k].crf(), b.range(k), 0.0, -5, 5);
        const auto conv = spectral_convergence(b.conjugates[k], b.range(k), table, {256, 512, 1024}, Scheme::XUniform);
        for (const auto& m : conv.modes) {
            worst_rel = std::max(worst_rel, m.error.back() / std::max(1.0, std::abs(m.analytic)));
            worst_overlap = std::min(worst_overlap, m.overlap);
            if (!m.order) continue;
            lo = std::min(lo, *m.order);
            hi = std::max(hi, *m.order);
        }
    }
    const double t = seconds_since(start);
    o.require(lo >= 1.7 && hi <= 2.3, "Richardson order");
    o.require(worst_rel <= 1e-3, "eigenvalue error at N = 1024");
    o.require(worst_overlap >= 0.999, "eigenfunction overlap");
    o.require(t < 30.0, "runtime");
    o.detail << "r, theta, phi, j = -5..5, N = 256/512/1024: orders in [" << fmt(lo) << ", " << fmt(hi)
             << "], max relative error " << fmt(worst_rel) << ", min overlap " << fmt(worst_overlap) << "; "
             << fmt(std::round(t * 10) / 10) << " s";
    return o;
}

Outcome deficiency_triple() {
    Outcome o;
    const CrfFunction one(Expr(1.0), "x");
    const std::pair<CoordinateRange, std::pair<int, int>> cases[] = {
        {FiniteInterval{0.0, 1.0}, {1, 1}}, {SemiAxis{0.0}, {1, 0}}, {RealLine{}, {0, 0}}};
    for (const auto& [range, want] : cases) {
        const auto d = deficiency_indices(one, range);
        o.require(d.plus == want.first && d.minus == want.second && !d.inconclusive, "indices on " + describe(range));
        o.require(class_from_indices(d) == classify_extension(range), "classification on " + describe(range));
        o.detail << describe(range) << " -> (" << d.plus << ", " << d.minus << ") " << to_string(class_from_indices(d)) << "; ";
    }
    return o;
}

Outcome commutator_corpus() {
    Outcome o;
    const Ball b(ball_manifest(1.0));
    struct Pair {
        ConjugateCoordinate cc;
        std::string psi;
        Window w;
    };
    std::vector<Pair> corpus{
        {b.conjugates[0], "exp(-(r - 0.5)^2 / 0.02)", {0.01, 0.99}},
        {b.conjugates[0], "r^2 * cos(3 * r)", {0.01, 0.99}},
        {b.conjugates[1], "sin(theta)^2", {0.01, pi - 0.01}},
        {b.conjugates[1], "exp(cos(theta))", {0.01, pi - 0.01}},
        {b.conjugates[2], "cos(2 * phi) + sin(phi)", {0.0, 2 * pi}},
        {b.conjugates[2], "exp(-(phi - 3)^2)", {0.0, 2 * pi}},
        {ConjugateCoordinate(CrfFunction(parse_expression("1/r", {"r"}), "r"), SemiAxis{0.0}), "exp(-r) * r", {0.05, 20.0}},
        {ConjugateCoordinate(CrfFunction(parse_expression("1 + x^2", {"x"}), "x"), RealLine{}), "exp(-x^2)", {-5.0, 5.0}},
        {ConjugateCoordinate(CrfFunction(Expr(1.0), "x"), RealLine{}), "x * exp(-x^2 / 4)", {-8.0, 8.0}},
        {ConjugateCoordinate(CrfFunction(parse_expression("exp(x)", {"x"}), "x"), FiniteInterval{0.0, 2.0}), "cos(5 * x)", {0.0, 2.0}},
        {ConjugateCoordinate(CrfFunction(parse_expression("2 + sin(x)", {"x"}), "x"), FiniteInterval{0.0, 6.0}), "x^3 - x", {0.0, 6.0}},
    };
    double worst = 0.0;
    for (const auto& p : corpus) {
        const std::vector<std::string> vars{p.cc.crf().coordinate()};
        std::vector<double> xs;
        for (int i = 0; i <= 100; ++i) xs.push_back(p.w.lo + (p.w.hi - p.w.lo) * i / 100);
        worst = std::max(worst, commutator_residual(p.cc, parse_expression(p.psi, vars), xs));
    }
    o.require(worst <= 1e-10, "commutator residual");
    o.detail << corpus.size() << " (mu, psi) pairs, 101 points each: max residual " << fmt(worst);
    return o;
}

Outcome normalization() {
    Outcome o;
    for (double a : {1.0, 2.0}) {
        const Ball b(ball_manifest(a));
        const double c = std::sqrt(3.0 / (4.0 * pi * a * a * a));
        PlaneWaveState s;
        s.normalization = c;
        s.momenta = {3.0 / (a * a * a) * (2 * pi * 2 - pi), 2 * pi - pi / 2, 3.0};
        s.coordinates = b.conjugates;
        double product = 1.0;
        for (std::size_t k = 0; k < 3; ++k) product /= std::sqrt(analytic_spectrum(b.conjugates[k].crf(), b.range(k), 0.0).period);
        const TensorRule rule = tensor_rule(b.chart, 8, 8);
        const CompiledExpr density(b.metric.sqrt_g(), b.chart.names());
        double integral = 0.0;
        detail::for_each_tensor_node(rule, std::vector<std::size_t>{0, 1, 2}, [&](std::span<const double> x, double w) {
            integral += w * std::norm(s(x)) * density(x);
        });
        const auto points = random_interior_points(b.chart, 10000, 7);
        std::vector<std::complex<double>> values;
        for (const auto& p : points) values.push_back(s(p));
        const double dev = uniform_density_deviation(values);
        o.require(std::abs(product - c) <= 1e-12, "c = prod L^(-1/2)");
        o.require(std::abs(integral - 1.0) <= 1e-6, "norm");
        o.require(dev <= 1e-10, "density");
        o.detail << "a = " << a << ": c = " << fmt(c) << ", norm " << fmt(integral) << ", density deviation " << fmt(dev) << "; ";
    }
    return o;
}

Outcome hamiltonian_identity() {
    Outcome o;
    const Ball b(ball_manifest(1.0));
    std::vector<Expr> mus;
    for (const auto& c : b.crfs) mus.push_back(c.mu);
    const auto corpus = hamiltonian_corpus(b.chart, b.conjugates);
    double worst = 0.0, lo = 10.0, hi = -10.0;
    for (const auto& psi : corpus) {
        const auto conv = hamiltonian_convergence(b.metric, mus, psi, {64, 128, 256});
        worst = std::max(worst, conv.levels.back().relative());
        if (!conv.order) {
            o.require(false, "order undefined");
            continue;
        }
        lo = std::min(lo, *conv.order);
        hi = std::max(hi, *conv.order);
    }
    o.require(worst <= 1e-3, "residual at N = 256");
    o.require(lo >= 1.7 && hi <= 2.3, "convergence order");
    o.detail << corpus.size() << " compact-support states, N = 64/128/256: orders in [" << fmt(lo) << ", " << fmt(hi)
             << "], max relative residual at 256 " << fmt(worst);
    return o;
}

Outcome operator_identities_spherical() {
    Outcome o;
    const Ball b(ball_manifest(1.0));
    const auto samples = random_interior_points(b.chart, 1000, 3);
    const Expr psi = parse_expression("exp(-(r - 0.5)^2 * 8) * (1 + sin(theta) * cos(phi)) * sin(theta)", b.chart.names());
    double worst = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
        const auto r = operator_identities(b.crfs[k].mu, b.metric.sqrt_g(), b.crfs[k].coordinate, psi, b.chart, samples);
        worst = std::max({worst, r.q_vs_scaled_momentum, r.adjoint_vs_momentum, r.symmetric_vs_divergence_form});
    }
    const CompiledExpr div_r(coordinate_divergence(b.metric.sqrt_g(), "r"), b.chart.names());
    const CompiledExpr div_t(coordinate_divergence(b.metric.sqrt_g(), "theta"), b.chart.names());
    double worst_div = 0.0;
    for (const auto& p : samples)
        worst_div = std::max({worst_div, std::abs(div_r(p) - 2.0 / p[0]), std::abs(div_t(p) - std::cos(p[1]) / std::sin(p[1]))});
    o.require(worst <= 1e-10, "identities");
    o.require(worst_div <= 1e-10, "divergence oracles");
    o.detail << "three identities on r, theta, phi at 1000 points: max residual " << fmt(worst)
             << "; div d_r = 2/r, div d_theta = cot(theta) within " << fmt(worst_div);
    return o;
}

Outcome expectation_equivalence_states() {
    Outcome o;
    const Analysis a(ball_manifest(1.0));
    const TensorRule rule = tensor_rule(a.chart(), 8, 8);
    double worst = 0.0;
    std::size_t count = 0;
    for (const auto& [label, raw] : expectation_states(a)) {
        const ComplexExpr psi = normalized(raw, a.metric.sqrt_g(), a.chart(), rule);
        const auto e = expectation_equivalence(psi, *a.mu[0], 0, a.metric.sqrt_g(), *a.factored, a.chart(), rule);
        worst = std::max(worst, e.difference());
        ++count;
    }
    o.require(count >= 5, "state count");
    o.require(worst <= 1e-8, "difference");
    o.detail << count << " normalized states on the ball: max |<P_r> - <q_r>| " << fmt(worst);
    return o;
}

Outcome uncertainty_corpus() {
    Outcome o;
    const Ball b(ball_manifest(1.0));
    std::vector<std::pair<ConjugateCoordinate, Window>> coords{
        {b.conjugates[0], {0.0, 1.0}}, {b.conjugates[1], {0.0, pi}}, {b.conjugates[2], {0.0, 2 * pi}},
        {ConjugateCoordinate(CrfFunction(Expr(1.0), "x"), RealLine{}), {-50.0, 50.0}}};
    double lowest = 10.0, worst_minimal = 0.0;
    int states = 0;
    for (const auto& [cc, w] : coords) {
        const double X0 = cc(w.lo), X1 = cc(w.hi), span = X1 - X0, mid = 0.5 * (X0 + X1);
        for (double momentum : {0.0, 3.0 / span, -20.0 / span}) {
            const auto u = uncertainty_product(gaussian_in_conjugate(cc, mid, span / 16.0, momentum), cc, w);
            worst_minimal = std::max(worst_minimal, std::abs(u.product - 0.5));
            lowest = std::min(lowest, u.product);
            ++states;
        }
        for (int bumps : {1, 2, 3}) {
            const double P = 8.0 / span, amp = std::sqrt(2.0 / span);
            SampledWavefunction psi{
                [=, &cc = cc](double x) { return amp * std::sin(bumps * pi * (cc(x) - X0) / span) * std::polar(1.0, P * cc(x)); },
                [=, &cc = cc](double x) {
                    const double X = cc(x), t = bumps * pi * (X - X0) / span;
                    return amp * complex(bumps * pi / span * std::cos(t), P * std::sin(t)) * std::polar(1.0, P * X) *
                           cc.derivative(x);
                }};
            lowest = std::min(lowest, uncertainty_product(psi, cc, w).product);
            ++states;
        }
    }
    o.require(lowest >= 0.5 - 1e-6, "lower bound");
    o.require(worst_minimal <= 1e-4, "flattened Gaussian");
    o.detail << states << " states: min product " << fmt(lowest) << ", flattened Gaussians within " << fmt(worst_minimal)
             << " of 0.5";
    return o;
}

Outcome factorizability() {
    Outcome o;
    auto check = [](std::vector<Coordinate> coords, std::vector<std::string> diag) {
        const Chart chart(std::move(coords));
        std::vector<Expr> g;
        for (const auto& d : diag) g.push_back(parse_expression(d, chart.names()));
        return std::pair{chart, check_factorizable(MetricSpec(chart, g))};
    };
    const auto sphere = check({{"r", FiniteInterval{0, 1}}, {"theta", FiniteInterval{0, pi}}, {"phi", FiniteInterval{0, 2 * pi}}},
                              {"1", "r^2", "r^2 * sin(theta)^2"});
    const auto cylinder = check({{"r", SemiAxis{0}}, {"phi", FiniteInterval{0, 2 * pi}}, {"z", RealLine{}}}, {"1", "r^2", "1"});
    const auto flat = check({{"x", RealLine{}}, {"y", RealLine{}}, {"z", RealLine{}}}, {"1", "1", "1"});
    for (const auto* f : {&sphere, &cylinder, &flat}) {
        const auto* fd = std::get_if<FactoredDeterminant>(&f->second);
        o.require(fd && fd->reconstruction_error <= 1e-8, "separable input rejected");
    }
    o.require(to_string(std::get<FactoredDeterminant>(cylinder.second).factors[0]) == "r", "cylinder factor");
    const auto bad = check({{"x1", FiniteInterval{0, 1}}, {"x2", FiniteInterval{0, 1}}}, {"(1 + x1*x2)^2", "1"});
    const auto* w = std::get_if<NotFactorable>(&bad.second);
    o.require(w != nullptr, "1 + x1 x2 accepted");
    if (w) {
        const double x1 = w->point[0], x2 = w->point[1], oracle = 1.0 / ((1 + x1 * x2) * (1 + x1 * x2));
        o.require(std::abs(w->mixed_partial - oracle) <= 1e-12, "witness value");
        o.detail << "spherical, cylindrical, flat factor; 1 + x1 x2 rejected at (" << fmt(x1) << ", " << fmt(x2)
                 << ") with mixed partial " << fmt(w->mixed_partial) << " (oracle " << fmt(oracle) << ")";
    }
    return o;
}

std::pair<int, std::string> run_cli(const std::string& args) {
    const std::string cmd = std::string(IGM_CLI_PATH) + " " + args + " 2>/dev/null";
    std::string out;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, out};
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

Outcome golden_report() {
    Outcome o;
    double slowest = 0.0;
    std::string first;
    for (int pass = 0; pass < 2; ++pass) {
        const auto start = std::chrono::steady_clock::now();
        const auto [code, out] = run_cli("example ball --a 1");
        slowest = std::max(slowest, seconds_since(start));
        o.require(code == 0, "exit code " + std::to_string(code));
        if (pass == 0) {
            first = out;
            const auto report = Json::parse(out);
            o.require(report.value("overall", "") == "PASS", "overall");
            o.require(report.value("schema", "") == "igm-report/1", "schema");
            o.detail << report["summary"]["checks"].get<int>() << " checks, overall " << report.value("overall", "?");
        } else {
            o.require(out == first, "byte stability");
            o.detail << ", two runs " << (out == first ? "byte-identical" : "differ") << " (" << out.size() << " bytes)";
        }
    }
    o.require(slowest < 60.0, "runtime");
    o.detail << ", slowest run " << fmt(std::round(slowest * 10) / 10) << " s";
    return o;
}

}  // namespace

int main() {
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"CRFs of the spherical metric", crfs_from_manifest},
        {"analytic spectra and period lengths", analytic_spectra},
        {"numeric spectra converge at second order", numeric_spectra},
        {"deficiency indices by quadrature", deficiency_triple},
        {"canonical commutator", commutator_corpus},
        {"joint eigenfunction normalization", normalization},
        {"Hamiltonian forms agree", hamiltonian_identity},
        {"operator identities on the spherical chart", operator_identities_spherical},
        {"full and reduced weight expectations", expectation_equivalence_states},
        {"uncertainty bound", uncertainty_corpus},
        {"factorizability detector", factorizability},
        {"golden ball report", golden_report},
    };
    int failed = 0, index = 0;
    for (const auto& [name, f] : criteria) {
        ++index;
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "raised: " << e.what();
        }
        failed += o.pass ? 0 : 1;
        std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (index < 10 ? " " : "") << index << "  " << name << ": "
                  << o.detail.str() << std::endl;
    }
    std::cout << (failed == 0 ? "all 12 criteria pass" : std::to_string(failed) + " criteria fail") << std::endl;
    return failed == 0 ? 0 : 1;
}
