// Command-line front end: manifest-driven analyses and verification reports.
//
// Exit codes: 0 every check passed, 1 a check failed, 2 the input was rejected.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "igm/igm.hpp"

namespace {

struct Flags {
    std::string manifest;
    std::optional<int> grid;
    std::optional<double> alpha;
    std::string j_range;
    std::optional<double> tol;
    std::string output = "json";
    std::string plot_dir;
    std::string coordinate;
    bool verify = false;
    std::string example;
    double radius = 1.0;
};

void add_common(CLI::App* cmd, Flags& f, bool needs_manifest) {
    auto* m = cmd->add_option("--manifest", f.manifest, "Manifest JSON file");
    if (needs_manifest) m->required();
    cmd->add_option("--grid", f.grid, "Finest grid size (momentum: N/4, N/2, N; hamiltonian: points per axis)");
    cmd->add_option("--alpha", f.alpha, "Twist angle in radians for every finite coordinate");
    cmd->add_option("--j-range", f.j_range, "Mode range LO..HI");
    cmd->add_option("--tol", f.tol, "Factor applied to every tolerance");
    cmd->add_option("--output", f.output, "Output format")->check(CLI::IsMember({"json", "csv", "table"}));
    cmd->add_option("--emit-plot-data", f.plot_dir, "Directory for CSV plot data");
}

void apply_flags(igm::Manifest& m, const Flags& f, const std::string& command) {
    auto& o = m.options;
    if (f.grid) {
        const int n = *f.grid;
        if (command == "hamiltonian") {
            if (n < 32 || n % 4 != 0) throw igm::InputError("--grid for hamiltonian must be a multiple of 4 and at least 32");
            o.ham_grid = {n / 4, n / 2, n};
        } else {
            if (n < 64 || n % 4 != 0) throw igm::InputError("--grid must be a multiple of 4 and at least 64");
            o.grid = n;
        }
    }
    if (f.alpha) {
        if (!std::isfinite(*f.alpha)) throw igm::InputError("--alpha must be finite");
        o.alphas = {*f.alpha};
    }
    if (!f.j_range.empty()) {
        const auto dots = f.j_range.find("..");
        if (dots == std::string::npos) throw igm::InputError("--j-range must look like LO..HI, got '" + f.j_range + "'");
        try {
            std::size_t used_lo = 0, used_hi = 0;
            const std::string lo = f.j_range.substr(0, dots), hi = f.j_range.substr(dots + 2);
            o.j_lo = std::stoi(lo, &used_lo);
            o.j_hi = std::stoi(hi, &used_hi);
            if (used_lo != lo.size() || used_hi != hi.size()) throw std::invalid_argument("trailing text");
        } catch (const std::exception&) {
            throw igm::InputError("--j-range must look like LO..HI, got '" + f.j_range + "'");
        }
        if (o.j_hi < o.j_lo) throw igm::InputError("--j-range is empty");
    }
    if (f.tol) {
        if (!(*f.tol > 0.0) || !std::isfinite(*f.tol)) throw igm::InputError("--tol must be positive");
        o.tolerances.scale(*f.tol);
    }
}

igm::SuiteParts parts_for(const std::string& command, const Flags& f) {
    igm::SuiteParts p;
    if (command == "crf") p.crf = true;
    if (command == "conjugate") p.conjugate = true;
    if (command == "classify") p.extension = true;
    if (command == "spectrum") {
        p.spectra = true;
        p.verify_spectra = f.verify;
    }
    if (command == "hamiltonian") p.hamiltonian = true;
    if (command == "verify" || command == "example") p = igm::full_suite();
    if (!f.coordinate.empty()) p.coordinate = f.coordinate;
    p.plot_data = !f.plot_dir.empty();
    return p;
}

std::string spectrum_csv(const igm::Json& report) {
    std::string out = "coordinate,alpha,j,analytic,numeric,error,order,overlap\n";
    auto cell = [](const igm::Json& j) -> std::string {
        if (j.is_null()) return "";
        if (j.is_string()) return j.get<std::string>();
        if (j.is_number_integer()) return std::to_string(j.get<long long>());
        return igm::format_number(j.get<double>());
    };
    for (const auto& c : report.value("coordinates", igm::Json::array())) {
        if (!c.contains("spectra") || !c["spectra"].is_array()) continue;
        for (const auto& s : c["spectra"])
            for (const auto& m : s.value("modes", igm::Json::array()))
                out += c["name"].get<std::string>() + "," + cell(s["alpha"]) + "," + cell(m["j"]) + "," + cell(m["analytic"]) +
                       "," + cell(m.value("numeric", igm::Json())) + "," + cell(m.value("error", igm::Json())) + "," +
                       cell(m.value("order", igm::Json())) + "," + cell(m.value("overlap", igm::Json())) + "\n";
    }
    return out;
}

void write_plots(const igm::PlotFiles& plots, const std::string& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& [name, content] : plots) {
        std::ofstream out(std::filesystem::path(dir) / name);
        if (!out) throw igm::InputError("cannot write plot data to '" + dir + "'");
        out << content;
    }
}

int run(const std::string& command, Flags& f) {
    const auto start = std::chrono::steady_clock::now();
    igm::Manifest manifest;
    std::optional<double> radius;
    if (command == "example") {
        if (f.example != "ball") throw igm::InputError("unknown example '" + f.example + "' (available: ball)");
        manifest = igm::ball_manifest(f.radius);
        radius = f.radius;
    } else {
        manifest = igm::load_manifest(f.manifest);
    }
    apply_flags(manifest, f, command);

    if (command == "spectrum") {
        const auto& coord = manifest.chart[manifest.chart.index_of(f.coordinate)];
        if (igm::classify_extension(coord.range) != igm::ExtensionClass::Family)
            throw igm::InputError(igm::detail::refusal(coord));
    }

    const igm::SuiteResult result = igm::run_suite(manifest, command == "example" ? "example ball" : command,
                                                   parts_for(command, f), radius);
    if (!f.plot_dir.empty()) write_plots(result.plots, f.plot_dir);

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (f.output == "json") {
        std::cout << result.report.dump(2) << '\n';
    } else if (f.output == "csv") {
        std::cout << (command == "spectrum" ? spectrum_csv(result.report) : igm::checks_csv(result.checks));
    } else {
        std::size_t failed = 0;
        for (const auto& c : result.checks) failed += c.pass ? 0 : 1;
        std::cout << "igm " << result.report["command"].get<std::string>() << "  manifest: " << manifest.name << "\n\n"
                  << igm::checks_table(result.checks) << "\n"
                  << "overall: " << (result.pass ? "PASS" : "FAIL") << "  (" << result.checks.size() << " checks, "
                  << failed << " failed, " << igm::format_number(std::round(seconds * 100) / 100) << " s)\n";
        if (command == "spectrum") std::cout << '\n' << spectrum_csv(result.report);
    }
    return result.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generalized momentum observables on orthogonal Riemannian charts"};
    app.require_subcommand(1);
    Flags flags;
    struct Command {
        const char* name;
        const char* help;
    };
    const Command commands[] = {
        {"validate", "Validate the chart and metric and test factorizability of sqrt(g)"},
        {"crf", "Compute the CRFs and their divergence residuals"},
        {"conjugate", "Conjugate coordinates, commutator and uncertainty checks"},
        {"classify", "Self-adjoint extension classification and deficiency indices"},
        {"spectrum", "Analytic spectrum of one coordinate momentum"},
        {"verify", "Run the complete verification suite"},
        {"hamiltonian", "Compare the two Hamiltonian forms on the test corpus"},
    };
    for (const auto& c : commands) {
        auto* cmd = app.add_subcommand(c.name, c.help);
        add_common(cmd, flags, true);
        if (std::string(c.name) == "spectrum") {
            cmd->add_option("--coord", flags.coordinate, "Coordinate name")->required();
            cmd->add_flag("--verify", flags.verify, "Add the numeric spectrum and error columns");
        }
        if (std::string(c.name) == "conjugate") cmd->add_option("--coord", flags.coordinate, "Restrict to one coordinate");
    }
    auto* example = app.add_subcommand("example", "Run a built-in example (ball)");
    example->add_option("name", flags.example, "Example name")->required();
    example->add_option("--a", flags.radius, "Ball radius");
    add_common(example, flags, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    std::string command;
    for (const auto* sub : app.get_subcommands()) command = sub->get_name();
    try {
        return run(command, flags);
    } catch (const igm::Error& e) {
        std::cerr << "igm: " << e.what() << '\n';
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "igm: " << e.what() << '\n';
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "igm: " << e.what() << '\n';
        return 2;
    }
}
