/*
 * nlc: nonasymptotic bounds for lossy compression of noisily observed
 * memoryless sources.
 *
 * Subcommands:
 *   rd          rate-distortion sweep over a distortion grid
 *   dispersion  second-order statistics at a single distortion level
 *   bes-curve   rate-vs-blocklength tradeoff for the erased fair coin
 *   oneshot     one-shot bound values or a code-size bracket
 *
 * Rates cross the CLI boundary in bits; probabilities and distortions are
 * dimensionless. Column names carry their unit. Every CSV is accompanied by
 * a manifest (sidecar file with --out, stderr otherwise) recording the
 * command line, a model fingerprint, the seed, the tool version, and the
 * wall time, so any output can be traced back to its invocation.
 *
 * Exit codes: 0 success (including rows flagged by design), 2 validation
 * failure, 3 evaluator refusal.
 */

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nlc/bes.hpp"
#include "nlc/dispersion.hpp"
#include "nlc/model.hpp"
#include "nlc/oneshot.hpp"
#include "nlc/rd_solver.hpp"

namespace {

constexpr const char* kVersion = "nlc 0.1.0";

const char* kUsage =
    "usage: nlc <subcommand> [flags]\n"
    "\n"
    "subcommands:\n"
    "  rd          --model FILE | --bes DELTA, --d D | --d-grid LO:HI:STEP\n"
    "              rate-distortion function and slope over a grid\n"
    "  dispersion  --model FILE | --bes DELTA, --d D\n"
    "              dispersions and the covariance residual at one d\n"
    "  bes-curve   [--delta R] [--d R] [--eps F] [--k-min N] [--k-max N]\n"
    "              [--k-step N]   erased-fair-coin rate vs blocklength\n"
    "  oneshot     --model FILE | --bes DELTA, --k N, --d D, [--eps F],\n"
    "              --M N | --search, [--mc-samples N] [--seed N]\n"
    "\n"
    "common flags: --out FILE (CSV plus FILE.manifest; default stdout with\n"
    "the manifest on stderr), --help, --version\n"
    "\n"
    "rationals accept decimals or fractions: 0.1 and 1/10 are the same.\n";

// thrown on malformed invocations: message plus usage text, exit code 2
struct usage_error : std::runtime_error {
    explicit usage_error(const std::string& what) : std::runtime_error(what) {}
};

struct Args {
    std::string subcommand;
    std::map<std::string, std::string> flags;
    std::set<std::string> seen;
    std::string command_line;
};

Args parse_args(int argc, char** argv) {
    Args a;
    a.command_line = "nlc";
    for (int i = 1; i < argc; ++i) a.command_line += std::string(" ") + argv[i];
    if (argc < 2) throw usage_error("no subcommand given");
    a.subcommand = argv[1];
    for (int i = 2; i < argc; ++i) {
        std::string tok = argv[i];
        if (tok.rfind("--", 0) != 0)
            throw usage_error("unexpected positional argument '" + tok + "'");
        std::string name = tok.substr(2);
        if (name == "search" || name == "help" || name == "version") {
            a.flags[name] = "";
        } else {
            if (i + 1 >= argc) throw usage_error("flag --" + name + " needs a value");
            a.flags[name] = argv[++i];
        }
        a.seen.insert(name);
    }
    return a;
}

bool has_flag(const Args& a, const std::string& name) {
    return a.flags.count(name) != 0;
}

nlc::Rational rational_flag(const Args& a, const std::string& name,
                            const std::string& fallback = "") {
    std::string text = has_flag(a, name) ? a.flags.at(name) : fallback;
    if (text.empty()) throw usage_error("missing required flag --" + name);
    try {
        return nlc::Rational::parse(text);
    } catch (const std::exception& e) {
        throw usage_error("flag --" + name + ": " + e.what());
    }
}

double double_flag(const Args& a, const std::string& name, const std::string& fallback) {
    return rational_flag(a, name, fallback).to_double();
}

long long int_flag(const Args& a, const std::string& name, const std::string& fallback) {
    std::string text = has_flag(a, name) ? a.flags.at(name) : fallback;
    if (text.empty()) throw usage_error("missing required flag --" + name);
    try {
        std::size_t pos = 0;
        long long v = std::stoll(text, &pos);
        if (pos != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw usage_error("flag --" + name + " needs an integer, got '" + text + "'");
    }
}

// --- CSV formatting: 12 significant digits, NaN prints as a blank field ---

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

std::string csv_safe(std::string s) {
    for (auto& c : s)
        if (c == ',' || c == '\n') c = ';';
    return s;
}

struct Csv {
    std::string text;
    void line(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) text += ',';
            text += fields[i];
        }
        text += '\n';
    }
};

// --- manifest plumbing ---

std::uint64_t fnv64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string model_fingerprint(const nlc::NoisySourceModel& m) {
    std::ostringstream os;
    for (const auto& s : m.source_symbols) os << s << '|';
    for (const auto& s : m.observation_symbols) os << s << '|';
    for (const auto& s : m.reproduction_symbols) os << s << '|';
    os.precision(17);
    for (double p : m.source.p) os << p << ' ';
    for (const auto& row : m.observation.rows)
        for (double p : row) os << p << ' ';
    for (const auto& row : m.distortion.entries)
        for (double v : row) os << v << ' ';
    return os.str();
}

struct RunResult {
    Csv csv;
    std::uint64_t model_hash = 0;
    std::uint64_t seed = 0;
};

void emit(const Args& a, const RunResult& r, double wall_ms) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016" PRIx64, r.model_hash);
    std::ostringstream manifest;
    manifest << "command: " << a.command_line << '\n'
             << "model_hash: " << hash << '\n'
             << "seed: " << r.seed << '\n'
             << "tool_version: " << kVersion << '\n'
             << "wall_ms: " << fmt(wall_ms) << '\n';
    if (has_flag(a, "out")) {
        const std::string& path = a.flags.at("out");
        std::ofstream out(path);
        if (!out) throw nlc::validation_error("cannot write output file '" + path + "'");
        out << r.csv.text;
        std::ofstream side(path + ".manifest");
        if (!side)
            throw nlc::validation_error("cannot write manifest file '" + path +
                                        ".manifest'");
        side << manifest.str();
    } else {
        std::cout << r.csv.text;
        std::cerr << manifest.str();
    }
}

// exactly one of --model and --bes selects the input model
nlc::NoisySourceModel resolve_model(const Args& a) {
    if (has_flag(a, "model") == has_flag(a, "bes"))
        throw usage_error("give exactly one of --model and --bes");
    if (has_flag(a, "model")) return nlc::load_model(a.flags.at("model"));
    return nlc::builtin_bes(rational_flag(a, "bes"));
}

std::vector<nlc::Rational> parse_d_grid(const Args& a) {
    std::vector<nlc::Rational> ds;
    if (has_flag(a, "d") == has_flag(a, "d-grid"))
        throw usage_error("give exactly one of --d and --d-grid");
    if (has_flag(a, "d")) {
        ds.push_back(rational_flag(a, "d"));
        return ds;
    }
    // LO:HI:STEP inclusive with exact rational stepping, or a comma list
    const std::string& text = a.flags.at("d-grid");
    auto parse_one = [&](const std::string& tok) {
        try {
            return nlc::Rational::parse(tok);
        } catch (const std::exception& e) {
            throw usage_error(std::string("flag --d-grid: ") + e.what());
        }
    };
    if (text.find(':') != std::string::npos) {
        std::istringstream is(text);
        std::string lo_s, hi_s, step_s;
        if (!std::getline(is, lo_s, ':') || !std::getline(is, hi_s, ':') ||
            !std::getline(is, step_s) || step_s.empty())
            throw usage_error("flag --d-grid needs LO:HI:STEP");
        nlc::Rational lo = parse_one(lo_s), hi = parse_one(hi_s), step = parse_one(step_s);
        if (!(step > nlc::Rational(0)) || hi < lo)
            throw usage_error("flag --d-grid needs LO <= HI and STEP > 0");
        for (nlc::Rational d = lo; !(d > hi); d = d + step) {
            ds.push_back(d);
            if (ds.size() > 100000) throw usage_error("flag --d-grid produces too many rows");
        }
    } else {
        std::istringstream is(text);
        std::string tok;
        while (std::getline(is, tok, ',')) ds.push_back(parse_one(tok));
    }
    if (ds.empty()) throw usage_error("flag --d-grid is empty");
    return ds;
}

// --- subcommands ---

RunResult cmd_rd(const Args& a) {
    RunResult r;
    auto ds = parse_d_grid(a);
    r.csv.line({"d", "rate_bits", "lambda_star_nats", "note"});

    if (has_flag(a, "bes") && !has_flag(a, "model")) {
        // closed forms; feasible band is delta/2 < d <= 1/2
        nlc::Rational delta = rational_flag(a, "bes");
        if (delta < nlc::Rational(0) || delta > nlc::Rational(1))
            throw nlc::validation_error("rd: delta must lie in [0, 1]");
        r.model_hash = fnv64("builtin_bes " + delta.str());
        for (const auto& d : ds) {
            if (!(nlc::Rational(2) * d > delta) || d > nlc::Rational(1, 2)) {
                r.csv.line({fmt(d.to_double()), "", "",
                            "d outside the feasible band (" +
                                fmt(delta.to_double() / 2) + "; 0.5]"});
                continue;
            }
            nlc::BesParams p{delta, d, 0.5};
            r.csv.line({fmt(d.to_double()), fmt(nlc::bes_rate(p) / std::numbers::ln2),
                        fmt(nlc::bes_lambda_star(p)), ""});
        }
        return r;
    }

    auto model = resolve_model(a);
    r.model_hash = fnv64(model_fingerprint(model));
    auto sur = nlc::surrogate_from_noisy(model);
    double dmin = sur.d_min(), dmax = sur.d_max();
    for (const auto& d : ds) {
        double dv = d.to_double();
        if (!(dv > dmin) || dv > dmax) {
            r.csv.line({fmt(dv), "", "",
                        "d outside the feasible band (" + fmt(dmin) + "; " + fmt(dmax) +
                            "]"});
            continue;
        }
        auto sol = nlc::solve_distortion(sur, dv);
        r.csv.line({fmt(dv), fmt(sol.rate / std::numbers::ln2), fmt(sol.lambda_star), ""});
    }
    return r;
}

RunResult cmd_dispersion(const Args& a) {
    RunResult r;
    auto model = resolve_model(a);
    r.model_hash = fnv64(model_fingerprint(model));
    double d = double_flag(a, "d", "");
    auto sur = nlc::surrogate_from_noisy(model);
    auto sol = nlc::solve_distortion(sur, d);
    auto table = nlc::tilted_info_table(model, sol);
    auto rep = nlc::dispersion_report(table, model);
    r.csv.line({"v_nats2", "vtilde_nats2", "lambda_star_nats", "covariance_residual_nats2"});
    r.csv.line({fmt(rep.v_surrogate), fmt(rep.v_noisy), fmt(rep.lambda_star),
                fmt(rep.covariance_cross_term)});
    return r;
}

RunResult cmd_bes_curve(const Args& a) {
    RunResult r;
    nlc::BesParams p{rational_flag(a, "delta", "0.1"), rational_flag(a, "d", "0.1"),
                     double_flag(a, "eps", "0.1")};
    nlc::validate_bes(p);
    r.model_hash =
        fnv64("bes_curve " + p.delta.str() + " " + p.d.str() + " " + fmt(p.eps));

    long long k_min = int_flag(a, "k-min", "10");
    long long k_max = int_flag(a, "k-max", "5000");
    std::vector<long long> ks;
    if (has_flag(a, "k-step")) {
        long long step = int_flag(a, "k-step", "");
        if (k_min < 1 || k_max < k_min || step < 1)
            throw usage_error("need 1 <= --k-min <= --k-max and --k-step >= 1");
        if ((k_max - k_min) / step >= 100000)
            throw usage_error("--k-step produces too many rows");
        for (long long k = k_min; k <= k_max; k += step) ks.push_back(k);
    } else {
        ks = nlc::bes_default_grid(k_min, k_max);
    }

    auto rows = nlc::bes_curve(p, ks);
    r.csv.line({"k", "rate_converse_bits", "rate_achievability_bits", "rate_gaussian_0_bits",
                "rate_gaussian_logk_bits", "rate_rd_bits", "sur_rate_converse_bits",
                "sur_rate_achievability_bits", "sur_rate_gaussian_0_bits",
                "sur_rate_gaussian_logk_bits", "note"});
    auto bits = [](double nats) { return fmt(nats / std::numbers::ln2); };
    for (const auto& row : rows)
        r.csv.line({std::to_string(row.k), bits(row.rate_converse),
                    bits(row.rate_achievability), bits(row.rate_gaussian_0),
                    bits(row.rate_gaussian_logk), bits(row.rate_rd),
                    bits(row.sur_rate_converse), bits(row.sur_rate_achievability),
                    bits(row.sur_rate_gaussian_0), bits(row.sur_rate_gaussian_logk),
                    csv_safe(row.note)});
    return r;
}

RunResult cmd_oneshot(const Args& a) {
    RunResult r;
    auto model = resolve_model(a);
    r.model_hash = fnv64(model_fingerprint(model));

    nlc::BlockSpec block;
    block.base = model;
    block.k = int_flag(a, "k", "");
    block.d = rational_flag(a, "d");
    block.eps = double_flag(a, "eps", "0.1");

    nlc::OneShotOptions opts;
    opts.seed = static_cast<std::uint64_t>(int_flag(a, "seed", "0"));
    r.seed = opts.seed;
    if (has_flag(a, "mc-samples")) {
        long long n = int_flag(a, "mc-samples", "");
        if (n < 1) throw usage_error("--mc-samples must be positive");
        opts.mc_samples = static_cast<std::size_t>(n);
    }

    if (has_flag(a, "search") == has_flag(a, "M"))
        throw usage_error("give exactly one of --M and --search");

    if (has_flag(a, "search")) {
        auto br = nlc::code_size_bracket(block, opts);
        r.csv.line({"m_converse", "m_achievability"});
        r.csv.line({std::to_string(br.m_converse), std::to_string(br.m_achievability)});
        return r;
    }

    long long M = int_flag(a, "M", "");
    if (M < 1) throw usage_error("--M must be at least 1");
    double conv = nlc::best_converse(block, M, opts);
    nlc::ProbEstimate ach = nlc::best_achievability(block, M, opts);
    r.csv.line({"method", "M", "value", "std_error", "sampled"});
    r.csv.line({"converse", std::to_string(M), fmt(conv), fmt(0.0), "0"});
    r.csv.line({"random_coding", std::to_string(M), fmt(ach.value), fmt(ach.std_error),
                ach.sampled ? "1" : "0"});
    return r;
}

}  // namespace

int main(int argc, char** argv) {
    std::ios::sync_with_stdio(false);
    try {
        Args a = parse_args(argc, argv);
        if (a.subcommand == "--help" || has_flag(a, "help")) {
            std::cout << kUsage;
            return 0;
        }
        if (a.subcommand == "--version" || has_flag(a, "version")) {
            std::cout << kVersion << '\n';
            return 0;
        }
        auto t0 = std::chrono::steady_clock::now();
        RunResult r;
        if (a.subcommand == "rd")
            r = cmd_rd(a);
        else if (a.subcommand == "dispersion")
            r = cmd_dispersion(a);
        else if (a.subcommand == "bes-curve")
            r = cmd_bes_curve(a);
        else if (a.subcommand == "oneshot")
            r = cmd_oneshot(a);
        else
            throw usage_error("unknown subcommand '" + a.subcommand + "'");
        double wall_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
        emit(a, r, wall_ms);
        return 0;
    } catch (const usage_error& e) {
        std::cerr << "error: " << e.what() << "\n\n" << kUsage;
        return 2;
    } catch (const nlc::validation_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const nlc::refusal_error& e) {
        std::cerr << "refused: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 1;
    }
}
