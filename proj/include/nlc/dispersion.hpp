#pragma once

/*
 * Tilted informations and rate-dispersion quantities for the noisy problem.
 *
 * Two layers coexist. The per-(s,x) noisy tilted information
 *   jt(s,x,d) = D(P_Z*|X=x || P_Z*) + lambda* E[d(s,Z*)|X=x] - lambda* d
 * is the directional-derivative quantity: it satisfies
 *   jt(s,x,d) - j_X(x,d) = lambda* (E[d(s,Z*)|X=x] - E[dbar(X,Z*)|X=x]).
 * The z-resolved variable
 *   i(X;Z*) + lambda* d(S,Z*) - lambda* d
 * has the same conditional mean given (S,X) but strictly more variance
 * whenever the reproduction still randomizes the distortion given (S,X);
 * its variance is the dispersion that governs the finite-blocklength
 * bounds, so v_noisy is computed from the z-resolved law.
 */

#include <cmath>
#include <stdexcept>
#include <vector>

#include "nlc/model.hpp"
#include "nlc/rd_solver.hpp"

namespace nlc {

struct TiltedInfoTable {
    std::vector<double> surrogate;           // kept x -> j_X(x,d)
    std::vector<std::vector<double>> noisy;  // [s][kept x] -> jt(s,x,d)
    double lambda_star = 0.0;
    double distortion = 0.0;
    double rate = 0.0;  // E[j_X(X,d)]

    // solution context the dispersion sums are taken against
    SurrogateModel sur;
    Channel kernel;        // P_Z*|X over kept x
    Distribution marginal; // P_Z*
    std::vector<std::vector<double>> joint;  // P_{S,X}(s, kept x)
};

struct DispersionReport {
    double v_surrogate = 0.0;  // Var j_X(X,d), nats^2
    double v_noisy = 0.0;      // Var of the z-resolved tilted information
    double lambda_star = 0.0;
    double inner_variance_term = 0.0;   // lambda*^2 Var[d(S,Z*) - dbar(X,Z*)]
    double covariance_cross_term = 0.0; // 2 lambda* Cov(j_X, inner); identically 0
    double v_conditional = 0.0;         // Var jt(S,X,d) over P_{S,X}
};

struct WeightedAtom {
    double value = 0.0;
    double prob = 0.0;
};

inline TiltedInfoTable tilted_info_table(const NoisySourceModel& model,
                                         const TiltedSolution& sol) {
    TiltedInfoTable t;
    t.sur = surrogate_from_noisy(model);
    if (sol.kernel.rows.size() != t.sur.x_size() ||
        sol.marginal.size() != t.sur.z_size())
        throw validation_error("tilted_info_table: solution does not fit the model");
    t.kernel = sol.kernel;
    t.marginal = sol.marginal;
    t.lambda_star = sol.lambda_star;
    t.distortion = sol.distortion;

    const std::size_t ns = model.s_size(), nx = t.sur.x_size(), nz = t.sur.z_size();
    t.surrogate.resize(nx);
    for (std::size_t x = 0; x < nx; ++x)
        t.surrogate[x] = surrogate_tilted_info(t.sur, sol, x, sol.distortion);
    t.rate = 0.0;
    for (std::size_t x = 0; x < nx; ++x) t.rate += t.sur.observable[x] * t.surrogate[x];

    t.joint.assign(ns, std::vector<double>(nx, 0.0));
    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t x = 0; x < nx; ++x)
            t.joint[s][x] = model.source[s] * model.observation(s, t.sur.kept_observation[x]);

    t.noisy.assign(ns, std::vector<double>(nx, 0.0));
    for (std::size_t x = 0; x < nx; ++x) {
        double dbar_mean = 0.0;
        for (std::size_t z = 0; z < nz; ++z)
            if (t.kernel(x, z) > 0.0) dbar_mean += t.kernel(x, z) * t.sur.dbar(x, z);
        for (std::size_t s = 0; s < ns; ++s) {
            double ds = 0.0;
            for (std::size_t z = 0; z < nz; ++z)
                if (t.kernel(x, z) > 0.0) ds += t.kernel(x, z) * model.distortion(s, z);
            t.noisy[s][x] = t.surrogate[x] + t.lambda_star * (ds - dbar_mean);
        }
    }
    return t;
}

// exact law of i(X;Z*) + lambda* d(S,Z*) - lambda* d over (S, X, Z*)
inline std::vector<WeightedAtom> noisy_tilted_law(const TiltedInfoTable& t,
                                                  const NoisySourceModel& model) {
    std::vector<WeightedAtom> atoms;
    const std::size_t ns = model.s_size(), nx = t.sur.x_size(), nz = t.sur.z_size();
    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t x = 0; x < nx; ++x) {
            if (t.joint[s][x] <= 0.0) continue;
            for (std::size_t z = 0; z < nz; ++z) {
                double w = t.joint[s][x] * t.kernel(x, z);
                if (w <= 0.0) continue;
                double value = t.surrogate[x] +
                               t.lambda_star * (model.distortion(s, z) - t.sur.dbar(x, z));
                atoms.push_back({value, w});
            }
        }
    return atoms;
}

inline DispersionReport dispersion_report(const TiltedInfoTable& t,
                                          const NoisySourceModel& model) {
    DispersionReport r;
    r.lambda_star = t.lambda_star;

    const std::size_t ns = model.s_size(), nx = t.sur.x_size(), nz = t.sur.z_size();
    double mean_j = t.rate;
    for (std::size_t x = 0; x < nx; ++x) {
        double dev = t.surrogate[x] - mean_j;
        r.v_surrogate += t.sur.observable[x] * dev * dev;
    }

    // moments of g = d(S,Z*) - dbar(X,Z*) and its coupling with j_X
    double mean_g = 0.0, var_g = 0.0, cov_jg = 0.0;
    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t x = 0; x < nx; ++x) {
            if (t.joint[s][x] <= 0.0) continue;
            for (std::size_t z = 0; z < nz; ++z) {
                double w = t.joint[s][x] * t.kernel(x, z);
                if (w <= 0.0) continue;
                mean_g += w * (model.distortion(s, z) - t.sur.dbar(x, z));
            }
        }
    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t x = 0; x < nx; ++x) {
            if (t.joint[s][x] <= 0.0) continue;
            for (std::size_t z = 0; z < nz; ++z) {
                double w = t.joint[s][x] * t.kernel(x, z);
                if (w <= 0.0) continue;
                double g = model.distortion(s, z) - t.sur.dbar(x, z) - mean_g;
                var_g += w * g * g;
                cov_jg += w * (t.surrogate[x] - mean_j) * g;
            }
        }
    r.inner_variance_term = t.lambda_star * t.lambda_star * var_g;
    r.covariance_cross_term = 2.0 * t.lambda_star * cov_jg;
    if (std::abs(r.covariance_cross_term) > 1e-8)
        throw std::runtime_error("dispersion_report: cross covariance failed to vanish");

    auto atoms = noisy_tilted_law(t, model);
    double mean_raw = 0.0;
    for (const auto& a : atoms) mean_raw += a.prob * a.value;
    for (const auto& a : atoms) {
        double dev = a.value - mean_raw;
        r.v_noisy += a.prob * dev * dev;
    }

    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t x = 0; x < nx; ++x) {
            if (t.joint[s][x] <= 0.0) continue;
            double dev = t.noisy[s][x] - mean_j;
            r.v_conditional += t.joint[s][x] * dev * dev;
        }
    return r;
}

enum class ThirdOrder { none, half_log_over_k };

inline double gaussian_approx_rate(long long k, double d, double eps,
                                   const TiltedSolution& sol, const DispersionReport& rep,
                                   ThirdOrder third = ThirdOrder::none) {
    if (k < 1) throw validation_error("gaussian_approx_rate: k must be >= 1");
    if (!(eps > 0.0 && eps < 1.0))
        throw validation_error("gaussian_approx_rate: eps must lie in (0,1)");
    (void)d;  // the solution is already pinned to the target distortion
    double rate = sol.rate + std::sqrt(rep.v_noisy / double(k)) * gaussian_q_inv(eps);
    if (third == ThirdOrder::half_log_over_k) rate += 0.5 * std::log(double(k)) / double(k);
    return rate;
}

struct DerivativeCheck {
    double numeric = 0.0;
    double analytic = 0.0;
};

namespace detail {

// rate of the model whose joint law is (1-t) P_{S,X} + t point mass at (s0,x0)
inline double perturbed_rate(const NoisySourceModel& model, std::size_t s0,
                             std::size_t x0, double d, double t) {
    const std::size_t ns = model.s_size(), nx = model.x_size();
    NoisySourceModel pert = model;
    for (std::size_t s = 0; s < ns; ++s) {
        double row_mass = 0.0;
        std::vector<double> row(nx);
        for (std::size_t x = 0; x < nx; ++x) {
            double j = (1.0 - t) * model.source[s] * model.observation(s, x);
            if (s == s0 && x == x0) j += t;
            if (j < 0.0)
                throw validation_error("directional_derivative_check: step leaves the simplex");
            row[x] = j;
            row_mass += j;
        }
        pert.source.p[s] = row_mass;
        for (std::size_t x = 0; x < nx; ++x)
            pert.observation.rows[s][x] = row_mass > 0.0 ? row[x] / row_mass : (x == 0 ? 1.0 : 0.0);
    }
    return solve_distortion(surrogate_from_noisy(pert), d).rate;
}

}  // namespace detail

/*
 * Central finite difference of the constrained rate along the segment from
 * P_{S,X} toward the point mass at (s,x), against the analytic value
 * jt(s,x,d) - R(d). Falls back to a Richardson step when the plain central
 * difference misses 1e-3, which absorbs solver noise near flat regions.
 */
inline DerivativeCheck directional_derivative_check(const NoisySourceModel& model,
                                                    std::size_t s, std::size_t x,
                                                    double d, double h = 1e-4) {
    if (s >= model.s_size() || x >= model.x_size())
        throw validation_error("directional_derivative_check: symbol index out of range");
    if (!(model.source[s] * model.observation(s, x) > 0.0))
        throw validation_error("directional_derivative_check: (s,x) has zero mass");
    if (!(h > 0.0 && h < 0.5))
        throw validation_error("directional_derivative_check: bad step size");

    auto sur = surrogate_from_noisy(model);
    auto sol = solve_distortion(sur, d);
    auto table = tilted_info_table(model, sol);
    std::size_t kept = sur.kept_index(x);

    DerivativeCheck out;
    out.analytic = table.noisy[s][kept] - sol.rate;
    auto central = [&](double step) {
        return (detail::perturbed_rate(model, s, x, d, step) -
                detail::perturbed_rate(model, s, x, d, -step)) /
               (2.0 * step);
    };
    out.numeric = central(h);
    if (std::abs(out.numeric - out.analytic) > 1e-3)
        out.numeric = (4.0 * central(h / 2) - out.numeric) / 3.0;
    return out;
}

}  // namespace nlc
