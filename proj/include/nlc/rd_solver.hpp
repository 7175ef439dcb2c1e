#pragma once

/*
 * Rate-distortion solver for the surrogate problem: alternating
 * minimization of I(X;Z) + lambda E[dbar(X,Z)] over test channels, with a
 * certified duality gap, plus the outer bisection that hits a target
 * distortion and the reference-tilted variants used by the bounds.
 */

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlc/model.hpp"
#include "nlc/numerics.hpp"

namespace nlc {

struct TiltedSolution {
    double rate = 0.0;         // I(X;Z*) in nats
    double distortion = 0.0;   // E[dbar(X,Z*)]
    double lambda_star = 0.0;  // slope parameter, nats per distortion unit
    Channel kernel;            // P_Z*|X rows indexed like the surrogate x
    Distribution marginal;     // P_Z*
};

struct SolverOptions {
    double tol = 1e-10;        // duality-gap stopping threshold, nats
    int max_iterations = 100000;
    double support_clamp = 1e-14;  // marginal mass below this is zeroed
};

namespace detail {

// mutual information of (P_X, kernel) against an explicit output marginal
inline double kernel_rate(const Distribution& px, const Channel& q,
                          const Distribution& marginal) {
    double acc = 0.0;
    for (std::size_t x = 0; x < px.size(); ++x)
        for (std::size_t z = 0; z < marginal.size(); ++z) {
            double v = q(x, z);
            if (v > 0.0) acc += px[x] * v * std::log(v / marginal[z]);
        }
    return acc;
}

inline double kernel_distortion(const SurrogateModel& sur, const Channel& q) {
    double acc = 0.0;
    for (std::size_t x = 0; x < sur.x_size(); ++x)
        for (std::size_t z = 0; z < sur.z_size(); ++z)
            if (q(x, z) > 0.0) acc += sur.observable[x] * q(x, z) * sur.dbar(x, z);
    return acc;
}

// rate-0 solution: point mass on the reproduction achieving d_max
inline TiltedSolution degenerate_solution(const SurrogateModel& sur) {
    std::size_t best = 0;
    double best_d = kPosInf;
    for (std::size_t z = 0; z < sur.z_size(); ++z) {
        double acc = 0.0;
        for (std::size_t x = 0; x < sur.x_size(); ++x)
            acc += sur.observable[x] * sur.dbar(x, z);
        if (acc < best_d) {
            best_d = acc;
            best = z;
        }
    }
    TiltedSolution sol;
    sol.rate = 0.0;
    sol.distortion = best_d;
    sol.lambda_star = 0.0;
    sol.marginal.p.assign(sur.z_size(), 0.0);
    sol.marginal.p[best] = 1.0;
    sol.kernel.rows.assign(sur.x_size(), sol.marginal.p);
    return sol;
}

struct BaState {
    std::vector<double> marginal;
    double gap = kPosInf;
    int iterations = 0;
};

/*
 * One full alternating-minimization run at fixed lambda. The stopping rule
 * is the linearization bound on the marginal objective
 *   g(r) = sum_x P_X(x) (-ln sum_z r(z) e^{-lambda dbar(x,z)}),
 * whose gradient statistic c(z) = sum_x P_X(x) e^{-lambda dbar(x,z)} / m(x)
 * certifies g(r) - opt <= max_z c(z) - 1. On the support c(z) must also be
 * 1 at the fixed point, which the marginal-stationarity part of the test
 * enforces so downstream per-z identities hold to near machine precision.
 */
inline BaState ba_solve(const SurrogateModel& sur, double lambda,
                        const SolverOptions& opt, std::vector<double> r) {
    const std::size_t nx = sur.x_size(), nz = sur.z_size();
    std::vector<std::vector<double>> w(nx, std::vector<double>(nz));
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t z = 0; z < nz; ++z) {
            double d = sur.dbar(x, z);
            w[x][z] = d == kPosInf ? 0.0 : std::exp(-lambda * d);
        }

    if (r.size() != nz) r.assign(nz, 1.0 / double(nz));
    std::vector<double> m(nx), c(nz);
    BaState st;
    bool converged = false;
    double worst = kPosInf;
    const double support_floor = 1e-9;  // marginal mass that must satisfy c = 1
    for (int it = 1; it <= opt.max_iterations; ++it) {
        for (std::size_t x = 0; x < nx; ++x) {
            double acc = 0.0;
            for (std::size_t z = 0; z < nz; ++z) acc += r[z] * w[x][z];
            if (!(acc > 0.0))
                throw std::runtime_error(
                    "solver: observation symbol '" + sur.observation_symbols[x] +
                    "' has no reachable reproduction at lambda = " + std::to_string(lambda));
            m[x] = acc;
        }
        double cmax = 0.0, resid = 0.0;
        for (std::size_t z = 0; z < nz; ++z) {
            double acc = 0.0;
            for (std::size_t x = 0; x < nx; ++x) acc += sur.observable[x] * w[x][z] / m[x];
            c[z] = acc;
            cmax = std::max(cmax, acc);
            if (r[z] > support_floor) resid = std::max(resid, std::abs(acc - 1.0));
        }
        st.gap = cmax - 1.0;
        st.iterations = it;
        worst = std::max(st.gap, resid);
        if (st.gap <= opt.tol && resid <= std::max(opt.tol, 1e-12)) {
            converged = true;
            break;
        }

        double total = 0.0;
        for (std::size_t z = 0; z < nz; ++z) {
            r[z] *= c[z];
            if (r[z] < opt.support_clamp) r[z] = 0.0;
            total += r[z];
        }
        for (std::size_t z = 0; z < nz; ++z) r[z] /= total;
    }
    if (!converged)
        throw std::runtime_error("solver: no convergence after " +
                                 std::to_string(opt.max_iterations) +
                                 " iterations, residual " + std::to_string(worst));
    st.marginal = std::move(r);
    return st;
}

inline TiltedSolution solution_from_marginal(const SurrogateModel& sur, double lambda,
                                             const std::vector<double>& r) {
    const std::size_t nx = sur.x_size(), nz = sur.z_size();
    TiltedSolution sol;
    sol.lambda_star = lambda;
    sol.kernel.rows.assign(nx, std::vector<double>(nz, 0.0));
    for (std::size_t x = 0; x < nx; ++x) {
        double m = 0.0;
        for (std::size_t z = 0; z < nz; ++z) {
            double d = sur.dbar(x, z);
            if (r[z] > 0.0 && d != kPosInf) sol.kernel.rows[x][z] = r[z] * std::exp(-lambda * d);
            m += sol.kernel.rows[x][z];
        }
        for (std::size_t z = 0; z < nz; ++z) sol.kernel.rows[x][z] /= m;
    }
    sol.marginal.p.assign(nz, 0.0);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t z = 0; z < nz; ++z)
            sol.marginal.p[z] += sur.observable[x] * sol.kernel.rows[x][z];
    sol.rate = kernel_rate(sur.observable, sol.kernel, sol.marginal);
    sol.distortion = kernel_distortion(sur, sol.kernel);
    return sol;
}

}  // namespace detail

inline TiltedSolution solve_slope(const SurrogateModel& sur, double lambda,
                                  const SolverOptions& opt = {}) {
    if (!(lambda >= 0.0)) throw validation_error("solve_slope: lambda must be >= 0");
    if (lambda == 0.0) return detail::degenerate_solution(sur);
    auto st = detail::ba_solve(sur, lambda, opt, {});
    return detail::solution_from_marginal(sur, lambda, st.marginal);
}

/*
 * Outer bisection on lambda so the solved distortion hits d. Distortion is
 * monotone nonincreasing in lambda, so a doubling bracket followed by
 * bisection converges; the marginal warm-starts successive solves.
 */
inline TiltedSolution solve_distortion(const SurrogateModel& sur, double d,
                                       const SolverOptions& opt = {},
                                       bool permissive = false) {
    double dmin = sur.d_min(), dmax = sur.d_max();
    if (d >= dmax) {
        if (permissive || d == dmax) return detail::degenerate_solution(sur);
        throw validation_error("solve_distortion: d >= d_max = " + std::to_string(dmax));
    }
    if (d <= dmin)
        throw validation_error("solve_distortion: d <= d_min = " + std::to_string(dmin));

    std::vector<double> warm;
    // multiplicative updates cannot revive a clamped-out z, and the optimal
    // support can grow again as lambda moves down, so re-seed a little mass
    auto reseeded = [&] {
        std::vector<double> r = warm;
        for (double& v : r) v = 0.999 * v + 0.001 / double(sur.z_size());
        return r;
    };
    auto distortion_at = [&](double lambda) {
        auto st = detail::ba_solve(sur, lambda, opt, reseeded());
        warm = st.marginal;
        double acc = 0.0;
        for (std::size_t x = 0; x < sur.x_size(); ++x) {
            double m = 0.0, dm = 0.0;
            for (std::size_t z = 0; z < sur.z_size(); ++z) {
                double dd = sur.dbar(x, z);
                if (dd == kPosInf || warm[z] == 0.0) continue;
                double t = warm[z] * std::exp(-lambda * dd);
                m += t;
                dm += t * dd;
            }
            acc += sur.observable[x] * dm / m;
        }
        return acc;
    };

    double lo = 0.0, hi = 1.0;
    int doublings = 0;
    while (distortion_at(hi) > d) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 60)
            throw validation_error("solve_distortion: lambda bracket failed; d too close to d_min");
    }
    while (hi - lo > 1e-11 * std::max(1.0, hi)) {
        double mid = 0.5 * (lo + hi);
        if (distortion_at(mid) > d)
            lo = mid;
        else
            hi = mid;
    }
    double lambda = 0.5 * (lo + hi);
    auto st = detail::ba_solve(sur, lambda, opt, reseeded());
    return detail::solution_from_marginal(sur, lambda, st.marginal);
}

// -ln E[exp(-lambda dbar(x, Zbar))] against an explicit reference, log domain
inline double generalized_tilted_info(const SurrogateModel& sur,
                                      const Distribution& reference, std::size_t x,
                                      double lambda) {
    if (x >= sur.x_size())
        throw validation_error("generalized_tilted_info: x index out of range");
    if (reference.size() != sur.z_size())
        throw validation_error("generalized_tilted_info: reference size mismatch");
    double acc = kNegInf;
    for (std::size_t z = 0; z < sur.z_size(); ++z) {
        if (reference[z] <= 0.0) continue;
        double d = sur.dbar(x, z);
        if (d == kPosInf) continue;
        acc = log_add(acc, std::log(reference[z]) - lambda * d);
    }
    return -acc;  // +inf when every reference-mass reproduction has infinite dbar
}

/*
 * min D(P_Z|X || reference | P_X) subject to E[dbar] <= d. The optimizer
 * tilts the fixed reference, so a single bisection on lambda suffices and
 * no marginal update is involved.
 */
inline double generalized_objective(const SurrogateModel& sur,
                                    const Distribution& reference, double d) {
    if (reference.size() != sur.z_size())
        throw validation_error("generalized_objective: reference size mismatch");
    validate_distribution("reference", reference);

    double dmin_ref = 0.0;
    for (std::size_t x = 0; x < sur.x_size(); ++x) {
        double best = kPosInf;
        for (std::size_t z = 0; z < sur.z_size(); ++z)
            if (reference[z] > 0.0) best = std::min(best, sur.dbar(x, z));
        if (best == kPosInf)
            throw validation_error(
                "generalized_objective: x has no finite distortion on the reference support");
        dmin_ref += sur.observable[x] * best;
    }
    if (d < dmin_ref)
        throw validation_error("generalized_objective: infeasible, d < " +
                               std::to_string(dmin_ref) + " on the reference support");

    auto mean_distortion = [&](double lambda) {
        double acc = 0.0;
        for (std::size_t x = 0; x < sur.x_size(); ++x) {
            double m = 0.0, dm = 0.0;
            for (std::size_t z = 0; z < sur.z_size(); ++z) {
                double dd = sur.dbar(x, z);
                if (reference[z] <= 0.0 || dd == kPosInf) continue;
                double t = reference[z] * std::exp(-lambda * dd);
                m += t;
                dm += t * dd;
            }
            acc += sur.observable[x] * dm / m;
        }
        return acc;
    };

    if (mean_distortion(0.0) <= d) return 0.0;
    double lo = 0.0, hi = 1.0;
    int doublings = 0;
    while (mean_distortion(hi) > d) {
        lo = hi;
        hi *= 2.0;
        if (++doublings > 60)
            throw validation_error("generalized_objective: lambda bracket failed");
    }
    while (hi - lo > 1e-12 * std::max(1.0, hi)) {
        double mid = 0.5 * (lo + hi);
        if (mean_distortion(mid) > d)
            lo = mid;
        else
            hi = mid;
    }
    double lambda = 0.5 * (lo + hi);
    double value = 0.0;
    for (std::size_t x = 0; x < sur.x_size(); ++x)
        value += sur.observable[x] * generalized_tilted_info(sur, reference, x, lambda);
    return value - lambda * d;
}

// surrogate tilted information j_X(x, d) = J_{Z*}(x, lambda*) - lambda* d
inline double surrogate_tilted_info(const SurrogateModel& sur, const TiltedSolution& sol,
                                    std::size_t x, double d) {
    return generalized_tilted_info(sur, sol.marginal, x, sol.lambda_star) -
           sol.lambda_star * d;
}

/*
 * E[exp(lambda* d - lambda* dbar(X,z) + j_X(X,d))], which is at most 1 for
 * every z with equality on the support of the optimal marginal. Exposed
 * because it certifies optimality of a solved tilted solution.
 */
inline double csiszar_expectation(const SurrogateModel& sur, const TiltedSolution& sol,
                                  std::size_t z, double d) {
    double acc = 0.0;
    for (std::size_t x = 0; x < sur.x_size(); ++x) {
        double dd = sur.dbar(x, z);
        if (dd == kPosInf) continue;
        double jx = surrogate_tilted_info(sur, sol, x, d);
        acc += sur.observable[x] *
               std::exp(sol.lambda_star * d - sol.lambda_star * dd + jx);
    }
    return acc;
}

}  // namespace nlc
