#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "nlc/model.hpp"
#include "nlc/numerics.hpp"

/*
 * Fair coin flips observed through an erasure channel, Hamming distortion on
 * the hidden bits. Everything in this header is specialized to that model:
 * closed forms for the rate-distortion function and its dispersions,
 * blocklength-resolved converse and achievability bounds, and the
 * rate-vs-blocklength curve built from them.
 *
 * Two distortion accountings share the combinatorics:
 *  - true accounting ("noisy"): an erased position costs a fair coin flip
 *    against the reproduced bit, so the erased mismatch count is random;
 *  - surrogate accounting: an erased position costs exactly 1/2, the
 *    conditional mean of its true cost given the observation.
 * Erasure patterns enter through binomial weights, codeword performance
 * through partial binomial sums (Hamming balls). All mass computations run
 * in log domain; distortion thresholds are floored in exact rational
 * arithmetic so lattice boundaries never depend on rounding.
 */

namespace nlc {

struct BesParams {
    Rational delta{0, 1};  // erasure probability
    Rational d{0, 1};      // distortion threshold, delta/2 <= d <= 1/2
    double eps = 0.1;      // excess-distortion probability target
};

inline void validate_bes(const BesParams& p) {
    if (p.delta < Rational(0) || p.delta > Rational(1))
        throw validation_error("bes: delta must lie in [0, 1]");
    if (Rational(2) * p.d < p.delta || p.d > Rational(1, 2))
        throw validation_error("bes: d must satisfy delta/2 <= d <= 1/2");
    if (!(p.eps > 0.0) || !(p.eps < 1.0))
        throw validation_error("bes: eps must lie in (0, 1)");
}

// R(d) = (1 - delta) (ln 2 - h(theta)) with theta = (d - delta/2)/(1 - delta),
// in nats per source letter.
inline double bes_rate(const BesParams& p) {
    validate_bes(p);
    double delta = p.delta.to_double();
    if (p.delta == Rational(1)) return 0.0;
    double theta = (p.d - p.delta / Rational(2)).to_double() / (1.0 - delta);
    return (1.0 - delta) * (std::numbers::ln2 - binary_entropy(theta));
}

// lambda* = -R'(d) = ln((1 - delta/2 - d)/(d - delta/2)).
// +inf at the d = delta/2 corner where the rate curve has infinite slope.
inline double bes_lambda_star(const BesParams& p) {
    validate_bes(p);
    if (p.delta == Rational(1)) return 0.0;
    Rational lo = p.d - p.delta / Rational(2);
    Rational hi = Rational(1) - p.delta / Rational(2) - p.d;
    if (lo == Rational(0)) return kPosInf;
    return std::log(hi.to_double()) - std::log(lo.to_double());
}

struct BesDispersions {
    double lambda_star = 0.0;
    double v_surrogate = 0.0;  // variance of the surrogate tilted information
    double v_noisy = 0.0;      // adds the residual uncertainty of erased bits
};

// v_surrogate = delta (1-delta) ln^2 cosh(lambda*/2),
// v_noisy     = v_surrogate + (delta/4) lambda*^2.
inline BesDispersions bes_dispersions(const BesParams& p) {
    validate_bes(p);
    BesDispersions out;
    out.lambda_star = bes_lambda_star(p);
    double delta = p.delta.to_double();
    if (!std::isfinite(out.lambda_star)) {
        out.v_surrogate = delta > 0.0 ? kPosInf : 0.0;
        out.v_noisy = delta > 0.0 ? kPosInf : 0.0;
        return out;
    }
    double half = 0.5 * out.lambda_star;
    // ln cosh(x) = x - ln 2 + ln(1 + e^{-2x}) stays finite where cosh overflows
    double lncosh = half > 30.0 ? half - std::numbers::ln2 + std::log1p(std::exp(-2.0 * half))
                                : std::log(std::cosh(half));
    out.v_surrogate = delta * (1.0 - delta) * lncosh * lncosh;
    out.v_noisy = out.v_surrogate + 0.25 * delta * out.lambda_star * out.lambda_star;
    return out;
}

namespace detail {

// (1 - e^lp)^{e^log_m} with exact endpoints; lp <= 0 is a log probability.
inline double bes_pow_one_minus(double lp, double log_m) {
    if (lp == kNegInf) return 1.0;
    if (lp >= 0.0) return 0.0;
    double expo;
    double m = std::exp(std::min(log_m, 37.0));
    if (log_m < 37.0) {
        expo = m * std::log1p(-std::exp(lp));
    } else {
        // exponent = -exp(log_m + ln(-log1p(-p))) survives m far beyond 2^63
        double l1p = lp < -36.0 ? lp : std::log(-std::log1p(-std::exp(lp)));
        double e = log_m + l1p;
        expo = e > 709.0 ? kNegInf : -std::exp(e);
    }
    return expo < -745.0 ? 0.0 : std::exp(expo);
}

// [1 - e^{log_m + lp}]^+, the clamped converse bracket.
inline double bes_bracket(double lp, double log_m) {
    if (lp == kNegInf) return 1.0;
    double e = log_m + lp;
    return e >= 0.0 ? 0.0 : -std::expm1(e);
}

/*
 * Per-(k, delta, d) tables shared by every bound evaluation, so code-size
 * searches pay the combinatorial setup once. Erasure counts with weight
 * below the cutoffs are dropped; the dropped mass is carried separately and
 * always charged in the direction that keeps each bound valid.
 */
struct BesTables {
    long long k = 0;
    long long kd_floor = 0;      // floor(k d)
    long long conv_j_limit = 0;  // floor(2 k d)
    std::vector<long long> j;    // kept erasure counts, ascending
    std::vector<double> wj;      // erasure-pattern probabilities, aligned with j
    std::vector<double> lp_sur;  // ln P[uniform codeword lands within floor(kd - j/2)]
    double dropped = 0.0;        // erasure mass outside the kept range
    struct MixRow {
        long long m_lo = 0;           // first kept erased-mismatch count
        std::vector<double> wm;       // Binomial(j, 1/2) masses over the window
        std::vector<double> lp;       // ball log-probabilities, nonincreasing in m
        std::vector<double> wm_tail;  // wm_tail[i] = sum of wm[i..]; one slot past the end
        double dropped = 0.0;
    };
    std::vector<MixRow> mix;  // aligned with j
};

inline BesTables build_bes_tables(const BesParams& p, long long k) {
    validate_bes(p);
    if (k < 1) throw validation_error("bes: block length must be >= 1");
    BesTables t;
    t.k = k;
    Rational kd = Rational(k) * p.d;
    t.kd_floor = kd.floor();
    t.conv_j_limit = (Rational(2) * kd).floor();

    double delta = p.delta.to_double();
    double log_delta = delta > 0.0 ? std::log(delta) : kNegInf;
    double log_keep = delta < 1.0 ? std::log1p(-delta) : kNegInf;
    constexpr double j_cutoff = -80.0;
    constexpr double m_cutoff = -60.0;

    std::unordered_map<long long, std::vector<double>> prefix;
    auto ball = [&](long long n, long long r) -> double {
        if (r < 0) return kNegInf;
        if (r >= n) return 0.0;
        auto it = prefix.find(n);
        if (it == prefix.end()) {
            long long rmax = std::min(n, t.kd_floor);
            std::vector<double> pre(static_cast<std::size_t>(rmax) + 1);
            double acc = kNegInf, lb = 0.0;  // lb = ln C(n, i)
            for (long long i = 0; i <= rmax; ++i) {
                acc = log_add(acc, lb);
                pre[static_cast<std::size_t>(i)] = acc;
                lb += std::log(double(n - i)) - std::log(double(i + 1));
            }
            it = prefix.emplace(n, std::move(pre)).first;
        }
        return it->second[static_cast<std::size_t>(r)] - double(n) * std::numbers::ln2;
    };

    for (long long j = 0; j <= k; ++j) {
        double lw = log_binom(k, j);
        lw += j > 0 ? double(j) * log_delta : 0.0;
        lw += k - j > 0 ? double(k - j) * log_keep : 0.0;
        if (lw <= j_cutoff) {
            t.dropped += std::exp(lw);
            continue;
        }
        t.j.push_back(j);
        t.wj.push_back(std::exp(lw));
        long long r_sur = (kd - Rational(j, 2)).floor();
        t.lp_sur.push_back(ball(k - j, r_sur));

        BesTables::MixRow row;
        double lwm = -double(j) * std::numbers::ln2;  // ln C(j, 0) 2^{-j}
        bool started = false;
        for (long long m = 0; m <= j; ++m) {
            if (lwm > m_cutoff) {
                if (!started) {
                    row.m_lo = m;
                    started = true;
                }
                row.wm.push_back(std::exp(lwm));
                row.lp.push_back(ball(k - j, t.kd_floor - m));
            } else {
                row.dropped += std::exp(lwm);
            }
            if (m < j) lwm += std::log(double(j - m)) - std::log(double(m + 1));
        }
        row.wm_tail.resize(row.wm.size() + 1, 0.0);
        for (std::size_t i = row.wm.size(); i-- > 0;)
            row.wm_tail[i] = row.wm_tail[i + 1] + row.wm[i];
        t.mix.push_back(std::move(row));
    }
    return t;
}

inline void validate_log_m(double log_m) {
    if (std::isnan(log_m) || log_m < 0.0)
        throw validation_error("bes: ln M must be >= 0");
}

}  // namespace detail

/*
 * One blocklength of the erased-coin problem with the setup tables built
 * once. All bounds take ln M so code sizes beyond any integer type remain
 * representable; each is nonincreasing in ln M.
 */
class BesBlock {
  public:
    BesBlock(const BesParams& params, long long k)
        : params_(params), tables_(detail::build_bes_tables(params, k)) {
        validate_bes(params_);
    }

    const BesParams& params() const { return params_; }
    long long k() const { return tables_.k; }

    // Surrogate-accounting converse: erasure patterns with up to floor(2kd)
    // erasures contribute [1 - M 2^{-(k-j)} binosum(k-j, floor(kd - j/2))]^+.
    double converse_log(double log_m) const {
        detail::validate_log_m(log_m);
        double acc = 0.0;
        for (std::size_t i = 0; i < tables_.j.size(); ++i) {
            if (tables_.j[i] > tables_.conv_j_limit) break;
            acc += tables_.wj[i] * detail::bes_bracket(tables_.lp_sur[i], log_m);
        }
        return acc;
    }

    // Surrogate-accounting random-coding bound: each erasure pattern misses
    // all M uniform codewords with probability (1 - ball)^M.
    double achievability_log(double log_m) const {
        detail::validate_log_m(log_m);
        double acc = tables_.dropped;  // unaccounted patterns counted as failures
        for (std::size_t i = 0; i < tables_.j.size(); ++i)
            acc += tables_.wj[i] * detail::bes_pow_one_minus(tables_.lp_sur[i], log_m);
        return std::min(acc, 1.0);
    }

    // True-accounting converse: conditioned on j erasures and m of them
    // mismatching (m ~ Binomial(j, 1/2), independent of any code choice),
    // no code can cover the remaining coordinates better than M balls of
    // radius floor(kd) - m.
    double converse_noisy_log(double log_m) const {
        detail::validate_log_m(log_m);
        double acc = 0.0;
        for (std::size_t i = 0; i < tables_.j.size(); ++i) {
            const auto& row = tables_.mix[i];
            double inner = 0.0;
            for (std::size_t idx = 0; idx < row.wm.size(); ++idx)
                inner += row.wm[idx] * detail::bes_bracket(row.lp[idx], log_m);
            acc += tables_.wj[i] * inner;
        }
        return acc;
    }

    // True-accounting achievability. Random coding gives
    //   eps <= E[(1 - q)^M] <= P[q < gamma/M] + e^{-gamma}
    // for every gamma > 0, where q is the ball probability at radius
    // floor(kd) - m. gamma = max(k, 10) keeps the additive term negligible
    // at every blocklength while costing only ln(gamma)/k in rate.
    double achievability_noisy_log(double log_m) const {
        detail::validate_log_m(log_m);
        double gamma = double(std::max<long long>(tables_.k, 10));
        double thr = std::log(gamma) - log_m;
        double acc = std::exp(-gamma) + tables_.dropped;
        for (std::size_t i = 0; i < tables_.j.size(); ++i) {
            const auto& row = tables_.mix[i];
            // lp is nonincreasing in m, so the failing set is a suffix
            auto it = std::partition_point(row.lp.begin(), row.lp.end(),
                                           [&](double v) { return v >= thr; });
            std::size_t idx = static_cast<std::size_t>(it - row.lp.begin());
            acc += tables_.wj[i] * (row.wm_tail[idx] + row.dropped);
        }
        return std::min(acc, 1.0);
    }

  private:
    BesParams params_;
    detail::BesTables tables_;
};

inline double bes_converse(const BesParams& p, long long k, long long M) {
    if (M < 1) throw validation_error("bes_converse: M must be >= 1");
    return BesBlock(p, k).converse_log(std::log(double(M)));
}

inline double bes_achievability(const BesParams& p, long long k, long long M) {
    if (M < 1) throw validation_error("bes_achievability: M must be >= 1");
    return BesBlock(p, k).achievability_log(std::log(double(M)));
}

inline double bes_converse_noisy(const BesParams& p, long long k, long long M) {
    if (M < 1) throw validation_error("bes_converse_noisy: M must be >= 1");
    return BesBlock(p, k).converse_noisy_log(std::log(double(M)));
}

inline double bes_achievability_noisy(const BesParams& p, long long k, long long M) {
    if (M < 1) throw validation_error("bes_achievability_noisy: M must be >= 1");
    return BesBlock(p, k).achievability_noisy_log(std::log(double(M)));
}

/*
 * One blocklength row of the rate-vs-blocklength tradeoff. Rates are in nats
 * per source letter. Gaussian columns are R(d) + sqrt(v/k) Q^{-1}(eps) with
 * the blocklength correction absent or equal to ln(k)/(2k); the true
 * accounting uses v_noisy, the surrogate accounting v_surrogate. Searches
 * that cannot reach eps leave their column NaN and record why in note.
 */
struct BesCurveRow {
    long long k = 0;
    double rate_converse = std::numeric_limits<double>::quiet_NaN();
    double rate_achievability = std::numeric_limits<double>::quiet_NaN();
    double rate_gaussian_0 = std::numeric_limits<double>::quiet_NaN();
    double rate_gaussian_logk = std::numeric_limits<double>::quiet_NaN();
    double rate_rd = std::numeric_limits<double>::quiet_NaN();
    double sur_rate_converse = std::numeric_limits<double>::quiet_NaN();
    double sur_rate_achievability = std::numeric_limits<double>::quiet_NaN();
    double sur_rate_gaussian_0 = std::numeric_limits<double>::quiet_NaN();
    double sur_rate_gaussian_logk = std::numeric_limits<double>::quiet_NaN();
    std::string note;
};

namespace detail {

// Largest ln M at which `f` still exceeds eps (converse search) or smallest
// at which it drops to eps (achievability search); f is nonincreasing.
// Refines to exact integer code sizes whenever they are countable.
struct BesSearch {
    bool ok = false;
    double log_m = 0.0;
    std::string why;
};

inline BesSearch bes_search_log_m(const std::function<double(double)>& f, double eps,
                                  double hi, bool converse) {
    BesSearch out;
    // converse: rate = ln(1 + max{M : f(M) > eps})/k; vacuous bounds give M=1.
    // achievability: rate = ln(min{M : f(M) <= eps})/k.
    if (f(0.0) <= eps) {
        out.ok = true;
        out.log_m = 0.0;
        return out;
    }
    if (f(hi) > eps) {
        out.why = converse ? "converse exceeds eps at the search cap"
                           : "achievability exceeds eps at the search cap";
        return out;
    }
    double lo = 0.0, up = hi;
    for (int it = 0; it < 96; ++it) {
        double mid = 0.5 * (lo + up);
        if (f(mid) > eps)
            lo = mid;
        else
            up = mid;
    }
    double crossing = 0.5 * (lo + up);
    if (crossing < 43.0) {
        // countable regime: walk to the exact integer threshold
        long long m = std::max<long long>(1, static_cast<long long>(std::exp(crossing)) - 2);
        long long guard = 0;
        while (f(std::log(double(m + 1))) > eps && guard++ < 4000000) ++m;
        // m is now the largest code size still above eps (m may be 0 steps in)
        while (m > 1 && f(std::log(double(m))) <= eps) --m;
        long long m_cross = f(std::log(double(m))) > eps ? m + 1 : m;
        out.log_m = std::log(double(converse ? m + 1 : m_cross));
        // both conventions coincide: 1 + max{f > eps} == min{f <= eps}
        out.ok = true;
        return out;
    }
    out.ok = true;
    out.log_m = crossing;
    return out;
}

}  // namespace detail

// Log-spaced blocklength grid; always contains the endpoints and the round
// decades used by the reference figures.
inline std::vector<long long> bes_default_grid(long long k_min = 10, long long k_max = 5000,
                                               int points = 40) {
    if (k_min < 1 || k_max < k_min || points < 2)
        throw validation_error("bes_default_grid: need 1 <= k_min <= k_max, points >= 2");
    std::vector<long long> ks;
    double lo = std::log(double(k_min)), hi = std::log(double(k_max));
    for (int i = 0; i < points; ++i) {
        double t = lo + (hi - lo) * double(i) / double(points - 1);
        ks.push_back(llround(std::exp(t)));
    }
    for (long long anchor : {200LL, 500LL, 1000LL, 2000LL})
        if (anchor >= k_min && anchor <= k_max) ks.push_back(anchor);
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
}

inline std::vector<BesCurveRow> bes_curve(const BesParams& p, std::vector<long long> ks) {
    validate_bes(p);
    if (ks.empty()) throw validation_error("bes_curve: no blocklengths given");
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    double rate = bes_rate(p);
    BesDispersions disp = bes_dispersions(p);
    double q = gaussian_q_inv(p.eps);
    std::vector<BesCurveRow> rows;
    rows.reserve(ks.size());
    for (long long k : ks) {
        BesCurveRow row;
        row.k = k;
        try {
            BesBlock block(p, k);
            double hi = 1.2 * double(k) * std::numbers::ln2 + 6.0;
            auto run = [&](double (BesBlock::*fn)(double) const, bool converse,
                           double& slot) {
                auto res = detail::bes_search_log_m(
                    [&](double lm) { return (block.*fn)(lm); }, p.eps, hi, converse);
                if (res.ok)
                    slot = res.log_m / double(k);
                else
                    row.note += (row.note.empty() ? "" : "; ") + res.why;
            };
            run(&BesBlock::converse_noisy_log, true, row.rate_converse);
            run(&BesBlock::achievability_noisy_log, false, row.rate_achievability);
            run(&BesBlock::converse_log, true, row.sur_rate_converse);
            run(&BesBlock::achievability_log, false, row.sur_rate_achievability);
            row.rate_rd = rate;
            double dk = double(k);
            row.rate_gaussian_0 = rate + std::sqrt(disp.v_noisy / dk) * q;
            row.rate_gaussian_logk = row.rate_gaussian_0 + std::log(dk) / (2.0 * dk);
            row.sur_rate_gaussian_0 = rate + std::sqrt(disp.v_surrogate / dk) * q;
            row.sur_rate_gaussian_logk = row.sur_rate_gaussian_0 + std::log(dk) / (2.0 * dk);
        } catch (const std::exception& e) {
            row.note = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace nlc
