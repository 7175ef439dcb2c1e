#pragma once

/*
 * Finite-blocklength bounds on the excess-distortion probability of a code
 * with M reproduction blocks. A block instance fixes the per-letter model,
 * the block length k, a per-letter distortion budget d (exact rational) and
 * a target excess probability eps.
 *
 * The bounds evaluated here:
 *   - achievability_random_coding: exact excess probability of random coding
 *     with the optimal encoder, E int_0^1 prod_i P[pi(X, Z_i) > t] dt, where
 *     pi(x, z) = P[d(S, z) > d | X = x] on blocks.
 *   - converse_bound: E inf_z P[info(X; z) + lambda (d(S, z) - d) >= ln M +
 *     gamma | X] - e^{-gamma} for a backward test channel; lambda = +inf
 *     selects the indicator form P[d(S,z) > d or info >= ln M + gamma].
 *   - achievability_shannon_style: P[d(S,Z) > d] + P[info(X;Z) > ln M -
 *     gamma] + e^{-e^gamma} for a forward test channel.
 *   - achievability_tilted: divergence-tilted bound built from conditional
 *     type-uniform codeword kernels; needs the block distortion to be a
 *     deterministic function of the source and observation blocks, which the
 *     kernel construction enforces.
 *
 * Exact evaluation enumerates blocks and convolves per-letter laws with
 * rational atoms; every enumeration and atom count is capped, and ops either
 * fall back to seeded Monte Carlo (achievability estimates, which report a
 * standard error) or refuse (converse, where sampling would forfeit the
 * bound's direction).
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "model.hpp"
#include "numerics.hpp"
#include "rd_solver.hpp"

namespace nlc {

struct BlockSpec {
    NoisySourceModel base;
    long long k = 1;
    Rational d;
    double eps = 0.0;
};

inline void validate_block(const BlockSpec& b) {
    validate(b.base);
    if (b.k < 1) throw validation_error("BlockSpec: k must be at least 1");
    if (b.k > 10000000) throw validation_error("BlockSpec: k is implausibly large");
    if (b.d < Rational(0)) throw validation_error("BlockSpec: d must be nonnegative");
    if (!(b.eps >= 0.0 && b.eps <= 1.0))
        throw validation_error("BlockSpec: eps must lie in [0,1]");
}

// probability with provenance: exact values carry a zero standard error
struct ProbEstimate {
    double value = 0.0;
    double std_error = 0.0;
    bool sampled = false;

    operator double() const { return value; }
};

// exact convolution gave up: support or denominators grew past the cap
struct grid_overflow : std::runtime_error {
    explicit grid_overflow(const std::string& what) : std::runtime_error(what) {}
};

struct OneShotOptions {
    std::size_t x_cap = 4096;          // largest exact observation-block count
    std::size_t z_cap = 4096;          // largest exact reproduction-block count
    std::size_t pair_cap = 1u << 22;   // largest exact x-count * z-count product
    std::size_t atom_cap = 1u << 20;   // convolution support cap
    std::size_t mc_samples = 200000;   // per-pair tail sampling
    std::size_t mc_x_samples = 2000;   // sampled observation blocks
    std::uint64_t seed = 1234567;
    long long bracket_cap = 1LL << 20;  // largest code size tried in searches
    double work_cap = 1e8;              // rough op-count ceiling for exact paths
};

/*
 * Law of a sum of independent per-letter variables with rational atoms.
 * Layer j is the exact law of the first j letters; letters with infinite
 * values are tracked as a separate mass that always exceeds any threshold.
 */
class TailDP {
  public:
    explicit TailDP(std::size_t atom_cap = 1u << 20) : cap_(atom_cap) {
        layers_.push_back({{Rational(0), 1.0}});
        infinite_.push_back(0.0);
    }

    void extend(const std::vector<std::pair<Rational, double>>& atoms,
                double infinite_mass = 0.0) {
        double total = infinite_mass;
        for (const auto& [v, p] : atoms) {
            (void)v;
            if (!(p >= 0.0)) throw validation_error("TailDP: negative atom probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw validation_error("TailDP: letter law has total mass " +
                                   std::to_string(total));
        const auto& prev = layers_.back();
        double prev_inf = infinite_.back();
        std::map<Rational, double> next;
        try {
            for (const auto& [pv, pp] : prev)
                for (const auto& [av, ap] : atoms) {
                    if (pp * ap == 0.0) continue;
                    next[pv + av] += pp * ap;
                    if (next.size() > cap_)
                        throw grid_overflow("TailDP: support exceeded cap of " +
                                            std::to_string(cap_));
                }
        } catch (const std::overflow_error&) {
            throw grid_overflow("TailDP: rational sums exceeded 64-bit range");
        }
        std::vector<std::pair<Rational, double>> flat(next.begin(), next.end());
        layers_.push_back(std::move(flat));
        infinite_.push_back(prev_inf + (1.0 - prev_inf) * infinite_mass);
    }

    std::size_t letters() const { return layers_.size() - 1; }
    const std::vector<std::pair<Rational, double>>& layer(std::size_t j) const {
        if (j >= layers_.size()) throw std::out_of_range("TailDP: no such layer");
        return layers_[j];
    }
    double infinite_mass(std::size_t j) const {
        if (j >= infinite_.size()) throw std::out_of_range("TailDP: no such layer");
        return infinite_[j];
    }

    // P[sum > t], infinite letters always count as exceeding
    double prob_above(const Rational& t) const {
        double acc = infinite_.back();
        for (const auto& [v, p] : layers_.back())
            if (v > t) acc += p;
        return acc;
    }

    // P[lo <= sum <= hi] over the finite part
    double prob_between(const Rational& lo, const Rational& hi) const {
        double acc = 0.0;
        for (const auto& [v, p] : layers_.back())
            if (v >= lo && v <= hi) acc += p;
        return acc;
    }

    /*
     * P[sum + shift > t] with a real threshold. `widen` picks the error
     * direction at the boundary: true may overcount (safe inside an upper
     * bound), false may undercount (safe inside a lower bound).
     */
    double prob_above_real(double shift, double t, bool widen) const {
        if (t == kPosInf) return infinite_.back() > 0.0 ? infinite_.back() : 0.0;
        if (t == kNegInf) return 1.0;
        double slack = 1e-12 * std::max({1.0, std::abs(t), std::abs(shift)});
        double cut = widen ? t - slack : t + slack;
        double acc = infinite_.back();
        for (const auto& [v, p] : layers_.back())
            if (v.to_double() + shift > cut) acc += p;
        return acc;
    }

  private:
    std::vector<std::vector<std::pair<Rational, double>>> layers_;
    std::vector<double> infinite_;
    std::size_t cap_;
};

namespace detail {

inline std::optional<std::size_t> checked_pow(std::size_t base, long long k,
                                              std::size_t cap) {
    std::size_t v = 1;
    for (long long i = 0; i < k; ++i) {
        if (base == 0) return 0;
        if (v > cap / base) return std::nullopt;
        v *= base;
    }
    return v;
}

// odometer over blocks of fixed radix; returns false after the last block
inline bool next_block(std::vector<std::size_t>& idx, std::size_t radix) {
    for (std::size_t i = idx.size(); i-- > 0;) {
        if (++idx[i] < radix) return true;
        idx[i] = 0;
    }
    return false;
}

// deterministic inverse-cdf draw; avoids implementation-defined std samplers
inline std::size_t sample_index(std::mt19937_64& rng, const std::vector<double>& p) {
    double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) return i;
    }
    for (std::size_t i = p.size(); i-- > 0;)
        if (p[i] > 0.0) return i;
    throw validation_error("sample_index: law has no mass");
}

// P_{S|X} rows on the full observation alphabet; zero-mass x rows are empty
inline std::vector<std::vector<double>> posterior_rows(const NoisySourceModel& m) {
    Distribution px = m.observable_marginal();
    std::vector<std::vector<double>> rows(m.x_size());
    for (std::size_t x = 0; x < m.x_size(); ++x) {
        if (!(px[x] > 0.0)) continue;
        rows[x].resize(m.s_size());
        for (std::size_t s = 0; s < m.s_size(); ++s)
            rows[x][s] = m.source.p[s] * m.observation(s, x) / px[x];
    }
    return rows;
}

// joint composition of an (x-block, z-block) pair; order of letters is moot
inline std::vector<std::uint32_t> pair_type_key(const std::vector<std::size_t>& xb,
                                                const std::vector<std::size_t>& zb) {
    std::vector<std::uint32_t> key(xb.size());
    for (std::size_t i = 0; i < xb.size(); ++i)
        key[i] = static_cast<std::uint32_t>((xb[i] << 16) | zb[i]);
    std::sort(key.begin(), key.end());
    return key;
}

// int_0^1 (P[pi > t])^M dt for a finite law of pi values in [0,1]
inline double excess_integral(std::vector<std::pair<double, double>> law, long long m) {
    if (law.empty()) throw validation_error("excess_integral: empty law");
    std::sort(law.begin(), law.end());
    std::vector<std::pair<double, double>> merged;
    double total = 0.0;
    for (const auto& [v, p] : law) {
        total += p;
        if (!merged.empty() && merged.back().first == v)
            merged.back().second += p;
        else
            merged.emplace_back(v, p);
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw validation_error("excess_integral: law mass is " + std::to_string(total));
    double acc = std::max(0.0, merged.front().first);
    double tail = 1.0;
    for (std::size_t j = 1; j < merged.size(); ++j) {
        tail -= merged[j - 1].second;
        double t = std::max(0.0, std::min(1.0, tail));
        double seg = merged[j].first - merged[j - 1].first;
        acc += seg * (t == 0.0 ? 0.0 : std::exp(static_cast<double>(m) * std::log(t)));
    }
    return acc;
}

}  // namespace detail

/*
 * P[block distortion exceeds d | X-block], the per-pair tail that drives the
 * random-coding bound. Exact when the per-letter convolution stays within
 * the atom cap and all supported distortion entries are exact; otherwise a
 * seeded sample with reported standard error.
 */
inline ProbEstimate pi_excess_prob(const BlockSpec& block,
                                   const std::vector<std::size_t>& x_block,
                                   const std::vector<std::size_t>& z_block,
                                   const OneShotOptions& opts = {}) {
    validate_block(block);
    if (x_block.size() != static_cast<std::size_t>(block.k) ||
        z_block.size() != static_cast<std::size_t>(block.k))
        throw validation_error("pi_excess_prob: block length mismatch");
    for (std::size_t i = 0; i < x_block.size(); ++i) {
        if (x_block[i] >= block.base.x_size() || z_block[i] >= block.base.z_size())
            throw validation_error("pi_excess_prob: symbol index out of range");
    }

    try {
        TailDP dp(opts.atom_cap);
        for (std::size_t i = 0; i < x_block.size(); ++i) {
            ConditionalDistortionLaw law =
                conditional_distortion_dist(block.base, x_block[i], z_block[i]);
            dp.extend(law.atoms, law.infinite_mass);
        }
        return {dp.prob_above(Rational(block.k) * block.d), 0.0, false};
    } catch (const grid_overflow&) {
        // fall through to sampling
    } catch (const std::domain_error&) {
        // inexact distortion entries: the strict comparison cannot be exact
    }

    auto post = detail::posterior_rows(block.base);
    std::uint64_t salt = 0x9e3779b97f4a7c15ull;
    for (std::size_t i = 0; i < x_block.size(); ++i)
        salt = salt * 1099511628211ull + (x_block[i] * 131 + z_block[i] + 1);
    std::mt19937_64 rng(opts.seed ^ salt);
    double thr = static_cast<double>(block.k) * block.d.to_double();
    std::size_t hits = 0;
    for (std::size_t n = 0; n < opts.mc_samples; ++n) {
        double sum = 0.0;
        for (std::size_t i = 0; i < x_block.size(); ++i) {
            std::size_t s = detail::sample_index(rng, post[x_block[i]]);
            double v = block.base.distortion(s, z_block[i]);
            if (v == kPosInf) {
                sum = kPosInf;
                break;
            }
            sum += v;
        }
        if (sum > thr) ++hits;
    }
    double p = static_cast<double>(hits) / static_cast<double>(opts.mc_samples);
    double se = std::sqrt(std::max(0.0, p * (1.0 - p)) /
                          static_cast<double>(opts.mc_samples));
    return {p, se, true};
}

/*
 * Codeword law for random coding: either a per-letter product or explicit
 * block probabilities in odometer order (last letter fastest).
 */
struct ZBlockReference {
    Distribution per_letter;
    std::vector<double> block_probs;
    bool product = true;

    static ZBlockReference letterwise(Distribution p) {
        validate_distribution("ZBlockReference", p);
        ZBlockReference r;
        r.per_letter = std::move(p);
        r.product = true;
        return r;
    }
    static ZBlockReference explicit_blocks(std::vector<double> probs) {
        validate_distribution("ZBlockReference", Distribution{probs});
        ZBlockReference r;
        r.block_probs = std::move(probs);
        r.product = false;
        return r;
    }

    double prob(const std::vector<std::size_t>& z_block, std::size_t flat) const {
        if (product) {
            double acc = 1.0;
            for (std::size_t z : z_block) acc *= per_letter[z];
            return acc;
        }
        return block_probs[flat];
    }
};

namespace detail {

// per-x law of pi over the reference, values paired with codeword mass
inline std::vector<std::pair<double, double>> pi_law_for_x(
    const BlockSpec& block, const std::vector<std::size_t>& x_block,
    const ZBlockReference& ref,
    std::map<std::vector<std::uint32_t>, ProbEstimate>& memo, bool& any_sampled,
    const OneShotOptions& opts) {
    std::vector<std::pair<double, double>> law;
    std::vector<std::size_t> zb(x_block.size(), 0);
    std::size_t flat = 0;
    do {
        double q = ref.prob(zb, flat);
        ++flat;
        if (q == 0.0) continue;
        auto key = pair_type_key(x_block, zb);
        auto it = memo.find(key);
        if (it == memo.end())
            it = memo.emplace(key, pi_excess_prob(block, x_block, zb, opts)).first;
        if (it->second.sampled) any_sampled = true;
        law.emplace_back(it->second.value, q);
    } while (next_block(zb, block.base.z_size()));
    if (law.empty())
        throw validation_error("reference law has empty support");
    return law;
}

}  // namespace detail

/*
 * Expected excess-distortion probability of an M-word codebook drawn iid
 * from the reference, decoded by the pi-minimizing encoder. This is the
 * exact random-coding performance, not just a bound on it. The z average is
 * always exact; only the x average may fall back to sampling.
 */
inline ProbEstimate achievability_random_coding(const BlockSpec& block, long long M,
                                                const ZBlockReference& ref,
                                                const OneShotOptions& opts = {}) {
    validate_block(block);
    if (M < 1) throw validation_error("achievability_random_coding: M must be >= 1");
    if (ref.product && ref.per_letter.size() != block.base.z_size())
        throw validation_error("achievability_random_coding: reference size mismatch");

    auto z_blocks = detail::checked_pow(block.base.z_size(), block.k, opts.z_cap);
    if (!z_blocks)
        throw refusal_error(
            "achievability_random_coding: reproduction-block enumeration exceeds cap; "
            "reduce k or use the closed-form family for this model");
    if (!ref.product && ref.block_probs.size() != *z_blocks)
        throw validation_error(
            "achievability_random_coding: explicit reference has wrong block count");

    Distribution px = block.base.observable_marginal();
    std::map<std::vector<std::uint32_t>, ProbEstimate> memo;
    bool any_sampled = false;

    auto x_blocks = detail::checked_pow(block.base.x_size(), block.k, opts.x_cap);
    bool exact_x = x_blocks.has_value() &&
                   static_cast<double>(*x_blocks) * static_cast<double>(*z_blocks) <=
                       static_cast<double>(opts.pair_cap);

    if (exact_x) {
        double acc = 0.0;
        std::vector<std::size_t> xb(block.k, 0);
        do {
            double w = 1.0;
            for (std::size_t x : xb) w *= px[x];
            if (w == 0.0) continue;
            auto law = detail::pi_law_for_x(block, xb, ref, memo, any_sampled, opts);
            acc += w * detail::excess_integral(std::move(law), M);
        } while (detail::next_block(xb, block.base.x_size()));
        return {std::min(1.0, std::max(0.0, acc)), 0.0, any_sampled};
    }

    std::mt19937_64 rng(opts.seed ^ 0xa5a5a5a5deadbeefull);
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = opts.mc_x_samples;
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<std::size_t> xb(block.k);
        for (long long i = 0; i < block.k; ++i)
            xb[i] = detail::sample_index(rng, px.p);
        auto law = detail::pi_law_for_x(block, xb, ref, memo, any_sampled, opts);
        double v = detail::excess_integral(std::move(law), M);
        sum += v;
        sumsq += v * v;
    }
    double mean = sum / static_cast<double>(n);
    double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    return {std::min(1.0, std::max(0.0, mean)),
            std::sqrt(var / static_cast<double>(n)), true};
}

/*
 * Backward test channels for the converse. The tilted kernel is the Bayes
 * posterior of the rate-distortion solution at d; the greedy kernel puts a
 * point mass on the observation letter best served by each reproduction
 * letter, which patches the low-tail holes of the indicator form.
 */
inline Channel tilted_backward_kernel(const BlockSpec& block) {
    validate_block(block);
    SurrogateModel sur = surrogate_from_noisy(block.base);
    TiltedSolution sol = solve_distortion(sur, block.d.to_double(), {}, true);
    Distribution px = block.base.observable_marginal();
    Channel back;
    back.rows.assign(block.base.z_size(),
                     std::vector<double>(block.base.x_size(), 0.0));
    for (std::size_t z = 0; z < block.base.z_size(); ++z) {
        double norm = 0.0;
        for (std::size_t i = 0; i < sur.kept_observation.size(); ++i)
            norm += sur.observable[i] * sol.kernel(i, z);
        for (std::size_t i = 0; i < sur.kept_observation.size(); ++i) {
            std::size_t x = sur.kept_observation[i];
            back.rows[z][x] =
                norm > 0.0 ? sur.observable[i] * sol.kernel(i, z) / norm : px[x];
        }
        if (norm <= 0.0) {
            // unused reproduction letter: any valid row works
            for (std::size_t x = 0; x < block.base.x_size(); ++x)
                back.rows[z][x] = px[x];
        }
    }
    validate_channel("tilted_backward_kernel", back);
    return back;
}

inline Channel greedy_backward_kernel(const BlockSpec& block) {
    validate_block(block);
    Distribution px = block.base.observable_marginal();
    Channel back;
    back.rows.assign(block.base.z_size(),
                     std::vector<double>(block.base.x_size(), 0.0));
    for (std::size_t z = 0; z < block.base.z_size(); ++z) {
        double best = kPosInf;
        std::size_t pick = 0;
        bool found = false;
        for (std::size_t x = 0; x < block.base.x_size(); ++x) {
            if (!(px[x] > 0.0)) continue;
            ConditionalDistortionLaw law =
                conditional_distortion_dist(block.base, x, z);
            double tail = law.infinite_mass;
            for (const auto& [v, p] : law.atoms)
                if (v > block.d) tail += p;
            if (!found || tail < best) {
                best = tail;
                pick = x;
                found = true;
            }
        }
        if (!found)
            throw validation_error("greedy_backward_kernel: no observable letter");
        back.rows[z][pick] = 1.0;
    }
    return back;
}

namespace detail {

struct PairTail {
    double info = 0.0;   // sum of per-letter backward information densities
    double pi = 0.0;     // P[block distortion > d | x-block]
    double inf_mass = 0.0;
    std::vector<double> sums;   // sorted distortion sums (exact values, as doubles)
    std::vector<double> tails;  // tails[j] = P[sum >= sums[j]] + inf_mass
};

// per-letter backward information densities; -inf where the kernel is zero
inline std::vector<std::vector<double>> info_table(const NoisySourceModel& m,
                                                   const Channel& backward) {
    Distribution px = m.observable_marginal();
    std::vector<std::vector<double>> tab(m.x_size(),
                                         std::vector<double>(m.z_size(), kNegInf));
    for (std::size_t x = 0; x < m.x_size(); ++x) {
        if (!(px[x] > 0.0)) continue;
        for (std::size_t z = 0; z < m.z_size(); ++z) {
            double b = backward(z, x);
            tab[x][z] = b > 0.0 ? std::log(b) - std::log(px[x]) : kNegInf;
        }
    }
    return tab;
}

inline PairTail pair_tail(const BlockSpec& block,
                          const std::vector<std::vector<double>>& info,
                          const std::vector<std::size_t>& xb,
                          const std::vector<std::size_t>& zb,
                          const OneShotOptions& opts) {
    PairTail out;
    for (std::size_t i = 0; i < xb.size(); ++i) out.info += info[xb[i]][zb[i]];
    TailDP dp(opts.atom_cap);
    for (std::size_t i = 0; i < xb.size(); ++i) {
        ConditionalDistortionLaw law = conditional_distortion_dist(block.base, xb[i], zb[i]);
        dp.extend(law.atoms, law.infinite_mass);
    }
    out.pi = dp.prob_above(Rational(block.k) * block.d);
    out.inf_mass = dp.infinite_mass(dp.letters());
    const auto& atoms = dp.layer(dp.letters());
    out.sums.reserve(atoms.size());
    out.tails.assign(atoms.size(), 0.0);
    double suffix = 0.0;
    for (std::size_t j = atoms.size(); j-- > 0;) {
        suffix += atoms[j].second;
        out.tails[j] = suffix + out.inf_mass;
    }
    for (const auto& [v, p] : atoms) {
        (void)p;
        out.sums.push_back(v.to_double());
    }
    return out;
}

// P[distortion sum >= thr] from a precomputed pair tail; errs low
inline double tail_at(const PairTail& pt, double thr) {
    if (thr == kNegInf) return 1.0;
    if (thr == kPosInf) return pt.inf_mass;
    double slack = 1e-12 * std::max(1.0, std::abs(thr));
    auto it = std::lower_bound(pt.sums.begin(), pt.sums.end(), thr - slack);
    std::size_t j = static_cast<std::size_t>(it - pt.sums.begin());
    return j < pt.sums.size() ? pt.tails[j] : pt.inf_mass;
}

// real-valued per-letter laws on an integer grid, with signed-infinity mass;
// a block is excluded when any letter is -inf, else included when any is +inf
struct GridLaw {
    std::map<long long, double> atoms;
    double pos_mass = 0.0;
    double neg_mass = 0.0;
};

inline GridLaw grid_convolve(const GridLaw& a, const GridLaw& b, std::size_t cap) {
    GridLaw c;
    c.neg_mass = a.neg_mass + (1.0 - a.neg_mass) * b.neg_mass;
    double fin_a = std::max(0.0, 1.0 - a.neg_mass - a.pos_mass);
    c.pos_mass = a.pos_mass * (1.0 - b.neg_mass) + fin_a * b.pos_mass;
    for (const auto& [va, pa] : a.atoms)
        for (const auto& [vb, pb] : b.atoms) {
            if (pa * pb == 0.0) continue;
            c.atoms[va + vb] += pa * pb;
            if (c.atoms.size() > cap)
                throw grid_overflow("grid_convolve: support exceeded cap");
        }
    return c;
}

inline GridLaw grid_power(GridLaw base, long long n, std::size_t cap) {
    GridLaw out;
    out.atoms[0] = 1.0;
    while (n > 0) {
        if (n & 1) out = grid_convolve(out, base, cap);
        n >>= 1;
        if (n > 0) base = grid_convolve(base, base, cap);
    }
    return out;
}

constexpr double kGridEta = 1e-9;

// stochastically smallest candidate law, if one dominates all others
inline std::optional<std::size_t> dominant_choice(
    const std::vector<std::vector<std::pair<double, double>>>& laws,
    const std::vector<double>& pos, const std::vector<double>& neg) {
    std::vector<double> points;
    for (const auto& law : laws)
        for (const auto& [v, p] : law) {
            (void)p;
            points.push_back(v);
        }
    std::sort(points.begin(), points.end());
    points.erase(std::unique(points.begin(), points.end()), points.end());
    auto tail = [&](std::size_t c, double t, bool strict) {
        double acc = pos[c];
        for (const auto& [v, p] : laws[c])
            if (strict ? v > t : v >= t) acc += p;
        return acc;
    };
    for (std::size_t c = 0; c < laws.size(); ++c) {
        bool ok = true;
        for (std::size_t o = 0; o < laws.size() && ok; ++o) {
            if (o == c) continue;
            if (pos[c] > pos[o] + 1e-15) ok = false;
            // tail at -inf is the non-excluded mass
            if (ok && 1.0 - neg[c] > 1.0 - neg[o] + 1e-12) ok = false;
            for (double t : points) {
                if (!ok) break;
                if (tail(c, t, true) > tail(o, t, true) + 1e-12 ||
                    tail(c, t, false) > tail(o, t, false) + 1e-12)
                    ok = false;
            }
        }
        if (ok) return c;
    }
    return std::nullopt;
}

}  // namespace detail

/*
 * Gamma candidates for the converse: a log-spaced sweep plus, when the block
 * spaces are small enough to enumerate, the exact breakpoints where the
 * information-density event changes. Slightly shifted copies of each
 * breakpoint guard against losing the maximizer to rounding.
 */
inline std::vector<double> default_gamma_grid(const BlockSpec& block, long long M,
                                              const Channel& backward,
                                              const OneShotOptions& = {}) {
    validate_block(block);
    std::vector<double> grid;
    double lo = std::log(0.1);
    double hi = std::log(3.0 * std::log(std::max<double>(2.0, block.k)) + 10.0);
    for (int j = 0; j < 32; ++j)
        grid.push_back(std::exp(lo + (hi - lo) * j / 31.0));

    auto xs = detail::checked_pow(block.base.x_size(), block.k, 256);
    auto zs = detail::checked_pow(block.base.z_size(), block.k, 256);
    if (xs && zs && *xs * *zs <= 4096) {
        auto info = detail::info_table(block.base, backward);
        Distribution px = block.base.observable_marginal();
        std::vector<std::size_t> xb(block.k, 0);
        do {
            double w = 1.0;
            for (std::size_t x : xb) w *= px[x];
            if (w == 0.0) continue;
            std::vector<std::size_t> zb(block.k, 0);
            do {
                double isum = 0.0;
                for (std::size_t i = 0; i < xb.size(); ++i) isum += info[xb[i]][zb[i]];
                double g = isum - std::log(static_cast<double>(M));
                if (std::isfinite(g) && g > 0.0) {
                    grid.push_back(g);
                    if (g > 1e-9) grid.push_back(g - 1e-9);
                }
            } while (detail::next_block(zb, block.base.z_size()));
        } while (detail::next_block(xb, block.base.x_size()));
    }
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    return grid;
}

/*
 * Lower bound on the excess probability of every (M, d) code: the largest,
 * over gamma, of E[inf_z P(event | X)] - e^{-gamma}. lambda = +inf uses the
 * indicator event {distortion > d or info >= ln M + gamma}; a finite lambda
 * uses {info + lambda (distortion - d) >= ln M + gamma}. Exact enumeration
 * where feasible; for product kernels with a finite lambda whose per-letter
 * laws admit a stochastically dominant reproduction letter, the inner
 * minimum is taken letter by letter and the outer average runs over
 * observation compositions. Refuses when neither route is sound.
 */
inline double converse_bound(const BlockSpec& block, long long M,
                             const Channel& backward, double lambda,
                             const std::vector<double>& gamma_grid,
                             const OneShotOptions& opts = {}) {
    validate_block(block);
    if (M < 1) throw validation_error("converse_bound: M must be >= 1");
    if (std::isnan(lambda) || lambda < 0.0)
        throw validation_error("converse_bound: lambda must be >= 0 or +inf");
    if (backward.input_size() != block.base.z_size() ||
        backward.output_size() != block.base.x_size())
        throw validation_error("converse_bound: backward kernel shape mismatch");
    validate_channel("converse_bound backward kernel", backward);
    if (gamma_grid.empty())
        throw validation_error("converse_bound: gamma grid is empty");
    for (double g : gamma_grid)
        if (!(g >= 0.0)) throw validation_error("converse_bound: gamma must be >= 0");

    const double lnM = std::log(static_cast<double>(M));
    const double kd = static_cast<double>(block.k) * block.d.to_double();
    auto info = detail::info_table(block.base, backward);
    Distribution px = block.base.observable_marginal();

    auto xs = detail::checked_pow(block.base.x_size(), block.k, opts.x_cap);
    auto zs = detail::checked_pow(block.base.z_size(), block.k, opts.z_cap);
    bool exact = xs && zs &&
                 static_cast<double>(*xs) * static_cast<double>(*zs) <=
                     static_cast<double>(opts.pair_cap);

    if (exact) {
        // one pass per x-block: precompute per-z data, then sweep gamma
        std::map<std::vector<std::uint32_t>, detail::PairTail> memo;
        struct XRow {
            double weight;
            std::vector<const detail::PairTail*> pairs;
            std::vector<std::pair<double, double>> info_sorted;  // (info, prefix-min pi)
        };
        std::vector<XRow> rows;
        try {
            std::vector<std::size_t> xb(block.k, 0);
            do {
                double w = 1.0;
                for (std::size_t x : xb) w *= px[x];
                if (w == 0.0) continue;
                XRow row;
                row.weight = w;
                std::vector<std::size_t> zb(block.k, 0);
                do {
                    auto key = detail::pair_type_key(xb, zb);
                    auto it = memo.find(key);
                    if (it == memo.end())
                        it = memo.emplace(key,
                                          detail::pair_tail(block, info, xb, zb, opts))
                                 .first;
                    row.pairs.push_back(&it->second);
                } while (detail::next_block(zb, block.base.z_size()));
                if (std::isinf(lambda)) {
                    std::vector<std::pair<double, double>> ip;
                    ip.reserve(row.pairs.size());
                    for (const auto* pt : row.pairs) ip.emplace_back(pt->info, pt->pi);
                    std::sort(ip.begin(), ip.end());
                    double run = 1.0;
                    for (auto& e : ip) {
                        run = std::min(run, e.second);
                        e.second = run;
                    }
                    row.info_sorted = std::move(ip);
                }
                rows.push_back(std::move(row));
            } while (detail::next_block(xb, block.base.x_size()));
        } catch (const grid_overflow& e) {
            throw refusal_error(std::string("converse_bound: ") + e.what());
        }

        double best = 0.0;
        for (double g : gamma_grid) {
            double theta = lnM + g;
            double acc = 0.0;
            for (const auto& row : rows) {
                double inner = 1.0;
                if (std::isinf(lambda)) {
                    // indicator form: value is 1 where info >= theta, else pi
                    const auto& ip = row.info_sorted;
                    auto it = std::lower_bound(
                        ip.begin(), ip.end(), std::make_pair(theta, kNegInf));
                    inner = it == ip.begin() ? 1.0 : (it - 1)->second;
                } else if (lambda == 0.0) {
                    for (const auto* pt : row.pairs)
                        inner = std::min(inner, pt->info >= theta ? 1.0 : 0.0);
                } else {
                    for (const auto* pt : row.pairs) {
                        double thr = kd + static_cast<double>(block.k) *
                                              (theta - pt->info) / lambda;
                        inner = std::min(inner, detail::tail_at(*pt, thr));
                    }
                }
                acc += row.weight * inner;
            }
            best = std::max(best, acc - std::exp(-g));
        }
        return std::min(1.0, best);
    }

    // letterwise route: finite lambda only
    if (std::isinf(lambda) || lambda == 0.0)
        throw refusal_error(
            "converse_bound: block enumeration exceeds caps and the indicator form "
            "has no letterwise reduction; use the closed-form family or a finite "
            "lambda");

    std::vector<std::size_t> letters;
    for (std::size_t x = 0; x < block.base.x_size(); ++x)
        if (px[x] > 0.0) letters.push_back(x);

    // per observation letter: law of info + (lambda/k) d(S, z) per z choice
    std::vector<detail::GridLaw> chosen(letters.size());
    for (std::size_t li = 0; li < letters.size(); ++li) {
        std::size_t x = letters[li];
        std::vector<std::vector<std::pair<double, double>>> laws;
        std::vector<double> pos, neg;
        for (std::size_t z = 0; z < block.base.z_size(); ++z) {
            ConditionalDistortionLaw cd = conditional_distortion_dist(block.base, x, z);
            std::vector<std::pair<double, double>> law;
            double p_pos = 0.0, p_neg = 0.0;
            double base = info[x][z];
            if (base == kNegInf) {
                p_neg = 1.0;
            } else {
                for (const auto& [v, p] : cd.atoms)
                    law.emplace_back(base + lambda / static_cast<double>(block.k) *
                                                v.to_double(),
                                     p);
                p_pos = cd.infinite_mass;
            }
            laws.push_back(std::move(law));
            pos.push_back(p_pos);
            neg.push_back(p_neg);
        }
        auto pick = detail::dominant_choice(laws, pos, neg);
        if (!pick)
            throw refusal_error(
                "converse_bound: no reproduction letter is uniformly best for "
                "observation letter '" +
                block.base.observation_symbols[x] +
                "'; the letterwise reduction does not apply at this block length");
        detail::GridLaw gl;
        gl.pos_mass = pos[*pick];
        gl.neg_mass = neg[*pick];
        for (const auto& [v, p] : laws[*pick])
            gl.atoms[static_cast<long long>(std::floor(v / detail::kGridEta))] += p;
        chosen[li] = std::move(gl);
    }

    // expected inner probability over observation compositions
    double m = static_cast<double>(letters.size());
    double log_comps = log_binom(block.k + static_cast<long long>(m) - 1,
                                 static_cast<long long>(m) - 1);
    if (log_comps > std::log(opts.work_cap))
        throw refusal_error("converse_bound: composition enumeration exceeds cap");

    // cache n-fold powers per letter at power-of-two exponents
    std::vector<std::map<long long, detail::GridLaw>> pow_cache(letters.size());
    auto letter_power = [&](std::size_t li, long long n) {
        auto it = pow_cache[li].find(n);
        if (it == pow_cache[li].end())
            it = pow_cache[li]
                     .emplace(n, detail::grid_power(chosen[li], n, opts.atom_cap))
                     .first;
        return it->second;
    };

    struct CompValue {
        double log_weight;
        std::vector<double> sums;   // sorted finite grid sums, in grid units
        std::vector<double> tails;  // suffix mass including pos_mass
        double pos_mass;
    };
    std::vector<CompValue> comps;
    std::vector<long long> c(letters.size(), 0);
    c[0] = block.k;
    try {
    while (true) {
        double lw = std::lgamma(static_cast<double>(block.k) + 1.0);
        for (std::size_t li = 0; li < letters.size(); ++li) {
            lw -= std::lgamma(static_cast<double>(c[li]) + 1.0);
            if (c[li] > 0) lw += static_cast<double>(c[li]) * std::log(px[letters[li]]);
        }
        if (lw > std::log(1e-300)) {
            detail::GridLaw total;
            total.atoms[0] = 1.0;
            for (std::size_t li = 0; li < letters.size(); ++li)
                if (c[li] > 0)
                    total = detail::grid_convolve(total, letter_power(li, c[li]),
                                                  opts.atom_cap);
            CompValue cv;
            cv.log_weight = lw;
            cv.pos_mass = total.pos_mass;
            double suffix = 0.0;
            std::vector<std::pair<long long, double>> flat(total.atoms.begin(),
                                                           total.atoms.end());
            cv.sums.resize(flat.size());
            cv.tails.assign(flat.size(), 0.0);
            for (std::size_t j = flat.size(); j-- > 0;) {
                suffix += flat[j].second;
                cv.sums[j] = static_cast<double>(flat[j].first);
                cv.tails[j] = suffix + total.pos_mass;
            }
            comps.push_back(std::move(cv));
        }
        // next composition: move a unit right of the last positive cell
        std::size_t i = letters.size();
        for (std::size_t j = letters.size() - 1; j-- > 0;)
            if (c[j] > 0) {
                i = j;
                break;
            }
        if (i == letters.size()) break;
        long long tailmass = c[letters.size() - 1];
        --c[i];
        c[letters.size() - 1] = 0;
        c[i + 1] = tailmass + 1;
    }
    } catch (const grid_overflow& e) {
        throw refusal_error(std::string("converse_bound: ") + e.what());
    }

    double best = 0.0;
    for (double g : gamma_grid) {
        // event: sum of per-letter grid values >= lnM + g + lambda d
        double theta = (lnM + g + lambda * block.d.to_double()) / detail::kGridEta;
        double acc = 0.0;
        for (const auto& cv : comps) {
            auto it = std::lower_bound(cv.sums.begin(), cv.sums.end(), theta);
            std::size_t j = static_cast<std::size_t>(it - cv.sums.begin());
            double p = j < cv.sums.size() ? cv.tails[j] : cv.pos_mass;
            acc += std::exp(cv.log_weight) * p;
        }
        best = std::max(best, acc - std::exp(-g));
    }
    return std::min(1.0, best);
}

// strongest converse over the stock kernel and slope candidates
inline double best_converse(const BlockSpec& block, long long M,
                            const OneShotOptions& opts = {}) {
    validate_block(block);
    SurrogateModel sur = surrogate_from_noisy(block.base);
    TiltedSolution sol = solve_distortion(sur, block.d.to_double(), {}, true);
    std::vector<Channel> kernels = {tilted_backward_kernel(block),
                                    greedy_backward_kernel(block)};
    std::vector<double> lambdas = {kPosInf,
                                   static_cast<double>(block.k) * sol.lambda_star};
    double best = 0.0;
    for (const auto& kern : kernels) {
        auto grid = default_gamma_grid(block, M, kern, opts);
        for (double lam : lambdas) {
            try {
                best = std::max(best, converse_bound(block, M, kern, lam, grid, opts));
            } catch (const refusal_error&) {
                // candidate infeasible at this block length; others may stand
            }
        }
    }
    return best;
}

// forward test channel matched to the rate-distortion solution at d
inline Channel tilted_forward_kernel(const BlockSpec& block) {
    validate_block(block);
    SurrogateModel sur = surrogate_from_noisy(block.base);
    TiltedSolution sol = solve_distortion(sur, block.d.to_double(), {}, true);
    Channel fwd;
    fwd.rows.assign(block.base.x_size(), sol.marginal.p);
    for (std::size_t i = 0; i < sur.kept_observation.size(); ++i)
        fwd.rows[sur.kept_observation[i]] = sol.kernel.rows[i];
    validate_channel("tilted_forward_kernel", fwd);
    return fwd;
}

/*
 * Three-term achievability: excess distortion of the forward channel, an
 * information-density tail, and a double-exponential codebook term. The
 * information densities are snapped up onto a 1e-9 grid so the exact
 * convolution can only overstate the bound.
 */
inline ProbEstimate achievability_shannon_style(const BlockSpec& block, long long M,
                                                const Channel& kernel, double gamma,
                                                const OneShotOptions& opts = {}) {
    validate_block(block);
    if (M < 1)
        throw validation_error("achievability_shannon_style: M must be >= 1");
    if (!(gamma >= 0.0))
        throw validation_error("achievability_shannon_style: gamma must be >= 0");
    if (kernel.input_size() != block.base.x_size() ||
        kernel.output_size() != block.base.z_size())
        throw validation_error("achievability_shannon_style: kernel shape mismatch");
    validate_channel("achievability_shannon_style kernel", kernel);

    Distribution px = block.base.observable_marginal();
    std::vector<double> pz(block.base.z_size(), 0.0);
    for (std::size_t x = 0; x < block.base.x_size(); ++x)
        for (std::size_t z = 0; z < block.base.z_size(); ++z)
            pz[z] += px[x] * kernel(x, z);

    const double lnM = std::log(static_cast<double>(M));
    double tail3 = std::exp(-std::exp(std::min(700.0, gamma)));

    bool sampled = false;
    double t1 = 0.0, t2 = 0.0, se1 = 0.0, se2 = 0.0;
    try {
        // distortion term: one per-letter law, convolved k times
        std::map<Rational, double> datoms;
        double dinf = 0.0;
        for (std::size_t x = 0; x < block.base.x_size(); ++x) {
            if (!(px[x] > 0.0)) continue;
            for (std::size_t z = 0; z < block.base.z_size(); ++z) {
                double w = px[x] * kernel(x, z);
                if (w == 0.0) continue;
                ConditionalDistortionLaw law =
                    conditional_distortion_dist(block.base, x, z);
                for (const auto& [v, p] : law.atoms) datoms[v] += w * p;
                dinf += w * law.infinite_mass;
            }
        }
        std::vector<std::pair<Rational, double>> dlaw(datoms.begin(), datoms.end());
        TailDP dp(opts.atom_cap);
        for (long long i = 0; i < block.k; ++i) dp.extend(dlaw, dinf);
        t1 = dp.prob_above(Rational(block.k) * block.d);

        // information term on the ceil-rounded grid
        detail::GridLaw ilaw;
        for (std::size_t x = 0; x < block.base.x_size(); ++x) {
            if (!(px[x] > 0.0)) continue;
            for (std::size_t z = 0; z < block.base.z_size(); ++z) {
                double w = px[x] * kernel(x, z);
                if (w == 0.0) continue;
                double v = std::log(kernel(x, z)) - std::log(pz[z]);
                ilaw.atoms[static_cast<long long>(std::ceil(v / detail::kGridEta))] +=
                    w;
            }
        }
        detail::GridLaw isum = detail::grid_power(ilaw, block.k, opts.atom_cap);
        double theta = (lnM - gamma) / detail::kGridEta;
        for (const auto& [v, p] : isum.atoms)
            if (static_cast<double>(v) > theta) t2 += p;
    } catch (const grid_overflow&) {
        sampled = true;
    } catch (const std::domain_error&) {
        sampled = true;
    }

    if (sampled) {
        std::mt19937_64 rng(opts.seed ^ 0xfeedface12345ull);
        std::size_t n = opts.mc_samples;
        std::size_t h1 = 0, h2 = 0;
        double thr_d = static_cast<double>(block.k) * block.d.to_double();
        for (std::size_t t = 0; t < n; ++t) {
            double dsum = 0.0, isum = 0.0;
            for (long long i = 0; i < block.k; ++i) {
                std::size_t s = detail::sample_index(rng, block.base.source.p);
                std::size_t x = detail::sample_index(rng, block.base.observation.rows[s]);
                std::size_t z = detail::sample_index(rng, kernel.rows[x]);
                double dv = block.base.distortion(s, z);
                dsum = dv == kPosInf ? kPosInf : dsum + dv;
                isum += std::log(kernel(x, z)) - std::log(pz[z]);
            }
            if (dsum > thr_d) ++h1;
            if (isum > lnM - gamma) ++h2;
        }
        t1 = static_cast<double>(h1) / static_cast<double>(n);
        t2 = static_cast<double>(h2) / static_cast<double>(n);
        se1 = std::sqrt(std::max(0.0, t1 * (1.0 - t1)) / static_cast<double>(n));
        se2 = std::sqrt(std::max(0.0, t2 * (1.0 - t2)) / static_cast<double>(n));
    }

    double value = std::min(1.0, t1 + t2 + tail3);
    return {value, std::sqrt(se1 * se1 + se2 * se2), sampled};
}

/*
 * Parameters of the divergence-tilted achievability bound. The defaults
 * shrink the distortion budget by one letter's worth, spend sqrt(k) on the
 * interval mass certificate, and size the codebook overdraw so its
 * double-exponential term decays like 1/sqrt(k).
 */
struct TiltedParams {
    double log_gamma = 0.0;
    double beta = 1.0;
    Rational delta;
    double row_lambda = 0.0;   // slope used to tilt reference rows per letter
    Distribution reference;    // per-letter codeword law
};

inline TiltedParams default_tilted_params(const BlockSpec& block, long long M) {
    validate_block(block);
    if (M < 1)
        throw validation_error("default_tilted_params: M must be >= 1");
    SurrogateModel sur = surrogate_from_noisy(block.base);

    // Window width delta ~ d/sqrt(k): keeps the middle-interval mass of order
    // 1/beta while the first term only pays an O(lambda*sqrt(k)) shift.
    long long root = static_cast<long long>(
        std::ceil(std::sqrt(static_cast<double>(block.k))));
    TiltedParams p;
    p.delta = block.d * Rational(root) / Rational(block.k);
    p.beta = std::sqrt(static_cast<double>(block.k));
    double lnk = std::log(static_cast<double>(block.k));
    p.log_gamma = std::log(static_cast<double>(M)) -
                  std::log(std::max(1.05, lnk)) + std::log(2.0);

    double dmin = sur.d_min(), dmax = sur.d_max();
    if (!(block.d.to_double() > dmin))
        throw validation_error(
            "default_tilted_params: d leaves no slack above d_min");
    TiltedSolution sol =
        solve_distortion(sur, std::min(block.d.to_double(), dmax), {}, true);
    p.row_lambda = sol.lambda_star;
    p.reference = sol.marginal;
    return p;
}

namespace detail {

// largest-remainder rounding of n*w to integers summing to n
inline std::vector<long long> quantize_counts(const std::vector<double>& w,
                                              long long n) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0))
        throw validation_error("quantize_counts: weights sum to zero");
    std::vector<long long> counts(w.size(), 0);
    std::vector<std::pair<double, std::size_t>> frac;
    long long used = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        double ideal = static_cast<double>(n) * w[i] / total;
        counts[i] = static_cast<long long>(std::floor(ideal));
        used += counts[i];
        frac.emplace_back(ideal - std::floor(ideal), i);
    }
    std::sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (long long r = n - used, j = 0; r > 0; --r, ++j)
        ++counts[frac[static_cast<std::size_t>(j)].second];
    return counts;
}

}  // namespace detail

/*
 * Divergence-tilted achievability. Codewords are drawn uniformly from a
 * conditional type class per observation block: each observation letter
 * class gets the reference row tilted at row_lambda and rounded to the class
 * size. Classes whose distortion column differences are not constant across
 * the row support are collapsed to their modal letter so the block
 * distortion equals its conditional mean almost surely, which the bound
 * requires; the construction is then re-validated and a violation names the
 * offending letters.
 */
inline ProbEstimate achievability_tilted(const BlockSpec& block, long long M,
                                         const TiltedParams& params,
                                         const OneShotOptions& opts = {}) {
    validate_block(block);
    if (M < 1) throw validation_error("achievability_tilted: M must be >= 1");
    if (!(params.beta > 0.0))
        throw validation_error("achievability_tilted: beta must be positive");
    if (params.delta < Rational(0))
        throw validation_error("achievability_tilted: delta must be nonnegative");
    if (params.reference.size() != block.base.z_size())
        throw validation_error("achievability_tilted: reference size mismatch");
    validate_distribution("achievability_tilted reference", params.reference);
    if (!(params.row_lambda >= 0.0))
        throw validation_error("achievability_tilted: row_lambda must be >= 0");

    SurrogateModel sur = surrogate_from_noisy(block.base);
    Distribution px = block.base.observable_marginal();
    std::vector<std::size_t> letters = sur.kept_observation;
    std::size_t m = letters.size();
    const long long k = block.k;

    // lambda sweep for the divergence tail, centered on the solved slope
    std::vector<double> lam_grid;
    double center = params.row_lambda > 0.0 ? static_cast<double>(k) * params.row_lambda
                                            : 1.0;
    for (int j = 0; j < 64; ++j)
        lam_grid.push_back(center * std::exp(-4.0 + 8.0 * j / 63.0));

    double comp_logcount =
        log_binom(k + static_cast<long long>(m) - 1, static_cast<long long>(m) - 1);
    double per_comp_cost = static_cast<double>(k) *
                           static_cast<double>(block.base.s_size()) *
                           static_cast<double>(block.base.s_size());
    bool enumerate = comp_logcount + std::log(std::max(1.0, per_comp_cost)) <=
                     std::log(opts.work_cap);

    const Rational kd = Rational(k) * block.d;
    const Rational kdlo = Rational(k) * (block.d - params.delta);
    const double log_gamma = params.log_gamma;
    const double log_beta = std::log(params.beta);
    double tail_cb = std::exp(
        -std::exp(std::min(700.0, std::log(static_cast<double>(M)) - log_gamma)));

    // per (letter class, class size): quantized row, divergence pieces, laws
    struct ClassData {
        std::vector<long long> counts;
        double log_type_size;    // ln of the class cardinality
        double cross_entropy;    // -sum_b counts_b ln reference_b
        std::vector<std::pair<Rational, double>> law;  // class sum of d(S, b) weights
        double infinite_mass;
    };
    std::map<std::pair<std::size_t, long long>, ClassData> class_cache;

    auto class_data = [&](std::size_t li, long long n) -> const ClassData& {
        auto key = std::make_pair(li, n);
        auto it = class_cache.find(key);
        if (it != class_cache.end()) return it->second;

        std::size_t a = letters[li];
        std::size_t kept = sur.kept_index(a);
        std::vector<double> w(block.base.z_size(), 0.0);
        for (std::size_t b = 0; b < block.base.z_size(); ++b) {
            double db = sur.dbar(kept, b);
            if (db == kPosInf) continue;
            w[b] = params.reference[b] * std::exp(-params.row_lambda * db);
        }
        double wt = 0.0;
        for (double v : w) wt += v;
        if (!(wt > 0.0))
            throw validation_error(
                "achievability_tilted: observation letter '" +
                block.base.observation_symbols[a] +
                "' cannot reach any reproduction letter under the reference");
        std::vector<long long> counts = detail::quantize_counts(w, n);

        // the class distortion sum must be deterministic given the sources:
        // a single letter trivially is; otherwise column differences must be
        // constant across the support
        std::vector<std::size_t> zsup;
        for (std::size_t b = 0; b < counts.size(); ++b)
            if (counts[b] > 0) zsup.push_back(b);
        std::vector<std::size_t> ssup;
        for (std::size_t s = 0; s < block.base.s_size(); ++s)
            if (sur.conditional_source(kept, s) > 0.0) ssup.push_back(s);
        bool ok = zsup.size() <= 1;
        if (!ok && ssup.size() <= 1) ok = true;
        if (!ok) {
            ok = true;
            for (std::size_t b : zsup)
                if (!block.base.distortion.finite_at(ssup.front(), b)) ok = false;
            if (ok) {
                for (std::size_t si = 1; si < ssup.size() && ok; ++si) {
                    if (!block.base.distortion.finite_at(ssup[si], zsup.front())) {
                        ok = false;
                        break;
                    }
                    Rational ref_diff =
                        block.base.distortion.exact_at(ssup[si], zsup.front()) -
                        block.base.distortion.exact_at(ssup.front(), zsup.front());
                    for (std::size_t b : zsup) {
                        if (!block.base.distortion.finite_at(ssup[si], b)) {
                            ok = false;
                            break;
                        }
                        Rational diff = block.base.distortion.exact_at(ssup[si], b) -
                                        block.base.distortion.exact_at(ssup.front(), b);
                        if (!(diff == ref_diff)) {
                            ok = false;
                            break;
                        }
                    }
                }
            }
        }
        if (!ok) {
            // collapse to the modal reproduction letter
            std::size_t bstar = 0;
            for (std::size_t b = 1; b < w.size(); ++b)
                if (w[b] > w[bstar]) bstar = b;
            std::fill(counts.begin(), counts.end(), 0LL);
            counts[bstar] = n;
            zsup.assign(1, bstar);
        }

        ClassData cd;
        cd.counts = counts;
        cd.log_type_size = std::lgamma(static_cast<double>(n) + 1.0);
        cd.cross_entropy = 0.0;
        for (std::size_t b = 0; b < counts.size(); ++b) {
            if (counts[b] == 0) continue;
            cd.log_type_size -= std::lgamma(static_cast<double>(counts[b]) + 1.0);
            if (!(params.reference[b] > 0.0)) {
                cd.cross_entropy = kPosInf;
            } else if (cd.cross_entropy != kPosInf) {
                cd.cross_entropy -=
                    static_cast<double>(counts[b]) * std::log(params.reference[b]);
            }
        }

        // law of sum_b t(b|a) d(s, b) * n over S | X = a (per single letter,
        // scaled by the class type so letter sums stay rational)
        cd.infinite_mass = 0.0;
        for (std::size_t s = 0; s < block.base.s_size(); ++s) {
            double psx = sur.conditional_source(kept, s);
            if (!(psx > 0.0)) continue;
            bool inf = false;
            Rational g(0);
            for (std::size_t b = 0; b < counts.size(); ++b) {
                if (counts[b] == 0) continue;
                if (!block.base.distortion.finite_at(s, b)) {
                    inf = true;
                    break;
                }
                g = g + Rational(counts[b], n) * block.base.distortion.exact_at(s, b);
            }
            if (inf)
                cd.infinite_mass += psx;
            else
                cd.law.emplace_back(g, psx);
        }

        // re-validate the kept construction; a violation here means the
        // distortion matrix defeats even the collapsed kernel
        if (zsup.size() > 1) {
            for (std::size_t si = 1; si < ssup.size(); ++si)
                for (std::size_t b : zsup) {
                    Rational diff = block.base.distortion.exact_at(ssup[si], b) -
                                    block.base.distortion.exact_at(ssup.front(), b);
                    Rational ref_diff =
                        block.base.distortion.exact_at(ssup[si], zsup.front()) -
                        block.base.distortion.exact_at(ssup.front(), zsup.front());
                    if (!(diff == ref_diff))
                        throw validation_error(
                            "achievability_tilted: distortion condition fails at "
                            "observation letter '" +
                            block.base.observation_symbols[letters[li]] +
                            "' and reproduction letter '" +
                            block.base.reproduction_symbols[b] + "'");
                }
        }
        return class_cache.emplace(key, std::move(cd)).first->second;
    };

    // inner bound for one observation composition
    auto composition_value = [&](const std::vector<long long>& c) -> double {
        double divergence = 0.0;
        TailDP dp(opts.atom_cap);
        for (std::size_t li = 0; li < m; ++li) {
            if (c[li] == 0) continue;
            const ClassData& cd = class_data(li, c[li]);
            if (cd.cross_entropy == kPosInf)
                divergence = kPosInf;
            else if (divergence != kPosInf)
                divergence += -cd.log_type_size + cd.cross_entropy;
            for (long long r = 0; r < c[li]; ++r) dp.extend(cd.law, cd.infinite_mass);
        }
        double t2 = dp.prob_above(kd);
        double t3 = std::max(
            0.0, 1.0 - params.beta * dp.prob_between(kdlo, kd));
        double t1 = 1.0;
        if (divergence == kPosInf) {
            t1 = 1.0;
        } else {
            for (double lam : lam_grid) {
                double thr = static_cast<double>(k) *
                                 (block.d.to_double() - params.delta.to_double()) +
                             static_cast<double>(k) *
                                 (log_gamma - log_beta - divergence) / lam;
                t1 = std::min(t1, dp.prob_above_real(0.0, thr, true));
            }
        }
        return std::min(1.0, t1 + t2 + t3);
    };

    if (enumerate) {
        double acc = 0.0;
        std::vector<long long> c(m, 0);
        c[0] = k;
        while (true) {
            double lw = std::lgamma(static_cast<double>(k) + 1.0);
            for (std::size_t li = 0; li < m; ++li) {
                lw -= std::lgamma(static_cast<double>(c[li]) + 1.0);
                if (c[li] > 0)
                    lw += static_cast<double>(c[li]) * std::log(px[letters[li]]);
            }
            if (lw > std::log(1e-300)) acc += std::exp(lw) * composition_value(c);
            std::size_t i = m;
            for (std::size_t j = m - 1; j-- > 0;)
                if (c[j] > 0) {
                    i = j;
                    break;
                }
            if (i == m) break;
            long long tailmass = c[m - 1];
            --c[i];
            c[m - 1] = 0;
            c[i + 1] = tailmass + 1;
        }
        return {std::min(1.0, acc + tail_cb), 0.0, false};
    }

    // sampled observation blocks, memoized per composition
    std::mt19937_64 rng(opts.seed ^ 0x7117ed0ull);
    std::map<std::vector<long long>, double> comp_memo;
    std::vector<double> kept_px(m);
    double kept_total = 0.0;
    for (std::size_t li = 0; li < m; ++li) {
        kept_px[li] = px[letters[li]];
        kept_total += kept_px[li];
    }
    for (double& v : kept_px) v /= kept_total;
    double sum = 0.0, sumsq = 0.0;
    std::size_t n = opts.mc_x_samples;
    for (std::size_t t = 0; t < n; ++t) {
        std::vector<long long> c(m, 0);
        for (long long i = 0; i < k; ++i) ++c[detail::sample_index(rng, kept_px)];
        auto it = comp_memo.find(c);
        if (it == comp_memo.end()) it = comp_memo.emplace(c, composition_value(c)).first;
        sum += it->second;
        sumsq += it->second * it->second;
    }
    double mean = sum / static_cast<double>(n);
    double var = std::max(0.0, sumsq / static_cast<double>(n) - mean * mean);
    return {std::min(1.0, mean + tail_cb), std::sqrt(var / static_cast<double>(n)),
            true};
}

// stock codeword law: product of the solved reproduction marginal at d
inline ZBlockReference default_reference(const BlockSpec& block) {
    validate_block(block);
    SurrogateModel sur = surrogate_from_noisy(block.base);
    TiltedSolution sol = solve_distortion(sur, block.d.to_double(), {}, true);
    return ZBlockReference::letterwise(sol.marginal);
}

inline ProbEstimate best_achievability(const BlockSpec& block, long long M,
                                       const OneShotOptions& opts = {}) {
    return achievability_random_coding(block, M, default_reference(block), opts);
}

struct CodeSizeBracket {
    long long m_converse = 1;       // no smaller code can meet eps
    long long m_achievability = 1;  // random coding meets eps at this size
};

/*
 * Sandwich the smallest code size whose excess probability is at most eps:
 * the converse yields the largest size that provably fails plus one, random
 * coding yields a size that provably works. Both sides use doubling plus
 * binary search; the achievability side reports failure when no size under
 * the cap meets eps.
 */
inline CodeSizeBracket code_size_bracket(const BlockSpec& block,
                                         const OneShotOptions& opts = {}) {
    validate_block(block);
    if (!(block.eps > 0.0 && block.eps < 1.0))
        throw validation_error("code_size_bracket: eps must lie strictly in (0,1)");

    CodeSizeBracket out;

    // largest M with converse above eps, then one more
    if (best_converse(block, 1, opts) > block.eps) {
        long long lo = 1, hi = 2;
        while (hi <= opts.bracket_cap && best_converse(block, hi, opts) > block.eps) {
            lo = hi;
            hi *= 2;
        }
        if (hi > opts.bracket_cap)
            throw refusal_error(
                "code_size_bracket: converse still exceeds eps at the size cap");
        while (hi - lo > 1) {
            long long mid = lo + (hi - lo) / 2;
            if (best_converse(block, mid, opts) > block.eps)
                lo = mid;
            else
                hi = mid;
        }
        out.m_converse = lo + 1;
    }

    // smallest M with random coding at or below eps
    auto ach = [&](long long M) { return best_achievability(block, M, opts).value; };
    if (ach(1) <= block.eps) {
        out.m_achievability = 1;
    } else {
        long long lo = 1, hi = 2;
        while (hi <= opts.bracket_cap && ach(hi) > block.eps) {
            lo = hi;
            hi *= 2;
        }
        if (hi > opts.bracket_cap) {
            double at_cap = ach(opts.bracket_cap);
            throw refusal_error(
                "code_size_bracket: open bracket, random coding reaches only " +
                std::to_string(at_cap) + " at the size cap of " +
                std::to_string(opts.bracket_cap));
        }
        while (hi - lo > 1) {
            long long mid = lo + (hi - lo) / 2;
            if (ach(mid) > block.eps)
                lo = mid;
            else
                hi = mid;
        }
        out.m_achievability = hi;
    }

    if (out.m_converse > out.m_achievability)
        throw std::runtime_error(
            "code_size_bracket: bounds crossed, which indicates a numerical fault");
    return out;
}

}  // namespace nlc
