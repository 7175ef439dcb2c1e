#pragma once

/*
 * Finite-alphabet model objects: distributions, channels, distortion
 * matrices, the noisy source tuple (P_S, P_X|S, d) and the induced
 * surrogate problem (P_X, P_S|X, dbar). Distortion entries keep their
 * exact rational values from the input so that block-distortion
 * thresholds can be decided without rounding.
 */

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nlc/numerics.hpp"

namespace nlc {

// invalid input (bad file, inconsistent model, out-of-range argument): CLI exit 2
struct validation_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// a requested computation the evaluator declines to run (e.g. enumeration
// too large without a sound restriction): CLI exit 3
struct refusal_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Distribution {
    std::vector<double> p;

    std::size_t size() const { return p.size(); }
    double operator[](std::size_t i) const { return p[i]; }
};

inline void validate_distribution(const std::string& name, const Distribution& dist) {
    double sum = 0.0;
    for (std::size_t i = 0; i < dist.p.size(); ++i) {
        if (!(dist.p[i] >= 0.0))
            throw validation_error(name + ": negative entry at index " + std::to_string(i));
        sum += dist.p[i];
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw validation_error(name + ": entries sum to " + std::to_string(sum) +
                               ", expected 1");
}

struct Channel {
    std::vector<std::vector<double>> rows;

    std::size_t input_size() const { return rows.size(); }
    std::size_t output_size() const { return rows.empty() ? 0 : rows[0].size(); }
    double operator()(std::size_t in, std::size_t out) const { return rows[in][out]; }
};

inline void validate_channel(const std::string& name, const Channel& ch) {
    for (std::size_t i = 0; i < ch.rows.size(); ++i) {
        if (ch.rows[i].size() != ch.output_size())
            throw validation_error(name + ": ragged row " + std::to_string(i));
        validate_distribution(name + " row " + std::to_string(i),
                              Distribution{ch.rows[i]});
    }
}

/*
 * Matrix of per-letter distortions d(s,z) in [0, +inf]. entries holds the
 * double view; exact holds the rational value for finite entries that were
 * specified exactly (always the case for parsed or built-in models).
 */
struct DistortionMatrix {
    std::vector<std::vector<double>> entries;
    std::vector<std::vector<std::optional<Rational>>> exact;

    std::size_t rows() const { return entries.size(); }
    std::size_t cols() const { return entries.empty() ? 0 : entries[0].size(); }
    double operator()(std::size_t s, std::size_t z) const { return entries[s][z]; }

    bool finite_at(std::size_t s, std::size_t z) const {
        return entries[s][z] != kPosInf;
    }
    // exact value of a finite entry; refuses when only a double is known
    Rational exact_at(std::size_t s, std::size_t z) const {
        if (!finite_at(s, z))
            throw std::domain_error("DistortionMatrix: entry is infinite");
        if (!exact[s][z])
            throw std::domain_error("DistortionMatrix: entry lacks exact rational form");
        return *exact[s][z];
    }
    bool all_exact() const {
        for (std::size_t s = 0; s < rows(); ++s)
            for (std::size_t z = 0; z < cols(); ++z)
                if (finite_at(s, z) && !exact[s][z]) return false;
        return true;
    }

    static DistortionMatrix from_rationals(
        const std::vector<std::vector<std::optional<Rational>>>& vals) {
        DistortionMatrix m;
        m.exact = vals;
        m.entries.resize(vals.size());
        for (std::size_t s = 0; s < vals.size(); ++s) {
            m.entries[s].resize(vals[s].size());
            for (std::size_t z = 0; z < vals[s].size(); ++z)
                m.entries[s][z] = vals[s][z] ? vals[s][z]->to_double() : kPosInf;
        }
        return m;
    }
};

inline void validate_distortion(const std::string& name, const DistortionMatrix& d) {
    for (std::size_t s = 0; s < d.rows(); ++s) {
        if (d.entries[s].size() != d.cols())
            throw validation_error(name + ": ragged row " + std::to_string(s));
        bool any_finite = false;
        for (std::size_t z = 0; z < d.cols(); ++z) {
            double v = d.entries[s][z];
            if (std::isnan(v) || v < 0.0)
                throw validation_error(name + ": entry (" + std::to_string(s) + "," +
                                       std::to_string(z) + ") must be in [0, inf]");
            if (v != kPosInf) any_finite = true;
        }
        if (!any_finite)
            throw validation_error(name + ": row " + std::to_string(s) +
                                   " has no finite entry");
    }
}

struct NoisySourceModel {
    std::vector<std::string> source_symbols;       // S
    std::vector<std::string> observation_symbols;  // X
    std::vector<std::string> reproduction_symbols; // Z
    Distribution source;       // P_S
    Channel observation;       // P_X|S, rows indexed by s
    DistortionMatrix distortion;  // d(s,z)

    std::size_t s_size() const { return source_symbols.size(); }
    std::size_t x_size() const { return observation_symbols.size(); }
    std::size_t z_size() const { return reproduction_symbols.size(); }

    // P_X(x) = sum_s P_S(s) P_X|S(x|s)
    Distribution observable_marginal() const {
        Distribution px;
        px.p.assign(x_size(), 0.0);
        for (std::size_t s = 0; s < s_size(); ++s)
            for (std::size_t x = 0; x < x_size(); ++x)
                px.p[x] += source.p[s] * observation(s, x);
        return px;
    }

    std::size_t symbol_index(const std::vector<std::string>& table,
                             const std::string& name) const {
        auto it = std::find(table.begin(), table.end(), name);
        if (it == table.end())
            throw validation_error("unknown symbol '" + name + "'");
        return static_cast<std::size_t>(it - table.begin());
    }
};

inline void validate(const NoisySourceModel& m) {
    if (m.source_symbols.empty() || m.observation_symbols.empty() ||
        m.reproduction_symbols.empty())
        throw validation_error("model: empty alphabet");
    auto check_unique = [](const std::string& name, const std::vector<std::string>& t) {
        for (std::size_t i = 0; i < t.size(); ++i)
            for (std::size_t j = i + 1; j < t.size(); ++j)
                if (t[i] == t[j])
                    throw validation_error(name + ": duplicate symbol '" + t[i] + "'");
    };
    check_unique("source alphabet", m.source_symbols);
    check_unique("observation alphabet", m.observation_symbols);
    check_unique("reproduction alphabet", m.reproduction_symbols);
    if (m.source.size() != m.s_size())
        throw validation_error("source distribution: expected " +
                               std::to_string(m.s_size()) + " entries");
    validate_distribution("source distribution", m.source);
    if (m.observation.input_size() != m.s_size() ||
        m.observation.output_size() != m.x_size())
        throw validation_error("observation channel: expected " +
                               std::to_string(m.s_size()) + " rows of " +
                               std::to_string(m.x_size()) + " entries");
    validate_channel("observation channel", m.observation);
    if (m.distortion.rows() != m.s_size() || m.distortion.cols() != m.z_size())
        throw validation_error("distortion matrix: expected " +
                               std::to_string(m.s_size()) + " rows of " +
                               std::to_string(m.z_size()) + " entries");
    validate_distortion("distortion matrix", m.distortion);
}

/*
 * The induced surrogate problem. x symbols with zero marginal probability
 * are dropped (kept_observation maps back to the original indexing) and a
 * warning is recorded for each.
 */
struct SurrogateModel {
    std::vector<std::string> observation_symbols;
    std::vector<std::string> reproduction_symbols;
    std::vector<std::string> source_symbols;
    Distribution observable;     // P_X restricted to kept symbols
    Channel conditional_source;  // P_S|X, rows indexed by kept x
    DistortionMatrix surrogate_distortion;  // dbar(x,z)
    std::vector<std::size_t> kept_observation;
    std::vector<std::string> warnings;

    std::size_t x_size() const { return observable.size(); }
    std::size_t z_size() const { return reproduction_symbols.size(); }
    double dbar(std::size_t x, std::size_t z) const {
        return surrogate_distortion(x, z);
    }

    // least expected surrogate distortion any kernel can achieve
    double d_min() const {
        double acc = 0.0;
        for (std::size_t x = 0; x < x_size(); ++x) {
            double best = kPosInf;
            for (std::size_t z = 0; z < z_size(); ++z)
                best = std::min(best, dbar(x, z));
            acc += observable[x] * best;
        }
        return acc;
    }
    // expected distortion of the best single reproduction symbol
    double d_max() const {
        double best = kPosInf;
        for (std::size_t z = 0; z < z_size(); ++z) {
            double acc = 0.0;
            for (std::size_t x = 0; x < x_size(); ++x)
                acc += observable[x] * dbar(x, z);
            best = std::min(best, acc);
        }
        return best;
    }

    // position of an original observation index among the kept symbols
    std::size_t kept_index(std::size_t model_x) const {
        for (std::size_t i = 0; i < kept_observation.size(); ++i)
            if (kept_observation[i] == model_x) return i;
        throw validation_error("SurrogateModel: observation symbol was pruned");
    }
};

inline SurrogateModel surrogate_from_noisy(const NoisySourceModel& m,
                                           bool allow_pruning = true) {
    validate(m);
    Distribution px = m.observable_marginal();
    SurrogateModel out;
    out.reproduction_symbols = m.reproduction_symbols;
    out.source_symbols = m.source_symbols;
    for (std::size_t x = 0; x < m.x_size(); ++x) {
        if (px[x] == 0.0) {
            if (!allow_pruning)
                throw validation_error("observation symbol '" +
                                       m.observation_symbols[x] +
                                       "' has zero probability and pruning is disabled");
            out.warnings.push_back("pruned zero-probability observation symbol '" +
                                   m.observation_symbols[x] + "'");
            continue;
        }
        out.kept_observation.push_back(x);
        out.observation_symbols.push_back(m.observation_symbols[x]);
        out.observable.p.push_back(px[x]);
        std::vector<double> psx(m.s_size());
        for (std::size_t s = 0; s < m.s_size(); ++s)
            psx[s] = m.source.p[s] * m.observation(s, x) / px[x];
        out.conditional_source.rows.push_back(std::move(psx));
    }
    if (out.observable.p.empty())
        throw validation_error("model: every observation symbol has zero probability");

    out.surrogate_distortion.entries.resize(out.x_size());
    out.surrogate_distortion.exact.resize(out.x_size());
    for (std::size_t xi = 0; xi < out.x_size(); ++xi) {
        out.surrogate_distortion.entries[xi].assign(m.z_size(), 0.0);
        out.surrogate_distortion.exact[xi].assign(m.z_size(), std::nullopt);
        for (std::size_t z = 0; z < m.z_size(); ++z) {
            double acc = 0.0;
            for (std::size_t s = 0; s < m.s_size(); ++s) {
                double w = out.conditional_source(xi, s);
                if (w == 0.0) continue;
                if (!m.distortion.finite_at(s, z)) {
                    acc = kPosInf;
                    break;
                }
                acc += w * m.distortion(s, z);
            }
            out.surrogate_distortion.entries[xi][z] = acc;
        }
        bool any_finite = false;
        for (std::size_t z = 0; z < m.z_size(); ++z)
            any_finite |= out.surrogate_distortion.entries[xi][z] != kPosInf;
        if (!any_finite)
            throw validation_error(
                "observation symbol '" + out.observation_symbols[xi] +
                "' has no reproduction with finite expected distortion");
    }
    return out;
}

/*
 * Law of the random per-letter distortion d(S,z) conditioned on X=x.
 * Finite atoms are exact rationals, deduplicated and sorted; mass on
 * infinite distortion is reported separately.
 */
struct ConditionalDistortionLaw {
    std::vector<std::pair<Rational, double>> atoms;
    double infinite_mass = 0.0;

    double mean() const {
        double acc = 0.0;
        for (const auto& [v, p] : atoms) acc += v.to_double() * p;
        return infinite_mass > 0.0 ? kPosInf : acc;
    }
};

inline ConditionalDistortionLaw conditional_distortion_dist(const NoisySourceModel& m,
                                                            std::size_t x,
                                                            std::size_t z) {
    Distribution px = m.observable_marginal();
    if (x >= m.x_size() || z >= m.z_size())
        throw validation_error("conditional_distortion_dist: symbol index out of range");
    if (!(px[x] > 0.0))
        throw validation_error("conditional_distortion_dist: P_X(x) = 0 for symbol '" +
                               m.observation_symbols[x] + "'");
    std::vector<std::pair<Rational, double>> raw;
    ConditionalDistortionLaw law;
    for (std::size_t s = 0; s < m.s_size(); ++s) {
        double w = m.source.p[s] * m.observation(s, x) / px[x];
        if (w == 0.0) continue;
        if (!m.distortion.finite_at(s, z))
            law.infinite_mass += w;
        else
            raw.emplace_back(m.distortion.exact_at(s, z), w);
    }
    std::sort(raw.begin(), raw.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [v, p] : raw) {
        if (!law.atoms.empty() && law.atoms.back().first == v)
            law.atoms.back().second += p;
        else
            law.atoms.emplace_back(v, p);
    }
    return law;
}

// erased fair coin flips: uniform binary source through an erasure channel,
// bit-error distortion against the source
inline NoisySourceModel builtin_bes(Rational delta) {
    if (delta < Rational(0) || delta > Rational(1))
        throw validation_error("builtin_bes: delta outside [0,1]");
    NoisySourceModel m;
    m.source_symbols = {"0", "1"};
    m.observation_symbols = {"0", "1", "?"};
    m.reproduction_symbols = {"0", "1"};
    m.source.p = {0.5, 0.5};
    double dd = delta.to_double();
    m.observation.rows = {{1.0 - dd, 0.0, dd}, {0.0, 1.0 - dd, dd}};
    m.distortion = DistortionMatrix::from_rationals(
        {{Rational(0), Rational(1)}, {Rational(1), Rational(0)}});
    validate(m);
    return m;
}

inline NoisySourceModel builtin_bes(double delta) {
    // accepts plain doubles for convenience; exact callers pass a Rational
    std::ostringstream ss;
    ss.precision(17);
    ss << delta;
    return builtin_bes(Rational::parse(ss.str()));
}

/*
 * Model file format (line oriented, '#' starts a comment):
 *   source_alphabet <name> <name> ...
 *   observation_alphabet <name> ...
 *   reproduction_alphabet <name> ...
 *   source <p> <p> ...                     one row, length |S|
 *   observation <p> ...                    |S| rows, each length |X|
 *   distortion <v> ...                     |S| rows, each length |Z|, "inf" allowed
 * Probabilities and distortions accept decimals or "p/q".
 */
inline NoisySourceModel parse_model(std::istream& in, const std::string& origin) {
    NoisySourceModel m;
    std::vector<std::vector<double>> obs_rows;
    std::vector<std::vector<std::optional<Rational>>> dist_rows;
    bool have_source = false;
    std::string line;
    int lineno = 0;

    auto fail = [&](const std::string& msg) {
        throw validation_error(origin + ":" + std::to_string(lineno) + ": " + msg);
    };

    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        std::vector<std::string> fields;
        std::string tok;
        while (ls >> tok) fields.push_back(tok);
        if (fields.empty()) fail("directive '" + key + "' has no values");

        try {
            if (key == "source_alphabet") {
                m.source_symbols = fields;
            } else if (key == "observation_alphabet") {
                m.observation_symbols = fields;
            } else if (key == "reproduction_alphabet") {
                m.reproduction_symbols = fields;
            } else if (key == "source") {
                for (const auto& f : fields)
                    m.source.p.push_back(Rational::parse(f).to_double());
                have_source = true;
            } else if (key == "observation") {
                std::vector<double> row;
                for (const auto& f : fields) row.push_back(Rational::parse(f).to_double());
                obs_rows.push_back(std::move(row));
            } else if (key == "distortion") {
                std::vector<std::optional<Rational>> row;
                for (const auto& f : fields) {
                    if (f == "inf")
                        row.push_back(std::nullopt);
                    else
                        row.push_back(Rational::parse(f));
                }
                dist_rows.push_back(std::move(row));
            } else {
                fail("unknown directive '" + key + "'");
            }
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        } catch (const std::overflow_error& e) {
            fail(e.what());
        }
    }
    if (!have_source) throw validation_error(origin + ": missing 'source' row");
    if (obs_rows.empty()) throw validation_error(origin + ": missing 'observation' rows");
    if (dist_rows.empty()) throw validation_error(origin + ": missing 'distortion' rows");
    m.observation.rows = std::move(obs_rows);
    m.distortion = DistortionMatrix::from_rationals(dist_rows);
    validate(m);
    return m;
}

inline NoisySourceModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error("cannot open model file '" + path + "'");
    return parse_model(in, path);
}

}  // namespace nlc
