#pragma once

// helpers shared across the test suites: closed forms for the erased fair
// coin instance and reproducible random model generators

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlc/model.hpp"

namespace testsupport {

inline double bes_lambda(double d, double delta) {
    return std::log((1.0 - delta / 2 - d) / (d - delta / 2));
}
inline double bes_rate(double d, double delta) {
    return (1.0 - delta) *
           (std::log(2.0) - nlc::binary_entropy((d - delta / 2) / (1.0 - delta)));
}
// dispersion of the surrogate tilted information
inline double bes_v(double d, double delta) {
    double l = bes_lambda(d, delta);
    double c = std::log(std::cosh(l / 2));
    return delta * (1.0 - delta) * c * c;
}
// dispersion of the z-resolved noisy tilted information
inline double bes_vtilde(double d, double delta) {
    double l = bes_lambda(d, delta);
    return bes_v(d, delta) + delta / 4 * l * l;
}

inline std::vector<double> random_simplex(std::mt19937& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(n);
    double tot = 0.0;
    for (auto& e : v) tot += (e = 0.2 + u(rng));
    for (auto& e : v) e /= tot;
    return v;
}

inline nlc::NoisySourceModel random_model(std::mt19937& rng, std::size_t ns,
                                          std::size_t nx, std::size_t nz) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nlc::NoisySourceModel m;
    for (std::size_t s = 0; s < ns; ++s) m.source_symbols.push_back("s" + std::to_string(s));
    for (std::size_t x = 0; x < nx; ++x)
        m.observation_symbols.push_back("x" + std::to_string(x));
    for (std::size_t z = 0; z < nz; ++z)
        m.reproduction_symbols.push_back("z" + std::to_string(z));
    m.source.p = random_simplex(rng, ns);
    for (std::size_t s = 0; s < ns; ++s)
        m.observation.rows.push_back(random_simplex(rng, nx));
    m.distortion.entries.assign(ns, std::vector<double>(nz));
    m.distortion.exact.assign(ns, std::vector<std::optional<nlc::Rational>>(nz));
    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t z = 0; z < nz; ++z) m.distortion.entries[s][z] = 2.0 * u(rng);
    nlc::validate(m);
    return m;
}

// random source and distortion, identity observation: S = X
inline nlc::NoisySourceModel random_noiseless_model(std::mt19937& rng, std::size_t n,
                                                    std::size_t nz) {
    auto m = random_model(rng, n, n, nz);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t x = 0; x < n; ++x)
            m.observation.rows[s][x] = s == x ? 1.0 : 0.0;
    return m;
}

// a single reproduction column can dominate, collapsing (d_min, d_max); redraw
inline nlc::SurrogateModel random_surrogate(std::mt19937& rng, std::size_t ns,
                                            std::size_t nx, std::size_t nz) {
    for (int attempt = 0; attempt < 50; ++attempt) {
        auto sur = nlc::surrogate_from_noisy(random_model(rng, ns, nx, nz));
        if (sur.d_max() - sur.d_min() > 0.05) return sur;
    }
    throw std::runtime_error("random_surrogate: no usable draw");
}

inline nlc::NoisySourceModel random_model_nondegenerate(std::mt19937& rng, std::size_t ns,
                                                        std::size_t nx, std::size_t nz) {
    for (int attempt = 0; attempt < 50; ++attempt) {
        auto m = random_model(rng, ns, nx, nz);
        auto sur = nlc::surrogate_from_noisy(m);
        if (sur.d_max() - sur.d_min() > 0.05) return m;
    }
    throw std::runtime_error("random_model_nondegenerate: no usable draw");
}

}  // namespace testsupport
