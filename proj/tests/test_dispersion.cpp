#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "nlc/dispersion.hpp"
#include "support.hpp"

using namespace nlc;
using namespace testsupport;

namespace {

struct BesSetup {
    NoisySourceModel model;
    SurrogateModel sur;
    TiltedSolution sol;
    TiltedInfoTable table;
};

BesSetup solved_bes(double delta, double d) {
    BesSetup b{builtin_bes(delta), {}, {}, {}};
    b.sur = surrogate_from_noisy(b.model);
    b.sol = solve_distortion(b.sur, d);
    b.table = tilted_info_table(b.model, b.sol);
    return b;
}

}  // namespace

TEST_CASE("tilted information tables on the erased fair coin") {
    auto b = solved_bes(0.1, 0.1);
    double l = b.sol.lambda_star;
    REQUIRE(l == Catch::Approx(std::log(17.0)).epsilon(1e-8));

    double plain = std::log(2.0 / (1.0 + std::exp(-l))) - l * 0.1;
    double erased = l / 2 - l * 0.1;
    CHECK(b.table.surrogate[0] == Catch::Approx(plain).margin(1e-8));
    CHECK(b.table.surrogate[1] == Catch::Approx(plain).margin(1e-8));
    CHECK(b.table.surrogate[2] == Catch::Approx(erased).margin(1e-8));

    // the erased observation leaves both source values at distance 1/2
    CHECK(b.table.noisy[0][0] == Catch::Approx(plain).margin(1e-8));
    CHECK(b.table.noisy[1][1] == Catch::Approx(plain).margin(1e-8));
    CHECK(b.table.noisy[0][2] == Catch::Approx(erased).margin(1e-8));
    CHECK(b.table.noisy[1][2] == Catch::Approx(erased).margin(1e-8));

    CHECK(b.table.rate == Catch::Approx(b.sol.rate).margin(1e-10));
    double mean_noisy = 0.0;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t x = 0; x < 3; ++x)
            mean_noisy += b.table.joint[s][x] * b.table.noisy[s][x];
    CHECK(mean_noisy == Catch::Approx(b.sol.rate).margin(1e-8));
}

TEST_CASE("noisy table equals the divergence form of its definition") {
    std::mt19937 rng(31);
    std::vector<NoisySourceModel> models{builtin_bes(0.1),
                                         random_model_nondegenerate(rng, 2, 3, 3),
                                         random_model_nondegenerate(rng, 3, 3, 4)};
    for (const auto& model : models) {
        auto sur = surrogate_from_noisy(model);
        double d = 0.5 * (sur.d_min() + sur.d_max());
        auto sol = solve_distortion(sur, d);
        auto t = tilted_info_table(model, sol);
        for (std::size_t x = 0; x < sur.x_size(); ++x) {
            double div = 0.0, dz_x = 0.0;
            for (std::size_t z = 0; z < sur.z_size(); ++z) {
                double q = sol.kernel(x, z);
                if (q <= 0.0) continue;
                div += q * std::log(q / sol.marginal[z]);
                dz_x += q * sur.dbar(x, z);
            }
            CHECK(t.surrogate[x] ==
                  Catch::Approx(div + sol.lambda_star * dz_x -
                                sol.lambda_star * sol.distortion)
                      .margin(1e-9));
            for (std::size_t s = 0; s < model.s_size(); ++s) {
                double ds = 0.0;
                for (std::size_t z = 0; z < sur.z_size(); ++z)
                    if (sol.kernel(x, z) > 0.0)
                        ds += sol.kernel(x, z) * model.distortion(s, z);
                CHECK(t.noisy[s][x] ==
                      Catch::Approx(div + sol.lambda_star * ds -
                                    sol.lambda_star * sol.distortion)
                          .margin(1e-9));
            }
        }
    }
}

TEST_CASE("surrogate table equals the per-z density form on the support") {
    std::mt19937 rng(37);
    std::vector<NoisySourceModel> models{builtin_bes(0.2),
                                         random_model_nondegenerate(rng, 3, 4, 3)};
    for (const auto& model : models) {
        auto sur = surrogate_from_noisy(model);
        double d = 0.45 * sur.d_min() + 0.55 * sur.d_max();
        auto sol = solve_distortion(sur, d);
        auto t = tilted_info_table(model, sol);
        for (std::size_t x = 0; x < sur.x_size(); ++x)
            for (std::size_t z = 0; z < sur.z_size(); ++z) {
                if (sol.marginal[z] <= 1e-9 || sur.dbar(x, z) == kPosInf) continue;
                double density = std::log(sol.kernel(x, z) / sol.marginal[z]) +
                                 sol.lambda_star * sur.dbar(x, z) -
                                 sol.lambda_star * sol.distortion;
                CHECK(density == Catch::Approx(t.surrogate[x]).margin(1e-7));
            }
    }
}

TEST_CASE("z-resolved law collapses to three atoms on the erased fair coin") {
    auto b = solved_bes(0.1, 0.1);
    double l = b.sol.lambda_star;
    auto atoms = noisy_tilted_law(b.table, b.model);
    std::sort(atoms.begin(), atoms.end(),
              [](const WeightedAtom& a, const WeightedAtom& c) { return a.value < c.value; });
    std::vector<WeightedAtom> merged;
    for (const auto& a : atoms) {
        if (!merged.empty() && std::abs(a.value - merged.back().value) < 1e-9)
            merged.back().prob += a.prob;
        else
            merged.push_back(a);
    }
    REQUIRE(merged.size() == 3);
    CHECK(merged[0].value == Catch::Approx(-l * 0.1).margin(1e-9));
    CHECK(merged[0].prob == Catch::Approx(0.05).margin(1e-9));
    CHECK(merged[1].value ==
          Catch::Approx(std::log(2.0 / (1.0 + std::exp(-l))) - l * 0.1).margin(1e-9));
    CHECK(merged[1].prob == Catch::Approx(0.9).margin(1e-9));
    CHECK(merged[2].value == Catch::Approx(l - l * 0.1).margin(1e-9));
    CHECK(merged[2].prob == Catch::Approx(0.05).margin(1e-9));
}

TEST_CASE("dispersion report matches the closed forms") {
    auto b = solved_bes(0.1, 0.1);
    auto rep = dispersion_report(b.table, b.model);
    double l = b.sol.lambda_star;

    CHECK(rep.v_surrogate == Catch::Approx(bes_v(0.1, 0.1)).margin(1e-9));
    CHECK(rep.v_surrogate == Catch::Approx(0.0548).margin(5e-4));
    CHECK(rep.v_noisy == Catch::Approx(bes_vtilde(0.1, 0.1)).margin(1e-9));
    CHECK(rep.v_noisy - rep.v_surrogate == Catch::Approx(0.025 * l * l).margin(1e-9));
    CHECK(rep.v_noisy - rep.v_surrogate == Catch::Approx(0.2007).margin(5e-4));
    CHECK(rep.inner_variance_term == Catch::Approx(0.025 * l * l).margin(1e-9));
    CHECK(std::abs(rep.covariance_cross_term) < 1e-10);
    CHECK(rep.v_noisy == Catch::Approx(rep.v_surrogate + rep.inner_variance_term).margin(1e-10));
    // conditioning on (S,X) erases the reproduction randomness entirely here
    CHECK(rep.v_conditional == Catch::Approx(rep.v_surrogate).margin(1e-9));

    // Monte Carlo of the two-point surrogate law as an independent oracle
    std::mt19937 rng(97);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double plain = std::log(2.0 / (1.0 + std::exp(-l))) - l * 0.1;
    double erased = l / 2 - l * 0.1;
    const int n = 10000000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        double v = u(rng) < 0.1 ? erased : plain;
        sum += v;
        sumsq += v * v;
    }
    double mc_var = sumsq / n - (sum / n) * (sum / n);
    CHECK(rep.v_surrogate == Catch::Approx(mc_var).margin(5e-4));
}

TEST_CASE("noiseless observation collapses the two dispersions") {
    auto model = builtin_bes(0.0);
    auto sur = surrogate_from_noisy(model);
    auto sol = solve_distortion(sur, 0.11);
    auto t = tilted_info_table(model, sol);
    auto rep = dispersion_report(t, model);
    CHECK(rep.inner_variance_term == 0.0);
    CHECK(rep.v_noisy == Catch::Approx(rep.v_surrogate).margin(1e-12));
    for (std::size_t s = 0; s < model.s_size(); ++s)
        CHECK(t.noisy[s][s] == Catch::Approx(t.surrogate[s]).margin(1e-12));
}

TEST_CASE("variance decomposition holds on random noisy models") {
    std::mt19937 rng(53);
    for (int trial = 0; trial < 10; ++trial) {
        auto model = random_model_nondegenerate(rng, 2 + trial % 3, 2 + (trial + 1) % 3,
                                                2 + (trial + 2) % 3);
        auto sur = surrogate_from_noisy(model);
        double d = 0.4 * sur.d_min() + 0.6 * sur.d_max();
        auto sol = solve_distortion(sur, d);
        auto t = tilted_info_table(model, sol);
        auto rep = dispersion_report(t, model);
        INFO("trial " << trial);
        CHECK(rep.v_noisy >= rep.v_surrogate - 1e-10);
        CHECK(rep.v_noisy ==
              Catch::Approx(rep.v_surrogate + rep.inner_variance_term).margin(1e-10));
        CHECK(std::abs(rep.covariance_cross_term) < 1e-10);
        CHECK(rep.v_conditional <= rep.v_noisy + 1e-12);

        // conditional centering of the inner term against the surrogate part
        double cov = 0.0;
        for (std::size_t s = 0; s < model.s_size(); ++s)
            for (std::size_t x = 0; x < sur.x_size(); ++x)
                cov += t.joint[s][x] * (t.surrogate[x] - t.rate) *
                       (t.noisy[s][x] - t.surrogate[x]);
        CHECK(std::abs(cov) < 1e-10);
    }
}

TEST_CASE("gaussian approximation formula and shape") {
    auto b = solved_bes(0.1, 0.1);
    auto rep = dispersion_report(b.table, b.model);

    CHECK(gaussian_approx_rate(1000, 0.1, 0.5, b.sol, rep) ==
          Catch::Approx(b.sol.rate).margin(1e-9));
    CHECK(gaussian_approx_rate(1000, 0.1, 0.5, b.sol, rep, ThirdOrder::half_log_over_k) ==
          Catch::Approx(b.sol.rate + 0.5 * std::log(1000.0) / 1000.0).margin(1e-12));

    double g = gaussian_approx_rate(1000, 0.1, 0.1, b.sol, rep);
    CHECK(g / std::log(2.0) == Catch::Approx(0.651).margin(1e-3));
    double oracle = bes_rate(0.1, 0.1) +
                    std::sqrt(bes_vtilde(0.1, 0.1) / 1000.0) * gaussian_q_inv(0.1);
    CHECK(g == Catch::Approx(oracle).margin(1e-8));

    double g6 = gaussian_approx_rate(1000000, 0.1, 0.1, b.sol, rep);
    CHECK((g6 - b.sol.rate) /
              (std::sqrt(rep.v_noisy / 1000000.0) * gaussian_q_inv(0.1)) ==
          Catch::Approx(1.0).epsilon(1e-6));

    CHECK(gaussian_approx_rate(1000, 0.1, 0.05, b.sol, rep) > g);
    CHECK(g > gaussian_approx_rate(1000, 0.1, 0.3, b.sol, rep));
    CHECK(g > gaussian_approx_rate(5000, 0.1, 0.1, b.sol, rep));
    CHECK(gaussian_approx_rate(5000, 0.1, 0.1, b.sol, rep) > b.sol.rate);

    CHECK_THROWS_AS(gaussian_approx_rate(0, 0.1, 0.1, b.sol, rep), validation_error);
    CHECK_THROWS_AS(gaussian_approx_rate(10, 0.1, 0.0, b.sol, rep), validation_error);
    CHECK_THROWS_AS(gaussian_approx_rate(10, 0.1, 1.0, b.sol, rep), validation_error);
}

TEST_CASE("directional derivative matches the noisy tilted information") {
    auto model = builtin_bes(0.1);
    // source 0 observed as an erasure: a genuinely noisy direction
    auto chk = directional_derivative_check(model, 0, 2, 0.1);
    CHECK(std::abs(chk.numeric - chk.analytic) <= 1e-3);

    auto b = solved_bes(0.1, 0.1);
    CHECK(chk.analytic ==
          Catch::Approx(b.table.noisy[0][2] - b.sol.rate).margin(1e-9));

    // analytic values average to zero over the joint law
    double mean = 0.0;
    for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t x = 0; x < 3; ++x) {
            if (b.table.joint[s][x] <= 0.0) continue;
            mean += b.table.joint[s][x] * (b.table.noisy[s][x] - b.sol.rate);
        }
    CHECK(std::abs(mean) < 1e-8);

    CHECK_THROWS_AS(directional_derivative_check(model, 0, 1, 0.1), validation_error);
    CHECK_THROWS_AS(directional_derivative_check(model, 0, 2, 0.1, 0.9), validation_error);
}

TEST_CASE("derivative identity and variance on a noiseless random model") {
    std::mt19937 rng(71);
    auto model = random_noiseless_model(rng, 3, 3);
    auto sur = surrogate_from_noisy(model);
    double d = 0.5 * (sur.d_min() + sur.d_max());
    if (sur.d_max() - sur.d_min() < 0.05) return;  // degenerate draw guard
    auto sol = solve_distortion(sur, d);
    auto t = tilted_info_table(model, sol);
    auto rep = dispersion_report(t, model);

    double var = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
        auto chk = directional_derivative_check(model, s, s, d);
        INFO("s=" << s);
        CHECK(std::abs(chk.numeric - chk.analytic) <= 1e-3);
        CHECK(chk.analytic ==
              Catch::Approx(t.surrogate[sur.kept_index(s)] - sol.rate).margin(1e-9));
        var += model.source[s] * chk.analytic * chk.analytic;
    }
    // with S = X the z-resolved and per-(s,x) variances coincide
    CHECK(var == Catch::Approx(rep.v_noisy).margin(1e-10));
}
