#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nbcv/lp.hpp"
#include "nbcv/rng.hpp"
#include "support/oracles.hpp"

using namespace nbcv;
using namespace nbcv::testing;

TEST_CASE("lp: simple box optimum") {
    LpProblem p = LpProblem::with_vars(2);
    p.objective = {1.0, 1.0};
    p.lo = {0.0, 0.0};
    p.hi = {1.0, 1.0};
    p.add_row({1.0, 1.0}, LpRelation::le, 1.0);
    LpOutcome out = solve_lp(p);
    CHECK(out.status == LpStatus::optimal);
    CHECK(out.objective == doctest::Approx(1.0));
    CHECK(lp_feasibility_error(p, out.point) <= 1e-7);
}

TEST_CASE("lp: infeasible pair of constraints") {
    LpProblem p = LpProblem::with_vars(1);
    p.objective = {1.0};
    p.add_row({1.0}, LpRelation::ge, 1.0);
    p.add_row({1.0}, LpRelation::le, 0.0);
    CHECK(solve_lp(p).status == LpStatus::infeasible);
}

TEST_CASE("lp: unbounded ray") {
    LpProblem p = LpProblem::with_vars(1);
    p.objective = {1.0};
    p.lo = {0.0};
    CHECK(solve_lp(p).status == LpStatus::unbounded);
}

TEST_CASE("lp: equality rows and free variables") {
    // max y s.t. y = 2x - 1, x in [0, 1]; y free
    LpProblem p = LpProblem::with_vars(2);
    p.objective = {0.0, 1.0};
    p.lo = {0.0, -kLpInf};
    p.hi = {1.0, kLpInf};
    p.add_row({2.0, -1.0}, LpRelation::eq, 1.0);
    LpOutcome out = solve_lp(p);
    CHECK(out.status == LpStatus::optimal);
    CHECK(out.objective == doctest::Approx(1.0));
    CHECK(out.point[0] == doctest::Approx(1.0));
}

TEST_CASE("lp: negative lower bounds and ge rows") {
    // max x + 2y s.t. x + y >= -1, x - y <= 2, x,y in [-3, 3]
    LpProblem p = LpProblem::with_vars(2);
    p.objective = {1.0, 2.0};
    p.lo = {-3.0, -3.0};
    p.hi = {3.0, 3.0};
    p.add_row({1.0, 1.0}, LpRelation::ge, -1.0);
    p.add_row({1.0, -1.0}, LpRelation::le, 2.0);
    LpOutcome out = solve_lp(p);
    CHECK(out.status == LpStatus::optimal);
    CHECK(out.objective == doctest::Approx(9.0));  // x = 3, y = 3
}

TEST_CASE("lp: determinism of repeated solves") {
    RngStream rng(7, "lp");
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t n = 2 + rng.index(4);
        std::size_t m = 1 + rng.index(5);
        LpProblem p = LpProblem::with_vars(n);
        for (std::size_t j = 0; j < n; ++j) {
            p.objective[j] = std::floor(rng.uniform(-5, 6));
            p.lo[j] = -10.0;
            p.hi[j] = 10.0;
        }
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> row(n);
            for (double& v : row) v = std::floor(rng.uniform(-5, 6));
            LpRelation rel = static_cast<LpRelation>(rng.index(3));
            p.add_row(row, rel, std::floor(rng.uniform(-5, 6)));
        }
        LpOutcome a = solve_lp(p);
        LpOutcome b = solve_lp(p);
        CHECK(a.status == b.status);
        if (a.status == LpStatus::optimal) CHECK(a.objective == b.objective);
    }
}

TEST_CASE("lp: vertex-enumeration brute force agreement on random small LPs") {
    RngStream rng(11, "lp-brute");
    std::size_t optimal_seen = 0, infeasible_seen = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::size_t n = 1 + rng.index(4);  // up to 4 vars keeps enumeration quick
        std::size_t m = 1 + rng.index(6);
        LpProblem p = LpProblem::with_vars(n);
        for (std::size_t j = 0; j < n; ++j) {
            p.objective[j] = std::floor(rng.uniform(-5, 6));
            p.lo[j] = -10.0;
            p.hi[j] = 10.0;
        }
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<double> row(n);
            for (double& v : row) v = std::floor(rng.uniform(-5, 6));
            p.add_row(row, static_cast<LpRelation>(rng.index(3)), std::floor(rng.uniform(-5, 6)));
        }

        BruteForceLpResult ref = brute_force_lp(p);
        LpOutcome got = solve_lp(p);
        CAPTURE(trial);
        if (ref.feasible) {
            REQUIRE(got.status == LpStatus::optimal);
            CHECK(std::fabs(got.objective - ref.objective) <= 1e-6);
            CHECK(lp_feasibility_error(p, got.point) <= 1e-7);
            optimal_seen += 1;
        } else {
            REQUIRE(got.status == LpStatus::infeasible);
            infeasible_seen += 1;
        }
    }
    CHECK(optimal_seen > 50);  // the generator must exercise both outcomes
    CHECK(infeasible_seen > 10);
}

TEST_CASE("lp: a redundant constraint changes nothing") {
    RngStream rng(13, "lp-redundant");
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t n = 2 + rng.index(3);
        LpProblem p = LpProblem::with_vars(n);
        for (std::size_t j = 0; j < n; ++j) {
            p.objective[j] = std::floor(rng.uniform(-5, 6));
            p.lo[j] = -10.0;
            p.hi[j] = 10.0;
        }
        std::vector<double> row(n);
        for (double& v : row) v = std::floor(rng.uniform(-5, 6));
        double rhs = std::floor(rng.uniform(0, 6));
        p.add_row(row, LpRelation::le, rhs);

        LpOutcome base = solve_lp(p);
        LpProblem q = p;
        q.add_row(row, LpRelation::le, rhs + 1.0);  // implied by the original
        LpOutcome redundant = solve_lp(q);
        CHECK(base.status == redundant.status);
        if (base.status == LpStatus::optimal)
            CHECK(std::fabs(base.objective - redundant.objective) <= 1e-6);
    }
}

TEST_CASE("lp: dimension mismatch and text dump") {
    LpProblem p = LpProblem::with_vars(2);
    CHECK_THROWS(p.add_row({1.0}, LpRelation::le, 0.0));
    p.objective = {1.0, -2.0};
    p.lo = {0.0, -kLpInf};
    p.hi = {5.0, kLpInf};
    p.add_row({1.0, 1.0}, LpRelation::le, 3.0);
    std::string text = lp_to_text(p);
    CHECK(text.find("Maximize") != std::string::npos);
    CHECK(text.find("Subject To") != std::string::npos);
    CHECK(text.find("x2 free") != std::string::npos);
    CHECK(text.find("End") != std::string::npos);
}

TEST_CASE("lp: degenerate problems terminate (Bland fallback)") {
    // many redundant rows through the origin force degenerate pivots
    LpProblem p = LpProblem::with_vars(3);
    p.objective = {1.0, 1.0, 1.0};
    p.lo = {0.0, 0.0, 0.0};
    p.hi = {1.0, 1.0, 1.0};
    for (int i = 0; i < 8; ++i) {
        std::vector<double> row{1.0 + i * 0.0, 1.0, 1.0};
        p.add_row(row, LpRelation::ge, 0.0);
    }
    p.add_row({1.0, 1.0, 1.0}, LpRelation::le, 1.5);
    LpOutcome out = solve_lp(p);
    CHECK(out.status == LpStatus::optimal);
    CHECK(out.objective == doctest::Approx(1.5));
}
