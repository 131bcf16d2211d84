#ifndef NBCV_LP_HPP
#define NBCV_LP_HPP

#include <limits>
#include <string>
#include <vector>

namespace nbcv {

enum class LpRelation { le, eq, ge };

struct LpRow {
    std::vector<double> coeffs;  // dense, one per variable
    LpRelation rel = LpRelation::le;
    double rhs = 0.0;
};

constexpr double kLpInf = std::numeric_limits<double>::infinity();

// max objective . x  subject to rows and per-variable bounds (extended reals)
struct LpProblem {
    std::size_t n = 0;
    std::vector<double> objective;
    std::vector<LpRow> rows;
    std::vector<double> lo, hi;

    static LpProblem with_vars(std::size_t n);
    void add_row(std::vector<double> coeffs, LpRelation rel, double rhs);
    void validate() const;
};

enum class LpStatus { optimal, infeasible, unbounded, stalled };
std::string lp_status_name(LpStatus s);

struct LpOutcome {
    LpStatus status = LpStatus::stalled;
    double objective = 0.0;
    std::vector<double> point;  // structural values, meaningful when optimal
};

// Two-phase dense tableau simplex with bounded variables. Deterministic:
// largest-reduced-cost entering with index tie-break, switching to Bland's
// rule after 2(n+m) degenerate pivots; hard cap of 1e6 pivots -> stalled.
LpOutcome solve_lp(const LpProblem& p);

// max violation of rows and bounds at the point (feasibility check helper)
double lp_feasibility_error(const LpProblem& p, const std::vector<double>& x);

// debug dump in the standard LP text format
std::string lp_to_text(const LpProblem& p);

}  // namespace nbcv

#endif
