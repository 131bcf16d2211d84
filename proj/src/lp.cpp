#include "nbcv/lp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace nbcv {

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kFeasTol = 1e-7;
constexpr double kDegenerateStep = 1e-12;
constexpr std::size_t kPivotCap = 1000000;

}  // namespace

LpProblem LpProblem::with_vars(std::size_t n_vars) {
    LpProblem p;
    p.n = n_vars;
    p.objective.assign(n_vars, 0.0);
    p.lo.assign(n_vars, -kLpInf);
    p.hi.assign(n_vars, kLpInf);
    return p;
}

void LpProblem::add_row(std::vector<double> coeffs, LpRelation rel, double rhs) {
    if (coeffs.size() != n) throw std::invalid_argument("LpProblem: row width mismatch");
    rows.push_back({std::move(coeffs), rel, rhs});
}

void LpProblem::validate() const {
    if (objective.size() != n || lo.size() != n || hi.size() != n)
        throw std::invalid_argument("LpProblem: vector widths do not match n");
    for (std::size_t j = 0; j < n; ++j)
        if (lo[j] > hi[j]) throw std::invalid_argument("LpProblem: lo > hi");
    for (const LpRow& r : rows)
        if (r.coeffs.size() != n) throw std::invalid_argument("LpProblem: row width mismatch");
}

std::string lp_status_name(LpStatus s) {
    switch (s) {
        case LpStatus::optimal: return "optimal";
        case LpStatus::infeasible: return "infeasible";
        case LpStatus::unbounded: return "unbounded";
        case LpStatus::stalled: return "stalled";
    }
    return "?";
}

namespace {

enum class VarState { basic, at_lo, at_up, free_zero };

struct Simplex {
    // columns: structural 0..n-1, slacks n..n+m-1, artificials after that
    std::size_t n = 0, m = 0, total = 0;
    std::vector<double> T;      // m x total tableau (B^-1 A)
    std::vector<double> z;      // active objective row, length total
    std::vector<double> c;      // active objective coefficients
    std::vector<double> lo, hi;
    std::vector<VarState> state;
    std::vector<std::size_t> basis;  // column basic in each row
    std::vector<double> xb;          // basic values
    std::size_t degenerate_pivots = 0;
    std::size_t pivots = 0;
    bool bland = false;

    double& t(std::size_t i, std::size_t j) { return T[i * total + j]; }
    double tv(std::size_t i, std::size_t j) const { return T[i * total + j]; }

    double nb_value(std::size_t j) const {
        switch (state[j]) {
            case VarState::at_lo: return lo[j];
            case VarState::at_up: return hi[j];
            default: return 0.0;
        }
    }

    void rebuild_objective_row() {
        z.assign(total, 0.0);
        for (std::size_t j = 0; j < total; ++j) {
            double acc = -c[j];
            for (std::size_t i = 0; i < m; ++i) {
                double cb = c[basis[i]];
                if (cb != 0.0) acc += cb * tv(i, j);
            }
            z[j] = acc;
        }
    }

    // reduced cost d_j = c_j - c_B B^-1 A_j = -z_j
    double reduced(std::size_t j) const { return -z[j]; }

    bool improving(std::size_t j, int& dir) const {
        if (state[j] == VarState::basic) return false;
        if (lo[j] == hi[j]) return false;  // fixed
        double d = reduced(j);
        if ((state[j] == VarState::at_lo || state[j] == VarState::free_zero) && d > kPivotTol) {
            dir = +1;
            return true;
        }
        if ((state[j] == VarState::at_up || state[j] == VarState::free_zero) && d < -kPivotTol) {
            dir = -1;
            return true;
        }
        return false;
    }

    // returns optimal=true when no improving column; false when a step was
    // taken; throws LpStatus codes via out-params for unbounded
    enum class StepResult { stepped, optimal, unbounded, stalled };

    StepResult step() {
        if (++pivots > kPivotCap) return StepResult::stalled;
        if (!bland && degenerate_pivots >= 2 * (total + m)) bland = true;

        std::size_t q = total;
        int dir = 0;
        if (bland) {
            for (std::size_t j = 0; j < total; ++j) {
                int d;
                if (improving(j, d)) {
                    q = j;
                    dir = d;
                    break;
                }
            }
        } else {
            double best = kPivotTol;
            for (std::size_t j = 0; j < total; ++j) {
                int d;
                if (!improving(j, d)) continue;
                double mag = std::fabs(reduced(j));
                if (mag > best) {
                    best = mag;
                    q = j;
                    dir = d;
                }
            }
        }
        if (q == total) return StepResult::optimal;

        // ratio test: entering moves by t >= 0 in direction dir; basic i
        // changes at rate -dir*T[i][q]
        double t_row = kLpInf;
        std::size_t leave_row = m;
        for (std::size_t i = 0; i < m; ++i) {
            double alpha = dir * tv(i, q);
            double ti = kLpInf;
            if (alpha > kPivotTol) {
                if (lo[basis[i]] > -kLpInf) ti = std::max((xb[i] - lo[basis[i]]) / alpha, 0.0);
            } else if (alpha < -kPivotTol) {
                if (hi[basis[i]] < kLpInf) ti = std::max((hi[basis[i]] - xb[i]) / (-alpha), 0.0);
            }
            if (ti == kLpInf) continue;
            if (leave_row == m || ti < t_row - 1e-12) {
                t_row = ti;
                leave_row = i;
            } else if (ti < t_row + 1e-12 && basis[i] < basis[leave_row]) {
                t_row = std::min(t_row, ti);
                leave_row = i;
            }
        }

        double t_flip = kLpInf;
        if (lo[q] > -kLpInf && hi[q] < kLpInf) t_flip = hi[q] - lo[q];

        if (t_row == kLpInf && t_flip == kLpInf) return StepResult::unbounded;

        if (t_flip <= t_row) {
            // bound flip, no basis change
            for (std::size_t i = 0; i < m; ++i) xb[i] -= dir * t_flip * tv(i, q);
            state[q] = state[q] == VarState::at_lo ? VarState::at_up : VarState::at_lo;
            if (t_flip <= kDegenerateStep) degenerate_pivots += 1;
            return StepResult::stepped;
        }

        if (t_row <= kDegenerateStep) degenerate_pivots += 1;
        double step = dir * t_row;
        for (std::size_t i = 0; i < m; ++i) xb[i] -= step * tv(i, q);

        std::size_t p_col = basis[leave_row];
        double piv = tv(leave_row, q);
        if (std::fabs(piv) < kPivotTol) {
            // numerically unusable pivot; refuse to divide
            return StepResult::stalled;
        }

        // leaving variable parks exactly at the bound it hit
        double alpha = dir * piv;
        state[p_col] = alpha > 0.0 ? VarState::at_lo : VarState::at_up;

        double enter_val = nb_value(q) + step;
        basis[leave_row] = q;
        xb[leave_row] = enter_val;
        state[q] = VarState::basic;

        // Gauss-Jordan on the tableau and objective row
        double inv = 1.0 / piv;
        double* prow = &T[leave_row * total];
        for (std::size_t j = 0; j < total; ++j) prow[j] *= inv;
        prow[q] = 1.0;
        for (std::size_t i = 0; i < m; ++i) {
            if (i == leave_row) continue;
            double f = tv(i, q);
            if (f == 0.0) continue;
            double* row = &T[i * total];
            for (std::size_t j = 0; j < total; ++j) row[j] -= f * prow[j];
            row[q] = 0.0;
        }
        double fz = z[q];
        if (fz != 0.0) {
            for (std::size_t j = 0; j < total; ++j) z[j] -= fz * prow[j];
            z[q] = 0.0;
        }
        return StepResult::stepped;
    }

    StepResult run() {
        for (;;) {
            StepResult r = step();
            if (r != StepResult::stepped) return r;
        }
    }
};

}  // namespace

LpOutcome solve_lp(const LpProblem& p) {
    p.validate();
    std::size_t n = p.n, m = p.rows.size();

    Simplex s;
    s.n = n;
    s.m = m;

    // columns: structural, then one slack per row, artificials appended below
    std::size_t n_slack = m;
    std::vector<double> residual(m, 0.0);

    s.lo.assign(n + n_slack, 0.0);
    s.hi.assign(n + n_slack, 0.0);
    s.state.assign(n + n_slack, VarState::at_lo);
    for (std::size_t j = 0; j < n; ++j) {
        s.lo[j] = p.lo[j];
        s.hi[j] = p.hi[j];
        if (p.lo[j] > -kLpInf)
            s.state[j] = VarState::at_lo;
        else if (p.hi[j] < kLpInf)
            s.state[j] = VarState::at_up;
        else
            s.state[j] = VarState::free_zero;
    }
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t j = n + i;
        switch (p.rows[i].rel) {
            case LpRelation::le:
                s.lo[j] = 0.0;
                s.hi[j] = kLpInf;
                s.state[j] = VarState::at_lo;
                break;
            case LpRelation::ge:
                s.lo[j] = -kLpInf;
                s.hi[j] = 0.0;
                s.state[j] = VarState::at_up;
                break;
            case LpRelation::eq:
                s.lo[j] = 0.0;
                s.hi[j] = 0.0;
                s.state[j] = VarState::at_lo;
                break;
        }
    }

    // residuals with structural nonbasics at their initial values
    for (std::size_t i = 0; i < m; ++i) {
        double acc = p.rows[i].rhs;
        for (std::size_t j = 0; j < n; ++j) {
            double v = s.nb_value(j);
            if (v != 0.0) acc -= p.rows[i].coeffs[j] * v;
        }
        residual[i] = acc;
    }

    // a slack can start basic when the residual respects its bounds;
    // otherwise the row gets an artificial
    std::vector<int> artificial_of(m, -1);
    std::size_t n_art = 0;
    std::vector<bool> slack_basic(m, false);
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t j = n + i;
        if (residual[i] >= s.lo[j] - kFeasTol && residual[i] <= s.hi[j] + kFeasTol) {
            slack_basic[i] = true;
        } else {
            artificial_of[i] = static_cast<int>(n_art++);
        }
    }

    s.total = n + n_slack + n_art;
    s.T.assign(m * s.total, 0.0);
    s.basis.assign(m, 0);
    s.xb.assign(m, 0.0);

    for (std::size_t i = 0; i < m; ++i) {
        double sgn = 1.0;
        if (artificial_of[i] >= 0 && residual[i] < 0.0) sgn = -1.0;
        for (std::size_t j = 0; j < n; ++j) s.t(i, j) = sgn * p.rows[i].coeffs[j];
        s.t(i, n + i) = sgn;
        if (artificial_of[i] >= 0) {
            std::size_t acol = n + n_slack + static_cast<std::size_t>(artificial_of[i]);
            s.t(i, acol) = 1.0;  // sgn * sgn
            s.basis[i] = acol;
            s.xb[i] = std::fabs(residual[i]);
        } else {
            s.basis[i] = n + i;
            s.xb[i] = residual[i];
        }
    }
    for (std::size_t a = 0; a < n_art; ++a) {
        s.lo.push_back(0.0);
        s.hi.push_back(kLpInf);
        s.state.push_back(VarState::at_lo);
    }
    for (std::size_t i = 0; i < m; ++i)
        if (s.basis[i] < s.state.size()) s.state[s.basis[i]] = VarState::basic;

    LpOutcome out;

    if (n_art > 0) {
        s.c.assign(s.total, 0.0);
        for (std::size_t a = 0; a < n_art; ++a) s.c[n + n_slack + a] = -1.0;  // max -sum(y)
        s.rebuild_objective_row();
        Simplex::StepResult r = s.run();
        if (r != Simplex::StepResult::optimal) {
            // phase 1 is bounded, so anything else is numerical trouble
            out.status = LpStatus::stalled;
            return out;
        }
        double infeas = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            if (s.basis[i] >= n + n_slack) infeas += std::fabs(s.xb[i]);
        for (std::size_t a = 0; a < n_art; ++a) {
            std::size_t col = n + n_slack + a;
            if (s.state[col] != VarState::basic) infeas += s.nb_value(col);
        }
        if (infeas > kFeasTol) {
            out.status = LpStatus::infeasible;
            return out;
        }
        // pin artificials at zero for phase 2
        for (std::size_t a = 0; a < n_art; ++a) {
            std::size_t col = n + n_slack + a;
            s.hi[col] = 0.0;
        }
    }

    s.c.assign(s.total, 0.0);
    for (std::size_t j = 0; j < n; ++j) s.c[j] = p.objective[j];
    s.rebuild_objective_row();
    s.degenerate_pivots = 0;
    s.bland = false;
    Simplex::StepResult r = s.run();
    if (r == Simplex::StepResult::stalled) {
        out.status = LpStatus::stalled;
        return out;
    }
    if (r == Simplex::StepResult::unbounded) {
        out.status = LpStatus::unbounded;
        return out;
    }

    out.status = LpStatus::optimal;
    out.point.assign(n, 0.0);
    for (std::size_t j = 0; j < n; ++j)
        if (s.state[j] != VarState::basic) out.point[j] = s.nb_value(j);
    for (std::size_t i = 0; i < m; ++i)
        if (s.basis[i] < n) out.point[s.basis[i]] = s.xb[i];
    double obj = 0.0;
    for (std::size_t j = 0; j < n; ++j) obj += p.objective[j] * out.point[j];
    out.objective = obj;
    return out;
}

double lp_feasibility_error(const LpProblem& p, const std::vector<double>& x) {
    double err = 0.0;
    for (std::size_t j = 0; j < p.n; ++j) {
        if (p.lo[j] > -kLpInf) err = std::max(err, p.lo[j] - x[j]);
        if (p.hi[j] < kLpInf) err = std::max(err, x[j] - p.hi[j]);
    }
    for (const LpRow& row : p.rows) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.n; ++j) acc += row.coeffs[j] * x[j];
        switch (row.rel) {
            case LpRelation::le: err = std::max(err, acc - row.rhs); break;
            case LpRelation::ge: err = std::max(err, row.rhs - acc); break;
            case LpRelation::eq: err = std::max(err, std::fabs(acc - row.rhs)); break;
        }
    }
    return err;
}

std::string lp_to_text(const LpProblem& p) {
    std::string out = "Maximize\n obj:";
    char buf[64];
    for (std::size_t j = 0; j < p.n; ++j) {
        if (p.objective[j] == 0.0) continue;
        std::snprintf(buf, sizeof buf, " %+.17g x%zu", p.objective[j], j + 1);
        out += buf;
    }
    out += "\nSubject To\n";
    for (std::size_t i = 0; i < p.rows.size(); ++i) {
        std::snprintf(buf, sizeof buf, " c%zu:", i + 1);
        out += buf;
        for (std::size_t j = 0; j < p.n; ++j) {
            if (p.rows[i].coeffs[j] == 0.0) continue;
            std::snprintf(buf, sizeof buf, " %+.17g x%zu", p.rows[i].coeffs[j], j + 1);
            out += buf;
        }
        const char* rel = p.rows[i].rel == LpRelation::le   ? "<="
                          : p.rows[i].rel == LpRelation::ge ? ">="
                                                            : "=";
        std::snprintf(buf, sizeof buf, " %s %.17g\n", rel, p.rows[i].rhs);
        out += buf;
    }
    out += "Bounds\n";
    for (std::size_t j = 0; j < p.n; ++j) {
        if (p.lo[j] == -kLpInf && p.hi[j] == kLpInf) {
            std::snprintf(buf, sizeof buf, " x%zu free\n", j + 1);
        } else if (p.lo[j] == -kLpInf) {
            std::snprintf(buf, sizeof buf, " x%zu <= %.17g\n", j + 1, p.hi[j]);
        } else if (p.hi[j] == kLpInf) {
            std::snprintf(buf, sizeof buf, " x%zu >= %.17g\n", j + 1, p.lo[j]);
        } else {
            std::snprintf(buf, sizeof buf, " %.17g <= x%zu <= %.17g\n", p.lo[j], j + 1, p.hi[j]);
        }
        out += buf;
    }
    out += "End\n";
    return out;
}

}  // namespace nbcv
