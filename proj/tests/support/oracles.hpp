#ifndef NBCV_TESTS_ORACLES_HPP
#define NBCV_TESTS_ORACLES_HPP

// Test-only reference implementations, kept independent of the library code
// paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "nbcv/lp.hpp"
#include "nbcv/network.hpp"
#include "nbcv/rng.hpp"
#include "nbcv/tensor.hpp"

namespace nbcv::testing {

// Straight-line forward pass over explicit weight matrices (affine + ReLU),
// written without Network/Tensor machinery.
inline std::vector<double> reference_mlp_forward(
    const std::vector<std::vector<std::vector<double>>>& weights,
    const std::vector<std::vector<double>>& biases, const std::vector<double>& x,
    std::vector<std::vector<double>>* pre_out = nullptr) {
    std::vector<double> cur = x;
    for (std::size_t layer = 0; layer < weights.size(); ++layer) {
        const auto& w = weights[layer];
        std::vector<double> next(w.size(), 0.0);
        for (std::size_t r = 0; r < w.size(); ++r) {
            double acc = biases[layer][r];
            for (std::size_t c = 0; c < w[r].size(); ++c) acc += w[r][c] * cur[c];
            next[r] = acc;
        }
        if (layer + 1 < weights.size()) {
            if (pre_out) pre_out->push_back(next);
            for (double& v : next) v = v > 0.0 ? v : 0.0;
        }
        cur = next;
    }
    return cur;
}

// central finite difference of f at the storage location x
inline double central_diff(const std::function<double()>& f, double& x, double h = 1e-5) {
    double saved = x;
    x = saved + h;
    double fp = f();
    x = saved - h;
    double fm = f();
    x = saved;
    return (fp - fm) / (2.0 * h);
}

inline bool grad_close(double got, double fd, double rel_tol = 1e-4, double min_mag = 1e-6) {
    double mag = std::max(std::fabs(got), std::fabs(fd));
    if (mag <= min_mag) return true;
    return std::fabs(got - fd) <= rel_tol * mag;
}

inline Network random_mlp(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    return init_params(make_mlp(dims), seed);
}

// Brute-force LP oracle: enumerate candidate basic solutions (all n-subsets
// of tight constraints drawn from rows and variable bounds), keep feasible
// ones, take the best objective. Requires every variable to live in a finite
// box so the feasible set is a polytope.
struct BruteForceLpResult {
    bool feasible = false;
    double objective = 0.0;
    std::vector<double> point;
};

namespace detail {

inline bool solve_square(std::vector<std::vector<double>> a, std::vector<double> b,
                         std::vector<double>& x) {
    std::size_t n = b.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
        if (std::fabs(a[piv][col]) < 1e-11) return false;
        std::swap(a[piv], a[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    x.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) x[i] = b[i] / a[i][i];
    return true;
}

}  // namespace detail

inline BruteForceLpResult brute_force_lp(const LpProblem& p, double feas_tol = 1e-7) {
    // candidate tight constraints: every row (as equality) and both bounds
    struct Cand {
        std::vector<double> coeffs;
        double rhs;
    };
    std::vector<Cand> cands;
    for (const LpRow& row : p.rows) cands.push_back({row.coeffs, row.rhs});
    for (std::size_t j = 0; j < p.n; ++j) {
        std::vector<double> e(p.n, 0.0);
        e[j] = 1.0;
        if (p.lo[j] > -kLpInf) cands.push_back({e, p.lo[j]});
        if (p.hi[j] < kLpInf) cands.push_back({e, p.hi[j]});
    }

    BruteForceLpResult best;
    std::vector<std::size_t> pick(p.n, 0);
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t start, std::size_t depth) {
        if (depth == p.n) {
            std::vector<std::vector<double>> a;
            std::vector<double> b;
            for (std::size_t idx = 0; idx < p.n; ++idx) {
                a.push_back(cands[pick[idx]].coeffs);
                b.push_back(cands[pick[idx]].rhs);
            }
            std::vector<double> x;
            if (!detail::solve_square(a, b, x)) return;
            if (lp_feasibility_error(p, x) > feas_tol) return;
            double obj = 0.0;
            for (std::size_t j = 0; j < p.n; ++j) obj += p.objective[j] * x[j];
            if (!best.feasible || obj > best.objective) {
                best.feasible = true;
                best.objective = obj;
                best.point = x;
            }
            return;
        }
        for (std::size_t i = start; i < cands.size(); ++i) {
            pick[depth] = i;
            rec(i + 1, depth + 1);
        }
    };
    rec(0, 0);
    return best;
}

// exhaustive grid search for a misclassified point in a 2-D box
inline bool grid_find_counterexample(const Network& net, const Tensor& x0, double eps,
                                     std::size_t label, double step, Tensor* found = nullptr) {
    double lo0 = std::max(x0[0] - eps, 0.0), hi0 = std::min(x0[0] + eps, 1.0);
    double lo1 = std::max(x0[1] - eps, 0.0), hi1 = std::min(x0[1] + eps, 1.0);
    for (double a = lo0; a <= hi0 + 1e-12; a += step) {
        for (double b = lo1; b <= hi1 + 1e-12; b += step) {
            Tensor x = Tensor::vec({std::min(a, hi0), std::min(b, hi1)});
            Tensor logits = net.forward(x).logits;
            double target = logits[label];
            for (std::size_t i = 0; i < logits.size(); ++i) {
                if (i != label && logits[i] > target) {
                    if (found) *found = x;
                    return true;
                }
            }
        }
    }
    return false;
}

}  // namespace nbcv::testing

#endif
