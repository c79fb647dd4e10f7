#pragma once

// Highly adaptive lasso pieces: zero-order indicator basis anchored at
// observed rows, and a weighted L1 solver (linear / logistic) via cyclic
// coordinate descent with soft-thresholding. The logit path uses the 1/4
// curvature majorizer, so the penalized objective is non-increasing after
// every coordinate update, not just in the limit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <vector>

#include "ivpol/common.hpp"

namespace ivpol {

inline double soft_threshold(double u, double lambda) {
  if (u > lambda) return u - lambda;
  if (u < -lambda) return u + lambda;
  return 0.0;
}

// Indicator basis: column j is prod_{s in col_dims[j]} 1{x_s >= col_knots[j][s]}.
struct HalBasis {
  std::size_t d = 0;
  std::vector<std::vector<std::size_t>> col_dims;
  std::vector<std::vector<double>> col_knots;

  std::size_t n_cols() const { return col_dims.size(); }

  bool value(std::size_t j, const double* x) const {
    const auto& dims = col_dims[j];
    const auto& knots = col_knots[j];
    for (std::size_t k = 0; k < dims.size(); ++k)
      if (x[dims[k]] < knots[k]) return false;
    return true;
  }
};

// Sparse binary design: per column, the row indices where the column is 1.
struct Design {
  std::size_t n = 0;
  std::vector<std::vector<std::uint32_t>> cols;
};

namespace detail {

inline void enumerate_subsets(std::size_t d, std::size_t max_degree,
                              std::vector<std::vector<std::size_t>>& out) {
  // Deterministic order: by size, then lexicographic.
  std::vector<std::size_t> cur;
  for (std::size_t size = 1; size <= max_degree; ++size) {
    cur.assign(size, 0);
    // iterative combinations of {0..d-1} choose size
    for (std::size_t i = 0; i < size; ++i) cur[i] = i;
    if (size > d) break;
    while (true) {
      out.push_back(cur);
      std::size_t i = size;
      while (i > 0) {
        --i;
        if (cur[i] != i + d - size) break;
        if (i == 0) { i = size; break; }
      }
      if (i == size) break;
      ++cur[i];
      for (std::size_t j = i + 1; j < size; ++j) cur[j] = cur[j - 1] + 1;
    }
  }
}

}  // namespace detail

// Knots are observed values, thinned per dimension to at most
// max_knots_per_dim by even index spacing over the sorted distinct values
// (always keeping the minimum). Rows are snapped down onto the thinned grid,
// and one candidate column is emitted per (row, dimension-subset) pair, so
// the column count is bounded by n * (2^d - 1) before deduplication.
// Constant columns are dropped; columns with identical evaluation patterns
// are deduplicated keeping the first in (size, lex subset, knot) order.
inline HalBasis build_basis(const Matrix& x, std::size_t max_degree, std::size_t max_knots_per_dim) {
  const std::size_t n = x.rows, d = x.cols;
  if (n == 0) throw ValidationError("build_basis: empty data");
  if (d == 0) throw ValidationError("build_basis: zero covariate dimensions");
  if (max_degree < 1 || max_degree > d) throw ValidationError("build_basis: require 1 <= max_degree <= d");
  if (max_knots_per_dim < 1) throw ValidationError("build_basis: require max_knots_per_dim >= 1");
  require_all_finite(x.data.begin(), x.data.end(), "build_basis: covariates");

  // Per-dimension thinned knot grids.
  std::vector<std::vector<double>> grid(d);
  for (std::size_t s = 0; s < d; ++s) {
    std::vector<double> vals(n);
    for (std::size_t i = 0; i < n; ++i) vals[i] = x(i, s);
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    if (vals.size() > max_knots_per_dim) {
      std::vector<double> sel;
      sel.reserve(max_knots_per_dim);
      const std::size_t m = vals.size();
      for (std::size_t k = 0; k < max_knots_per_dim; ++k) {
        std::size_t idx = (max_knots_per_dim == 1)
                              ? 0
                              : (k * (m - 1) + (max_knots_per_dim - 1) / 2) / (max_knots_per_dim - 1);
        sel.push_back(vals[idx]);
      }
      sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
      grid[s] = std::move(sel);
    } else {
      grid[s] = std::move(vals);
    }
  }

  // Snap each row down onto the grid.
  Matrix snapped(n, d);
  for (std::size_t s = 0; s < d; ++s) {
    const auto& g = grid[s];
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x(i, s);
      auto it = std::upper_bound(g.begin(), g.end(), v);
      snapped(i, s) = (it == g.begin()) ? g.front() : *(it - 1);
    }
  }

  std::vector<std::vector<std::size_t>> subsets;
  detail::enumerate_subsets(d, max_degree, subsets);

  HalBasis basis;
  basis.d = d;
  std::map<std::vector<std::uint8_t>, std::size_t> seen_patterns;
  std::vector<std::uint8_t> pattern(n);
  for (const auto& dims : subsets) {
    std::set<std::vector<double>> knot_vecs;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> kv(dims.size());
      for (std::size_t k = 0; k < dims.size(); ++k) kv[k] = snapped(i, dims[k]);
      knot_vecs.insert(std::move(kv));
    }
    for (const auto& kv : knot_vecs) {
      std::size_t ones = 0;
      for (std::size_t i = 0; i < n; ++i) {
        bool v = true;
        for (std::size_t k = 0; k < dims.size() && v; ++k) v = x(i, dims[k]) >= kv[k];
        pattern[i] = static_cast<std::uint8_t>(v);
        ones += v;
      }
      if (ones == 0 || ones == n) continue;  // constant on the data
      if (seen_patterns.emplace(pattern, basis.n_cols()).second) {
        basis.col_dims.push_back(dims);
        basis.col_knots.push_back(kv);
      }
    }
  }
  return basis;
}

inline Design build_design(const HalBasis& basis, const Matrix& x) {
  if (x.cols != basis.d) throw ValidationError("build_design: dimension mismatch with basis");
  Design des;
  des.n = x.rows;
  des.cols.resize(basis.n_cols());
  for (std::size_t j = 0; j < basis.n_cols(); ++j)
    for (std::size_t i = 0; i < x.rows; ++i)
      if (basis.value(j, x.row(i))) des.cols[j].push_back(static_cast<std::uint32_t>(i));
  return des;
}

// Stacks the design on itself: rows [0,n) and [n,2n) mirror each column.
// Used with duplicated labels (1 then 0) and weights (tau, 1-tau).
inline Design duplicate_design(const Design& des) {
  Design out;
  out.n = 2 * des.n;
  out.cols.resize(des.cols.size());
  for (std::size_t j = 0; j < des.cols.size(); ++j) {
    out.cols[j] = des.cols[j];
    for (std::uint32_t i : des.cols[j]) out.cols[j].push_back(i + static_cast<std::uint32_t>(des.n));
  }
  return out;
}

enum class Link { identity, logit };

struct FitOptions {
  double tol = 1e-8;            // max coefficient change per sweep
  std::size_t max_sweeps = 10000;
};

// Knobs for basis construction and penalty selection used by the HAL-backed
// fitters. fixed_lambda >= 0 skips cross-validation.
struct HalConfig {
  std::size_t max_degree = 2;         // capped at the design dimension
  std::size_t max_knots_per_dim = 50;
  std::size_t n_folds = 5;
  std::vector<double> lambda_grid;    // empty -> default_lambda_grid
  double fixed_lambda = -1.0;
  FitOptions fit;
};

struct HalFit {
  HalBasis basis;  // may be empty (intercept-only models)
  Link link = Link::identity;
  double lambda = 0.0;
  double intercept = 0.0;
  std::vector<double> beta;
  std::vector<double> objective_trace;  // penalized objective after each sweep
  std::size_t sweeps = 0;
  bool converged = false;

  double score(const double* x) const {
    double s = intercept;
    for (std::size_t j = 0; j < beta.size(); ++j)
      if (beta[j] != 0.0 && basis.value(j, x)) s += beta[j];
    return s;
  }
  double score(const std::vector<double>& x) const {
    if (x.size() != basis.d && !beta.empty()) throw ValidationError("HalFit::score: dimension mismatch");
    return score(x.data());
  }
  double predict(const std::vector<double>& x) const {
    const double s = score(x);
    return link == Link::logit ? expit(s) : s;
  }
  std::size_t n_nonzero() const {
    std::size_t k = 0;
    for (double b : beta) k += (b != 0.0);
    return k;
  }
};

namespace detail {

inline double penalized_objective(const Design& des, const std::vector<double>& y,
                                  const std::vector<double>& w, double w_tot, Link link,
                                  double lambda, double intercept, const std::vector<double>& beta,
                                  const std::vector<double>& s_or_r) {
  double loss = 0.0;
  if (link == Link::identity) {
    for (std::size_t i = 0; i < des.n; ++i) loss += w[i] * s_or_r[i] * s_or_r[i];
    loss /= 2.0 * w_tot;
  } else {
    for (std::size_t i = 0; i < des.n; ++i)
      if (w[i] != 0.0) loss += w[i] * (softplus(s_or_r[i]) - y[i] * s_or_r[i]);
    loss /= w_tot;
  }
  double pen = 0.0;
  for (double b : beta) pen += std::abs(b);
  return loss + lambda * pen;
}

}  // namespace detail

// Weighted L1 fit on a prebuilt design. The intercept is always present and
// never penalized. Objective (weights normalized by their total W):
//   identity: (1/2W) sum_i w_i (y_i - s_i)^2 + lambda * |beta|_1
//   logit:    (1/W) sum_i w_i (log(1+e^{s_i}) - y_i s_i) + lambda * |beta|_1
// Fractional y in [0,1] is allowed for the logit link.
inline HalFit fit_weighted_l1(const HalBasis& basis, const Design& des, const std::vector<double>& y,
                              const std::vector<double>& w, Link link, double lambda,
                              const FitOptions& opts = {}, const HalFit* warm = nullptr) {
  const std::size_t n = des.n, p = des.cols.size();
  if (y.size() != n || w.size() != n) throw ValidationError("fit_weighted_l1: length mismatch");
  if (lambda < 0.0 || !std::isfinite(lambda)) throw ValidationError("fit_weighted_l1: bad lambda");
  require_all_finite(y.begin(), y.end(), "fit_weighted_l1: y");
  double w_tot = 0.0;
  for (double wi : w) {
    if (!std::isfinite(wi) || wi < 0.0) throw ValidationError("fit_weighted_l1: weights must be finite and >= 0");
    w_tot += wi;
  }
  if (w_tot <= 0.0) throw ValidationError("fit_weighted_l1: all weights are zero");
  if (link == Link::logit)
    for (double yi : y)
      if (yi < 0.0 || yi > 1.0) throw ValidationError("fit_weighted_l1: logit link needs y in [0,1]");

  HalFit fit;
  fit.basis = basis;
  fit.link = link;
  fit.lambda = lambda;
  fit.beta.assign(p, 0.0);
  if (warm != nullptr && warm->beta.size() == p) {
    fit.intercept = warm->intercept;
    fit.beta = warm->beta;
  }

  // Normalized column weight mass; cw[j] == 0 leaves beta[j] untouched at 0.
  std::vector<double> cw(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    double s = 0.0;
    for (std::uint32_t i : des.cols[j]) s += w[i];
    cw[j] = s / w_tot;
  }

  // state: identity keeps residuals r_i = y_i - s_i; logit keeps scores s_i.
  std::vector<double> state(n);
  if (link == Link::identity) {
    for (std::size_t i = 0; i < n; ++i) state[i] = y[i] - fit.intercept;
    for (std::size_t j = 0; j < p; ++j)
      if (fit.beta[j] != 0.0)
        for (std::uint32_t i : des.cols[j]) state[i] -= fit.beta[j];
  } else {
    for (std::size_t i = 0; i < n; ++i) state[i] = fit.intercept;
    for (std::size_t j = 0; j < p; ++j)
      if (fit.beta[j] != 0.0)
        for (std::uint32_t i : des.cols[j]) state[i] += fit.beta[j];
  }

  const auto update_intercept = [&]() -> double {
    if (link == Link::identity) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += w[i] * state[i];
      const double delta = acc / w_tot;
      if (delta != 0.0) {
        fit.intercept += delta;
        for (std::size_t i = 0; i < n; ++i) state[i] -= delta;
      }
      return std::abs(delta);
    }
    double g = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (w[i] != 0.0) g += w[i] * (expit(state[i]) - y[i]);
    g /= w_tot;
    const double delta = -g / 0.25;
    if (delta != 0.0) {
      fit.intercept += delta;
      for (std::size_t i = 0; i < n; ++i) state[i] += delta;
    }
    return std::abs(delta);
  };

  const auto update_column = [&](std::size_t j) -> double {
    if (cw[j] <= 0.0) return 0.0;
    const double bj = fit.beta[j];
    double b_new;
    if (link == Link::identity) {
      double acc = 0.0;
      for (std::uint32_t i : des.cols[j]) acc += w[i] * state[i];
      acc /= w_tot;
      b_new = soft_threshold(acc + bj * cw[j], lambda) / cw[j];
    } else {
      double g = 0.0;
      for (std::uint32_t i : des.cols[j])
        if (w[i] != 0.0) g += w[i] * (expit(state[i]) - y[i]);
      g /= w_tot;
      const double h = 0.25 * cw[j];
      b_new = soft_threshold(h * bj - g, lambda) / h;
    }
    const double delta = b_new - bj;
    if (delta != 0.0) {
      fit.beta[j] = b_new;
      if (link == Link::identity) {
        for (std::uint32_t i : des.cols[j]) state[i] -= delta;
      } else {
        for (std::uint32_t i : des.cols[j]) state[i] += delta;
      }
    }
    return std::abs(delta);
  };

  const auto sweep = [&](bool active_only) -> double {
    double max_change = update_intercept();
    for (std::size_t j = 0; j < p; ++j) {
      if (active_only && fit.beta[j] == 0.0) continue;
      max_change = std::max(max_change, update_column(j));
    }
    ++fit.sweeps;
    fit.objective_trace.push_back(
        detail::penalized_objective(des, y, w, w_tot, link, lambda, fit.intercept, fit.beta, state));
    return max_change;
  };

  // Full sweep, then active-set sweeps, then a full verification sweep.
  while (fit.sweeps < opts.max_sweeps) {
    const double full_change = sweep(false);
    if (full_change < opts.tol) {
      fit.converged = true;
      break;
    }
    while (fit.sweeps < opts.max_sweeps) {
      if (sweep(true) < opts.tol) break;
    }
  }
  return fit;
}

inline HalFit fit_weighted_l1(const HalBasis& basis, const Matrix& x, const std::vector<double>& y,
                              const std::vector<double>& w, Link link, double lambda,
                              const FitOptions& opts = {}, const HalFit* warm = nullptr) {
  return fit_weighted_l1(basis, build_design(basis, x), y, w, link, lambda, opts, warm);
}

// Duplication trick for fractional labels: rows are stacked twice, the first
// copy labeled 1 with weight tau_i, the second labeled 0 with weight 1-tau_i.
struct FractionalData {
  Matrix x2;
  std::vector<double> y2;
  std::vector<double> w2;
};

inline FractionalData duplicate_for_fractional(const Matrix& x, const std::vector<double>& tau) {
  if (tau.size() != x.rows) throw ValidationError("duplicate_for_fractional: length mismatch");
  for (double t : tau)
    if (!std::isfinite(t) || t < 0.0 || t > 1.0)
      throw ValidationError("duplicate_for_fractional: tau must lie in [0,1]");
  FractionalData out;
  out.x2.rows = 2 * x.rows;
  out.x2.cols = x.cols;
  out.x2.data = x.data;
  out.x2.data.insert(out.x2.data.end(), x.data.begin(), x.data.end());
  out.y2.assign(x.rows, 1.0);
  out.y2.insert(out.y2.end(), x.rows, 0.0);
  out.w2 = tau;
  out.w2.reserve(2 * x.rows);
  for (double t : tau) out.w2.push_back(1.0 - t);
  return out;
}

// Largest penalty with any signal: max_j |(1/W) sum_i w_i phi_ij (y_i - ybar)|.
inline std::vector<double> default_lambda_grid(const Design& des, const std::vector<double>& y,
                                               const std::vector<double>& w, std::size_t n_points = 15,
                                               double min_ratio = 1e-3) {
  double w_tot = 0.0, ybar = 0.0;
  for (std::size_t i = 0; i < des.n; ++i) {
    w_tot += w[i];
    ybar += w[i] * y[i];
  }
  if (w_tot <= 0.0) throw ValidationError("default_lambda_grid: all weights are zero");
  ybar /= w_tot;
  double lam_max = 0.0;
  for (const auto& col : des.cols) {
    double g = 0.0;
    for (std::uint32_t i : col) g += w[i] * (y[i] - ybar);
    lam_max = std::max(lam_max, std::abs(g) / w_tot);
  }
  lam_max = std::max(lam_max, 1e-12);
  std::vector<double> grid(n_points);
  for (std::size_t k = 0; k < n_points; ++k) {
    const double t = (n_points == 1) ? 0.0 : static_cast<double>(k) / (n_points - 1);
    grid[k] = lam_max * std::pow(min_ratio, t);  // descending
  }
  return grid;
}

struct CvResult {
  double lambda = 0.0;
  std::vector<double> lambdas;  // descending, as scanned
  std::vector<double> losses;   // pooled held-out weighted loss per lambda
};

// K-fold CV for lambda on a fixed design. Folds are assigned by row index
// (i mod folds) unless explicit fold ids are given. Ties in held-out loss
// break toward the larger lambda (grid scanned in descending order with
// strict-improvement updates).
inline CvResult cross_validate_lambda(const Design& des, const std::vector<double>& y,
                                      const std::vector<double>& w, Link link,
                                      std::vector<double> grid, std::size_t folds,
                                      const std::vector<std::size_t>* fold_ids = nullptr,
                                      const FitOptions& opts = {}) {
  const std::size_t n = des.n;
  if (folds < 2) throw ValidationError("cross_validate_lambda: need at least 2 folds");
  if (grid.empty()) throw ValidationError("cross_validate_lambda: empty lambda grid");
  if (fold_ids != nullptr && fold_ids->size() != n)
    throw ValidationError("cross_validate_lambda: fold id length mismatch");
  std::sort(grid.begin(), grid.end(), std::greater<double>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const auto fold_of = [&](std::size_t i) { return fold_ids ? (*fold_ids)[i] % folds : i % folds; };

  std::vector<double> tot_loss(grid.size(), 0.0);
  double tot_weight_all = 0.0;
  HalBasis empty_basis;  // design-level fits never re-evaluate the basis

  for (std::size_t f = 0; f < folds; ++f) {
    // Restrict the design to training rows.
    std::vector<std::uint32_t> new_index(n, 0);
    std::vector<std::uint32_t> train_rows;
    for (std::size_t i = 0; i < n; ++i)
      if (fold_of(i) != f) {
        new_index[i] = static_cast<std::uint32_t>(train_rows.size());
        train_rows.push_back(static_cast<std::uint32_t>(i));
      }
    if (train_rows.empty()) continue;
    Design train_des;
    train_des.n = train_rows.size();
    train_des.cols.resize(des.cols.size());
    {
      std::vector<char> in_train(n, 0);
      for (std::uint32_t i : train_rows) in_train[i] = 1;
      for (std::size_t j = 0; j < des.cols.size(); ++j)
        for (std::uint32_t i : des.cols[j])
          if (in_train[i]) train_des.cols[j].push_back(new_index[i]);
    }
    std::vector<double> y_tr(train_des.n), w_tr(train_des.n);
    for (std::size_t k = 0; k < train_rows.size(); ++k) {
      y_tr[k] = y[train_rows[k]];
      w_tr[k] = w[train_rows[k]];
    }
    double w_tr_tot = 0.0;
    for (double wi : w_tr) w_tr_tot += wi;
    if (w_tr_tot <= 0.0) continue;

    // Held-out scores per row are intercept + sum of active columns.
    HalFit fit;
    bool have_warm = false;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      fit = fit_weighted_l1(empty_basis, train_des, y_tr, w_tr, link, grid[g], opts,
                            have_warm ? &fit : nullptr);
      have_warm = true;
      std::vector<double> s(n, fit.intercept);
      for (std::size_t j = 0; j < des.cols.size(); ++j)
        if (fit.beta[j] != 0.0)
          for (std::uint32_t i : des.cols[j]) s[i] += fit.beta[j];
      double loss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (fold_of(i) != f || w[i] == 0.0) continue;
        if (link == Link::identity) {
          const double r = y[i] - s[i];
          loss += 0.5 * w[i] * r * r;
        } else {
          loss += w[i] * (softplus(s[i]) - y[i] * s[i]);
        }
      }
      tot_loss[g] += loss;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (fold_of(i) == f) tot_weight_all += w[i];
  }
  if (tot_weight_all <= 0.0) throw ValidationError("cross_validate_lambda: no held-out weight");

  CvResult res;
  res.lambdas = grid;
  res.losses.resize(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) res.losses[g] = tot_loss[g] / tot_weight_all;
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (res.losses[g] < res.losses[best] - 1e-12 * (1.0 + std::abs(res.losses[best]))) best = g;
  res.lambda = grid[best];
  return res;
}

}  // namespace ivpol
