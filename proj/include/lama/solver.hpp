#pragma once

// Learned alternating minimization (LAMA) for the smoothed dual-domain model.
//
// Each iteration tries a residual PALM candidate (z-block first, then the
// x-block using the new z), accepts it when the energy descent conditions
// hold, and otherwise falls back to block coordinate descent with
// backtracking. The smoothing level is reduced geometrically whenever the
// gradient norm at the new iterate drops below sigma * gamma * eps.

#include <cmath>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lama/core.hpp"
#include "lama/objective.hpp"

namespace lama {

enum class SolverMode { converge, phases };

struct SolverParams {
  // Candidate step sizes. Unset values are derived from the Lipschitz model:
  // alpha = 1 / L_z, beta = 1 / L_x, alpha_hat = min(alpha, 0.5 / L_Q(eps)),
  // beta_hat = min(beta, 0.5 / L_R(eps)), refreshed after every eps reduction.
  // alpha_hat <= alpha keeps the candidate's fixed points no more regularized
  // than the model itself.
  std::optional<double> alpha, beta, alpha_hat, beta_hat;
  double alpha_bar0 = 1.0;  // safeguard initial steps, reset every iteration
  double beta_bar0 = 1.0;
  double rho = 0.5;
  double delta = 1e-4;
  double eta = 1e-4;
  double eps0 = 0.1;
  double gamma = 0.5;
  double sigma = 100.0;
  double eps_tol = 1e-4;
  std::size_t max_iters = 1000;
  std::size_t max_backtracks = 60;
  SolverMode mode = SolverMode::converge;
  std::size_t phases = 15;  // iteration count in phase mode
  int lipschitz_iterations = 50;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError(std::string(name) + " must be positive");
    };
    auto unit = [](double v, const char* name) {
      if (!(v > 0.0 && v < 1.0)) throw ParameterError(std::string(name) + " must lie in (0, 1)");
    };
    for (const auto* p : {&alpha, &beta})
      if (p->has_value()) positive(**p, "candidate step size");
    for (const auto* p : {&alpha_hat, &beta_hat})
      if (p->has_value() && (!(**p >= 0.0) || !std::isfinite(**p)))
        throw ParameterError("candidate regularizer step must be non-negative");
    positive(alpha_bar0, "alpha_bar0");
    positive(beta_bar0, "beta_bar0");
    unit(rho, "rho");
    unit(delta, "delta");
    positive(eta, "eta");
    positive(eps0, "eps0");
    unit(gamma, "gamma");
    positive(sigma, "sigma");
    if (!(eps_tol >= 0.0)) throw ParameterError("eps_tol must be non-negative");
    if (lipschitz_iterations < 1) throw ParameterError("lipschitz_iterations must be >= 1");
  }

  /// Smallest eps the schedule can reach before the tolerance stops the run.
  /// With eps_tol = 0 the schedule is unbounded; the check then uses forty
  /// reductions (or max_iters, if smaller).
  double smallest_scheduled_eps() const {
    double eps = eps0;
    std::size_t cap = eps_tol > 0.0 ? max_iters : std::min<std::size_t>(max_iters, 40);
    for (std::size_t j = 0; j < cap && eps > eps_tol; ++j) eps *= gamma;
    return eps;
  }
};

struct StepSizes {
  double alpha = 0.0;
  double beta = 0.0;
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
};

inline StepSizes step_sizes(const SolverParams& p, const LipschitzModel& L, double eps) {
  auto reg_step = [](double lip, double cap) { return lip > 0.0 ? std::min(cap, 0.5 / lip) : cap; };
  StepSizes s;
  s.alpha = p.alpha.value_or(1.0 / L.f_z);
  s.beta = p.beta.value_or(L.f_x > 0.0 ? 1.0 / L.f_x : 1.0);
  s.alpha_hat = p.alpha_hat.value_or(reg_step(L.reg_sino(eps), s.alpha));
  s.beta_hat = p.beta_hat.value_or(reg_step(L.reg_image(eps), s.beta));
  return s;
}

/// Upper bound on safeguard backtracks at one eps:
/// ceil(log_rho((delta + L/2)^-1 / max(alpha_bar0, beta_bar0))) + 1.
inline std::size_t backtrack_bound(const SolverParams& p, double lipschitz) {
  const double target = 1.0 / (p.delta + 0.5 * lipschitz) / std::max(p.alpha_bar0, p.beta_bar0);
  const double l = std::ceil(std::log(target) / std::log(p.rho));
  return static_cast<std::size_t>(std::max(0.0, l)) + 1;
}

enum class Branch { edc, bcd };

inline const char* to_string(Branch b) { return b == Branch::edc ? "EDC" : "BCD"; }

struct IterateRecord {
  std::size_t k = 0;
  double eps = 0.0;
  double phi_before = 0.0;
  double phi_after = 0.0;
  double grad_norm = 0.0;  // |grad Phi_eps_k(x_{k+1}, z_{k+1})|
  Branch branch = Branch::edc;
  std::size_t backtracks = 0;
  double alpha_used = 0.0;
  double beta_used = 0.0;
  bool eps_reduced = false;
};

struct IterateLog {
  std::vector<IterateRecord> records;

  static constexpr const char* kCsvHeader =
      "k,eps,phi_before,phi_after,grad_norm,branch,backtracks,alpha_used,beta_used,eps_reduced";

  std::string to_csv() const {
    std::string out = std::string(kCsvHeader) + "\n";
    char buf[512];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%s,%zu,%.17g,%.17g,%d\n", r.k, r.eps,
                    r.phi_before, r.phi_after, r.grad_norm, to_string(r.branch), r.backtracks, r.alpha_used,
                    r.beta_used, r.eps_reduced ? 1 : 0);
      out += buf;
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : records)
      rows.push_back({{"k", r.k},
                      {"eps", r.eps},
                      {"phi_before", r.phi_before},
                      {"phi_after", r.phi_after},
                      {"grad_norm", r.grad_norm},
                      {"branch", to_string(r.branch)},
                      {"backtracks", r.backtracks},
                      {"alpha_used", r.alpha_used},
                      {"beta_used", r.beta_used},
                      {"eps_reduced", r.eps_reduced}});
    return {{"iterations", records.size()}, {"records", rows}};
  }
};

/// Any failure inside a run; the log up to the failing iteration is attached.
class SolverError : public Error {
 public:
  SolverError(const std::string& what, IterateLog log) : Error(what), log_(std::move(log)) {}
  const IterateLog& log() const { return log_; }

 private:
  IterateLog log_;
};

// ----------------------------------------------------------------------------
// Building blocks on raw buffers
// ----------------------------------------------------------------------------

struct RawPair {
  Vec x;
  Vec z;
};

namespace detail {

inline void require_finite(std::span<const double> v, const char* what, std::size_t k) {
  if (!all_finite(v))
    throw NumericalError(std::string("non-finite ") + what + " at iteration " + std::to_string(k));
}

// u_z = b - alpha_hat grad Q(b),  b = z - alpha grad_z f(x, z)
// u_x = c - beta_hat grad R(c),   c = x - beta grad_x f(x, u_z)
inline RawPair candidate(const DataTerm& f, std::span<const double> x, std::span<const double> z,
                         const Evaluation& at_k, const StepSizes& st, double eps, std::size_t k) {
  const ProblemSpec& spec = f.spec();
  Vec b = add_scaled(z, -st.alpha, at_k.gz_f);
  require_finite(b, "candidate b", k);
  Vec uz = b;
  if (st.alpha_hat != 0.0) axpy(-st.alpha_hat, smoothed_grad(sino_field(spec, b), spec.sino_reg, eps), uz);
  require_finite(uz, "candidate u_z", k);
  Vec c = add_scaled(x, -st.beta, f.grad_x(at_k.ax, uz));
  require_finite(c, "candidate c", k);
  Vec ux = c;
  if (st.beta_hat != 0.0) axpy(-st.beta_hat, smoothed_grad(image_field(spec, c), spec.image_reg, eps), ux);
  require_finite(ux, "candidate u_x", k);
  return {std::move(ux), std::move(uz)};
}

inline bool edc_holds(double phi_k, double phi_u, double grad_norm_k, double dx2, double dz2, double eta) {
  const bool descent = phi_u - phi_k <= -eta * (dx2 + dz2);
  const bool bounded = grad_norm_k <= (std::sqrt(dx2) + std::sqrt(dz2)) / eta;
  return descent && bounded;
}

struct SafeguardResult {
  RawPair v;
  std::size_t backtracks = 0;
  double alpha_bar = 0.0;
  double beta_bar = 0.0;
  double phi = 0.0;
};

inline SafeguardResult safeguard(const DataTerm& f, std::span<const double> x, std::span<const double> z,
                                 const Evaluation& at_k, const SolverParams& p, double eps, std::size_t k) {
  const double phi_k = at_k.phi();
  const Vec gz = at_k.grad_z();
  double ab = p.alpha_bar0, bb = p.beta_bar0;
  for (std::size_t l = 0;; ++l) {
    SafeguardResult r;
    r.v.z = add_scaled(z, -ab, gz);
    // grad_x f(x_k, v_z) + grad R(x_k)
    Vec gx = f.grad_x(at_k.ax, r.v.z);
    axpy(1.0, at_k.gx_reg, gx);
    r.v.x = add_scaled(x, -bb, gx);
    require_finite(r.v.x, "safeguard v_x", k);
    require_finite(r.v.z, "safeguard v_z", k);
    r.phi = phi_eps_value(f, f.project(r.v.x), r.v.x, r.v.z, eps);
    const double move = squared_distance(r.v.x, x) + squared_distance(r.v.z, z);
    if (r.phi - phi_k <= -p.delta * move) {
      r.backtracks = l;
      r.alpha_bar = ab;
      r.beta_bar = bb;
      return r;
    }
    if (l >= p.max_backtracks)
      throw NumericalError("safeguard line search exceeded " + std::to_string(p.max_backtracks) +
                           " backtracks at iteration " + std::to_string(k));
    ab *= p.rho;
    bb *= p.rho;
  }
}

}  // namespace detail

// ----------------------------------------------------------------------------
// Public operations on DualState
// ----------------------------------------------------------------------------

inline DualState to_state(const DualState& like, RawPair raw) {
  DualState s{like.x, like.z};
  s.x.values = std::move(raw.x);
  s.z.values = std::move(raw.z);
  return s;
}

inline DualState candidate_step(const DualState& st, const ProblemSpec& spec, const StepSizes& steps, double eps) {
  spec.check_state(st);
  check_eps(eps);
  const DataTerm f(spec);
  const Evaluation e = evaluate(f, st.x.values, st.z.values, eps);
  return to_state(st, detail::candidate(f, st.x.values, st.z.values, e, steps, eps, 0));
}

/// Energy descent conditions for a candidate; the gradient bound uses the
/// gradient at the old iterate.
inline bool edc_check(const DualState& st, const DualState& cand, const ProblemSpec& spec, const SolverParams& p,
                      double eps) {
  spec.check_state(st);
  spec.check_state(cand);
  const DataTerm f(spec);
  const Evaluation e = evaluate(f, st.x.values, st.z.values, eps);
  const double phi_u = phi_eps_value(f, f.project(cand.x.values), cand.x.values, cand.z.values, eps);
  return detail::edc_holds(e.phi(), phi_u, e.grad_norm(), squared_distance(cand.x.values, st.x.values),
                           squared_distance(cand.z.values, st.z.values), p.eta);
}

struct SafeguardStep {
  DualState state;
  std::size_t backtracks = 0;
  double alpha_bar = 0.0;
  double beta_bar = 0.0;
};

inline SafeguardStep bcd_safeguard(const DualState& st, const ProblemSpec& spec, const SolverParams& p, double eps) {
  spec.check_state(st);
  check_eps(eps);
  const DataTerm f(spec);
  const Evaluation e = evaluate(f, st.x.values, st.z.values, eps);
  auto r = detail::safeguard(f, st.x.values, st.z.values, e, p, eps, 0);
  return {to_state(st, std::move(r.v)), r.backtracks, r.alpha_bar, r.beta_bar};
}

/// eps_{k+1} = gamma eps_k when the new gradient norm is strictly below
/// sigma gamma eps_k, otherwise unchanged.
inline double smoothing_update(double eps, double grad_norm, const SolverParams& p) {
  return grad_norm < p.sigma * p.gamma * eps ? p.gamma * eps : eps;
}

struct RunResult {
  DualState state;
  IterateLog log;
  LipschitzModel lipschitz;
  double final_eps = 0.0;
  std::string stop_reason;
};

inline RunResult run(const ProblemSpec& spec, const DualState& init, const SolverParams& p) {
  spec.validate();
  spec.check_state(init);
  p.validate();
  if (!all_finite(init.x.values) || !all_finite(init.z.values)) throw InputError("initial state is not finite");

  RunResult res;
  res.state = init;
  res.final_eps = p.eps0;
  const std::size_t n_iters = p.mode == SolverMode::phases ? p.phases : p.max_iters;
  if (n_iters == 0) {
    res.stop_reason = "no iterations requested";
    return res;
  }

  res.lipschitz = estimate_lipschitz(spec, p.lipschitz_iterations);
  {
    const double eps_min = p.smallest_scheduled_eps();
    const double limit = 1.0 / (p.delta + 0.5 * res.lipschitz.total(eps_min));
    if (!(std::pow(p.rho, static_cast<double>(p.max_backtracks)) * std::max(p.alpha_bar0, p.beta_bar0) < limit))
      throw ParameterError("max_backtracks too small for the Lipschitz estimate at eps = " + std::to_string(eps_min));
  }

  const DataTerm f(spec);
  Vec x = init.x.values;
  Vec z = init.z.values;
  double eps = p.eps0;
  StepSizes steps = step_sizes(p, res.lipschitz, eps);
  Evaluation at_k = evaluate(f, x, z, eps);
  res.stop_reason = "iteration limit";

  try {
    for (std::size_t k = 0; k < n_iters; ++k) {
      IterateRecord rec;
      rec.k = k;
      rec.eps = eps;
      rec.phi_before = at_k.phi();
      const double grad_norm_k = at_k.grad_norm();

      RawPair u = detail::candidate(f, x, z, at_k, steps, eps, k);
      Evaluation at_u = evaluate(f, u.x, u.z, eps);
      Evaluation next;
      if (detail::edc_holds(rec.phi_before, at_u.phi(), grad_norm_k, squared_distance(u.x, x),
                            squared_distance(u.z, z), p.eta)) {
        rec.branch = Branch::edc;
        rec.alpha_used = steps.alpha;
        rec.beta_used = steps.beta;
        x = std::move(u.x);
        z = std::move(u.z);
        next = std::move(at_u);
      } else {
        auto sg = detail::safeguard(f, x, z, at_k, p, eps, k);
        rec.branch = Branch::bcd;
        rec.backtracks = sg.backtracks;
        rec.alpha_used = sg.alpha_bar;
        rec.beta_used = sg.beta_bar;
        x = std::move(sg.v.x);
        z = std::move(sg.v.z);
        next = evaluate(f, x, z, eps);
      }
      rec.phi_after = next.phi();
      rec.grad_norm = next.grad_norm();

      const double new_eps = smoothing_update(eps, rec.grad_norm, p);
      rec.eps_reduced = new_eps < eps;
      res.log.records.push_back(rec);

      if (p.mode == SolverMode::converge && eps <= p.eps_tol && rec.grad_norm < p.sigma * p.gamma * eps) {
        eps = new_eps;
        res.stop_reason = "converged";
        break;
      }
      if (rec.eps_reduced) {
        eps = new_eps;
        steps = step_sizes(p, res.lipschitz, eps);
        at_k = evaluate(f, x, z, eps);
      } else {
        at_k = std::move(next);
      }
    }
  } catch (const Error& e) {
    throw SolverError(e.what(), res.log);
  }

  res.final_eps = eps;
  res.state.x.values = std::move(x);
  res.state.z.values = std::move(z);
  return res;
}

}  // namespace lama
