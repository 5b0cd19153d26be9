#include "mixdetect/mixing_law.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json_util.hpp"

namespace mixdetect {

using detail::json;

namespace {

void require_dims(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b));
  }
}

double residual_norm(const Eigen::MatrixXd& t, const Eigen::VectorXd& x, const Eigen::VectorXd& b) {
  return (t * x - b).norm();
}

Eigen::VectorXd to_eigen(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

void MixingLawParams::validate() const {
  const auto n = c.size();
  if (n < 2) throw Error(ErrorKind::InvalidArgument, "mixing law needs at least two domains");
  require_dims(k.size(), n, "law k length");
  require_dims(static_cast<std::size_t>(t.rows()), n, "law T rows");
  require_dims(static_cast<std::size_t>(t.cols()), n, "law T cols");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(c[i]) || !std::isfinite(k[i])) {
      throw Error(ErrorKind::NonFinite, "non-finite law constant", i);
    }
    if (k[i] == 0.0) throw Error(ErrorKind::InvalidArgument, "k_i must be nonzero", i);
  }
  if (!t.allFinite()) throw Error(ErrorKind::NonFinite, "non-finite entry in T");
}

std::string MixingLawParams::to_json() const {
  json j;
  j["c"] = c;
  j["k"] = k;
  json rows = json::array();
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    std::vector<double> row(static_cast<std::size_t>(t.cols()));
    for (Eigen::Index jx = 0; jx < t.cols(); ++jx) row[static_cast<std::size_t>(jx)] = t(i, jx);
    rows.push_back(row);
  }
  j["t"] = rows;
  j["loss_units"] = loss_units;
  return j.dump(2);
}

MixingLawParams MixingLawParams::from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "law parameters");
  MixingLawParams p;
  try {
    p.c = j.at("c").get<std::vector<double>>();
    p.k = j.at("k").get<std::vector<double>>();
    const auto rows = j.at("t").get<std::vector<std::vector<double>>>();
    p.t.resize(static_cast<Eigen::Index>(rows.size()),
               rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      require_dims(rows[i].size(), static_cast<std::size_t>(p.t.cols()), "law T row length");
      for (std::size_t jx = 0; jx < rows[i].size(); ++jx) {
        p.t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(jx)) = rows[i][jx];
      }
    }
    p.loss_units = j.value("loss_units", std::string("nats_per_token"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("law parameters: ") + e.what());
  }
  p.validate();
  return p;
}

std::string observations_to_json(std::span<const RunObservation> runs) {
  json arr = json::array();
  for (const auto& r : runs) {
    arr.push_back({{"alpha", r.alpha.values()}, {"losses", r.losses}});
  }
  return arr.dump(2);
}

std::vector<RunObservation> observations_from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "fit observations");
  std::vector<RunObservation> out;
  try {
    for (const auto& e : j) {
      const auto alpha = e.at("alpha").get<std::vector<double>>();
      auto losses = e.at("losses").get<std::vector<double>>();
      require_dims(losses.size(), alpha.size(), "observation losses vs alpha");
      out.push_back(RunObservation{make_proportions(alpha), std::move(losses)});
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("fit observations: ") + e.what());
  }
  return out;
}

std::vector<double> eval_loss(const MixingLawParams& params, const MixtureProportions& alpha) {
  params.validate();
  require_dims(alpha.size(), params.size(), "eval_loss alpha");
  const Eigen::VectorXd exponent = params.t * to_eigen(alpha.span());
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = params.c[i] + params.k[i] * std::exp(exponent(static_cast<Eigen::Index>(i)));
  }
  return out;
}

GammaVector gamma_from_loss(std::span<const double> losses) {
  GammaVector g;
  g.estimator = GammaEstimator::ExpOfMeanLoss;
  g.values.resize(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (!std::isfinite(losses[i])) throw Error(ErrorKind::NonFinite, "non-finite loss", i);
    if (losses[i] < 0.0) throw Error(ErrorKind::NegativeLoss, "negative loss", i, losses[i]);
    g.values[i] = std::exp(-losses[i]);
  }
  return g;
}

BetaVector beta_from_gamma(const GammaVector& gamma, const MixingLawParams& params) {
  params.validate();
  require_dims(gamma.size(), params.size(), "beta_from_gamma gamma");
  BetaVector b;
  b.values.resize(gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const double g = gamma.values[i];
    if (!(g > 0.0)) {
      throw Error(ErrorKind::DomainViolation,
                  "gamma_" + std::to_string(i) + " = " + std::to_string(g) +
                      " has no logarithm; no mixture explains it",
                  i, g);
    }
    const double arg = -(std::log(g) + params.c[i]) / params.k[i];
    if (!(arg > 0.0) || !std::isfinite(arg)) {
      throw Error(ErrorKind::DomainViolation,
                  "gamma_" + std::to_string(i) + " = " + std::to_string(g) +
                      " is unreachable under the law (log gamma + c = " +
                      std::to_string(std::log(g) + params.c[i]) + ")",
                  i, g);
    }
    b.values[i] = std::log(arg);
  }
  return b;
}

std::string_view to_string(InversionMode mode) {
  switch (mode) {
    case InversionMode::Raw: return "raw";
    case InversionMode::Project: return "project";
    case InversionMode::Constrained: return "constrained";
  }
  return "unknown";
}

InversionMode parse_inversion_mode(std::string_view text) {
  if (text == "raw") return InversionMode::Raw;
  if (text == "project") return InversionMode::Project;
  if (text == "constrained") return InversionMode::Constrained;
  throw Error(ErrorKind::InvalidArgument, "unknown inversion mode '" + std::string(text) + "'");
}

double condition_number(const Eigen::MatrixXd& t) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t);
  const auto& s = svd.singularValues();
  if (s.size() == 0) return std::numeric_limits<double>::infinity();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  const double eps = std::numeric_limits<double>::epsilon();
  if (smax == 0.0 || smin <= smax * eps * static_cast<double>(t.rows())) {
    return std::numeric_limits<double>::infinity();
  }
  return smax / smin;
}

MixtureProportions project_to_simplex(std::span<const double> v) {
  if (v.size() < 2) throw Error(ErrorKind::InvalidArgument, "projection needs at least two entries");
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(ErrorKind::NonFinite, "non-finite projection input", i);
  }
  const double sum = std::accumulate(v.begin(), v.end(), 0.0);
  if (*std::min_element(v.begin(), v.end()) >= 0.0 && std::abs(sum - 1.0) <= 1e-12) {
    return make_proportions(v);
  }
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cumulative += u[j];
    const double candidate = (cumulative - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) theta = candidate;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - theta, 0.0);
  return make_proportions(out, 1e-6);
}

namespace {

// Accelerated projected gradient; only used past the enumeration limit.
std::vector<double> simplex_ls_iterative(const Eigen::MatrixXd& t, const Eigen::VectorXd& b) {
  const auto n = t.cols();
  const Eigen::MatrixXd gram = t.transpose() * t;
  const Eigen::VectorXd tb = t.transpose() * b;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  const double lipschitz = std::max(es.eigenvalues().maxCoeff(), 1e-300);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  Eigen::VectorXd y = x;
  double momentum = 1.0;
  for (int it = 0; it < 20000; ++it) {
    const Eigen::VectorXd grad = gram * y - tb;
    const Eigen::VectorXd step = y - grad / lipschitz;
    const auto projected = project_to_simplex(std::span<const double>(step.data(), step.size()));
    const Eigen::VectorXd next = to_eigen(projected.span());
    const double next_momentum = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum));
    y = next + ((momentum - 1.0) / next_momentum) * (next - x);
    const double change = (next - x).lpNorm<Eigen::Infinity>();
    x = next;
    momentum = next_momentum;
    if (change < 1e-15) break;
  }
  return to_std(x);
}

}  // namespace

std::vector<double> simplex_least_squares(const Eigen::MatrixXd& t, const Eigen::VectorXd& b) {
  const auto n = static_cast<std::size_t>(t.cols());
  if (n > 12) return simplex_ls_iterative(t, b);

  // The optimum is the equality-constrained solution on the face spanned by
  // its support, so enumerating every face and keeping the best feasible
  // candidate is exact.
  std::vector<double> best;
  double best_residual = std::numeric_limits<double>::infinity();
  const std::size_t faces = std::size_t{1} << n;
  for (std::size_t mask = 1; mask < faces; ++mask) {
    std::vector<Eigen::Index> support;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask & (std::size_t{1} << j)) support.push_back(static_cast<Eigen::Index>(j));
    }
    const auto m = static_cast<Eigen::Index>(support.size());
    Eigen::MatrixXd ts(t.rows(), m);
    for (Eigen::Index s = 0; s < m; ++s) ts.col(s) = t.col(support[static_cast<std::size_t>(s)]);
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
    kkt.topLeftCorner(m, m) = ts.transpose() * ts;
    kkt.block(0, m, m, 1).setOnes();
    kkt.block(m, 0, 1, m).setOnes();
    Eigen::VectorXd rhs(m + 1);
    rhs.head(m) = ts.transpose() * b;
    rhs(m) = 1.0;
    const Eigen::VectorXd sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    bool feasible = true;
    for (Eigen::Index s = 0; s < m; ++s) {
      const double v = sol(s);
      if (!std::isfinite(v) || v < -1e-12) {
        feasible = false;
        break;
      }
      x(support[static_cast<std::size_t>(s)]) = std::max(v, 0.0);
    }
    if (!feasible) continue;
    const double total = x.sum();
    if (!(total > 0.0)) continue;
    x /= total;
    const double r = residual_norm(t, x, b);
    if (r < best_residual) {
      best_residual = r;
      best = to_std(x);
    }
  }
  return best;
}

MixtureProportions InversionResult::proportions() const { return project_to_simplex(alpha); }

InversionResult invert(const MixingLawParams& params, const BetaVector& beta, InversionMode mode,
                       double condition_cap) {
  params.validate();
  require_dims(beta.values.size(), params.size(), "invert beta");
  for (std::size_t i = 0; i < beta.values.size(); ++i) {
    if (!std::isfinite(beta.values[i])) throw Error(ErrorKind::NonFinite, "non-finite beta", i);
  }
  const Eigen::VectorXd b = to_eigen(beta.values);
  InversionResult out;
  out.diagnostics.condition = condition_number(params.t);
  if (!(out.diagnostics.condition <= condition_cap)) {
    throw Error(ErrorKind::SingularMatrix,
                "condition estimate of T is " + std::to_string(out.diagnostics.condition) +
                    " (cap " + std::to_string(condition_cap) + ")",
                std::nullopt, out.diagnostics.condition);
  }
  const Eigen::VectorXd raw = params.t.fullPivLu().solve(b);
  out.raw_alpha = to_std(raw);
  out.diagnostics.raw_residual = residual_norm(params.t, raw, b);
  const auto projected = project_to_simplex(out.raw_alpha);
  for (std::size_t i = 0; i < out.raw_alpha.size(); ++i) {
    out.diagnostics.simplex_violation += std::abs(out.raw_alpha[i] - projected[i]);
  }

  switch (mode) {
    case InversionMode::Raw:
      out.alpha = out.raw_alpha;
      break;
    case InversionMode::Project:
      out.alpha = projected.values();
      break;
    case InversionMode::Constrained:
      out.alpha = simplex_least_squares(params.t, b);
      break;
  }
  out.diagnostics.residual = residual_norm(params.t, to_eigen(out.alpha), b);
  double change = 0.0;
  for (std::size_t i = 0; i < out.alpha.size(); ++i) {
    change = std::max(change, std::abs(out.alpha[i] - out.raw_alpha[i]));
  }
  out.diagnostics.projection_changed = change > 1e-12;
  return out;
}

InversionResult invert(const MixingLawParams& params, const GammaVector& gamma, InversionMode mode,
                       double condition_cap) {
  return invert(params, beta_from_gamma(gamma, params), mode, condition_cap);
}

namespace {

struct DomainFit {
  double c = 0.0;
  double log_k = 0.0;
  Eigen::VectorXd t;
  double sse = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
};

// Residuals f(alpha_r) - y_r for theta = (c, log k, t_1..t_n).
Eigen::VectorXd law_residuals(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& y) {
  const auto n = a.cols();
  const Eigen::ArrayXd e = ((a * theta.tail(n)).array() + theta(1)).exp();
  return (theta(0) + e).matrix() - y;
}

Eigen::MatrixXd law_jacobian(const Eigen::VectorXd& theta, const Eigen::MatrixXd& a) {
  const auto n = a.cols();
  const Eigen::VectorXd e = ((a * theta.tail(n)).array() + theta(1)).exp().matrix();
  Eigen::MatrixXd j(a.rows(), n + 2);
  j.col(0).setOnes();
  j.col(1) = e;
  j.rightCols(n) = a.array().colwise() * e.array();
  return j;
}

// With fix_c the offset column is dropped, so c stays at its starting value.
DomainFit levenberg_marquardt(Eigen::VectorXd theta, const Eigen::MatrixXd& a,
                              const Eigen::VectorXd& y, const FitOptions& options, bool fix_c) {
  DomainFit fit;
  Eigen::VectorXd r = law_residuals(theta, a, y);
  double sse = r.squaredNorm();
  if (!std::isfinite(sse)) return fit;
  double lambda = -1.0;
  int it = 0;
  bool converged = false;
  for (; it < options.max_iterations; ++it) {
    Eigen::MatrixXd j = law_jacobian(theta, a);
    if (fix_c) j.col(0).setZero();
    const Eigen::MatrixXd jtj = j.transpose() * j;
    const Eigen::VectorXd g = j.transpose() * r;
    if (lambda < 0.0) lambda = 1e-3 * std::max(jtj.diagonal().maxCoeff(), 1e-12);
    if (g.lpNorm<Eigen::Infinity>() <= options.tolerance * std::max(1.0, sse) || sse <= 1e-28) {
      converged = true;
      break;
    }
    bool accepted = false;
    Eigen::VectorXd step;
    // Isotropic damping keeps every step orthogonal to the gauge direction
    // (J's null space), so the gauge of the starting point is preserved.
    for (int inner = 0; inner < 40; ++inner) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal().array() += lambda;
      step = damped.ldlt().solve(-g);
      const Eigen::VectorXd candidate = theta + step;
      const Eigen::VectorXd rc = law_residuals(candidate, a, y);
      const double sc = rc.squaredNorm();
      if (std::isfinite(sc) && sc < sse) {
        theta = candidate;
        r = rc;
        const double previous = sse;
        sse = sc;
        lambda = std::max(lambda / 3.0, 1e-300);
        accepted = true;
        if (previous - sse <= options.tolerance * previous) converged = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      // No descent available at any damping: a stationary point.
      converged = true;
      break;
    }
    if (step.norm() <= options.tolerance * (theta.norm() + options.tolerance)) converged = true;
    if (converged) {
      ++it;
      break;
    }
  }
  fit.c = theta(0);
  fit.log_k = theta(1);
  fit.t = theta.tail(a.cols());
  fit.sse = sse;
  fit.iterations = it;
  fit.converged = converged;
  return fit;
}

}  // namespace

FitResult fit(std::span<const RunObservation> observations, const FitOptions& options) {
  if (observations.empty()) {
    throw Error(ErrorKind::InsufficientObservations, "no observations");
  }
  const std::size_t n = observations.front().alpha.size();
  const std::size_t r_count = observations.size();
  if (r_count < n + 2) {
    throw Error(ErrorKind::InsufficientObservations,
                std::to_string(r_count) + " observations for " + std::to_string(n) +
                    " domains; need at least " + std::to_string(n + 2));
  }
  const auto rows = static_cast<Eigen::Index>(r_count);
  const auto cols = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd a(rows, cols);
  Eigen::MatrixXd losses(rows, cols);
  for (std::size_t r = 0; r < r_count; ++r) {
    const auto& obs = observations[r];
    require_dims(obs.alpha.size(), n, "observation alpha");
    require_dims(obs.losses.size(), n, "observation losses");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(obs.losses[i])) {
        throw Error(ErrorKind::NonFinite, "non-finite observed loss", i);
      }
      a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = obs.alpha[i];
      losses(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = obs.losses[i];
    }
  }

  // Simplex points span at most n-1 directions around their centroid.
  const Eigen::MatrixXd centered = a.rowwise() - a.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> design(centered);
  const auto& sv = design.singularValues();
  const double design_tol = std::max(sv(0), 1e-300) * 1e-9;
  const auto rank = (sv.array() > design_tol).count();
  if (rank < cols - 1) {
    throw Error(ErrorKind::DegenerateDesign,
                "mixtures span " + std::to_string(rank) + " directions; " +
                    std::to_string(n - 1) + " needed");
  }

  Eigen::MatrixXd regressors(rows, cols + 1);
  regressors.col(0).setOnes();
  regressors.rightCols(cols) = a;
  const auto regression = regressors.completeOrthogonalDecomposition();

  FitResult result;
  result.params.c.assign(n, 0.0);
  result.params.k.assign(n, 1.0);
  result.params.t = Eigen::MatrixXd::Zero(cols, cols);
  result.report.domains.resize(n);
  double pooled_sse = 0.0;

  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::VectorXd y = losses.col(static_cast<Eigen::Index>(i));
    const double lo = y.minCoeff();
    const double spread = std::max({y.maxCoeff() - lo, 1e-3 * std::abs(lo), 1e-6});
    DomainFit best;
    double best_seed = 0.0;
    auto try_start = [&](double c0, bool fix_c) {
      const Eigen::VectorXd z = (y.array() - c0).log().matrix();
      const Eigen::VectorXd coef = regression.solve(z);
      Eigen::VectorXd theta(cols + 2);
      theta(0) = c0;
      theta.tail(cols + 1) = coef;
      auto candidate = levenberg_marquardt(theta, a, y, options, fix_c);
      if (!(candidate.c >= options.min_offset)) return;
      // A start still creeping along a flat valley loses to any converged one.
      const bool better = candidate.converged != best.converged ? candidate.converged
                                                                : candidate.sse < best.sse;
      if (better) {
        best = std::move(candidate);
        best_seed = c0;
      }
    };
    for (const double scale : {0.01, 0.1, 0.5, 2.0, 10.0}) {
      const double c0 = lo - scale * spread;
      if (c0 >= options.min_offset) try_start(c0, false);
    }
    // Nearly log-linear data drives c toward -inf; the bound then binds.
    if (std::isfinite(options.min_offset) && lo > options.min_offset) try_start(options.min_offset, true);
    if (!std::isfinite(best.sse)) {
      throw Error(ErrorKind::NonConvergence, "law fit diverged", i);
    }
    if (!best.converged) {
      throw Error(ErrorKind::NonConvergence,
                  "law fit did not converge in " + std::to_string(options.max_iterations) +
                      " iterations",
                  i, std::sqrt(best.sse / static_cast<double>(r_count)));
    }
    // Canonical gauge: log k_i = sum_j t_ij (the minimum-norm representative).
    const double shift = (best.log_k - best.t.sum()) / static_cast<double>(n + 1);
    const Eigen::VectorXd t_row = best.t.array() + shift;
    result.params.c[i] = best.c;
    result.params.k[i] = std::exp(best.log_k - shift);
    result.params.t.row(static_cast<Eigen::Index>(i)) = t_row.transpose();
    auto& rep = result.report.domains[i];
    rep.rmse = std::sqrt(best.sse / static_cast<double>(r_count));
    rep.iterations = best.iterations;
    rep.converged = best.converged;
    rep.c_seed = best_seed;
    pooled_sse += best.sse;
  }
  result.report.rmse = std::sqrt(pooled_sse / static_cast<double>(r_count * n));
  return result;
}

std::string LawDiagnostics::to_json() const {
  json j;
  j["condition"] = detail::finite_or_tag(condition);
  j["singular"] = singular;
  j["loss_min"] = loss_min;
  j["loss_max"] = loss_max;
  j["gamma_min"] = gamma_min;
  j["gamma_max"] = gamma_max;
  json mono = json::array();
  for (Eigen::Index i = 0; i < monotonicity.rows(); ++i) {
    std::vector<int> row;
    for (Eigen::Index k = 0; k < monotonicity.cols(); ++k) row.push_back(monotonicity(i, k));
    mono.push_back(row);
  }
  j["monotonicity"] = mono;
  return j.dump(2);
}

LawDiagnostics law_diagnostics(const MixingLawParams& params, double condition_cap) {
  params.validate();
  const auto n = params.size();
  LawDiagnostics d;
  d.condition = condition_number(params.t);
  d.singular = !(d.condition <= condition_cap);
  d.loss_min.resize(n);
  d.loss_max.resize(n);
  d.gamma_min.resize(n);
  d.gamma_max.resize(n);
  d.monotonicity.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = params.t.row(static_cast<Eigen::Index>(i));
    // t_i . alpha is linear, so its range over the simplex is attained at vertices.
    const double a = params.c[i] + params.k[i] * std::exp(row.minCoeff());
    const double b = params.c[i] + params.k[i] * std::exp(row.maxCoeff());
    d.loss_min[i] = std::min(a, b);
    d.loss_max[i] = std::max(a, b);
    d.gamma_min[i] = std::exp(-d.loss_max[i]);
    d.gamma_max[i] = std::exp(-d.loss_min[i]);
    for (std::size_t j = 0; j < n; ++j) {
      const double slope = params.k[i] * row(static_cast<Eigen::Index>(j));
      d.monotonicity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          (slope > 0.0) - (slope < 0.0);
    }
  }
  return d;
}

}  // namespace mixdetect
