#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixdetect/core_types.hpp"

namespace mixdetect {

// Parameters of L_i(alpha) = c_i + k_i * exp(sum_j t_ij * alpha_j).
//
// On the simplex the law is invariant under (k_i, t_i.) -> (k_i e^-s, t_i. + s),
// so a fitted parameter set is reported in one fixed gauge (see fit()).
struct MixingLawParams {
  std::vector<double> c;
  std::vector<double> k;
  Eigen::MatrixXd t;
  std::string loss_units = "nats_per_token";

  std::size_t size() const noexcept { return c.size(); }

  // Throws DimensionMismatch / InvalidArgument when the invariants fail.
  void validate() const;

  std::string to_json() const;
  static MixingLawParams from_json(const std::string& text);
};

struct BetaVector {
  std::vector<double> values;
};

struct RunObservation {
  MixtureProportions alpha;
  std::vector<double> losses;
};

std::string observations_to_json(std::span<const RunObservation> runs);
std::vector<RunObservation> observations_from_json(const std::string& text);

std::vector<double> eval_loss(const MixingLawParams& params, const MixtureProportions& alpha);

// gamma_i = exp(-L_i); estimator tagged exp-of-mean-loss.
GammaVector gamma_from_loss(std::span<const double> losses);

// beta_i = log(-(log gamma_i + c_i) / k_i). Throws DomainViolation naming the
// first domain whose gamma is unreachable under the law.
BetaVector beta_from_gamma(const GammaVector& gamma, const MixingLawParams& params);

enum class InversionMode { Raw, Project, Constrained };

std::string_view to_string(InversionMode mode);
InversionMode parse_inversion_mode(std::string_view text);

inline constexpr double kDefaultConditionCap = 1e8;

struct InversionDiagnostics {
  double residual = 0.0;          // ||T alpha_hat - beta||_2
  double raw_residual = 0.0;      // same for the unconstrained solve
  double condition = 0.0;         // 2-norm condition estimate of T
  double simplex_violation = 0.0; // L1 distance of the raw solution to the simplex
  bool projection_changed = false;
};

struct InversionResult {
  // The mode's answer. In raw mode it may lie off the simplex.
  std::vector<double> alpha;
  std::vector<double> raw_alpha;
  InversionDiagnostics diagnostics;

  // alpha projected onto the simplex (identity for project/constrained).
  MixtureProportions proportions() const;
};

InversionResult invert(const MixingLawParams& params, const BetaVector& beta,
                       InversionMode mode = InversionMode::Constrained,
                       double condition_cap = kDefaultConditionCap);

InversionResult invert(const MixingLawParams& params, const GammaVector& gamma,
                       InversionMode mode = InversionMode::Constrained,
                       double condition_cap = kDefaultConditionCap);

// Euclidean projection onto the probability simplex (sort-threshold).
MixtureProportions project_to_simplex(std::span<const double> v);

// argmin ||T x - b||_2 over the probability simplex.
std::vector<double> simplex_least_squares(const Eigen::MatrixXd& t, const Eigen::VectorXd& b);

// 2-norm condition number; +inf when T is numerically rank deficient.
double condition_number(const Eigen::MatrixXd& t);

struct FitOptions {
  int max_iterations = 500;
  double tolerance = 1e-12;
  // Lower bound on every c_i; -infinity disables it.
  double min_offset = 0.0;
};

struct DomainFitReport {
  double rmse = 0.0;
  int iterations = 0;
  bool converged = false;
  double c_seed = 0.0;
};

struct FitReport {
  std::vector<DomainFitReport> domains;
  double rmse = 0.0;  // pooled over all domains
};

struct FitResult {
  MixingLawParams params;
  FitReport report;
};

// Per-domain Levenberg-Marquardt fit of the law to observed losses.
FitResult fit(std::span<const RunObservation> observations, const FitOptions& options = {});

struct LawDiagnostics {
  double condition = 0.0;
  bool singular = false;
  std::vector<double> loss_min, loss_max;
  std::vector<double> gamma_min, gamma_max;  // reachable gamma as alpha sweeps the simplex
  Eigen::MatrixXi monotonicity;              // sign of dL_i / d alpha_j

  std::string to_json() const;
};

LawDiagnostics law_diagnostics(const MixingLawParams& params,
                               double condition_cap = kDefaultConditionCap);

}  // namespace mixdetect
