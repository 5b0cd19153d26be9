#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixdetect/classifier.hpp"
#include "mixdetect/core_types.hpp"
#include "mixdetect/corpus.hpp"
#include "mixdetect/mixing_law.hpp"
#include "mixdetect/toy_lm.hpp"

namespace mixdetect {

struct DetectionConfig {
  std::size_t sample_count = 100000;
  double temperature = 1.0;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
  GammaEstimator gamma_estimator = GammaEstimator::ClassifiedFraction;
  InversionMode inversion_mode = InversionMode::Constrained;
  LossUnits units = LossUnits::PerToken;
  bool clamp_gamma = false;
  double condition_cap = kDefaultConditionCap;
  bool record_timing = false;
  std::size_t threads = 0;  // affects speed only, never output

  void validate() const;
  std::string to_json() const;
  static DetectionConfig from_json(const std::string& text);
};

inline constexpr double kClampEpsilon = 1e-6;
inline constexpr std::size_t kMinReliableSamples = 30;

struct StageFailure {
  std::string stage;  // generate | classify | estimate_gamma | beta | invert
  ErrorKind kind = ErrorKind::InvalidArgument;
  std::string message;
  std::optional<std::size_t> domain;
  std::optional<double> value;
};

struct ErrorMetrics {
  double l1 = 0.0;
  double tv = 0.0;
  double max_abs = 0.0;
  std::vector<double> per_domain_abs;
  double rank_correlation = 0.0;  // Spearman, average ranks for ties
};

struct DetectionReport {
  DetectionConfig config;
  bool gamma_only = false;
  std::vector<std::string> domains;
  std::uint64_t model_fingerprint = 0;

  std::vector<std::size_t> class_counts;
  std::vector<std::optional<LossStats>> domain_losses;  // model loss on samples classified to each domain
  std::optional<GammaVector> gamma;
  std::vector<std::size_t> clamped;  // domains whose gamma was clamped into the feasible range
  std::optional<BetaVector> beta;
  std::optional<std::vector<double>> alpha_raw;
  std::optional<MixtureProportions> alpha_final;
  std::optional<InversionDiagnostics> inversion;
  std::optional<double> classifier_accuracy;
  std::optional<MixtureProportions> truth;
  std::optional<ErrorMetrics> errors;
  std::vector<std::string> warnings;
  std::optional<StageFailure> failure;
  std::map<std::string, double> timing;

  bool ok() const noexcept { return !failure.has_value(); }
  std::string to_json() const;
  std::string csv_header() const;
  std::string csv_row() const;
};

// Individual stages; detect() is exactly their composition.
std::vector<TokenSequence> generate_samples(const ToyLM& model, const DetectionConfig& config);

struct GenerationSummary {
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> class_counts;
  std::vector<std::optional<LossStats>> domain_losses;
};

GenerationSummary classify_samples(const ToyLM& model, const Classifier& clf,
                                   std::span<const TokenSequence> samples, const DetectionConfig& config);

GammaVector estimate_gamma(const GenerationSummary& summary, const DetectionConfig& config);

// Moves gamma_i that lie outside the law's reachable interval to kClampEpsilon
// inside it; returns the indices that moved.
std::vector<std::size_t> clamp_gamma(GammaVector& gamma, const MixingLawParams& law);

DetectionReport detect(const ToyLM& model, const Classifier& clf, const MixingLawParams& law,
                       const DetectionConfig& config);

DetectionReport detect_gamma_only(const ToyLM& model, const Classifier& clf,
                                  const DetectionConfig& config);

ErrorMetrics evaluate(const MixtureProportions& estimate, const MixtureProportions& truth);

// Attaches truth and error metrics to the report and returns the metrics.
ErrorMetrics evaluate_report(DetectionReport& report, const MixtureProportions& truth);

void attach_classifier_accuracy(DetectionReport& report, const Classifier& clf, const Corpus& heldout);

// Renders a report JSON document as markdown or a CSV row with header.
std::string render_report(const std::string& report_json, const std::string& format);

// Measures per-domain losses the way detect() does (sample, classify, mean
// loss per class) so a law fitted on them matches the detection pathway.
RunObservation measure_run(const ToyLM& model, const Classifier& clf, const MixtureProportions& alpha,
                           const DetectionConfig& config);

// A complete synthetic world: domain corpora, a mixture with known alpha,
// a toy LM trained on it and a classifier trained on separate data.
struct ScenarioConfig {
  std::size_t n_domains = 4;
  std::size_t tokens_per_domain = 16;
  double overlap_fraction = 0.4;
  std::size_t min_len = 8;
  std::size_t max_len = 16;
  std::size_t generator_order = 2;
  std::vector<double> alpha{0.4, 0.3, 0.2, 0.1};
  std::size_t train_total = 20000;
  std::size_t lm_order = 2;
  double lm_smoothing = 0.01;
  std::size_t classifier_cap = 10000;
  double classifier_smoothing = 0.1;
  std::size_t heldout_per_domain = 2000;
  std::uint64_t corpus_seed = 1;  // domain sources
  std::uint64_t seed = 1;         // mixing
};

struct Scenario {
  DomainSet domains;
  std::vector<DomainSpec> specs;
  std::vector<Corpus> mixing_pool;  // per domain, disjoint from classifier data
  Corpus mixture;
  ToyLM model;
  Classifier classifier;
  Corpus heldout;
  double heldout_accuracy = 0.0;
};

Scenario build_scenario(const ScenarioConfig& config);

// Retrains only the LM on a new mixture of the scenario's pool.
ToyLM train_on_mixture(const Scenario& scenario, const ScenarioConfig& config,
                       const MixtureProportions& alpha, std::uint64_t seed);

enum class SweepAxis { SampleCount, OverlapFraction, Condition, ClassifierAccuracy };

std::string_view to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(std::string_view text);

struct SweepRow {
  double value = 0.0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double mean_l1 = 0.0;
  double mean_gamma_stderr = 0.0;
  double mean_accuracy = 0.0;
};

std::vector<SweepRow> sensitivity_sweep(const ScenarioConfig& scenario, const DetectionConfig& detection,
                                        SweepAxis axis, std::span<const double> values,
                                        std::size_t seeds = 5);

std::string sweep_to_csv(SweepAxis axis, std::span<const SweepRow> rows);

}  // namespace mixdetect
