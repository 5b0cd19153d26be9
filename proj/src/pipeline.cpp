#include "mixdetect/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "mixdetect/parallel.hpp"
#include "mixdetect/random.hpp"

namespace mixdetect {

using detail::finite_or_tag;
using detail::json;

namespace {

json vec_json(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(finite_or_tag(x));
  return a;
}

json loss_stats_json(const LossStats& s) {
  return {{"mean", finite_or_tag(s.mean)},
          {"stderr", finite_or_tag(s.stderr_mean)},
          {"count", s.count},
          {"mean_exp_neg_loss", finite_or_tag(s.mean_exp_neg_loss)},
          {"stderr_exp", finite_or_tag(s.stderr_exp)}};
}

void require_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw Error(ErrorKind::NonFinite, std::string("non-finite ") + what, i, v[i]);
    }
  }
}

class StageTimer {
 public:
  StageTimer(DetectionReport& report, std::string stage)
      : report_(report), stage_(std::move(stage)), start_(std::chrono::steady_clock::now()) {}
  ~StageTimer() {
    if (!report_.config.record_timing) return;
    const auto elapsed = std::chrono::steady_clock::now() - start_;
    report_.timing[stage_] = std::chrono::duration<double>(elapsed).count();
  }

 private:
  DetectionReport& report_;
  std::string stage_;
  std::chrono::steady_clock::time_point start_;
};

// Runs `body` and converts a library error into the report's failure record.
template <typename Body>
bool run_stage(DetectionReport& report, const std::string& stage, Body&& body) {
  StageTimer timer(report, stage);
  try {
    body();
    return true;
  } catch (const Error& e) {
    report.failure = StageFailure{stage, e.kind(), e.what(), e.domain(), e.value()};
    return false;
  }
}

}  // namespace

void DetectionConfig::validate() const {
  if (sample_count < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be at least 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
  }
  if (max_len < 1) throw Error(ErrorKind::InvalidArgument, "max_len must be at least 1");
  if (!(condition_cap > 0.0)) throw Error(ErrorKind::InvalidArgument, "condition cap must be positive");
}

std::string DetectionConfig::to_json() const {
  json j;
  j["sample_count"] = sample_count;
  j["temperature"] = temperature;
  j["top_k"] = nullptr;  // sampling never truncates the support
  j["max_len"] = max_len;
  j["seed"] = seed;
  j["gamma_estimator"] = std::string(to_string(gamma_estimator));
  j["inversion_mode"] = std::string(to_string(inversion_mode));
  j["units"] = std::string(to_string(units));
  j["clamp_gamma"] = clamp_gamma;
  j["condition_cap"] = condition_cap;
  j["record_timing"] = record_timing;
  return j.dump();
}

DetectionConfig DetectionConfig::from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "detection config");
  DetectionConfig c;
  for (const char* key : {"sample_count", "max_len", "seed"}) {
    if (j.contains(key) && !j.at(key).is_number_unsigned()) {
      throw Error(ErrorKind::Format, std::string("detection config: ") + key + " must be a nonnegative integer");
    }
  }
  try {
    c.sample_count = j.value("sample_count", c.sample_count);
    c.temperature = j.value("temperature", c.temperature);
    c.max_len = j.value("max_len", c.max_len);
    c.seed = j.value("seed", c.seed);
    c.gamma_estimator = parse_gamma_estimator(j.value("gamma_estimator", std::string("classified-fraction")));
    c.inversion_mode = parse_inversion_mode(j.value("inversion_mode", std::string("constrained")));
    c.units = parse_loss_units(j.value("units", std::string("per-token")));
    c.clamp_gamma = j.value("clamp_gamma", c.clamp_gamma);
    c.condition_cap = j.value("condition_cap", c.condition_cap);
    c.record_timing = j.value("record_timing", c.record_timing);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("detection config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<TokenSequence> generate_samples(const ToyLM& model, const DetectionConfig& config) {
  return sample(model, config.sample_count, config.temperature, config.max_len, config.seed, config.threads);
}

GenerationSummary classify_samples(const ToyLM& model, const Classifier& clf,
                                   std::span<const TokenSequence> samples, const DetectionConfig& config) {
  const auto n = clf.domains().size();
  const auto results = classify_all(clf, samples, config.threads);
  std::vector<double> losses(samples.size());
  parallel_for(samples.size(), config.threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) losses[i] = sequence_loss(model, samples[i], config.units);
  });
  GenerationSummary s;
  s.predicted.resize(samples.size());
  s.class_counts.assign(n, 0);
  std::vector<std::vector<double>> per_domain(n);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto d = results[i].domain;
    s.predicted[i] = d;
    ++s.class_counts[d];
    per_domain[d].push_back(losses[i]);
  }
  s.domain_losses.resize(n);
  for (std::size_t d = 0; d < n; ++d) {
    if (per_domain[d].size() >= 2) s.domain_losses[d] = loss_stats(per_domain[d]);
  }
  return s;
}

GammaVector estimate_gamma(const GenerationSummary& summary, const DetectionConfig& config) {
  const auto n = summary.class_counts.size();
  if (config.gamma_estimator == GammaEstimator::ClassifiedFraction) {
    return estimate_gamma_fraction(summary.predicted, n);
  }
  GammaVector g;
  g.estimator = config.gamma_estimator;
  g.values.resize(n);
  g.stderr_values = std::vector<double>(n);
  for (std::size_t d = 0; d < n; ++d) {
    const auto& stats = summary.domain_losses[d];
    if (!stats) {
      throw Error(ErrorKind::MissingDomainData,
                  "fewer than two samples classified to domain " + std::to_string(d) +
                      "; its expected loss cannot be estimated",
                  d, static_cast<double>(summary.class_counts[d]));
    }
    if (config.gamma_estimator == GammaEstimator::ExpOfMeanLoss) {
      g.values[d] = std::exp(-stats->mean);
      (*g.stderr_values)[d] = g.values[d] * stats->stderr_mean;  // delta method
    } else {
      g.values[d] = stats->mean_exp_neg_loss;
      (*g.stderr_values)[d] = stats->stderr_exp;
    }
  }
  return g;
}

std::vector<std::size_t> clamp_gamma(GammaVector& gamma, const MixingLawParams& law) {
  const auto diag = law_diagnostics(law);
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const double lo = diag.gamma_min[i];
    const double hi = diag.gamma_max[i];
    double target = gamma.values[i];
    if (hi - lo <= 2.0 * kClampEpsilon) {
      target = 0.5 * (lo + hi);
    } else if (target < lo + kClampEpsilon) {
      target = lo + kClampEpsilon;
    } else if (target > hi - kClampEpsilon) {
      target = hi - kClampEpsilon;
    }
    if (target != gamma.values[i]) {
      gamma.values[i] = target;
      moved.push_back(i);
    }
  }
  return moved;
}

namespace {

DetectionReport run_detection(const ToyLM& model, const Classifier& clf, const MixingLawParams* law,
                              const DetectionConfig& config) {
  DetectionReport report;
  report.config = config;
  report.gamma_only = law == nullptr;
  report.domains = clf.domains().names();
  report.model_fingerprint = model.trained_on();
  if (!run_stage(report, "config", [&] { config.validate(); })) return report;

  std::vector<TokenSequence> samples;
  if (!run_stage(report, "generate", [&] { samples = generate_samples(model, config); })) return report;

  GenerationSummary summary;
  if (!run_stage(report, "classify", [&] { summary = classify_samples(model, clf, samples, config); })) {
    return report;
  }
  report.class_counts = summary.class_counts;
  report.domain_losses = summary.domain_losses;
  if (config.sample_count < kMinReliableSamples) {
    report.warnings.push_back("insufficient-samples: " + std::to_string(config.sample_count) +
                              " samples; stderr estimates are degenerate");
  }

  if (!run_stage(report, "estimate_gamma", [&] {
        auto g = estimate_gamma(summary, config);
        require_finite(g.values, "gamma");
        report.gamma = std::move(g);
      })) {
    return report;
  }

  if (law == nullptr) {
    run_stage(report, "estimate_alpha", [&] {
      std::vector<double> v = report.gamma->values;
      if (config.gamma_estimator != GammaEstimator::ClassifiedFraction) {
        // Loss-based gammas are per-domain probabilities, not a partition.
        const double total = std::accumulate(v.begin(), v.end(), 0.0);
        for (auto& x : v) x /= total;
      }
      report.alpha_final = make_proportions(v);
    });
    return report;
  }

  if (!run_stage(report, "beta", [&] {
        if (law->size() != clf.domains().size()) {
          throw Error(ErrorKind::DimensionMismatch, "law has " + std::to_string(law->size()) +
                                                        " domains, classifier has " +
                                                        std::to_string(clf.domains().size()));
        }
        GammaVector g = *report.gamma;
        if (config.clamp_gamma) report.clamped = clamp_gamma(g, *law);
        auto b = beta_from_gamma(g, *law);
        require_finite(b.values, "beta");
        report.beta = std::move(b);
      })) {
    return report;
  }

  run_stage(report, "invert", [&] {
    const auto inv = invert(*law, *report.beta, config.inversion_mode, config.condition_cap);
    require_finite(inv.raw_alpha, "raw alpha");
    require_finite(inv.alpha, "alpha");
    report.alpha_raw = inv.raw_alpha;
    report.alpha_final = inv.proportions();
    report.inversion = inv.diagnostics;
  });
  return report;
}

}  // namespace

DetectionReport detect(const ToyLM& model, const Classifier& clf, const MixingLawParams& law,
                       const DetectionConfig& config) {
  return run_detection(model, clf, &law, config);
}

DetectionReport detect_gamma_only(const ToyLM& model, const Classifier& clf, const DetectionConfig& config) {
  return run_detection(model, clf, nullptr, config);
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

ErrorMetrics evaluate(const MixtureProportions& estimate, const MixtureProportions& truth) {
  if (estimate.size() != truth.size()) {
    throw Error(ErrorKind::DimensionMismatch, "estimate and truth differ in dimension");
  }
  ErrorMetrics m;
  m.l1 = l1_error(estimate, truth);
  m.tv = 0.5 * m.l1;
  m.per_domain_abs.resize(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    m.per_domain_abs[i] = std::abs(estimate[i] - truth[i]);
    m.max_abs = std::max(m.max_abs, m.per_domain_abs[i]);
  }
  const auto ra = average_ranks(estimate.span());
  const auto rb = average_ranks(truth.span());
  m.rank_correlation = estimate == truth ? 1.0 : pearson(ra, rb);
  return m;
}

ErrorMetrics evaluate_report(DetectionReport& report, const MixtureProportions& truth) {
  if (!report.alpha_final) throw Error(ErrorKind::InvalidArgument, "report has no alpha estimate");
  auto m = evaluate(*report.alpha_final, truth);
  report.truth = truth;
  report.errors = m;
  return m;
}

void attach_classifier_accuracy(DetectionReport& report, const Classifier& clf, const Corpus& heldout) {
  report.classifier_accuracy = accuracy(clf, heldout, report.config.threads).accuracy;
}

std::string DetectionReport::to_json() const {
  json j;
  j["config"] = json::parse(config.to_json());
  if (gamma) {
    json g;
    g["estimator"] = std::string(to_string(gamma->estimator));
    g["values"] = vec_json(gamma->values);
    g["stderr"] = gamma->stderr_values ? vec_json(*gamma->stderr_values) : json(nullptr);
    g["class_counts"] = class_counts;
    g["clamped"] = clamped;
    j["gamma"] = g;
  } else {
    j["gamma"] = nullptr;
  }
  j["beta"] = beta ? vec_json(beta->values) : json(nullptr);
  j["alpha_raw"] = alpha_raw ? vec_json(*alpha_raw) : json(nullptr);
  j["alpha_final"] = alpha_final ? vec_json(alpha_final->values()) : json(nullptr);

  json diag;
  diag["status"] = ok() ? "ok" : "error";
  diag["mode"] = gamma_only ? "gamma-only" : "full";
  diag["domains"] = domains;
  diag["model_fingerprint"] = model_fingerprint;
  if (failure) {
    json f{{"stage", failure->stage}, {"kind", std::string(to_string(failure->kind))}, {"message", failure->message}};
    f["domain"] = failure->domain ? json(*failure->domain) : json(nullptr);
    f["domain_name"] = failure->domain && *failure->domain < domains.size() ? json(domains[*failure->domain])
                                                                           : json(nullptr);
    f["value"] = failure->value ? finite_or_tag(*failure->value) : json(nullptr);
    diag["failure"] = f;
  } else {
    diag["failure"] = nullptr;
  }
  json losses = json::array();
  for (const auto& s : domain_losses) losses.push_back(s ? loss_stats_json(*s) : json(nullptr));
  diag["domain_losses"] = losses;
  diag["loss_units"] = std::string(to_string(config.units));
  if (inversion) {
    diag["inversion"] = {{"residual", finite_or_tag(inversion->residual)},
                         {"raw_residual", finite_or_tag(inversion->raw_residual)},
                         {"condition", finite_or_tag(inversion->condition)},
                         {"simplex_violation", finite_or_tag(inversion->simplex_violation)},
                         {"projection_changed", inversion->projection_changed}};
  } else {
    diag["inversion"] = nullptr;
  }
  diag["classifier_accuracy"] = classifier_accuracy ? json(*classifier_accuracy) : json(nullptr);
  diag["warnings"] = warnings;
  j["diagnostics"] = diag;

  if (truth) j["truth"] = vec_json(truth->values());
  if (errors) {
    j["errors"] = {{"l1", errors->l1},
                   {"tv", errors->tv},
                   {"max_abs", errors->max_abs},
                   {"per_domain_abs", vec_json(errors->per_domain_abs)},
                   {"rank_correlation", errors->rank_correlation}};
  }
  json t = json::object();
  for (const auto& [k, v] : timing) t[k] = v;
  j["timing"] = t;
  return j.dump(2) + "\n";
}

std::string DetectionReport::csv_header() const {
  const auto text = render_report(to_json(), "csv");
  return text.substr(0, text.find('\n'));
}

std::string DetectionReport::csv_row() const {
  const auto text = render_report(to_json(), "csv");
  const auto first = text.find('\n');
  return text.substr(first + 1, text.find('\n', first + 1) - first - 1);
}

namespace {

std::string cell(const json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) return v.get<std::string>();
  std::ostringstream s;
  s.precision(10);
  s << v.get<double>();
  return s.str();
}

json at_or_null(const json& arr, std::size_t i) {
  return arr.is_array() && i < arr.size() ? arr[i] : json(nullptr);
}

}  // namespace

std::string render_report(const std::string& report_json, const std::string& format) {
  const auto j = detail::parse_json(report_json, "report");
  try {
    const auto& diag = j.at("diagnostics");
    const auto domains = diag.at("domains").get<std::vector<std::string>>();
    const auto& cfg = j.at("config");
    const json gamma_values = j.at("gamma").is_null() ? json(nullptr) : j.at("gamma").at("values");
    const json gamma_stderr = j.at("gamma").is_null() ? json(nullptr) : j.at("gamma").at("stderr");
    const json& alpha = j.at("alpha_final");
    const json truth = j.value("truth", json(nullptr));
    const json errors = j.value("errors", json(nullptr));
    std::ostringstream out;
    if (format == "csv") {
      std::vector<std::string> header{"status", "mode", "estimator", "inversion_mode", "samples", "seed"};
      std::vector<std::string> row{diag.at("status").get<std::string>(), diag.at("mode").get<std::string>(),
                                   cfg.at("gamma_estimator").get<std::string>(),
                                   cfg.at("inversion_mode").get<std::string>(),
                                   std::to_string(cfg.at("sample_count").get<std::size_t>()),
                                   std::to_string(cfg.at("seed").get<std::uint64_t>())};
      for (const char* prefix : {"gamma_", "alpha_", "truth_"}) {
        const json& src = prefix[0] == 'g' ? gamma_values : (prefix[0] == 'a' ? alpha : truth);
        for (std::size_t i = 0; i < domains.size(); ++i) {
          header.push_back(prefix + domains[i]);
          row.push_back(cell(at_or_null(src, i)));
        }
      }
      for (const char* metric : {"l1", "tv", "max_abs", "rank_correlation"}) {
        header.emplace_back(metric);
        row.push_back(errors.is_null() ? "" : cell(errors.at(metric)));
      }
      for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
      out << '\n';
      for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
      out << '\n';
      return out.str();
    }
    if (format != "md") throw Error(ErrorKind::InvalidArgument, "unknown report format '" + format + "'");
    out << "# Detection report\n\n";
    out << "- status: " << diag.at("status").get<std::string>() << "\n";
    out << "- mode: " << diag.at("mode").get<std::string>() << "\n";
    out << "- samples: " << cfg.at("sample_count").get<std::size_t>() << ", temperature "
        << cell(cfg.at("temperature")) << ", seed " << cfg.at("seed").get<std::uint64_t>() << "\n";
    out << "- gamma estimator: " << cfg.at("gamma_estimator").get<std::string>()
        << ", inversion: " << cfg.at("inversion_mode").get<std::string>() << "\n";
    if (diag.contains("classifier_accuracy") && !diag.at("classifier_accuracy").is_null()) {
      out << "- classifier held-out accuracy: " << cell(diag.at("classifier_accuracy")) << "\n";
    }
    if (!diag.at("failure").is_null()) {
      const auto& f = diag.at("failure");
      out << "- failure: stage `" << f.at("stage").get<std::string>() << "`, "
          << f.at("kind").get<std::string>() << ": " << f.at("message").get<std::string>() << "\n";
    }
    out << "\n| domain | gamma | stderr | alpha | truth | abs error |\n|---|---|---|---|---|---|\n";
    for (std::size_t i = 0; i < domains.size(); ++i) {
      const auto a = at_or_null(alpha, i);
      const auto t = at_or_null(truth, i);
      out << "| " << domains[i] << " | " << cell(at_or_null(gamma_values, i)) << " | "
          << cell(at_or_null(gamma_stderr, i)) << " | " << cell(a) << " | " << cell(t) << " | "
          << (a.is_number() && t.is_number() ? cell(std::abs(a.get<double>() - t.get<double>())) : "")
          << " |\n";
    }
    if (!errors.is_null()) {
      out << "\nL1 " << cell(errors.at("l1")) << ", TV " << cell(errors.at("tv")) << ", max abs "
          << cell(errors.at("max_abs")) << ", rank correlation " << cell(errors.at("rank_correlation"))
          << "\n";
    }
    return out.str();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("report: ") + e.what());
  }
}

RunObservation measure_run(const ToyLM& model, const Classifier& clf, const MixtureProportions& alpha,
                           const DetectionConfig& config) {
  DetectionConfig c = config;
  c.gamma_estimator = GammaEstimator::ExpOfMeanLoss;
  c.validate();
  const auto samples = generate_samples(model, c);
  const auto summary = classify_samples(model, clf, samples, c);
  RunObservation obs{alpha, std::vector<double>(summary.class_counts.size())};
  for (std::size_t d = 0; d < obs.losses.size(); ++d) {
    if (!summary.domain_losses[d]) {
      throw Error(ErrorKind::MissingDomainData, "no generated samples classified to domain", d);
    }
    obs.losses[d] = summary.domain_losses[d]->mean;
  }
  return obs;
}

namespace {

const char* kDomainNames[] = {"cc", "code", "math", "book", "wiki", "arxiv", "qa", "news"};

DomainSet scenario_domains(std::size_t n) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < n; ++i) {
    names.push_back(i < std::size(kDomainNames) ? kDomainNames[i] : "d" + std::to_string(i));
  }
  return DomainSet(names);
}

Corpus concat(std::span<const Corpus> parts) {
  Corpus out;
  out.labels = std::vector<std::size_t>{};
  for (const auto& p : parts) {
    out.sequences.insert(out.sequences.end(), p.sequences.begin(), p.sequences.end());
    out.labels->insert(out.labels->end(), p.labels->begin(), p.labels->end());
    out.specs.insert(out.specs.end(), p.specs.begin(), p.specs.end());
  }
  return out;
}

}  // namespace

Scenario build_scenario(const ScenarioConfig& config) {
  if (config.alpha.size() != config.n_domains) {
    throw Error(ErrorKind::DimensionMismatch, "scenario alpha length differs from domain count");
  }
  const auto alpha = make_proportions(config.alpha);
  auto domains = scenario_domains(config.n_domains);
  auto specs = uniform_domain_specs(domains, config.tokens_per_domain, config.overlap_fraction, config.min_len,
                                    config.max_len, config.generator_order, config.corpus_seed);
  std::vector<Corpus> clf_parts, heldout_parts, pool;
  for (const auto& spec : specs) {
    const auto full = synth_domain(spec, config.classifier_cap + config.heldout_per_domain + config.train_total);
    auto [clf_part, rest] = split_corpus(full, config.classifier_cap);
    auto [heldout_part, mixing_part] = split_corpus(rest, config.heldout_per_domain);
    clf_parts.push_back(std::move(clf_part));
    heldout_parts.push_back(std::move(heldout_part));
    pool.push_back(std::move(mixing_part));
  }
  auto mixture = mix_corpora(pool, alpha, config.train_total, config.seed);
  const auto vocab = specs.front().vocab_size;
  auto model = ToyLM::train(mixture, config.lm_order, config.lm_smoothing, vocab);
  auto clf = Classifier::train(domains, clf_parts,
                               ClassifierOptions{config.classifier_smoothing, config.classifier_cap, vocab});
  auto heldout = concat(heldout_parts);
  const double acc = heldout.size() ? accuracy(clf, heldout).accuracy : 0.0;
  return Scenario{std::move(domains), std::move(specs), std::move(pool), std::move(mixture), std::move(model),
                  std::move(clf), std::move(heldout), acc};
}

ToyLM train_on_mixture(const Scenario& scenario, const ScenarioConfig& config, const MixtureProportions& alpha,
                       std::uint64_t seed) {
  const auto mixture = mix_corpora(scenario.mixing_pool, alpha, config.train_total, seed);
  return ToyLM::train(mixture, config.lm_order, config.lm_smoothing, scenario.specs.front().vocab_size);
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::SampleCount: return "M";
    case SweepAxis::OverlapFraction: return "overlap_fraction";
    case SweepAxis::Condition: return "condition";
    case SweepAxis::ClassifierAccuracy: return "classifier_accuracy";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  if (text == "M" || text == "samples") return SweepAxis::SampleCount;
  if (text == "overlap_fraction" || text == "overlap") return SweepAxis::OverlapFraction;
  if (text == "condition") return SweepAxis::Condition;
  if (text == "classifier_accuracy" || text == "accuracy") return SweepAxis::ClassifierAccuracy;
  throw Error(ErrorKind::InvalidArgument, "unknown sweep axis '" + std::string(text) + "'");
}

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  return qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
}

}  // namespace

std::vector<SweepRow> sensitivity_sweep(const ScenarioConfig& scenario, const DetectionConfig& detection,
                                        SweepAxis axis, std::span<const double> values, std::size_t seeds) {
  if (seeds < 1) throw Error(ErrorKind::InvalidArgument, "sweep needs at least one seed");
  const auto truth = make_proportions(scenario.alpha);
  std::vector<SweepRow> rows;
  rows.reserve(values.size());
  for (double v : values) rows.push_back(SweepRow{v});

  auto record = [](SweepRow& row, std::vector<double>& l1s, std::vector<double>& stderrs,
                   std::vector<double>& accs) {
    row.mean_l1 = mean_of(l1s);
    row.mean_gamma_stderr = mean_of(stderrs);
    row.mean_accuracy = mean_of(accs);
  };
  auto gamma_stderr = [](const GammaVector& g) {
    return g.stderr_values ? mean_of(*g.stderr_values) : 0.0;
  };

  if (axis == SweepAxis::Condition) {
    for (auto& row : rows) {
      std::vector<double> l1s, stderrs, accs;
      for (std::size_t s = 0; s < seeds; ++s) {
        ++row.runs;
        try {
          if (!(row.value >= 1.0)) throw Error(ErrorKind::InvalidArgument, "condition must be >= 1");
          Rng rng(detection.seed + s, 0xc0dULL);
          const auto n = truth.size();
          Eigen::VectorXd sv(static_cast<Eigen::Index>(n));
          for (std::size_t i = 0; i < n; ++i) {
            sv(static_cast<Eigen::Index>(i)) =
                2.0 * std::pow(row.value, -static_cast<double>(i) / static_cast<double>(n - 1));
          }
          MixingLawParams law;
          law.c.assign(n, 0.0);
          law.k.assign(n, 1.0);
          law.t = random_orthogonal(n, rng) * sv.asDiagonal() * random_orthogonal(n, rng).transpose();
          constexpr double kLossNoise = 0.01;
          auto losses = eval_loss(law, truth);
          for (auto& l : losses) l += kLossNoise * rng.normal();
          auto g = gamma_from_loss(losses);
          const auto inv = invert(law, g, InversionMode::Constrained, std::max(detection.condition_cap, 10.0 * row.value));
          l1s.push_back(l1_error(inv.proportions(), truth));
          double se = 0.0;
          for (double x : g.values) se += x * kLossNoise;
          stderrs.push_back(se / static_cast<double>(n));
        } catch (const Error&) {
          ++row.failures;
        }
      }
      record(row, l1s, stderrs, accs);
    }
    return rows;
  }

  // The other axes run the generation/classification pathway and treat the
  // classified fractions as the proportion estimate.
  std::vector<std::vector<double>> l1s(rows.size()), stderrs(rows.size()), accs(rows.size());
  for (std::size_t s = 0; s < seeds; ++s) {
    ScenarioConfig sc = scenario;
    sc.seed = scenario.seed + s;
    sc.corpus_seed = scenario.corpus_seed + s;
    std::optional<Scenario> shared;
    if (axis != SweepAxis::OverlapFraction) shared = build_scenario(sc);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto& row = rows[r];
      ++row.runs;
      try {
        DetectionConfig dc = detection;
        dc.seed = detection.seed + s;
        dc.gamma_estimator = GammaEstimator::ClassifiedFraction;
        std::optional<Scenario> local;
        if (axis == SweepAxis::OverlapFraction) {
          ScenarioConfig oc = sc;
          oc.overlap_fraction = row.value;
          local = build_scenario(oc);
        }
        const Scenario& world = local ? *local : *shared;
        if (axis == SweepAxis::SampleCount) dc.sample_count = static_cast<std::size_t>(row.value);
        if (axis == SweepAxis::ClassifierAccuracy) {
          // Degrade the classifier by replacing each prediction with a uniform
          // random label with probability p, chosen so that the expected
          // accuracy equals the requested value.
          const double n = static_cast<double>(truth.size());
          const double base = world.heldout_accuracy;
          const double p = base - 1.0 / n > 0.0 ? std::clamp((base - row.value) / (base - 1.0 / n), 0.0, 1.0) : 0.0;
          auto corrupt = [&](std::vector<std::size_t>& labels, std::uint64_t stream) {
            Rng rng(dc.seed, stream);
            for (auto& l : labels) {
              if (rng.uniform() < p) l = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1));
            }
          };
          const auto samples = generate_samples(world.model, dc);
          auto summary = classify_samples(world.model, world.classifier, samples, dc);
          corrupt(summary.predicted, 1);
          const auto g = estimate_gamma_fraction(summary.predicted, truth.size());
          auto held = classify_all(world.classifier, world.heldout.sequences);
          std::vector<std::size_t> held_pred(held.size());
          for (std::size_t i = 0; i < held.size(); ++i) held_pred[i] = held[i].domain;
          corrupt(held_pred, 2);
          std::size_t correct = 0;
          for (std::size_t i = 0; i < held_pred.size(); ++i) correct += held_pred[i] == (*world.heldout.labels)[i];
          l1s[r].push_back(l1_error(make_proportions(g.values), truth));
          stderrs[r].push_back(gamma_stderr(g));
          accs[r].push_back(static_cast<double>(correct) / static_cast<double>(held_pred.size()));
          continue;
        }
        auto report = detect_gamma_only(world.model, world.classifier, dc);
        if (!report.ok()) {
          ++row.failures;
          continue;
        }
        l1s[r].push_back(evaluate_report(report, truth).l1);
        stderrs[r].push_back(gamma_stderr(*report.gamma));
        accs[r].push_back(world.heldout_accuracy);
      } catch (const Error&) {
        ++row.failures;
      }
    }
  }
  for (std::size_t r = 0; r < rows.size(); ++r) record(rows[r], l1s[r], stderrs[r], accs[r]);
  return rows;
}

std::string sweep_to_csv(SweepAxis axis, std::span<const SweepRow> rows) {
  std::ostringstream out;
  out.precision(10);
  out << to_string(axis) << ",runs,failures,mean_l1,mean_gamma_stderr,mean_accuracy\n";
  for (const auto& r : rows) {
    out << r.value << ',' << r.runs << ',' << r.failures << ',' << r.mean_l1 << ',' << r.mean_gamma_stderr << ','
        << r.mean_accuracy << '\n';
  }
  return out.str();
}

}  // namespace mixdetect
