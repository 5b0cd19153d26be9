#include "mixdetect/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

namespace mixdetect {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NegativeEntry: return "NegativeEntry";
    case ErrorKind::NotNormalized: return "NotNormalized";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NegativeLoss: return "NegativeLoss";
    case ErrorKind::DomainViolation: return "DomainViolation";
    case ErrorKind::SingularMatrix: return "SingularMatrix";
    case ErrorKind::InsufficientObservations: return "InsufficientObservations";
    case ErrorKind::DegenerateDesign: return "DegenerateDesign";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyVocabRange: return "EmptyVocabRange";
    case ErrorKind::InsufficientSourceData: return "InsufficientSourceData";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::UnknownToken: return "UnknownToken";
    case ErrorKind::EnumerationTooLarge: return "EnumerationTooLarge";
    case ErrorKind::MissingDomainData: return "MissingDomainData";
    case ErrorKind::UnlabeledCorpus: return "UnlabeledCorpus";
    case ErrorKind::Format: return "Format";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message,
             std::optional<std::size_t> domain, std::optional<double> value)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      domain_(domain),
      value_(value) {}

DomainSet::DomainSet(std::vector<std::string> names) {
  if (names.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "a domain set needs at least two domains");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i].empty()) {
      throw Error(ErrorKind::InvalidArgument, "domain names must be nonempty");
    }
    if (!seen.insert(names[i]).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate domain name '" + names[i] + "'");
    }
    domains_.push_back(DomainId{i, std::move(names[i])});
  }
}

std::vector<std::string> DomainSet::names() const {
  std::vector<std::string> out;
  out.reserve(domains_.size());
  for (const auto& d : domains_) out.push_back(d.name);
  return out;
}

std::optional<std::size_t> DomainSet::find(const std::string& name) const {
  for (const auto& d : domains_) {
    if (d.name == name) return d.index;
  }
  return std::nullopt;
}

std::string DomainSet::to_json() const {
  nlohmann::json j;
  j["domains"] = names();
  return j.dump();
}

DomainSet DomainSet::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    return DomainSet(j.at("domains").get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("domain set: ") + e.what());
  }
}

MixtureProportions make_proportions(std::span<const double> values, double tolerance) {
  if (values.size() < 2) {
    throw Error(ErrorKind::InvalidArgument, "proportions need at least two entries");
  }
  MixtureProportions p;
  p.values_.assign(values.begin(), values.end());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw Error(ErrorKind::NonFinite, "non-finite proportion", i);
    }
    if (values[i] < -tolerance) {
      throw Error(ErrorKind::NegativeEntry,
                  "proportion " + std::to_string(i) + " is negative", i, values[i]);
    }
    p.values_[i] = std::max(0.0, values[i]);
  }
  const double sum = std::accumulate(p.values_.begin(), p.values_.end(), 0.0);
  if (std::abs(sum - 1.0) > tolerance) {
    throw Error(ErrorKind::NotNormalized,
                "proportions sum to " + std::to_string(sum), std::nullopt, sum);
  }
  if (sum != 1.0) {
    for (auto& v : p.values_) v /= sum;
  }
  return p;
}

MixtureProportions make_proportions(std::initializer_list<double> values, double tolerance) {
  return make_proportions(std::span<const double>(values.begin(), values.size()), tolerance);
}

MixtureProportions uniform_proportions(std::size_t n) {
  return make_proportions(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

double l1_error(const MixtureProportions& a, const MixtureProportions& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "l1_error on vectors of different length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

double total_variation(const MixtureProportions& a, const MixtureProportions& b) {
  return 0.5 * l1_error(a, b);
}

std::string_view to_string(GammaEstimator kind) {
  switch (kind) {
    case GammaEstimator::ClassifiedFraction: return "classified-fraction";
    case GammaEstimator::ExpOfMeanLoss: return "exp-of-mean-loss";
    case GammaEstimator::MeanOfExpLoss: return "mean-of-exp-loss";
  }
  return "unknown";
}

GammaEstimator parse_gamma_estimator(std::string_view text) {
  if (text == "classified-fraction" || text == "fraction") return GammaEstimator::ClassifiedFraction;
  if (text == "exp-of-mean-loss" || text == "exp-mean-loss") return GammaEstimator::ExpOfMeanLoss;
  if (text == "mean-of-exp-loss" || text == "mean-exp-loss") return GammaEstimator::MeanOfExpLoss;
  throw Error(ErrorKind::InvalidArgument, "unknown gamma estimator '" + std::string(text) + "'");
}

void validate_gamma(const GammaVector& g) {
  if (g.values.empty()) throw Error(ErrorKind::InvalidArgument, "empty gamma vector");
  if (g.stderr_values && g.stderr_values->size() != g.values.size()) {
    throw Error(ErrorKind::DimensionMismatch, "gamma stderr length differs from values");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const double v = g.values[i];
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "non-finite gamma", i);
    if (g.estimator == GammaEstimator::ClassifiedFraction) {
      if (v < 0.0 || v > 1.0) {
        throw Error(ErrorKind::InvalidArgument, "classified fraction outside [0,1]", i, v);
      }
    } else if (v <= 0.0 || v > 1.0) {
      throw Error(ErrorKind::InvalidArgument, "loss-based gamma outside (0,1]", i, v);
    }
    sum += v;
  }
  if (g.estimator == GammaEstimator::ClassifiedFraction &&
      std::abs(sum - 1.0) > kSimplexTolerance) {
    throw Error(ErrorKind::NotNormalized, "classified fractions do not sum to one",
                std::nullopt, sum);
  }
}

TokenSequence::TokenSequence(std::vector<Token> t) : tokens(std::move(t)) {
  if (tokens.empty() || tokens.front() != kBos) {
    throw Error(ErrorKind::InvalidArgument, "token sequence must begin with <bos>");
  }
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (tokens[i] == kBos) throw Error(ErrorKind::InvalidArgument, "<bos> inside sequence");
    if (tokens[i] == kEos && i + 1 != tokens.size()) {
      throw Error(ErrorKind::InvalidArgument, "<eos> before end of sequence");
    }
    if (tokens[i] < 0) throw Error(ErrorKind::InvalidArgument, "negative token id");
  }
}

TokenSequence TokenSequence::from_content(std::span<const Token> content, bool terminated) {
  std::vector<Token> t;
  t.reserve(content.size() + 2);
  t.push_back(kBos);
  t.insert(t.end(), content.begin(), content.end());
  if (terminated) t.push_back(kEos);
  return TokenSequence(std::move(t));
}

std::span<const Token> TokenSequence::content() const noexcept {
  std::span<const Token> all(tokens);
  if (all.empty()) return all;
  all = all.subspan(1);
  if (!all.empty() && all.back() == kEos) all = all.first(all.size() - 1);
  return all;
}

}  // namespace mixdetect
