#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mixdetect/error.hpp"

namespace mixdetect {

using Token = std::int32_t;

inline constexpr Token kBos = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kFirstRealToken = 2;

inline constexpr double kSimplexTolerance = 1e-9;

struct DomainId {
  std::size_t index = 0;
  std::string name;

  bool operator==(const DomainId&) const = default;
};

// Ordered, uniquely named set of at least two domains. Indices are 0..n-1.
class DomainSet {
 public:
  DomainSet() = default;
  explicit DomainSet(std::vector<std::string> names);

  std::size_t size() const noexcept { return domains_.size(); }
  const DomainId& operator[](std::size_t i) const { return domains_.at(i); }
  const std::vector<DomainId>& domains() const noexcept { return domains_; }
  std::vector<std::string> names() const;
  std::optional<std::size_t> find(const std::string& name) const;

  std::string to_json() const;
  static DomainSet from_json(const std::string& text);

  bool operator==(const DomainSet&) const = default;

 private:
  std::vector<DomainId> domains_;
};

// A validated point on the probability simplex.
class MixtureProportions {
 public:
  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }

  bool operator==(const MixtureProportions&) const = default;

 private:
  friend MixtureProportions make_proportions(std::span<const double>, double);
  std::vector<double> values_;
};

// Validates `values` and renormalizes when the sum is within `tolerance` of
// one. Entries in [-tolerance, 0) are clamped to zero.
MixtureProportions make_proportions(std::span<const double> values,
                                    double tolerance = kSimplexTolerance);
MixtureProportions make_proportions(std::initializer_list<double> values,
                                    double tolerance = kSimplexTolerance);

MixtureProportions uniform_proportions(std::size_t n);

double l1_error(const MixtureProportions& a, const MixtureProportions& b);
double total_variation(const MixtureProportions& a, const MixtureProportions& b);

enum class GammaEstimator { ClassifiedFraction, ExpOfMeanLoss, MeanOfExpLoss };

std::string_view to_string(GammaEstimator kind);
GammaEstimator parse_gamma_estimator(std::string_view text);

// Per-domain generated-data proportions or domain probabilities.
struct GammaVector {
  std::vector<double> values;
  std::optional<std::vector<double>> stderr_values;
  GammaEstimator estimator = GammaEstimator::ClassifiedFraction;

  std::size_t size() const noexcept { return values.size(); }
};

// Checks the invariants that apply to `g.estimator`; throws on violation.
void validate_gamma(const GammaVector& g);

struct TokenSequence {
  std::vector<Token> tokens{kBos};

  TokenSequence() = default;
  explicit TokenSequence(std::vector<Token> t);

  // Builds <bos> content... [<eos>] from content tokens.
  static TokenSequence from_content(std::span<const Token> content,
                                    bool terminated = true);

  bool terminated() const noexcept {
    return tokens.size() > 1 && tokens.back() == kEos;
  }
  std::span<const Token> content() const noexcept;
  std::size_t length() const noexcept { return tokens.size(); }

  bool operator==(const TokenSequence&) const = default;
};

}  // namespace mixdetect
