#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mixdetect {

enum class ErrorKind {
  InvalidArgument,
  NegativeEntry,
  NotNormalized,
  DimensionMismatch,
  NonFinite,
  NegativeLoss,
  DomainViolation,
  SingularMatrix,
  InsufficientObservations,
  DegenerateDesign,
  NonConvergence,
  EmptyVocabRange,
  InsufficientSourceData,
  EmptyCorpus,
  UnknownToken,
  EnumerationTooLarge,
  MissingDomainData,
  UnlabeledCorpus,
  Format,
  Io,
};

std::string_view to_string(ErrorKind kind);

// All recoverable failures in the library surface as this type. `domain` is
// set when the failure is attributable to one domain index, `value` carries
// the offending measurement (e.g. the gamma that violated the law).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> domain = std::nullopt,
        std::optional<double> value = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> domain() const noexcept { return domain_; }
  std::optional<double> value() const noexcept { return value_; }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> domain_;
  std::optional<double> value_;
};

}  // namespace mixdetect
