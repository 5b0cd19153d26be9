#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mixdetect/core_types.hpp"
#include "mixdetect/corpus.hpp"

namespace mixdetect {

enum class LossUnits { PerToken, PerSequence };

std::string_view to_string(LossUnits units);
LossUnits parse_loss_units(std::string_view text);

inline constexpr std::size_t kMaxOrder = 3;

// Additively smoothed order-k Markov model over token ids. The distribution
// for a history is taken from the longest suffix context (up to k tokens)
// seen in training, so every history has a normalized distribution. <bos>
// is never predicted.
class ToyLM {
 public:
  struct ContextTable {
    std::vector<Token> context;  // oldest first
    std::vector<double> probs;   // size vocab_size, probs[kBos] == 0
  };

  static ToyLM train(const Corpus& corpus, std::size_t order, double smoothing,
                     std::size_t vocab_size = 0);

  // Builds a model from explicit conditionals; the empty context is required.
  static ToyLM from_tables(std::size_t order, std::size_t vocab_size,
                           std::span<const ContextTable> tables);

  std::size_t order() const noexcept { return order_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  double smoothing() const noexcept { return smoothing_; }
  std::uint64_t trained_on() const noexcept { return fingerprint_; }
  const std::optional<MixtureProportions>& trained_alpha() const noexcept { return alpha_; }

  // Next-token distribution (size vocab_size) after `history`, which starts at <bos>.
  std::span<const double> conditional(std::span<const Token> history) const;

  // Every stored context with its distribution, sorted by context.
  std::vector<ContextTable> tables() const;

  std::string serialize() const;
  static ToyLM deserialize(const std::string& text);

 private:
  struct Entry {
    std::vector<std::pair<Token, std::uint64_t>> counts;
    std::uint64_t total = 0;
    std::vector<double> probs;
    std::vector<double> cdf;
  };

  ToyLM() = default;
  void finalize_entry(Entry& e) const;
  const Entry& lookup(std::span<const Token> history) const;
  friend std::vector<TokenSequence> sample(const ToyLM&, std::size_t, double, std::size_t,
                                           std::uint64_t, std::size_t);

  std::size_t order_ = 1;
  std::size_t vocab_size_ = 0;
  double smoothing_ = 0.0;
  bool from_counts_ = true;
  std::uint64_t fingerprint_ = 0;
  std::optional<MixtureProportions> alpha_;
  std::unordered_map<std::uint64_t, Entry> entries_;
};

// Negative log-likelihood (nats) of every token after <bos>, <eos> included.
double sequence_loss(const ToyLM& model, const TokenSequence& y,
                     LossUnits units = LossUnits::PerSequence);

// Draws `count` sequences from <bos>. Sequence i uses an RNG stream derived
// from (seed, i), so output does not depend on `threads`.
std::vector<TokenSequence> sample(const ToyLM& model, std::size_t count, double temperature,
                                  std::size_t max_len, std::uint64_t seed, std::size_t threads = 0);

struct LossStats {
  double mean = 0.0;
  double stderr_mean = 0.0;
  std::size_t count = 0;
  double mean_exp_neg_loss = 1.0;  // (1/n) sum exp(-loss)
  double stderr_exp = 0.0;
};

LossStats loss_stats(std::span<const double> losses);

LossStats expected_loss_mc(const ToyLM& model, std::span<const TokenSequence> source,
                           LossUnits units = LossUnits::PerToken, std::size_t threads = 0);

struct SamplerSource {
  std::size_t n_samples = 0;
  double temperature = 1.0;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
};

LossStats expected_loss_mc(const ToyLM& model, const SamplerSource& source,
                           LossUnits units = LossUnits::PerToken, std::size_t threads = 0);

inline constexpr std::size_t kNoDomain = static_cast<std::size_t>(-1);
inline constexpr double kEnumerationLimit = 1e7;

using Membership = std::function<std::size_t(const TokenSequence&)>;

// Exact probability that the model emits a sequence assigned to each domain,
// summed over every path of at most max_len generated tokens (paths are cut
// at max_len exactly as sample() truncates them).
GammaVector enumerate_gamma_exact(const ToyLM& model, const Membership& membership,
                                  std::size_t n_domains, std::size_t max_len);

// Exact path probabilities, keyed by token sequence, for the same path set.
std::vector<std::pair<TokenSequence, double>> enumerate_paths(const ToyLM& model,
                                                              std::size_t max_len);

}  // namespace mixdetect
