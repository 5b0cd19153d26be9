#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixdetect/core_types.hpp"
#include "mixdetect/corpus.hpp"

namespace mixdetect {

struct ClassifierOptions {
  double smoothing = 0.1;
  std::size_t per_domain_cap = 10000;
  std::size_t vocab_size = 0;  // 0: one past the largest id seen in training
};

// Multinomial naive Bayes over the content tokens of a sequence.
class Classifier {
 public:
  static Classifier train(const DomainSet& domains, std::span<const Corpus> labeled,
                          const ClassifierOptions& options = {});

  const DomainSet& domains() const noexcept { return domains_; }
  std::size_t vocab_size() const noexcept { return vocab_size_; }
  double smoothing() const noexcept { return smoothing_; }
  const std::vector<double>& log_priors() const noexcept { return log_priors_; }
  std::vector<std::size_t> training_counts() const { return training_counts_; }

  // log P(token | domain); ids past the vocabulary get the smoothed floor.
  double log_likelihood(std::size_t domain, Token token) const;

  // Replaces the log-priors (used to probe prior-shift invariance).
  Classifier with_log_priors(std::vector<double> log_priors) const;

  std::string serialize() const;
  static Classifier deserialize(const std::string& text);

 private:
  Classifier() = default;

  DomainSet domains_;
  std::size_t vocab_size_ = 0;
  double smoothing_ = 0.0;
  std::vector<double> log_priors_;
  std::vector<std::vector<double>> log_probs_;  // [domain][token]
  std::vector<double> log_floor_;               // per domain
  std::vector<std::size_t> training_counts_;
};

Classifier train_classifier(const DomainSet& domains, std::span<const Corpus> labeled,
                            const ClassifierOptions& options = {});

struct Classification {
  std::size_t domain = 0;
  std::vector<double> log_scores;
};

// argmax of log-prior plus summed token log-likelihoods; ties go to the lower index.
Classification classify(const Classifier& clf, const TokenSequence& y);

std::vector<Classification> classify_all(const Classifier& clf, std::span<const TokenSequence> ys,
                                         std::size_t threads = 0);

struct AccuracyReport {
  double accuracy = 0.0;
  Eigen::MatrixXi confusion;  // rows: true domain, cols: predicted
};

AccuracyReport accuracy(const Classifier& clf, const Corpus& heldout, std::size_t threads = 0);

// gamma_i = (count classified to i) / M with binomial stderr.
GammaVector estimate_gamma_fraction(std::span<const std::size_t> predicted, std::size_t n_domains);
GammaVector estimate_gamma_fraction(const Classifier& clf, std::span<const TokenSequence> samples,
                                    std::size_t threads = 0);

// "index<TAB>domain<TAB>s0,s1,..." for each sample.
std::string format_classifications(const Classifier& clf, std::span<const Classification> results);

}  // namespace mixdetect
