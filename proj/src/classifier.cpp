#include "mixdetect/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json_util.hpp"
#include "mixdetect/parallel.hpp"

namespace mixdetect {

using detail::json;

namespace {
constexpr char kClassifierMagic[] = "DOMCLF1";
}

Classifier Classifier::train(const DomainSet& domains, std::span<const Corpus> labeled,
                             const ClassifierOptions& options) {
  if (domains.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two domains");
  if (!(options.smoothing > 0.0) || !std::isfinite(options.smoothing)) {
    throw Error(ErrorKind::InvalidArgument, "classifier smoothing must be positive");
  }
  const auto n = domains.size();
  std::vector<std::vector<std::uint64_t>> counts(n);
  std::vector<std::uint64_t> totals(n, 0);
  std::vector<std::size_t> taken(n, 0);
  Token max_token = kEos;

  for (const auto& corpus : labeled) {
    if (!corpus.labels) throw Error(ErrorKind::UnlabeledCorpus, "classifier training data needs labels");
    for (std::size_t s = 0; s < corpus.size(); ++s) {
      const auto d = (*corpus.labels)[s];
      if (d >= n) throw Error(ErrorKind::InvalidArgument, "label outside the domain set", d);
      if (taken[d] >= options.per_domain_cap) continue;
      ++taken[d];
      for (Token t : corpus.sequences[s].content()) {
        const auto idx = static_cast<std::size_t>(t);
        if (counts[d].size() <= idx) counts[d].resize(idx + 1, 0);
        ++counts[d][idx];
        ++totals[d];
        max_token = std::max(max_token, t);
      }
    }
  }
  for (std::size_t d = 0; d < n; ++d) {
    if (taken[d] == 0) {
      throw Error(ErrorKind::MissingDomainData, "no training sequences for domain '" + domains[d].name + "'", d);
    }
  }

  Classifier clf;
  clf.domains_ = domains;
  clf.smoothing_ = options.smoothing;
  clf.vocab_size_ = options.vocab_size ? options.vocab_size : static_cast<std::size_t>(max_token) + 1;
  if (clf.vocab_size_ <= static_cast<std::size_t>(max_token)) {
    throw Error(ErrorKind::InvalidArgument, "classifier vocab_size does not cover the training data");
  }
  // Features are the real tokens only; <bos>/<eos> carry no domain signal.
  const double features = static_cast<double>(clf.vocab_size_ - kFirstRealToken);
  clf.log_priors_.assign(n, -std::log(static_cast<double>(n)));
  clf.log_probs_.assign(n, std::vector<double>(clf.vocab_size_, 0.0));
  clf.log_floor_.resize(n);
  clf.training_counts_ = taken;
  for (std::size_t d = 0; d < n; ++d) {
    const double denom = static_cast<double>(totals[d]) + options.smoothing * features;
    clf.log_floor_[d] = std::log(options.smoothing / denom);
    for (std::size_t t = kFirstRealToken; t < clf.vocab_size_; ++t) {
      const double c = t < counts[d].size() ? static_cast<double>(counts[d][t]) : 0.0;
      clf.log_probs_[d][t] = std::log((c + options.smoothing) / denom);
    }
  }
  return clf;
}

Classifier train_classifier(const DomainSet& domains, std::span<const Corpus> labeled,
                            const ClassifierOptions& options) {
  return Classifier::train(domains, labeled, options);
}

double Classifier::log_likelihood(std::size_t domain, Token token) const {
  const auto idx = static_cast<std::size_t>(token);
  if (token < kFirstRealToken || idx >= vocab_size_) return log_floor_.at(domain);
  return log_probs_.at(domain)[idx];
}

Classifier Classifier::with_log_priors(std::vector<double> log_priors) const {
  if (log_priors.size() != domains_.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one log-prior per domain");
  }
  Classifier copy = *this;
  copy.log_priors_ = std::move(log_priors);
  return copy;
}

std::string Classifier::serialize() const {
  json j;
  j["domains"] = domains_.names();
  j["vocab_size"] = vocab_size_;
  j["smoothing"] = smoothing_;
  j["log_priors"] = log_priors_;
  j["log_floor"] = log_floor_;
  j["training_counts"] = training_counts_;
  j["log_probs"] = log_probs_;
  return std::string(kClassifierMagic) + "\n" + j.dump() + "\n";
}

Classifier Classifier::deserialize(const std::string& text) {
  const auto nl = text.find('\n');
  if (nl == std::string::npos || text.substr(0, nl) != kClassifierMagic) {
    throw Error(ErrorKind::Format, "not a DOMCLF1 classifier file");
  }
  const auto j = detail::parse_json(text.substr(nl + 1), "classifier");
  Classifier clf;
  try {
    clf.domains_ = DomainSet(j.at("domains").get<std::vector<std::string>>());
    clf.vocab_size_ = j.at("vocab_size").get<std::size_t>();
    clf.smoothing_ = j.at("smoothing").get<double>();
    clf.log_priors_ = j.at("log_priors").get<std::vector<double>>();
    clf.log_floor_ = j.at("log_floor").get<std::vector<double>>();
    clf.training_counts_ = j.at("training_counts").get<std::vector<std::size_t>>();
    clf.log_probs_ = j.at("log_probs").get<std::vector<std::vector<double>>>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("classifier: ") + e.what());
  }
  const auto n = clf.domains_.size();
  if (clf.log_priors_.size() != n || clf.log_floor_.size() != n || clf.log_probs_.size() != n) {
    throw Error(ErrorKind::Format, "classifier tables disagree with the domain count");
  }
  for (const auto& row : clf.log_probs_) {
    if (row.size() != clf.vocab_size_) throw Error(ErrorKind::Format, "classifier table width");
  }
  return clf;
}

Classification classify(const Classifier& clf, const TokenSequence& y) {
  const auto n = clf.domains().size();
  Classification out;
  out.log_scores = clf.log_priors();
  for (Token t : y.content()) {
    for (std::size_t d = 0; d < n; ++d) out.log_scores[d] += clf.log_likelihood(d, t);
  }
  out.domain = 0;
  for (std::size_t d = 1; d < n; ++d) {
    if (out.log_scores[d] > out.log_scores[out.domain]) out.domain = d;
  }
  return out;
}

std::vector<Classification> classify_all(const Classifier& clf, std::span<const TokenSequence> ys,
                                         std::size_t threads) {
  std::vector<Classification> out(ys.size());
  parallel_for(ys.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) out[i] = classify(clf, ys[i]);
  });
  return out;
}

AccuracyReport accuracy(const Classifier& clf, const Corpus& heldout, std::size_t threads) {
  if (!heldout.labels) throw Error(ErrorKind::UnlabeledCorpus, "accuracy needs a labeled corpus");
  if (heldout.size() == 0) throw Error(ErrorKind::EmptyCorpus, "accuracy on an empty corpus");
  const auto n = static_cast<Eigen::Index>(clf.domains().size());
  const auto results = classify_all(clf, heldout.sequences, threads);
  AccuracyReport rep;
  rep.confusion = Eigen::MatrixXi::Zero(n, n);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto truth = (*heldout.labels)[i];
    if (truth >= static_cast<std::size_t>(n)) throw Error(ErrorKind::InvalidArgument, "label outside domain set", truth);
    ++rep.confusion(static_cast<Eigen::Index>(truth), static_cast<Eigen::Index>(results[i].domain));
  }
  rep.accuracy = static_cast<double>(rep.confusion.trace()) / static_cast<double>(results.size());
  return rep;
}

GammaVector estimate_gamma_fraction(std::span<const std::size_t> predicted, std::size_t n_domains) {
  if (predicted.empty()) throw Error(ErrorKind::InvalidArgument, "no samples to classify");
  std::vector<std::size_t> counts(n_domains, 0);
  for (auto d : predicted) {
    if (d >= n_domains) throw Error(ErrorKind::InvalidArgument, "prediction outside domain set", d);
    ++counts[d];
  }
  const double m = static_cast<double>(predicted.size());
  GammaVector g;
  g.estimator = GammaEstimator::ClassifiedFraction;
  g.values.resize(n_domains);
  g.stderr_values = std::vector<double>(n_domains);
  for (std::size_t d = 0; d < n_domains; ++d) {
    const double p = static_cast<double>(counts[d]) / m;
    g.values[d] = p;
    (*g.stderr_values)[d] = std::sqrt(p * (1.0 - p) / m);
  }
  return g;
}

GammaVector estimate_gamma_fraction(const Classifier& clf, std::span<const TokenSequence> samples,
                                    std::size_t threads) {
  const auto results = classify_all(clf, samples, threads);
  std::vector<std::size_t> predicted(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) predicted[i] = results[i].domain;
  return estimate_gamma_fraction(predicted, clf.domains().size());
}

std::string format_classifications(const Classifier& clf, std::span<const Classification> results) {
  std::ostringstream out;
  out.precision(17);
  for (std::size_t i = 0; i < results.size(); ++i) {
    out << i << '\t' << clf.domains()[results[i].domain].name << '\t';
    for (std::size_t d = 0; d < results[i].log_scores.size(); ++d) {
      if (d) out << ',';
      out << results[i].log_scores[d];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace mixdetect
