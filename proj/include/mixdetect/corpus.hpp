#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixdetect/core_types.hpp"

namespace mixdetect {

// Recipe for one synthetic domain. Tokens in [vocab_lo, vocab_hi) belong to
// the domain; `overlap_fraction` of every emitted token's probability mass is
// spread uniformly over the other real tokens of a `vocab_size` vocabulary.
struct DomainSpec {
  DomainId domain;
  Token vocab_lo = kFirstRealToken;
  Token vocab_hi = kFirstRealToken;
  std::size_t vocab_size = 0;  // including <bos>/<eos>
  double overlap_fraction = 0.0;
  std::size_t min_len = 1;
  std::size_t max_len = 1;
  std::size_t generator_order = 1;
  std::uint64_t seed = 0;
};

std::string domain_specs_to_json(std::span<const DomainSpec> specs);
std::vector<DomainSpec> domain_specs_from_json(const std::string& text);

// Builds n specs with equal-width disjoint vocabulary blocks.
std::vector<DomainSpec> uniform_domain_specs(const DomainSet& domains, std::size_t tokens_per_domain,
                                             double overlap_fraction, std::size_t min_len,
                                             std::size_t max_len, std::size_t generator_order,
                                             std::uint64_t seed);

struct Corpus {
  std::vector<TokenSequence> sequences;
  std::optional<std::vector<std::size_t>> labels;  // domain index per sequence
  std::vector<DomainSpec> specs;                   // provenance
  std::optional<MixtureProportions> alpha;         // realized mixture, when mixed

  std::size_t size() const noexcept { return sequences.size(); }
  bool labeled() const noexcept { return labels.has_value(); }
};

// FNV-1a over all tokens and labels.
std::uint64_t corpus_fingerprint(const Corpus& corpus);

Corpus synth_domain(const DomainSpec& spec, std::size_t size);

// Largest-remainder quota counts summing to `total`; ties go to the lower index.
std::vector<std::size_t> quota_counts(const MixtureProportions& alpha, std::size_t total);

Corpus mix_corpora(std::span<const Corpus> corpora, const MixtureProportions& alpha,
                   std::size_t total, std::uint64_t seed, bool with_replacement = false);

// Pairwise Jensen-Shannon divergence (nats) of unigram content distributions.
Eigen::MatrixXd separability(std::span<const Corpus> corpora);

// Sequences with every label in `domain` kept; labels are required.
Corpus select_domain(const Corpus& corpus, std::size_t domain);

// Splits into [0, n) and [n, size).
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, std::size_t n);

// One sequence per line as space-separated content token ids (<bos>/<eos>
// implicit); labels go to a side-car file with one domain name per line.
void write_corpus(const std::filesystem::path& path, const Corpus& corpus,
                  const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                  std::span<const std::string> domain_names = {});
Corpus read_corpus(const std::filesystem::path& path,
                   const std::optional<std::filesystem::path>& labels_path = std::nullopt,
                   std::span<const std::string> domain_names = {});

// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace mixdetect
