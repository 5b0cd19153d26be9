#include "mixdetect/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json_util.hpp"
#include "mixdetect/random.hpp"

namespace mixdetect {

using detail::json;

std::string domain_specs_to_json(std::span<const DomainSpec> specs) {
  json arr = json::array();
  for (const auto& s : specs) {
    arr.push_back({{"name", s.domain.name},
                   {"index", s.domain.index},
                   {"vocab_range", {s.vocab_lo, s.vocab_hi}},
                   {"vocab_size", s.vocab_size},
                   {"overlap_fraction", s.overlap_fraction},
                   {"length", {s.min_len, s.max_len}},
                   {"generator_order", s.generator_order},
                   {"seed", s.seed}});
  }
  return arr.dump(2);
}

std::vector<DomainSpec> domain_specs_from_json(const std::string& text) {
  const auto j = detail::parse_json(text, "domain specs");
  std::vector<DomainSpec> out;
  try {
    for (std::size_t i = 0; i < j.size(); ++i) {
      const auto& e = j.at(i);
      DomainSpec s;
      s.domain.name = e.at("name").get<std::string>();
      s.domain.index = e.value("index", i);
      s.vocab_lo = e.at("vocab_range").at(0).get<Token>();
      s.vocab_hi = e.at("vocab_range").at(1).get<Token>();
      s.vocab_size = e.at("vocab_size").get<std::size_t>();
      s.overlap_fraction = e.value("overlap_fraction", 0.0);
      s.min_len = e.at("length").at(0).get<std::size_t>();
      s.max_len = e.at("length").at(1).get<std::size_t>();
      s.generator_order = e.value("generator_order", std::size_t{1});
      s.seed = e.value("seed", std::uint64_t{i});
      out.push_back(s);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("domain specs: ") + e.what());
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i].domain.index != i) {
      throw Error(ErrorKind::Format, "domain spec indices must be contiguous from 0", i);
    }
  }
  return out;
}

std::vector<DomainSpec> uniform_domain_specs(const DomainSet& domains, std::size_t tokens_per_domain,
                                             double overlap_fraction, std::size_t min_len,
                                             std::size_t max_len, std::size_t generator_order,
                                             std::uint64_t seed) {
  std::vector<DomainSpec> specs;
  const std::size_t vocab = kFirstRealToken + domains.size() * tokens_per_domain;
  for (const auto& d : domains.domains()) {
    DomainSpec s;
    s.domain = d;
    s.vocab_lo = static_cast<Token>(kFirstRealToken + d.index * tokens_per_domain);
    s.vocab_hi = static_cast<Token>(s.vocab_lo + tokens_per_domain);
    s.vocab_size = vocab;
    s.overlap_fraction = overlap_fraction;
    s.min_len = min_len;
    s.max_len = max_len;
    s.generator_order = generator_order;
    s.seed = derive_seed(seed, d.index);
    specs.push_back(s);
  }
  return specs;
}

std::uint64_t corpus_fingerprint(const Corpus& corpus) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < corpus.sequences.size(); ++i) {
    for (Token t : corpus.sequences[i].tokens) feed(static_cast<std::uint64_t>(t));
    feed(corpus.labels ? (*corpus.labels)[i] : ~0ULL);
  }
  return h;
}

namespace {

void validate_spec(const DomainSpec& spec) {
  if (spec.vocab_hi <= spec.vocab_lo) {
    throw Error(ErrorKind::EmptyVocabRange, "domain '" + spec.domain.name + "' owns no tokens",
                spec.domain.index);
  }
  if (spec.vocab_lo < kFirstRealToken || static_cast<std::size_t>(spec.vocab_hi) > spec.vocab_size) {
    throw Error(ErrorKind::InvalidArgument,
                "vocab range of '" + spec.domain.name + "' falls outside the real vocabulary",
                spec.domain.index);
  }
  if (!(spec.overlap_fraction >= 0.0 && spec.overlap_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "overlap_fraction must lie in [0, 1)",
                spec.domain.index);
  }
  const auto owned = static_cast<std::size_t>(spec.vocab_hi - spec.vocab_lo);
  if (spec.overlap_fraction > 0.0 && owned + kFirstRealToken >= spec.vocab_size) {
    throw Error(ErrorKind::InvalidArgument, "overlap requested but no foreign tokens exist",
                spec.domain.index);
  }
  if (spec.min_len < 1 || spec.max_len < spec.min_len) {
    throw Error(ErrorKind::InvalidArgument, "invalid length range", spec.domain.index);
  }
  if (spec.generator_order < 1 || spec.generator_order > 4) {
    throw Error(ErrorKind::InvalidArgument, "generator order must be in [1, 4]", spec.domain.index);
  }
}

// Source process: the in-range conditional for each context is a
// Dirichlet(1/2) draw keyed by (seed, context). Every context puts exactly
// 1 - overlap mass in range, so any stationary law does too.
class MarkovSource {
 public:
  explicit MarkovSource(const DomainSpec& spec)
      : spec_(spec), owned_(static_cast<std::size_t>(spec.vocab_hi - spec.vocab_lo)) {
    foreign_ = spec.vocab_size - kFirstRealToken - owned_;
  }

  Token next(std::span<const Token> history, Rng& rng) {
    if (spec_.overlap_fraction > 0.0 && rng.uniform() < spec_.overlap_fraction) {
      auto k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(foreign_) - 1));
      Token t = static_cast<Token>(kFirstRealToken + k);
      if (t >= spec_.vocab_lo) t = static_cast<Token>(t + owned_);
      return t;
    }
    const auto& cdf = conditional(history);
    const double u = rng.uniform() * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), owned_ - 1);
    return static_cast<Token>(spec_.vocab_lo + static_cast<Token>(idx));
  }

 private:
  const std::vector<double>& conditional(std::span<const Token> history) {
    std::uint64_t key = spec_.generator_order;
    for (std::size_t j = 0; j < spec_.generator_order; ++j) {
      const Token t = j < history.size() ? history[history.size() - 1 - j] : kBos;
      key = key * 1000003ULL + static_cast<std::uint64_t>(t);
    }
    auto [it, inserted] = cache_.try_emplace(key);
    if (inserted) {
      Rng rng(spec_.seed ^ 0x5eedf00dULL, key);
      auto& cdf = it->second;
      cdf.resize(owned_);
      double total = 0.0;
      for (std::size_t k = 0; k < owned_; ++k) {
        const double z = rng.normal();
        total += z * z + 1e-12;
        cdf[k] = total;
      }
    }
    return it->second;
  }

  DomainSpec spec_;
  std::size_t owned_;
  std::size_t foreign_ = 0;
  std::map<std::uint64_t, std::vector<double>> cache_;
};

}  // namespace

Corpus synth_domain(const DomainSpec& spec, std::size_t size) {
  validate_spec(spec);
  if (size < 1) throw Error(ErrorKind::InvalidArgument, "corpus size must be at least 1");
  MarkovSource source(spec);
  Corpus corpus;
  corpus.sequences.reserve(size);
  corpus.labels = std::vector<std::size_t>(size, spec.domain.index);
  corpus.specs = {spec};
  std::vector<Token> content;
  for (std::size_t s = 0; s < size; ++s) {
    Rng rng(spec.seed, s);
    const auto len = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(spec.min_len), static_cast<std::int64_t>(spec.max_len)));
    content.clear();
    for (std::size_t p = 0; p < len; ++p) content.push_back(source.next(content, rng));
    corpus.sequences.push_back(TokenSequence::from_content(content));
  }
  return corpus;
}

std::vector<std::size_t> quota_counts(const MixtureProportions& alpha, std::size_t total) {
  const auto n = alpha.size();
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = alpha[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainders.emplace_back(exact - static_cast<double>(counts[i]), i);
    assigned += counts[i];
  }
  // Largest remainder first; equal remainders go to the lower index.
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (std::abs(a.first - b.first) > 1e-9) return a.first > b.first;
    return a.second < b.second;
  });
  while (assigned > total) {
    // Float noise can only overshoot by the 1e-9 guard; take back from the smallest remainders.
    for (auto it = remainders.rbegin(); it != remainders.rend() && assigned > total; ++it) {
      if (counts[it->second] > 0) {
        --counts[it->second];
        --assigned;
      }
    }
  }
  for (std::size_t r = 0; assigned < total; r = (r + 1) % n) {
    ++counts[remainders[r].second];
    ++assigned;
  }
  return counts;
}

Corpus mix_corpora(std::span<const Corpus> corpora, const MixtureProportions& alpha,
                   std::size_t total, std::uint64_t seed, bool with_replacement) {
  if (corpora.size() != alpha.size()) {
    throw Error(ErrorKind::DimensionMismatch, "one source corpus per domain is required");
  }
  const auto counts = quota_counts(alpha, total);
  Corpus mixed;
  mixed.labels = std::vector<std::size_t>{};
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    const auto& src = corpora[i];
    if (counts[i] == 0) continue;
    if (src.size() == 0 || (!with_replacement && counts[i] > src.size())) {
      throw Error(ErrorKind::InsufficientSourceData,
                  "domain " + std::to_string(i) + " needs " + std::to_string(counts[i]) +
                      " sequences but has " + std::to_string(src.size()),
                  i);
    }
    Rng rng(seed, i);
    if (with_replacement) {
      for (std::size_t k = 0; k < counts[i]; ++k) {
        const auto pick = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(src.size()) - 1));
        mixed.sequences.push_back(src.sequences[pick]);
        mixed.labels->push_back(i);
      }
    } else {
      std::vector<std::size_t> idx(src.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      // Partial Fisher-Yates: the first counts[i] slots are a uniform draw.
      for (std::size_t k = 0; k < counts[i]; ++k) {
        const auto j = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(k), static_cast<std::int64_t>(idx.size()) - 1));
        std::swap(idx[k], idx[j]);
        mixed.sequences.push_back(src.sequences[idx[k]]);
        mixed.labels->push_back(i);
      }
    }
    mixed.specs.insert(mixed.specs.end(), src.specs.begin(), src.specs.end());
  }
  Rng shuffle(seed, corpora.size() + 1);
  for (std::size_t k = mixed.sequences.size(); k > 1; --k) {
    const auto j = static_cast<std::size_t>(shuffle.uniform_int(0, static_cast<std::int64_t>(k) - 1));
    std::swap(mixed.sequences[k - 1], mixed.sequences[j]);
    std::swap((*mixed.labels)[k - 1], (*mixed.labels)[j]);
  }
  std::vector<double> realized(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    realized[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  }
  mixed.alpha = make_proportions(realized);
  return mixed;
}

Eigen::MatrixXd separability(std::span<const Corpus> corpora) {
  if (corpora.size() < 2) throw Error(ErrorKind::InvalidArgument, "separability needs two corpora");
  std::vector<std::map<Token, double>> dists(corpora.size());
  for (std::size_t c = 0; c < corpora.size(); ++c) {
    double total = 0.0;
    for (const auto& seq : corpora[c].sequences) {
      for (Token t : seq.content()) {
        dists[c][t] += 1.0;
        total += 1.0;
      }
    }
    if (total == 0.0) throw Error(ErrorKind::EmptyCorpus, "corpus has no content tokens", c);
    for (auto& [t, v] : dists[c]) v /= total;
  }
  const auto n = static_cast<Eigen::Index>(corpora.size());
  Eigen::MatrixXd jsd = Eigen::MatrixXd::Zero(n, n);
  auto kl_to_mid = [](const std::map<Token, double>& p, const std::map<Token, double>& q) {
    double s = 0.0;
    for (const auto& [t, pv] : p) {
      const auto it = q.find(t);
      const double qv = it == q.end() ? 0.0 : it->second;
      s += pv * std::log(pv / (0.5 * (pv + qv)));
    }
    return s;
  };
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = a + 1; b < n; ++b) {
      const auto& p = dists[static_cast<std::size_t>(a)];
      const auto& q = dists[static_cast<std::size_t>(b)];
      const double v = std::max(0.0, 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p));
      jsd(a, b) = v;
      jsd(b, a) = v;
    }
  }
  return jsd;
}

Corpus select_domain(const Corpus& corpus, std::size_t domain) {
  if (!corpus.labels) throw Error(ErrorKind::UnlabeledCorpus, "select_domain needs labels");
  Corpus out;
  out.labels = std::vector<std::size_t>{};
  out.specs = corpus.specs;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if ((*corpus.labels)[i] == domain) {
      out.sequences.push_back(corpus.sequences[i]);
      out.labels->push_back(domain);
    }
  }
  return out;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus, std::size_t n) {
  n = std::min(n, corpus.size());
  Corpus head, tail;
  head.specs = tail.specs = corpus.specs;
  head.sequences.assign(corpus.sequences.begin(), corpus.sequences.begin() + static_cast<std::ptrdiff_t>(n));
  tail.sequences.assign(corpus.sequences.begin() + static_cast<std::ptrdiff_t>(n), corpus.sequences.end());
  if (corpus.labels) {
    head.labels.emplace(corpus.labels->begin(), corpus.labels->begin() + static_cast<std::ptrdiff_t>(n));
    tail.labels.emplace(corpus.labels->begin() + static_cast<std::ptrdiff_t>(n), corpus.labels->end());
  }
  return {std::move(head), std::move(tail)};
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus,
                  const std::optional<std::filesystem::path>& labels_path,
                  std::span<const std::string> domain_names) {
  std::string text;
  for (const auto& seq : corpus.sequences) {
    bool first = true;
    for (Token t : seq.content()) {
      if (!first) text += ' ';
      text += std::to_string(t);
      first = false;
    }
    text += '\n';
  }
  write_text_atomic(path, text);
  if (labels_path) {
    if (!corpus.labels) throw Error(ErrorKind::UnlabeledCorpus, "no labels to write");
    std::string labels;
    for (std::size_t l : *corpus.labels) {
      labels += l < domain_names.size() ? domain_names[l] : std::to_string(l);
      labels += '\n';
    }
    write_text_atomic(*labels_path, labels);
  }
}

Corpus read_corpus(const std::filesystem::path& path,
                   const std::optional<std::filesystem::path>& labels_path,
                   std::span<const std::string> domain_names) {
  Corpus corpus;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t lineno = 0;
  std::vector<Token> content;
  while (std::getline(in, line)) {
    ++lineno;
    content.clear();
    const char* p = line.data();
    const char* end = p + line.size();
    while (p < end) {
      while (p < end && (*p == ' ' || *p == '\t' || *p == '\r')) ++p;
      if (p >= end) break;
      Token t = 0;
      auto [next, ec] = std::from_chars(p, end, t);
      if (ec != std::errc() || t < kFirstRealToken) {
        throw Error(ErrorKind::Format,
                    path.string() + ":" + std::to_string(lineno) + ": bad token id");
      }
      content.push_back(t);
      p = next;
    }
    corpus.sequences.push_back(TokenSequence::from_content(content));
  }
  if (labels_path) {
    std::istringstream lin(read_text(*labels_path));
    std::vector<std::size_t> labels;
    while (std::getline(lin, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const auto it = std::find(domain_names.begin(), domain_names.end(), line);
      if (it == domain_names.end()) {
        throw Error(ErrorKind::Format, "unknown domain label '" + line + "'");
      }
      labels.push_back(static_cast<std::size_t>(it - domain_names.begin()));
    }
    if (labels.size() != corpus.size()) {
      throw Error(ErrorKind::Format, "label file has " + std::to_string(labels.size()) +
                                         " lines for " + std::to_string(corpus.size()) + " sequences");
    }
    corpus.labels = std::move(labels);
  }
  return corpus;
}

}  // namespace mixdetect
