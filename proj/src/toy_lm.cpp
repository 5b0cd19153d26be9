#include "mixdetect/toy_lm.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "json_util.hpp"
#include "mixdetect/parallel.hpp"
#include "mixdetect/random.hpp"

namespace mixdetect {

using detail::json;

namespace {

constexpr char kModelMagic[] = "TOYLM1";

// Context key: 2 bits of length, then up to three 16-bit token ids.
std::uint64_t context_key(std::span<const Token> ctx) {
  std::uint64_t key = ctx.size();
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    key |= static_cast<std::uint64_t>(ctx[j]) << (2 + 16 * j);
  }
  return key;
}

std::vector<Token> key_context(std::uint64_t key) {
  std::vector<Token> ctx(key & 3U);
  for (std::size_t j = 0; j < ctx.size(); ++j) {
    ctx[j] = static_cast<Token>((key >> (2 + 16 * j)) & 0xffffU);
  }
  return ctx;
}

}  // namespace

std::string_view to_string(LossUnits units) {
  return units == LossUnits::PerToken ? "per-token" : "per-sequence";
}

LossUnits parse_loss_units(std::string_view text) {
  if (text == "per-token" || text == "nats_per_token") return LossUnits::PerToken;
  if (text == "per-sequence" || text == "nats_per_sequence") return LossUnits::PerSequence;
  throw Error(ErrorKind::InvalidArgument, "unknown loss units '" + std::string(text) + "'");
}

void ToyLM::finalize_entry(Entry& e) const {
  if (from_counts_) {
    e.probs.assign(vocab_size_, 0.0);
    // <bos> is never a continuation, so the smoothing mass spreads over V-1 ids.
    const double denom = static_cast<double>(e.total) + smoothing_ * static_cast<double>(vocab_size_ - 1);
    for (std::size_t t = 1; t < vocab_size_; ++t) e.probs[t] = smoothing_ / denom;
    for (const auto& [tok, c] : e.counts) {
      e.probs[static_cast<std::size_t>(tok)] = (static_cast<double>(c) + smoothing_) / denom;
    }
  }
  e.cdf.resize(vocab_size_);
  double running = 0.0;
  for (std::size_t t = 0; t < vocab_size_; ++t) {
    running += e.probs[t];
    e.cdf[t] = running;
  }
}

ToyLM ToyLM::train(const Corpus& corpus, std::size_t order, double smoothing,
                   std::size_t vocab_size) {
  if (corpus.size() == 0) throw Error(ErrorKind::EmptyCorpus, "cannot train on an empty corpus");
  if (order < 1 || order > kMaxOrder) {
    throw Error(ErrorKind::InvalidArgument, "order must be in [1, " + std::to_string(kMaxOrder) + "]");
  }
  if (!(smoothing >= 0.0) || !std::isfinite(smoothing)) {
    throw Error(ErrorKind::InvalidArgument, "smoothing must be a finite value >= 0");
  }
  Token max_token = kEos;
  for (const auto& seq : corpus.sequences) {
    for (Token t : seq.tokens) max_token = std::max(max_token, t);
  }
  if (vocab_size == 0) vocab_size = static_cast<std::size_t>(max_token) + 1;
  if (vocab_size <= static_cast<std::size_t>(max_token) || vocab_size > 0xffffU) {
    throw Error(ErrorKind::InvalidArgument, "vocab_size does not cover the corpus");
  }
  vocab_size = std::max<std::size_t>(vocab_size, 3);

  ToyLM m;
  m.order_ = order;
  m.vocab_size_ = vocab_size;
  m.smoothing_ = smoothing;
  m.fingerprint_ = corpus_fingerprint(corpus);
  m.alpha_ = corpus.alpha;

  std::unordered_map<std::uint64_t, std::map<Token, std::uint64_t>> counts;
  for (const auto& seq : corpus.sequences) {
    const auto& y = seq.tokens;
    for (std::size_t i = 1; i < y.size(); ++i) {
      const std::size_t longest = std::min(order, i);
      for (std::size_t len = 0; len <= longest; ++len) {
        const auto key = context_key(std::span<const Token>(y).subspan(i - len, len));
        ++counts[key][y[i]];
      }
    }
  }
  for (auto& [key, tally] : counts) {
    Entry e;
    for (const auto& [tok, c] : tally) {
      e.counts.emplace_back(tok, c);
      e.total += c;
    }
    m.finalize_entry(e);
    m.entries_.emplace(key, std::move(e));
  }
  return m;
}

ToyLM ToyLM::from_tables(std::size_t order, std::size_t vocab_size,
                         std::span<const ContextTable> tables) {
  if (order < 1 || order > kMaxOrder) throw Error(ErrorKind::InvalidArgument, "bad order");
  if (vocab_size < 3 || vocab_size > 0xffffU) throw Error(ErrorKind::InvalidArgument, "bad vocab size");
  ToyLM m;
  m.order_ = order;
  m.vocab_size_ = vocab_size;
  m.from_counts_ = false;
  bool has_root = false;
  for (const auto& table : tables) {
    if (table.context.size() > order) throw Error(ErrorKind::InvalidArgument, "context longer than order");
    if (table.probs.size() != vocab_size) {
      throw Error(ErrorKind::DimensionMismatch, "distribution size differs from vocab_size");
    }
    double sum = 0.0;
    for (double p : table.probs) {
      if (!(p >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12 || table.probs[kBos] != 0.0) {
      throw Error(ErrorKind::NotNormalized, "conditional must sum to 1 with P(<bos>) = 0",
                  std::nullopt, sum);
    }
    Entry e;
    e.probs = table.probs;
    m.finalize_entry(e);
    m.entries_[context_key(table.context)] = std::move(e);
    has_root = has_root || table.context.empty();
  }
  if (!has_root) throw Error(ErrorKind::InvalidArgument, "the empty context is required");
  return m;
}

const ToyLM::Entry& ToyLM::lookup(std::span<const Token> history) const {
  const std::size_t longest = std::min(order_, history.size());
  for (std::size_t len = longest + 1; len-- > 0;) {
    const auto it = entries_.find(context_key(history.subspan(history.size() - len, len)));
    if (it != entries_.end()) return it->second;
  }
  throw Error(ErrorKind::UnknownToken, "model has no distribution for this history");
}

std::span<const double> ToyLM::conditional(std::span<const Token> history) const {
  return lookup(history).probs;
}

std::vector<ToyLM::ContextTable> ToyLM::tables() const {
  std::vector<std::uint64_t> keys;
  for (const auto& [k, e] : entries_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  std::vector<ContextTable> out;
  for (auto k : keys) out.push_back({key_context(k), entries_.at(k).probs});
  return out;
}

std::string ToyLM::serialize() const {
  std::vector<std::uint64_t> keys;
  for (const auto& [k, e] : entries_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  json j;
  j["order"] = order_;
  j["vocab_size"] = vocab_size_;
  j["smoothing"] = smoothing_;
  j["representation"] = from_counts_ ? "counts" : "probabilities";
  json prov;
  prov["corpus_fingerprint"] = fingerprint_;
  prov["alpha"] = alpha_ ? json(alpha_->values()) : json(nullptr);
  j["trained_on"] = prov;
  json ctxs = json::array();
  for (auto k : keys) {
    const auto& e = entries_.at(k);
    json c;
    c["context"] = key_context(k);
    if (from_counts_) {
      json counts = json::array();
      for (const auto& [tok, n] : e.counts) counts.push_back({tok, n});
      c["counts"] = counts;
    } else {
      c["probs"] = e.probs;
    }
    ctxs.push_back(c);
  }
  j["contexts"] = ctxs;
  return std::string(kModelMagic) + "\n" + j.dump() + "\n";
}

ToyLM ToyLM::deserialize(const std::string& text) {
  const auto nl = text.find('\n');
  if (nl == std::string::npos || text.substr(0, nl) != kModelMagic) {
    throw Error(ErrorKind::Format, "not a TOYLM1 model file");
  }
  const auto j = detail::parse_json(text.substr(nl + 1), "model");
  ToyLM m;
  try {
    m.order_ = j.at("order").get<std::size_t>();
    m.vocab_size_ = j.at("vocab_size").get<std::size_t>();
    m.smoothing_ = j.at("smoothing").get<double>();
    m.from_counts_ = j.at("representation").get<std::string>() == "counts";
    m.fingerprint_ = j.at("trained_on").at("corpus_fingerprint").get<std::uint64_t>();
    const auto& alpha = j.at("trained_on").at("alpha");
    if (!alpha.is_null()) m.alpha_ = make_proportions(alpha.get<std::vector<double>>());
    for (const auto& c : j.at("contexts")) {
      const auto ctx = c.at("context").get<std::vector<Token>>();
      if (ctx.size() > m.order_) throw Error(ErrorKind::Format, "context longer than order");
      Entry e;
      if (m.from_counts_) {
        for (const auto& pair : c.at("counts")) {
          const auto tok = pair.at(0).get<Token>();
          const auto n = pair.at(1).get<std::uint64_t>();
          if (tok <= kBos || static_cast<std::size_t>(tok) >= m.vocab_size_) {
            throw Error(ErrorKind::Format, "count for out-of-vocabulary token");
          }
          e.counts.emplace_back(tok, n);
          e.total += n;
        }
      } else {
        e.probs = c.at("probs").get<std::vector<double>>();
        if (e.probs.size() != m.vocab_size_) throw Error(ErrorKind::Format, "bad distribution size");
      }
      m.finalize_entry(e);
      m.entries_.emplace(context_key(ctx), std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("model: ") + e.what());
  }
  if (m.entries_.find(context_key({})) == m.entries_.end()) {
    throw Error(ErrorKind::Format, "model lacks the empty context");
  }
  return m;
}

double sequence_loss(const ToyLM& model, const TokenSequence& y, LossUnits units) {
  const auto& t = y.tokens;
  double loss = 0.0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] < 0 || static_cast<std::size_t>(t[i]) >= model.vocab_size()) {
      throw Error(ErrorKind::UnknownToken, "token " + std::to_string(t[i]) + " outside vocabulary",
                  std::nullopt, t[i]);
    }
    const double p = model.conditional(std::span<const Token>(t).first(i))[static_cast<std::size_t>(t[i])];
    if (!(p > 0.0)) {
      throw Error(ErrorKind::UnknownToken,
                  "token " + std::to_string(t[i]) + " has zero probability at position " + std::to_string(i),
                  std::nullopt, t[i]);
    }
    loss -= std::log(p);
  }
  if (units == LossUnits::PerToken && t.size() > 1) loss /= static_cast<double>(t.size() - 1);
  return loss;
}

std::vector<TokenSequence> sample(const ToyLM& model, std::size_t count, double temperature,
                                  std::size_t max_len, std::uint64_t seed, std::size_t threads) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
  }
  if (count < 1) throw Error(ErrorKind::InvalidArgument, "sample count must be at least 1");
  if (max_len < 1) throw Error(ErrorKind::InvalidArgument, "max_len must be at least 1");
  const bool exact = temperature == 1.0;
  const double inv_temp = 1.0 / temperature;
  std::vector<TokenSequence> out(count);
  parallel_for(count, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> tempered(model.vocab_size());
    for (std::size_t s = begin; s < end; ++s) {
      Rng rng(seed, s);
      std::vector<Token> y{kBos};
      while (y.size() <= max_len) {
        const auto& entry = model.lookup(y);
        Token next;
        if (exact) {
          const double u = rng.uniform() * entry.cdf.back();
          const auto it = std::upper_bound(entry.cdf.begin(), entry.cdf.end(), u);
          next = static_cast<Token>(std::min<std::ptrdiff_t>(it - entry.cdf.begin(),
                                                             static_cast<std::ptrdiff_t>(entry.cdf.size()) - 1));
        } else {
          double total = 0.0;
          for (std::size_t t = 0; t < tempered.size(); ++t) {
            total += entry.probs[t] > 0.0 ? std::pow(entry.probs[t], inv_temp) : 0.0;
            tempered[t] = total;
          }
          const double u = rng.uniform() * total;
          const auto it = std::upper_bound(tempered.begin(), tempered.end(), u);
          next = static_cast<Token>(std::min<std::ptrdiff_t>(it - tempered.begin(),
                                                             static_cast<std::ptrdiff_t>(tempered.size()) - 1));
        }
        // upper_bound can only land on a zero-mass slot through rounding at the top end.
        while (next > kBos && entry.probs[static_cast<std::size_t>(next)] == 0.0) --next;
        y.push_back(next);
        if (next == kEos) break;
      }
      out[s] = TokenSequence(std::move(y));
    }
  });
  return out;
}

LossStats loss_stats(std::span<const double> losses) {
  if (losses.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two losses");
  LossStats s;
  s.count = losses.size();
  const double n = static_cast<double>(losses.size());
  double sum = 0.0, sum_exp = 0.0;
  for (double l : losses) {
    sum += l;
    sum_exp += std::exp(-l);
  }
  s.mean = sum / n;
  s.mean_exp_neg_loss = sum_exp / n;
  double ss = 0.0, ss_exp = 0.0;
  for (double l : losses) {
    ss += (l - s.mean) * (l - s.mean);
    const double e = std::exp(-l) - s.mean_exp_neg_loss;
    ss_exp += e * e;
  }
  s.stderr_mean = std::sqrt(ss / (n - 1.0) / n);
  s.stderr_exp = std::sqrt(ss_exp / (n - 1.0) / n);
  return s;
}

LossStats expected_loss_mc(const ToyLM& model, std::span<const TokenSequence> source,
                           LossUnits units, std::size_t threads) {
  if (source.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two sequences");
  std::vector<double> losses(source.size());
  parallel_for(source.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) losses[i] = sequence_loss(model, source[i], units);
  });
  return loss_stats(losses);
}

LossStats expected_loss_mc(const ToyLM& model, const SamplerSource& source, LossUnits units,
                           std::size_t threads) {
  if (source.n_samples < 2) throw Error(ErrorKind::InvalidArgument, "need at least two samples");
  const auto draws = sample(model, source.n_samples, source.temperature, source.max_len, source.seed, threads);
  return expected_loss_mc(model, draws, units, threads);
}

namespace {

void check_enumeration_size(const ToyLM& model, std::size_t max_len) {
  const double branching = static_cast<double>(model.vocab_size() - 1);
  double paths = 0.0, level = 1.0;
  for (std::size_t l = 1; l <= max_len; ++l) {
    level *= branching;
    paths += level;
    if (paths > kEnumerationLimit) {
      throw Error(ErrorKind::EnumerationTooLarge,
                  "more than 1e7 paths for vocab " + std::to_string(model.vocab_size()) +
                      " and max_len " + std::to_string(max_len));
    }
  }
}

template <typename Visit>
void walk_paths(const ToyLM& model, std::vector<Token>& prefix, double mass, std::size_t max_len,
                Visit& visit) {
  const auto probs = model.conditional(prefix);
  for (std::size_t t = 1; t < probs.size(); ++t) {
    const double p = probs[t];
    if (p == 0.0) continue;
    prefix.push_back(static_cast<Token>(t));
    if (t == static_cast<std::size_t>(kEos) || prefix.size() > max_len) {
      visit(prefix, mass * p);
    } else {
      walk_paths(model, prefix, mass * p, max_len, visit);
    }
    prefix.pop_back();
  }
}

}  // namespace

GammaVector enumerate_gamma_exact(const ToyLM& model, const Membership& membership,
                                  std::size_t n_domains, std::size_t max_len) {
  check_enumeration_size(model, max_len);
  GammaVector g;
  g.estimator = GammaEstimator::ClassifiedFraction;
  g.values.assign(n_domains, 0.0);
  std::vector<Token> prefix{kBos};
  auto visit = [&](const std::vector<Token>& path, double mass) {
    const auto d = membership(TokenSequence(path));
    if (d == kNoDomain) return;
    if (d >= n_domains) throw Error(ErrorKind::InvalidArgument, "membership returned an unknown domain", d);
    g.values[d] += mass;
  };
  if (max_len >= 1) walk_paths(model, prefix, 1.0, max_len, visit);
  return g;
}

std::vector<std::pair<TokenSequence, double>> enumerate_paths(const ToyLM& model, std::size_t max_len) {
  check_enumeration_size(model, max_len);
  std::vector<std::pair<TokenSequence, double>> out;
  std::vector<Token> prefix{kBos};
  auto visit = [&](const std::vector<Token>& path, double mass) {
    out.emplace_back(TokenSequence(path), mass);
  };
  if (max_len >= 1) walk_paths(model, prefix, 1.0, max_len, visit);
  return out;
}

}  // namespace mixdetect
