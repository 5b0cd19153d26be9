#include <doctest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "helpers.hpp"
#include "mixdetect/toy_lm.hpp"

using namespace mixdetect;

namespace {

Corpus repeated(std::vector<Token> content, std::size_t copies) {
  Corpus c;
  for (std::size_t i = 0; i < copies; ++i) c.sequences.push_back(TokenSequence::from_content(content));
  return c;
}

// Order-1 model with explicit first-token and transition tables over
// vocabulary {bos, eos, 2, 3}.
ToyLM small_model(std::vector<double> first, std::vector<double> after2, std::vector<double> after3) {
  std::vector<ToyLM::ContextTable> tables{
      {{}, {0.0, 0.25, 0.375, 0.375}},
      {{kBos}, first},
      {{2}, after2},
      {{3}, after3},
  };
  return ToyLM::from_tables(1, 4, tables);
}

ToyLM mixed_model() {
  return small_model({0.0, 0.0, 0.3, 0.7}, {0.0, 0.4, 0.5, 0.1}, {0.0, 0.3, 0.2, 0.5});
}

// Longest-suffix lookup done independently of the model's own lookup.
const std::vector<double>& table_for(const std::vector<ToyLM::ContextTable>& tables,
                                     const std::vector<Token>& history, std::size_t order) {
  for (std::size_t len = std::min(order, history.size()) + 1; len-- > 0;) {
    const std::vector<Token> ctx(history.end() - static_cast<std::ptrdiff_t>(len), history.end());
    for (const auto& t : tables)
      if (t.context == ctx) return t.probs;
  }
  throw std::runtime_error("no table");
}

Corpus two_domain_mixture(double a0, std::uint64_t seed) {
  const auto specs = uniform_domain_specs(DomainSet({"x", "y"}), 6, 0.0, 3, 6, 1, 11);
  std::vector<Corpus> parts{synth_domain(specs[0], 4000), synth_domain(specs[1], 4000)};
  return mix_corpora(parts, make_proportions({a0, 1.0 - a0}), 4000, seed);
}

}  // namespace

TEST_SUITE("toy-lm") {
  TEST_CASE("single-path corpus with no smoothing") {
    const auto model = ToyLM::train(repeated({5}, 10), 1, 0.0, 6);
    const std::vector<Token> h0{kBos};
    const std::vector<Token> h1{kBos, 5};
    CHECK(model.conditional(h0)[5] == 1.0);
    CHECK(model.conditional(h1)[kEos] == 1.0);
    const auto y = TokenSequence::from_content(std::vector<Token>{5});
    CHECK(sequence_loss(model, y) == 0.0);
    const auto samples = sample(model, 50, 1.0, 8, 3);
    for (const auto& s : samples) CHECK(s == y);
    const auto stats = expected_loss_mc(model, samples);
    CHECK(stats.mean == 0.0);
    CHECK(stats.stderr_mean == 0.0);
    CHECK(stats.mean_exp_neg_loss == 1.0);
    const auto g = enumerate_gamma_exact(
        model, [](const TokenSequence& s) { return s.content().empty() ? kNoDomain : std::size_t{1}; }, 2, 4);
    CHECK(g.values[0] == 0.0);
    CHECK(g.values[1] == doctest::Approx(1.0).epsilon(1e-15));
  }

  TEST_CASE("smoothing bound and normalization") {
    const auto corpus = two_domain_mixture(0.5, 1);
    const double delta = 0.05;
    const auto model = ToyLM::train(corpus, 2, delta, 14);
    CHECK(model.vocab_size() == 14);
    for (const auto& t : model.tables()) {
      const double sum = std::accumulate(t.probs.begin(), t.probs.end(), 0.0);
      CHECK(std::abs(sum - 1.0) <= 1e-12);
      CHECK(t.probs[kBos] == 0.0);
      for (std::size_t tok = 1; tok < t.probs.size(); ++tok) CHECK(t.probs[tok] > 0.0);
    }
    // The smallest continuation has probability at least delta / (context count + delta * V).
    const std::vector<Token> h{kBos};
    const auto first = model.conditional(h);
    const double bound = delta / (4000.0 + delta * 14.0);
    for (std::size_t tok = 1; tok < 14; ++tok) CHECK(first[tok] >= bound);
  }

  TEST_CASE("first-token probability reflects the mixture") {
    const auto corpus = two_domain_mixture(0.5, 2);
    const auto model = ToyLM::train(corpus, 1, 0.01, 14);
    const std::vector<Token> h{kBos};
    const auto p = model.conditional(h);
    double domain0 = 0.0;
    for (Token t = 2; t < 8; ++t) domain0 += p[t];
    CHECK(domain0 == doctest::Approx(0.5).epsilon(0.001));
    CHECK(model.trained_alpha().has_value());
    CHECK(model.trained_on() == corpus_fingerprint(corpus));
  }

  TEST_CASE("uniform unigram loss is analytic") {
    const std::size_t v = 5;
    const double stop = 0.2;
    std::vector<double> probs(v + 2, (1.0 - stop) / double(v));
    probs[kBos] = 0.0;
    probs[kEos] = stop;
    const std::vector<ToyLM::ContextTable> tables{{{}, probs}};
    const auto model = ToyLM::from_tables(1, v + 2, tables);
    const auto y = TokenSequence::from_content(std::vector<Token>{2, 3, 4, 5});
    const double expected = 4.0 * -std::log((1.0 - stop) / double(v)) - std::log(stop);
    CHECK(sequence_loss(model, y) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(sequence_loss(model, y, LossUnits::PerToken) == doctest::Approx(expected / 5.0).epsilon(1e-14));
  }

  TEST_CASE("exp(-loss) equals the path product") {
    const auto corpus = two_domain_mixture(0.3, 3);
    const auto model = ToyLM::train(corpus, 2, 0.02, 14);
    const auto tables = model.tables();
    const auto ys = sample(model, 300, 1.0, 12, 17);
    for (const auto& y : ys) {
      double product = 1.0;
      std::vector<Token> history{kBos};
      for (std::size_t i = 1; i < y.tokens.size(); ++i) {
        product *= table_for(tables, history, 2)[static_cast<std::size_t>(y.tokens[i])];
        history.push_back(y.tokens[i]);
      }
      CHECK(std::exp(-sequence_loss(model, y)) == doctest::Approx(product).epsilon(1e-12));
    }
  }

  TEST_CASE("unknown tokens are reported") {
    const auto model = ToyLM::train(repeated({5}, 3), 1, 0.0, 7);
    try {
      sequence_loss(model, TokenSequence::from_content(std::vector<Token>{6}));
      FAIL("expected UnknownToken");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::UnknownToken);
    }
    CHECK_THROWS_AS(sequence_loss(model, TokenSequence::from_content(std::vector<Token>{9})), Error);
    CHECK_THROWS_AS(ToyLM::train(Corpus{}, 1, 0.1), Error);
    CHECK_THROWS_AS(ToyLM::train(repeated({5}, 3), 4, 0.1), Error);
  }

  TEST_CASE("sampling is independent of thread count") {
    const auto model = ToyLM::train(two_domain_mixture(0.4, 4), 2, 0.01, 14);
    const auto one = sample(model, 2000, 1.0, 20, 99, 1);
    const auto four = sample(model, 2000, 1.0, 20, 99, 4);
    CHECK(one == four);
    CHECK(sample(model, 2000, 1.0, 20, 100, 1) != one);
    for (const auto& s : one) CHECK(s.length() <= 21);
  }

  TEST_CASE("first-token frequencies obey the binomial bound") {
    const auto model = mixed_model();
    const std::size_t m = 100000;
    const auto ys = sample(model, m, 1.0, 6, 5);
    std::size_t twos = 0;
    for (const auto& y : ys) twos += y.tokens[1] == 2;
    CHECK(std::abs(double(twos) / m - 0.3) <= 3.0 * std::sqrt(0.3 * 0.7 / m));

    const auto cold = sample(model, m, 0.5, 6, 6);
    std::size_t cold_twos = 0;
    for (const auto& y : cold) cold_twos += y.tokens[1] == 2;
    const double p = 0.09 / (0.09 + 0.49);
    CHECK(std::abs(double(cold_twos) / m - p) <= 3.0 * std::sqrt(p * (1 - p) / m));
  }

  TEST_CASE("enumeration conserves mass and matches sampled path frequencies") {
    const auto model = mixed_model();
    const auto paths = enumerate_paths(model, 3);
    double total = 0.0;
    for (const auto& [y, p] : paths) {
      total += p;
      CHECK(std::exp(-sequence_loss(model, y)) == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));

    const std::size_t m = 100000;
    std::map<std::vector<Token>, std::size_t> counts;
    for (const auto& y : sample(model, m, 1.0, 3, 8)) ++counts[y.tokens];
    std::size_t bad = 0;
    for (const auto& [y, p] : paths) {
      const double f = double(counts[y.tokens]) / m;
      bad += std::abs(f - p) > 3.0 * std::sqrt(p * (1 - p) / m) + 1e-12;
    }
    // 3-sigma per path: a handful of the paths may fall outside by chance.
    CHECK(bad <= paths.size() / 20 + 1);

    const auto g = enumerate_gamma_exact(
        model, [](const TokenSequence& y) { return y.content().empty() ? kNoDomain : std::size_t(y.content()[0] - 2); },
        2, 3);
    CHECK(g.values[0] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(g.values[1] == doctest::Approx(0.7).epsilon(1e-14));
  }

  TEST_CASE("enumeration guard") {
    const auto model = ToyLM::train(two_domain_mixture(0.4, 5), 1, 0.01, 14);
    try {
      enumerate_paths(model, 10);
      FAIL("expected EnumerationTooLarge");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EnumerationTooLarge);
    }
  }

  TEST_CASE("Monte Carlo loss: analytic mean, Jensen gap and 1/sqrt(M) scaling") {
    // Two real tokens, no <eos> before max_len: every sequence has 10 tokens.
    const std::vector<ToyLM::ContextTable> fixed{{{}, {0.0, 0.0, 0.5, 0.5}}};
    const auto flat = ToyLM::from_tables(1, 4, fixed);
    const auto s = expected_loss_mc(flat, SamplerSource{500, 1.0, 10, 1}, LossUnits::PerSequence);
    CHECK(s.mean == doctest::Approx(10.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(s.mean_exp_neg_loss == doctest::Approx(std::exp(-s.mean)).epsilon(1e-12));

    const auto model = mixed_model();
    double exact = 0.0;
    for (const auto& [y, p] : enumerate_paths(model, 6)) exact += p * sequence_loss(model, y);
    std::vector<double> err;
    for (std::size_t m : {100, 1000, 10000}) {
      double total = 0.0;
      for (std::uint64_t rep = 0; rep < 30; ++rep) {
        const auto st = expected_loss_mc(model, SamplerSource{m, 1.0, 6, 1000 * m + rep}, LossUnits::PerSequence);
        CHECK(st.mean_exp_neg_loss > std::exp(-st.mean));
        total += std::abs(st.mean - exact);
      }
      err.push_back(total / 30.0);
    }
    for (std::size_t i = 0; i + 1 < err.size(); ++i) {
      const double ratio = err[i] / err[i + 1];
      CHECK(ratio >= std::sqrt(10.0) / 2.0);
      CHECK(ratio <= 2.0 * std::sqrt(10.0));
    }
    CHECK_THROWS_AS(loss_stats(std::vector<double>{1.0}), Error);
  }

  TEST_CASE("serialization round trip") {
    const auto model = ToyLM::train(two_domain_mixture(0.4, 6), 2, 0.01, 14);
    const auto text = model.serialize();
    CHECK(text.rfind("TOYLM1\n", 0) == 0);
    const auto back = ToyLM::deserialize(text);
    CHECK(back.serialize() == text);
    CHECK(sample(back, 200, 1.0, 16, 1) == sample(model, 200, 1.0, 16, 1));
    CHECK(back.trained_alpha() == model.trained_alpha());

    const auto tabled = mixed_model();
    const auto tback = ToyLM::deserialize(tabled.serialize());
    CHECK(sample(tback, 200, 1.0, 6, 2) == sample(tabled, 200, 1.0, 6, 2));
    CHECK_THROWS_AS(ToyLM::deserialize("TOYLM2\n{}"), Error);
    CHECK_THROWS_AS(ToyLM::deserialize("TOYLM1\n{\"order\": 1}"), Error);
  }

  TEST_CASE("from_tables validation") {
    const std::vector<ToyLM::ContextTable> bad_sum{{{}, {0.0, 0.5, 0.6, 0.0}}};
    CHECK_THROWS_AS(ToyLM::from_tables(1, 4, bad_sum), Error);
    const std::vector<ToyLM::ContextTable> no_root{{{kBos}, {0.0, 0.5, 0.5, 0.0}}};
    CHECK_THROWS_AS(ToyLM::from_tables(1, 4, no_root), Error);
    const std::vector<ToyLM::ContextTable> bos_mass{{{}, {0.5, 0.5, 0.0, 0.0}}};
    CHECK_THROWS_AS(ToyLM::from_tables(1, 4, bos_mass), Error);
  }
}
