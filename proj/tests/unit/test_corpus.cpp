#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "helpers.hpp"
#include "mixdetect/corpus.hpp"

using namespace mixdetect;

namespace {

std::vector<DomainSpec> two_specs(double overlap, std::uint64_t seed = 7) {
  return uniform_domain_specs(DomainSet({"a", "b"}), 10, overlap, 4, 9, 2, seed);
}

std::set<Token> token_types(const Corpus& c) {
  std::set<Token> out;
  for (const auto& s : c.sequences)
    for (Token t : s.content()) out.insert(t);
  return out;
}

}  // namespace

TEST_SUITE("corpus-synth") {
  TEST_CASE("uniform specs carve disjoint blocks after the reserved ids") {
    const auto specs = uniform_domain_specs(DomainSet({"a", "b", "c"}), 5, 0.1, 2, 3, 1, 9);
    REQUIRE(specs.size() == 3);
    CHECK(specs[0].vocab_lo == kFirstRealToken);
    CHECK(specs[0].vocab_hi == specs[1].vocab_lo);
    CHECK(specs[2].vocab_hi == kFirstRealToken + 15);
    CHECK(specs[0].vocab_size == 17);
    CHECK(specs[0].seed != specs[1].seed);
    const auto back = domain_specs_from_json(domain_specs_to_json(specs));
    REQUIRE(back.size() == 3);
    CHECK(back[1].domain.name == "b");
    CHECK(back[1].vocab_lo == specs[1].vocab_lo);
    CHECK(back[2].seed == specs[2].seed);
    CHECK(back[0].overlap_fraction == 0.1);
  }

  TEST_CASE("zero overlap gives disjoint token types") {
    const auto specs = two_specs(0.0);
    const auto a = synth_domain(specs[0], 2000);
    const auto b = synth_domain(specs[1], 2000);
    const auto ta = token_types(a), tb = token_types(b);
    for (Token t : ta) CHECK(tb.count(t) == 0);
    CHECK(ta.size() == 10);
  }

  TEST_CASE("synthesis is deterministic and respects lengths and labels") {
    const auto spec = two_specs(0.3)[1];
    const auto x = synth_domain(spec, 500);
    const auto y = synth_domain(spec, 500);
    CHECK(x.sequences == y.sequences);
    CHECK(corpus_fingerprint(x) == corpus_fingerprint(y));
    REQUIRE(x.labels);
    for (auto l : *x.labels) CHECK(l == 1);
    for (const auto& s : x.sequences) {
      CHECK(s.terminated());
      CHECK(s.content().size() >= 4);
      CHECK(s.content().size() <= 9);
    }
    auto other = spec;
    other.seed += 1;
    CHECK(corpus_fingerprint(synth_domain(other, 500)) != corpus_fingerprint(x));
  }

  TEST_CASE("out-of-range unigram mass tracks overlap_fraction") {
    for (double overlap : {0.1, 0.3, 0.5}) {
      const auto spec = two_specs(overlap)[0];
      const auto c = synth_domain(spec, 10000);
      std::size_t in = 0, total = 0;
      for (const auto& s : c.sequences) {
        for (Token t : s.content()) {
          in += t >= spec.vocab_lo && t < spec.vocab_hi;
          ++total;
        }
      }
      CHECK(std::abs(1.0 - double(in) / double(total) - overlap) <= 0.02);
    }
  }

  TEST_CASE("empty vocabulary range is rejected") {
    auto spec = two_specs(0.1)[0];
    spec.vocab_hi = spec.vocab_lo;
    try {
      synth_domain(spec, 10);
      FAIL("expected EmptyVocabRange");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::EmptyVocabRange);
    }
  }

  TEST_CASE("quota counts use largest remainder with low-index ties") {
    CHECK(quota_counts(make_proportions({0.5, 0.5}), 101) == std::vector<std::size_t>{51, 50});
    CHECK(quota_counts(make_proportions({1.0, 0.0}), 100) == std::vector<std::size_t>{100, 0});
    Rng rng(3);
    for (int r = 0; r < 500; ++r) {
      const auto a = testing::random_interior(2 + r % 6, rng, 0.0);
      const std::size_t total = 1 + static_cast<std::size_t>(rng.uniform_int(0, 5000));
      const auto q = quota_counts(a, total);
      std::size_t sum = 0;
      for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(std::abs(double(q[i]) - a[i] * double(total)) < 1.0);
        sum += q[i];
      }
      CHECK(sum == total);
    }
  }

  TEST_CASE("mixing delivers exact quotas") {
    const auto specs = two_specs(0.2);
    std::vector<Corpus> parts{synth_domain(specs[0], 60000), synth_domain(specs[1], 60000)};
    const auto vertex = mix_corpora(parts, make_proportions({1.0, 0.0}), 100, 1);
    for (auto l : *vertex.labels) CHECK(l == 0);

    const auto alpha = make_proportions({0.55, 0.45});
    const auto mixed = mix_corpora(parts, alpha, 100000, 2);
    std::size_t zeros = 0;
    for (auto l : *mixed.labels) zeros += l == 0;
    CHECK(zeros == 55000);
    REQUIRE(mixed.alpha);
    CHECK((*mixed.alpha)[0] == 0.55);
    CHECK(corpus_fingerprint(mixed) == corpus_fingerprint(mix_corpora(parts, alpha, 100000, 2)));
    CHECK(corpus_fingerprint(mixed) != corpus_fingerprint(mix_corpora(parts, alpha, 100000, 3)));

    // A shuffled mixture interleaves the domains.
    std::size_t switches = 0;
    for (std::size_t i = 1; i < 1000; ++i) switches += (*mixed.labels)[i] != (*mixed.labels)[i - 1];
    CHECK(switches > 300);
  }

  TEST_CASE("mixing errors") {
    const auto specs = two_specs(0.2);
    std::vector<Corpus> parts{synth_domain(specs[0], 10), synth_domain(specs[1], 10)};
    try {
      mix_corpora(parts, make_proportions({0.9, 0.1}), 20, 1);
      FAIL("expected InsufficientSourceData");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InsufficientSourceData);
      CHECK(e.domain() == std::optional<std::size_t>(0));
    }
    CHECK_NOTHROW(mix_corpora(parts, make_proportions({0.9, 0.1}), 20, 1, true));
    try {
      mix_corpora(parts, uniform_proportions(3), 3, 1);
      FAIL("expected DimensionMismatch");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::DimensionMismatch);
    }
  }

  TEST_CASE("separability") {
    const auto disjoint = two_specs(0.0);
    std::vector<Corpus> parts{synth_domain(disjoint[0], 2000), synth_domain(disjoint[1], 2000)};
    const auto m = separability(parts);
    CHECK(m(0, 1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(m(0, 0) == 0.0);
    std::vector<Corpus> same{parts[0], parts[0]};
    CHECK(separability(same)(0, 1) == doctest::Approx(0.0));
  }

  TEST_CASE("separability falls as overlap rises") {
    double previous = INFINITY;
    for (double overlap : {0.0, 0.2, 0.4}) {
      double total = 0.0;
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto specs = uniform_domain_specs(DomainSet({"a", "b", "c"}), 10, overlap, 4, 9, 2, seed);
        std::vector<Corpus> parts;
        for (const auto& s : specs) parts.push_back(synth_domain(s, 2000));
        const auto m = separability(parts);
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          CHECK(m(i, i) == 0.0);
          for (Eigen::Index j = 0; j < m.cols(); ++j) {
            CHECK(m(i, j) >= 0.0);
            CHECK(m(i, j) == m(j, i));
          }
        }
        total += m.sum();
      }
      CHECK(total < previous);
      previous = total;
    }
  }

  TEST_CASE("select and split") {
    const auto specs = two_specs(0.2);
    std::vector<Corpus> parts{synth_domain(specs[0], 100), synth_domain(specs[1], 100)};
    const auto mixed = mix_corpora(parts, make_proportions({0.3, 0.7}), 100, 4);
    CHECK(select_domain(mixed, 1).size() == 70);
    const auto [head, tail] = split_corpus(mixed, 40);
    CHECK(head.size() == 40);
    CHECK(tail.size() == 60);
    CHECK(tail.labels->size() == 60);
  }

  TEST_CASE("corpus files round-trip") {
    const auto dir = std::filesystem::temp_directory_path() / "mixdetect_corpus_test";
    std::filesystem::create_directories(dir);
    const auto specs = two_specs(0.2);
    std::vector<Corpus> parts{synth_domain(specs[0], 50), synth_domain(specs[1], 50)};
    const auto mixed = mix_corpora(parts, make_proportions({0.5, 0.5}), 60, 4);
    const std::vector<std::string> names{"a", "b"};
    write_corpus(dir / "m.txt", mixed, dir / "m.labels", names);
    const auto back = read_corpus(dir / "m.txt", dir / "m.labels", names);
    CHECK(back.sequences == mixed.sequences);
    CHECK(back.labels == mixed.labels);
    CHECK_THROWS_AS(read_corpus(dir / "m.txt", dir / "m.labels", std::vector<std::string>{"x", "y"}), Error);
    CHECK_THROWS_AS(read_corpus(dir / "missing.txt"), Error);
    std::filesystem::remove_all(dir);
  }
}
