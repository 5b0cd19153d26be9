#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <json.hpp>

#include "cli.hpp"
#include "mixdetect/corpus.hpp"

using namespace mixdetect;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_command(args, out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("mixdetect-" + name + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string slurp(const std::string& path) { return read_text(path); }

void write(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

// Every --json invocation must print exactly one parseable document.
json json_of(const Result& r) {
  json j;
  CHECK_NOTHROW(j = json::parse(r.out));
  return j;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 1") {
    CHECK(run({}).code == cli::kExitUsage);
    CHECK(run({"bogus"}).code == cli::kExitUsage);
    CHECK(run({"corpus", "synth", "--size", "10"}).code == cli::kExitUsage);
    CHECK(run({"report", "show", "--in", "x.json", "--format", "html"}).code == cli::kExitUsage);
    const auto r = run({"--json", "law", "invert", "--law", "l.json"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(json_of(r).at("error").at("kind") == "Usage");
    CHECK(run({"--help"}).code == cli::kExitOk);
  }

  TEST_CASE("missing files are data errors") {
    const auto r = run({"--json", "law", "diag", "--law", "/nonexistent/law.json"});
    CHECK(r.code == cli::kExitData);
    CHECK(json_of(r).contains("error"));
  }

  TEST_CASE("infeasible gamma names the offending domain") {
    TempDir dir("invert");
    write(dir / "law.json", R"({"c": [0.5, 0.5], "k": [1.0, 1.0], "t": [[-1.0, 0.0], [0.0, -1.0]]})");
    const auto diag = json_of(run({"--json", "law", "diag", "--law", dir / "law.json"}));
    // The reachable range for domain 0 ends below 0.9.
    CHECK(diag.at("gamma_max").at(0).get<double>() < 0.9);
    const auto r = run({"--json", "law", "invert", "--law", dir / "law.json", "--gamma", "[0.9,0.1]"});
    CHECK(r.code == cli::kExitData);
    const auto e = json_of(r).at("error");
    CHECK(e.at("kind") == "DomainViolation");
    CHECK(e.at("domain") == 0);
    CHECK(e.at("value").get<double>() == doctest::Approx(0.9));
    CHECK(r.err.find("domain 0") != std::string::npos);

    const auto ok = run({"--json", "law", "invert", "--law", dir / "law.json", "--gamma", "0.5,0.5"});
    CHECK(ok.code == cli::kExitOk);
    CHECK(json_of(ok).contains("alpha"));
    CHECK(run({"law", "invert", "--law", dir / "law.json", "--gamma", "0.5", "--beta", "0.1"}).code ==
          cli::kExitUsage);
  }

  TEST_CASE("synthesis writes one file per domain plus a manifest, byte for byte") {
    TempDir dir("synth");
    write(dir / "spec.json", domain_specs_to_json(uniform_domain_specs(DomainSet({"x", "y", "z"}), 6, 0.2, 3, 8, 2, 5)));
    for (const char* out : {"a", "b"}) {
      const auto r = run({"--json", "corpus", "synth", "--spec", dir / "spec.json", "--size", "200", "--out", dir / out});
      REQUIRE(r.code == cli::kExitOk);
      json_of(r);
    }
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "a")) {
      ++files;
      CHECK(slurp(e.path().string()) == slurp((dir.path / "b" / e.path().filename()).string()));
    }
    CHECK(fs::exists(dir.path / "a" / "manifest.json"));
    CHECK(files >= 4);
    const auto txt = std::count_if(fs::directory_iterator(dir.path / "a"), fs::directory_iterator{},
                                   [](const auto& e) { return e.path().extension() == ".txt"; });
    CHECK(txt == 3);
  }

  TEST_CASE("scripted session from synthesis to report") {
    TempDir dir("session");
    auto ok = [](const Result& r) {
      if (r.code != cli::kExitOk) MESSAGE(r.err);
      REQUIRE(r.code == cli::kExitOk);
      return json_of(r);
    };
    const std::string domains = "cc,code,math";
    ok(run({"--json", "corpus", "synth", "--domains", domains, "--overlap", "0.3", "--size", "3000", "--seed", "1",
            "--out", dir / "pool"}));
    ok(run({"--json", "corpus", "synth", "--domains", domains, "--overlap", "0.3", "--size", "1500", "--seed", "2",
            "--out", dir / "clfdata"}));
    const auto stats = ok(run({"--json", "corpus", "stats", "--in", dir / "pool"}));
    CHECK(stats.dump().find("cc") != std::string::npos);
    ok(run({"--json", "clf", "train", "--corpus", dir / "clfdata", "--cap", "1000", "--out", dir / "c.clf"}));
    const auto eval = ok(run({"--json", "clf", "eval", "--classifier", dir / "c.clf", "--corpus", dir / "pool"}));
    CHECK(eval.at("accuracy").get<double>() > 0.9);

    const std::vector<std::string> runs{"0.6,0.2,0.2", "0.2,0.6,0.2", "0.2,0.2,0.6", "0.34,0.33,0.33",
                                        "0.5,0.4,0.1", "0.1,0.5,0.4", "0.4,0.1,0.5", "0.45,0.1,0.45",
                                        "0.1,0.45,0.45", "0.45,0.45,0.1"};
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const auto mix = dir / ("mix" + std::to_string(i) + ".txt");
      const auto model = dir / ("m" + std::to_string(i) + ".toylm");
      ok(run({"--json", "corpus", "mix", "--in", dir / "pool", "--alpha", runs[i], "--total", "3000", "--seed",
              std::to_string(10 + i), "--out", mix}));
      ok(run({"--json", "lm", "train", "--corpus", mix, "--order", "2", "--smoothing", "0.01", "--out", model}));
      ok(run({"--json", "lm", "loss", "--model", model, "--classifier", dir / "c.clf", "--samples", "3000", "--seed",
              std::to_string(20 + i), "--append", dir / "runs.json"}));
    }
    CHECK(json::parse(slurp(dir / "runs.json")).size() == runs.size());
    ok(run({"--json", "law", "fit", "--runs", dir / "runs.json", "--out", dir / "law.json"}));
    ok(run({"--json", "law", "eval", "--law", dir / "law.json", "--alpha", "0.5,0.3,0.2"}));
    ok(run({"--json", "law", "diag", "--law", dir / "law.json"}));

    ok(run({"--json", "corpus", "mix", "--in", dir / "pool", "--alpha", "0.5,0.3,0.2", "--total", "3000", "--seed",
            "99", "--out", dir / "target.txt"}));
    ok(run({"--json", "lm", "train", "--corpus", dir / "target.txt", "--out", dir / "target.toylm"}));
    const auto sampled = ok(run({"--json", "lm", "sample", "--model", dir / "target.toylm", "--count", "50", "--seed",
                                 "3", "--out", dir / "samples.txt"}));
    ok(run({"--json", "lm", "loss", "--model", dir / "target.toylm", "--corpus", dir / "samples.txt"}));
    ok(run({"--json", "clf", "classify", "--classifier", dir / "c.clf", "--corpus", dir / "samples.txt", "--out",
            dir / "labels.tsv"}));
    const auto labels = slurp(dir / "labels.tsv");
    CHECK(std::count(labels.begin(), labels.end(), '\n') == 50);

    for (const char* out : {"r1.json", "r2.json"}) {
      const auto r = run({"--json", "detect", "run", "--model", dir / "target.toylm", "--classifier", dir / "c.clf",
                          "--law", dir / "law.json", "--estimator", "exp-mean-loss", "--samples", "3000",
                          "--temperature", "1.0", "--seed", "42", "--truth", "0.5,0.3,0.2", "--out", dir / out});
      const auto doc = ok(r);
      CHECK(doc.at("alpha_final").size() == 3);
    }
    CHECK(slurp(dir / "r1.json") == slurp(dir / "r2.json"));
    const auto report = json::parse(slurp(dir / "r1.json"));
    for (const char* key : {"config", "gamma", "beta", "alpha_raw", "alpha_final", "diagnostics", "truth", "errors",
                            "timing"})
      CHECK(report.contains(key));

    ok(run({"--json", "detect", "run", "--model", dir / "target.toylm", "--classifier", dir / "c.clf",
            "--gamma-only", "--samples", "3000", "--out", dir / "g.json"}));
    const auto md = run({"report", "show", "--in", dir / "r1.json", "--format", "md"});
    CHECK(md.code == cli::kExitOk);
    CHECK(md.out.find("math") != std::string::npos);
    const auto csv = run({"report", "show", "--in", dir / "r1.json", "--format", "csv"});
    CHECK(std::count(csv.out.begin(), csv.out.end(), '\n') == 2);
    ok(run({"--json", "report", "show", "--in", dir / "r1.json", "--format", "csv"}));

    // The same detection driven by a project config.
    cli::ProjectConfig cfg;
    cfg.models = "target.toylm";
    cfg.classifier = "c.clf";
    cfg.law = "law.json";
    cfg.domains = {"cc", "code", "math"};
    cfg.detection.sample_count = 3000;
    cfg.seed = 42;
    cfg.detection.gamma_estimator = GammaEstimator::ExpOfMeanLoss;
    write(dir / "project.json", cfg.to_json());
    ok(run({"--json", "--config", dir / "project.json", "detect", "run", "--truth", "0.5,0.3,0.2", "--out",
            dir / "r3.json"}));
    CHECK(slurp(dir / "r3.json") == slurp(dir / "r1.json"));
  }

  TEST_CASE("project config round trip") {
    cli::ProjectConfig c;
    c.corpora = "/data/corpora";
    c.models = "/data/models";
    c.classifier = "/data/c.clf";
    c.law = "/data/law.json";
    c.reports = "/data/reports";
    c.domains = {"cc", "code"};
    c.seed = 17;
    c.detection.sample_count = 1234;
    c.detection.inversion_mode = InversionMode::Raw;
    const auto text = c.to_json();
    const auto back = cli::ProjectConfig::from_json(text);
    CHECK(back.to_json() == text);
    CHECK(back.models == c.models);
    CHECK(back.detection.sample_count == 1234);
    const auto rel = cli::ProjectConfig::from_json(R"({"paths": {"law": "law.json"}})", "/base");
    CHECK(rel.law == fs::path("/base/law.json"));
    CHECK_THROWS_AS(cli::ProjectConfig::load("/nonexistent/project.json"), Error);
  }

  TEST_CASE("sweeps print a CSV table") {
    const auto r = run({"detect", "sweep", "--axis", "condition", "--values", "1,100", "--seeds", "3"});
    REQUIRE(r.code == cli::kExitOk);
    CHECK(r.out.rfind("condition,runs,failures", 0) == 0);
    CHECK(run({"detect", "sweep", "--axis", "nope", "--values", "1"}).code != cli::kExitOk);
  }
}
