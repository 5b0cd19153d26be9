#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "json_util.hpp"
#include "mixdetect/random.hpp"

namespace mixdetect::cli {

namespace fs = std::filesystem;
using detail::json;

namespace {

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  const auto first = text.find_first_not_of(" \t");
  if (first != std::string::npos && text[first] == '[') {
    const auto j = detail::parse_json(text, "number list");
    if (!j.is_array()) throw Error(ErrorKind::Format, "expected a JSON array of numbers");
    for (const auto& v : j) out.push_back(detail::read_number(v));
    return out;
  }
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Format, "not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw Error(ErrorKind::Format, "empty number list");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

json error_json(const Error& e) {
  json j{{"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
  j["domain"] = e.domain() ? json(*e.domain()) : json(nullptr);
  j["value"] = e.value() ? detail::finite_or_tag(*e.value()) : json(nullptr);
  return j;
}

std::string format_vec(std::span<const double> v, int precision = 6) {
  std::ostringstream s;
  s << std::setprecision(precision) << '[';
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? ", " : "") << v[i];
  s << ']';
  return s.str();
}

// ---- corpus files --------------------------------------------------------
//
// A domain collection is a directory holding one "<name>.txt" file per
// domain plus manifest.json. A single corpus "x.txt" may have "x.labels"
// (one domain name per line) and "x.json" (domains, vocab_size, alpha).

struct CorpusSet {
  std::vector<std::string> domains;
  std::vector<Corpus> parts;
  std::size_t vocab_size = 0;
  std::optional<MixtureProportions> alpha;

  Corpus merged() const {
    if (parts.size() == 1) return parts.front();
    Corpus out;
    out.labels = std::vector<std::size_t>{};
    for (const auto& p : parts) {
      out.sequences.insert(out.sequences.end(), p.sequences.begin(), p.sequences.end());
      if (p.labels) {
        out.labels->insert(out.labels->end(), p.labels->begin(), p.labels->end());
      } else {
        out.labels.reset();
      }
    }
    return out;
  }
};

fs::path sidecar(const fs::path& file, const char* ext) {
  auto p = file;
  p.replace_extension(ext);
  return p;
}

CorpusSet load_corpus_set(const fs::path& path) {
  CorpusSet set;
  if (fs::is_directory(path)) {
    const auto manifest = detail::parse_json(read_text(path / "manifest.json"), "corpus manifest");
    try {
      set.domains = manifest.at("domains").get<std::vector<std::string>>();
      set.vocab_size = manifest.at("vocab_size").get<std::size_t>();
      for (const auto& f : manifest.at("files")) {
        set.parts.push_back(read_corpus(path / f.at("path").get<std::string>(),
                                        path / f.at("labels").get<std::string>(), set.domains));
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("corpus manifest: ") + e.what());
    }
    return set;
  }
  const auto manifest_path = sidecar(path, ".json");
  const auto labels_path = sidecar(path, ".labels");
  if (fs::exists(manifest_path)) {
    const auto manifest = detail::parse_json(read_text(manifest_path), "corpus manifest");
    try {
      set.domains = manifest.at("domains").get<std::vector<std::string>>();
      set.vocab_size = manifest.value("vocab_size", std::size_t{0});
      if (manifest.contains("alpha") && !manifest.at("alpha").is_null()) {
        set.alpha = make_proportions(manifest.at("alpha").get<std::vector<double>>());
      }
    } catch (const json::exception& e) {
      throw Error(ErrorKind::Format, std::string("corpus manifest: ") + e.what());
    }
  }
  std::optional<fs::path> labels;
  if (fs::exists(labels_path) && !set.domains.empty()) labels = labels_path;
  set.parts.push_back(read_corpus(path, labels, set.domains));
  set.parts.front().alpha = set.alpha;
  return set;
}

// ---- command plumbing ------------------------------------------------------

struct Output {
  json doc = json::object();
  std::string text;
};

struct Globals {
  bool json_out = false;
  std::size_t threads = 0;
  std::string config_path;
  std::optional<ProjectConfig> project;
};

using Handler = std::function<int(Output&)>;

fs::path from_project(const std::string& given, const Globals& g, fs::path ProjectConfig::*member,
                      const char* what) {
  if (!given.empty()) return given;
  if (g.project && !((*g.project).*member).empty()) return (*g.project).*member;
  throw Error(ErrorKind::InvalidArgument, std::string("no ") + what + " given (flag or --config)");
}

}  // namespace

// ---- ProjectConfig -------------------------------------------------------

std::string ProjectConfig::to_json() const {
  json j;
  j["paths"] = {{"corpora", corpora.string()},
                {"models", models.string()},
                {"classifier", classifier.string()},
                {"law", law.string()},
                {"reports", reports.string()}};
  j["domains"] = domains;
  j["detection"] = json::parse(detection.to_json());
  j["seed"] = seed;
  return j.dump(2) + "\n";
}

ProjectConfig ProjectConfig::from_json(const std::string& text, const fs::path& base) {
  const auto j = detail::parse_json(text, "project config");
  ProjectConfig c;
  try {
    auto resolve = [&](const char* key) -> fs::path {
      if (!j.contains("paths")) return {};
      const auto s = j.at("paths").value(key, std::string());
      if (s.empty()) return {};
      const fs::path p(s);
      return p.is_relative() && !base.empty() ? base / p : p;
    };
    c.corpora = resolve("corpora");
    c.models = resolve("models");
    c.classifier = resolve("classifier");
    c.law = resolve("law");
    c.reports = resolve("reports");
    c.domains = j.value("domains", std::vector<std::string>{});
    if (j.contains("detection")) c.detection = DetectionConfig::from_json(j.at("detection").dump());
    c.seed = j.value("seed", std::uint64_t{0});
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("project config: ") + e.what());
  }
  if (!c.domains.empty()) (void)DomainSet(c.domains);  // validates names
  return c;
}

ProjectConfig ProjectConfig::load(const fs::path& path) {
  auto c = from_json(read_text(path), path.parent_path());
  for (const auto* p : {&c.corpora, &c.classifier, &c.law}) {
    if (!p->empty() && !fs::exists(*p)) {
      throw Error(ErrorKind::Io, "config path does not exist: " + p->string());
    }
  }
  return c;
}

namespace {

// ---- corpus ---------------------------------------------------------------

void add_corpus_commands(CLI::App& app, Globals& g, Handler& handler) {
  auto* corpus = app.add_subcommand("corpus", "Synthesize, mix and inspect corpora");
  corpus->require_subcommand(1);

  {
    auto* cmd = corpus->add_subcommand("synth", "Generate one corpus per synthetic domain");
    struct Opts {
      std::string spec, domains, out;
      std::size_t size = 0, tokens = 16, min_len = 8, max_len = 16, order = 2;
      double overlap = 0.4;
      std::optional<std::uint64_t> seed;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--spec", o->spec, "Domain spec JSON");
    cmd->add_option("--domains", o->domains, "Comma-separated domain names (instead of --spec)");
    cmd->add_option("--tokens-per-domain", o->tokens, "Vocabulary block per domain")->capture_default_str();
    cmd->add_option("--overlap", o->overlap, "Out-of-range probability mass")->capture_default_str();
    cmd->add_option("--min-len", o->min_len)->capture_default_str();
    cmd->add_option("--max-len", o->max_len)->capture_default_str();
    cmd->add_option("--generator-order", o->order)->capture_default_str();
    cmd->add_option("--size", o->size, "Sequences per domain")->required();
    cmd->add_option("--seed", o->seed, "Overrides the spec seeds");
    cmd->add_option("--out", o->out, "Output directory")->required();
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        std::vector<DomainSpec> specs;
        if (!o->spec.empty()) {
          specs = domain_specs_from_json(read_text(o->spec));
          if (o->seed) {
            for (std::size_t i = 0; i < specs.size(); ++i) specs[i].seed = derive_seed(*o->seed, i);
          }
        } else {
          if (o->domains.empty()) throw Error(ErrorKind::InvalidArgument, "give --spec or --domains");
          const auto seed = o->seed ? *o->seed : (g.project ? g.project->seed : 0);
          specs = uniform_domain_specs(DomainSet(split_names(o->domains)), o->tokens, o->overlap, o->min_len,
                                       o->max_len, o->order, seed);
        }
        if (specs.empty()) throw Error(ErrorKind::InvalidArgument, "no domains in spec");
        const fs::path dir(o->out);
        fs::create_directories(dir);
        json files = json::array();
        std::vector<std::string> names;
        for (const auto& s : specs) names.push_back(s.domain.name);
        for (const auto& s : specs) {
          const auto c = synth_domain(s, o->size);
          write_corpus(dir / (s.domain.name + ".txt"), c, dir / (s.domain.name + ".labels"), names);
          files.push_back({{"domain", s.domain.name},
                           {"path", s.domain.name + ".txt"},
                           {"labels", s.domain.name + ".labels"},
                           {"size", c.size()},
                           {"fingerprint", corpus_fingerprint(c)}});
        }
        json manifest{{"domains", names},
                      {"vocab_size", specs.front().vocab_size},
                      {"specs", json::parse(domain_specs_to_json(specs))},
                      {"files", files}};
        write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
        res.doc = {{"out", dir.string()}, {"domains", names}, {"files", files}};
        res.text = "wrote " + std::to_string(specs.size()) + " corpora of " + std::to_string(o->size) +
                   " sequences to " + dir.string() + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = corpus->add_subcommand("mix", "Quota-mix domain corpora at given proportions");
    struct Opts {
      std::string in, alpha, out;
      std::size_t total = 0;
      std::uint64_t seed = 0;
      bool replace = false;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--in", o->in, "Domain collection directory")->required();
    cmd->add_option("--alpha", o->alpha, "Proportions a0,a1,...")->required();
    cmd->add_option("--total", o->total, "Sequences in the mixture")->required();
    cmd->add_option("--seed", o->seed)->capture_default_str();
    cmd->add_flag("--with-replacement", o->replace);
    cmd->add_option("--out", o->out, "Output corpus file")->required();
    cmd->callback([&handler, o] {
      handler = [o](Output& res) {
        const auto set = load_corpus_set(o->in);
        const auto alpha = make_proportions(parse_list(o->alpha));
        const auto mixed = mix_corpora(set.parts, alpha, o->total, o->seed, o->replace);
        const fs::path out(o->out);
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        write_corpus(out, mixed, sidecar(out, ".labels"), set.domains);
        const auto counts = quota_counts(alpha, o->total);
        json manifest{{"domains", set.domains},
                      {"vocab_size", set.vocab_size},
                      {"alpha", mixed.alpha->values()},
                      {"counts", counts},
                      {"seed", o->seed},
                      {"fingerprint", corpus_fingerprint(mixed)}};
        write_text_atomic(sidecar(out, ".json"), manifest.dump(2) + "\n");
        res.doc = manifest;
        res.doc["out"] = out.string();
        res.text = "mixed " + std::to_string(mixed.size()) + " sequences at alpha " +
                   format_vec(mixed.alpha->values()) + " into " + out.string() + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = corpus->add_subcommand("stats", "Summarize a corpus or domain collection");
    auto in = std::make_shared<std::string>();
    cmd->add_option("--in", *in, "Corpus file or collection directory")->required();
    cmd->callback([&handler, in] {
      handler = [in](Output& res) {
        const auto set = load_corpus_set(*in);
        const auto all = set.merged();
        std::size_t tokens = 0;
        for (const auto& s : all.sequences) tokens += s.content().size();
        res.doc["sequences"] = all.size();
        res.doc["content_tokens"] = tokens;
        res.doc["mean_length"] = all.size() ? static_cast<double>(tokens) / static_cast<double>(all.size()) : 0.0;
        res.doc["fingerprint"] = corpus_fingerprint(all);
        res.doc["domains"] = set.domains;
        std::ostringstream text;
        text << all.size() << " sequences, " << tokens << " content tokens, mean length "
             << res.doc["mean_length"].get<double>() << "\n";
        if (all.labels && !set.domains.empty()) {
          std::vector<std::size_t> counts(set.domains.size(), 0);
          for (auto l : *all.labels) ++counts.at(l);
          res.doc["label_counts"] = counts;
          for (std::size_t d = 0; d < counts.size(); ++d) text << "  " << set.domains[d] << ": " << counts[d] << "\n";
        }
        if (set.parts.size() > 1) {
          const auto jsd = separability(set.parts);
          json m = json::array();
          for (Eigen::Index i = 0; i < jsd.rows(); ++i) {
            json row = json::array();
            for (Eigen::Index k = 0; k < jsd.cols(); ++k) row.push_back(jsd(i, k));
            m.push_back(row);
          }
          res.doc["separability_jsd"] = m;
          text << "pairwise JSD (nats):\n";
          for (Eigen::Index i = 0; i < jsd.rows(); ++i) {
            text << "  ";
            for (Eigen::Index k = 0; k < jsd.cols(); ++k) text << std::setw(9) << std::setprecision(4) << jsd(i, k);
            text << "\n";
          }
        }
        res.text = text.str();
        return kExitOk;
      };
    });
  }
}

// ---- lm ---------------------------------------------------------------------

void add_lm_commands(CLI::App& app, Globals& g, Handler& handler) {
  auto* lm = app.add_subcommand("lm", "Train, sample and score toy language models");
  lm->require_subcommand(1);

  {
    auto* cmd = lm->add_subcommand("train", "Fit an order-K Markov model");
    struct Opts {
      std::string corpus, out;
      std::size_t order = 2, vocab = 0;
      double smoothing = 0.01;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--corpus", o->corpus)->required();
    cmd->add_option("--order", o->order)->capture_default_str();
    cmd->add_option("--smoothing", o->smoothing)->capture_default_str();
    cmd->add_option("--vocab-size", o->vocab, "Defaults to the corpus manifest");
    cmd->add_option("--out", o->out)->required();
    cmd->callback([&handler, o] {
      handler = [o](Output& res) {
        const auto set = load_corpus_set(o->corpus);
        auto corpus = set.merged();
        corpus.alpha = set.alpha;
        const auto model = ToyLM::train(corpus, o->order, o->smoothing, o->vocab ? o->vocab : set.vocab_size);
        write_text_atomic(o->out, model.serialize());
        res.doc = {{"out", o->out},
                   {"order", model.order()},
                   {"vocab_size", model.vocab_size()},
                   {"contexts", model.tables().size()},
                   {"trained_on", model.trained_on()}};
        res.text = "trained order-" + std::to_string(model.order()) + " model on " +
                   std::to_string(corpus.size()) + " sequences -> " + o->out + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = lm->add_subcommand("sample", "Draw sequences from <bos>");
    struct Opts {
      std::string model, out;
      std::size_t count = 0, max_len = 64;
      double temperature = 1.0;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model)->required();
    cmd->add_option("--count", o->count)->required();
    cmd->add_option("--temperature", o->temperature)->capture_default_str();
    cmd->add_option("--max-len", o->max_len)->capture_default_str();
    cmd->add_option("--seed", o->seed)->capture_default_str();
    cmd->add_option("--out", o->out)->required();
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        const auto model = ToyLM::deserialize(read_text(o->model));
        Corpus c;
        c.sequences = sample(model, o->count, o->temperature, o->max_len, o->seed, g.threads);
        std::size_t truncated = 0;
        for (const auto& s : c.sequences) truncated += !s.terminated();
        write_corpus(o->out, c);
        res.doc = {{"out", o->out}, {"count", c.size()}, {"truncated", truncated}};
        res.text = "sampled " + std::to_string(c.size()) + " sequences (" + std::to_string(truncated) +
                   " truncated) -> " + o->out + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = lm->add_subcommand("loss", "Score a corpus, or measure one mixture run for law fitting");
    struct Opts {
      std::string model, corpus, units = "per-token", classifier, alpha, append;
      std::size_t samples = 20000, max_len = 64;
      std::uint64_t seed = 0;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model)->required();
    cmd->add_option("--corpus", o->corpus, "Corpus to score");
    cmd->add_option("--units", o->units, "per-token | per-sequence")->capture_default_str();
    cmd->add_option("--classifier", o->classifier, "Measure per-domain losses on generated samples");
    cmd->add_option("--samples", o->samples)->capture_default_str();
    cmd->add_option("--max-len", o->max_len)->capture_default_str();
    cmd->add_option("--seed", o->seed)->capture_default_str();
    cmd->add_option("--alpha", o->alpha, "Mixture the model was trained on (default: from the model)");
    cmd->add_option("--append", o->append, "Append the run to this observations file");
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        const auto model = ToyLM::deserialize(read_text(o->model));
        const auto units = parse_loss_units(o->units);
        if (o->classifier.empty()) {
          if (o->corpus.empty()) throw Error(ErrorKind::InvalidArgument, "give --corpus or --classifier");
          const auto corpus = load_corpus_set(o->corpus).merged();
          const auto stats = expected_loss_mc(model, corpus.sequences, units, g.threads);
          res.doc = {{"mean", stats.mean},
                     {"stderr", stats.stderr_mean},
                     {"count", stats.count},
                     {"mean_exp_neg_loss", stats.mean_exp_neg_loss},
                     {"stderr_exp", stats.stderr_exp},
                     {"units", std::string(to_string(units))}};
          std::ostringstream t;
          t << std::setprecision(8) << "loss " << stats.mean << " +- " << stats.stderr_mean << " nats ("
            << to_string(units) << ", " << stats.count << " sequences)\n";
          res.text = t.str();
          return kExitOk;
        }
        const auto clf = Classifier::deserialize(read_text(o->classifier));
        std::optional<MixtureProportions> alpha = model.trained_alpha();
        if (!o->alpha.empty()) alpha = make_proportions(parse_list(o->alpha));
        if (!alpha) throw Error(ErrorKind::InvalidArgument, "model has no recorded mixture; pass --alpha");
        DetectionConfig dc;
        dc.sample_count = o->samples;
        dc.max_len = o->max_len;
        dc.seed = o->seed;
        dc.units = units;
        dc.threads = g.threads;
        const auto run = measure_run(model, clf, *alpha, dc);
        res.doc = {{"alpha", run.alpha.values()}, {"losses", run.losses}};
        if (!o->append.empty()) {
          std::vector<RunObservation> runs;
          if (fs::exists(o->append)) runs = observations_from_json(read_text(o->append));
          runs.push_back(run);
          write_text_atomic(o->append, observations_to_json(runs));
          res.doc["runs"] = runs.size();
          res.doc["out"] = o->append;
        }
        res.text = "alpha " + format_vec(run.alpha.values()) + " losses " + format_vec(run.losses, 8) + "\n";
        return kExitOk;
      };
    });
  }
}

// ---- clf --------------------------------------------------------------------

void add_clf_commands(CLI::App& app, Globals& g, Handler& handler) {
  auto* clf = app.add_subcommand("clf", "Train and apply the domain classifier");
  clf->require_subcommand(1);

  {
    auto* cmd = clf->add_subcommand("train", "Train on labeled domain corpora");
    struct Opts {
      std::string corpus, out;
      std::size_t cap = 10000, vocab = 0;
      double smoothing = 0.1;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--corpus", o->corpus, "Labeled corpus or collection directory")->required();
    cmd->add_option("--cap", o->cap, "Training sequences per domain")->capture_default_str();
    cmd->add_option("--smoothing", o->smoothing)->capture_default_str();
    cmd->add_option("--vocab-size", o->vocab);
    cmd->add_option("--out", o->out)->required();
    cmd->callback([&handler, o] {
      handler = [o](Output& res) {
        const auto set = load_corpus_set(o->corpus);
        if (set.domains.empty()) throw Error(ErrorKind::UnlabeledCorpus, "corpus has no domain manifest");
        const auto model = Classifier::train(DomainSet(set.domains), set.parts,
                                             ClassifierOptions{o->smoothing, o->cap, o->vocab ? o->vocab : set.vocab_size});
        write_text_atomic(o->out, model.serialize());
        res.doc = {{"out", o->out}, {"domains", set.domains}, {"training_counts", model.training_counts()}};
        res.text = "trained classifier over " + std::to_string(set.domains.size()) + " domains -> " + o->out + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = clf->add_subcommand("eval", "Held-out accuracy and confusion matrix");
    auto o = std::make_shared<std::pair<std::string, std::string>>();
    cmd->add_option("--classifier", o->first)->required();
    cmd->add_option("--corpus", o->second)->required();
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        const auto model = Classifier::deserialize(read_text(o->first));
        const auto set = load_corpus_set(o->second);
        const auto rep = accuracy(model, set.merged(), g.threads);
        json conf = json::array();
        std::ostringstream t;
        t << "accuracy " << std::setprecision(6) << rep.accuracy << "\nconfusion (rows: true)\n";
        for (Eigen::Index i = 0; i < rep.confusion.rows(); ++i) {
          json row = json::array();
          t << "  " << std::setw(8) << model.domains()[static_cast<std::size_t>(i)].name;
          for (Eigen::Index k = 0; k < rep.confusion.cols(); ++k) {
            row.push_back(rep.confusion(i, k));
            t << std::setw(8) << rep.confusion(i, k);
          }
          t << "\n";
          conf.push_back(row);
        }
        res.doc = {{"accuracy", rep.accuracy}, {"confusion", conf}, {"domains", model.domains().names()}};
        res.text = t.str();
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = clf->add_subcommand("classify", "Label every sequence of a corpus");
    auto o = std::make_shared<std::array<std::string, 3>>();
    cmd->add_option("--classifier", (*o)[0])->required();
    cmd->add_option("--corpus", (*o)[1])->required();
    cmd->add_option("--out", (*o)[2], "Write per-sample lines here instead of stdout");
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        const auto model = Classifier::deserialize(read_text((*o)[0]));
        const auto corpus = load_corpus_set((*o)[1]).merged();
        const auto results = classify_all(model, corpus.sequences, g.threads);
        const auto lines = format_classifications(model, results);
        std::vector<std::size_t> predicted(results.size());
        for (std::size_t i = 0; i < results.size(); ++i) predicted[i] = results[i].domain;
        const auto gamma = estimate_gamma_fraction(predicted, model.domains().size());
        std::vector<std::size_t> counts(model.domains().size(), 0);
        for (auto d : predicted) ++counts[d];
        res.doc = {{"count", results.size()}, {"domains", model.domains().names()}, {"class_counts", counts},
                   {"gamma", gamma.values}};
        if (!(*o)[2].empty()) {
          write_text_atomic((*o)[2], lines);
          res.doc["out"] = (*o)[2];
          res.text = "classified " + std::to_string(results.size()) + " sequences -> " + (*o)[2] +
                     "; fractions " + format_vec(gamma.values) + "\n";
        } else {
          res.text = lines;
        }
        return kExitOk;
      };
    });
  }
}

// ---- law ----------------------------------------------------------------------

json inversion_json(const InversionResult& r) {
  return {{"alpha", r.alpha},
          {"raw_alpha", r.raw_alpha},
          {"proportions", r.proportions().values()},
          {"diagnostics",
           {{"residual", detail::finite_or_tag(r.diagnostics.residual)},
            {"raw_residual", detail::finite_or_tag(r.diagnostics.raw_residual)},
            {"condition", detail::finite_or_tag(r.diagnostics.condition)},
            {"simplex_violation", detail::finite_or_tag(r.diagnostics.simplex_violation)},
            {"projection_changed", r.diagnostics.projection_changed}}}};
}

void add_law_commands(CLI::App& app, Handler& handler) {
  auto* law = app.add_subcommand("law", "Fit, evaluate and invert the mixing law");
  law->require_subcommand(1);

  {
    auto* cmd = law->add_subcommand("fit", "Fit per-domain law parameters to mixture runs");
    struct Opts {
      std::string runs, out;
      FitOptions fit;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--runs", o->runs, "Observations JSON")->required();
    cmd->add_option("--out", o->out)->required();
    cmd->add_option("--max-iter", o->fit.max_iterations)->capture_default_str();
    cmd->add_option("--tolerance", o->fit.tolerance)->capture_default_str();
    cmd->add_option("--min-offset", o->fit.min_offset, "Lower bound on c")->capture_default_str();
    cmd->callback([&handler, o] {
      handler = [o](Output& res) {
        const auto runs = observations_from_json(read_text(o->runs));
        const auto result = fit(runs, o->fit);
        write_text_atomic(o->out, result.params.to_json());
        json domains = json::array();
        for (const auto& d : result.report.domains) {
          domains.push_back({{"rmse", d.rmse}, {"iterations", d.iterations}, {"converged", d.converged},
                             {"c_seed", d.c_seed}});
        }
        res.doc = {{"out", o->out}, {"rmse", result.report.rmse}, {"domains", domains},
                   {"params", json::parse(result.params.to_json())}};
        std::ostringstream t;
        t << "fitted law on " << runs.size() << " runs, rmse " << std::setprecision(6) << result.report.rmse
          << " -> " << o->out << "\n";
        res.text = t.str();
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = law->add_subcommand("eval", "Predicted losses at a mixture");
    auto o = std::make_shared<std::pair<std::string, std::string>>();
    cmd->add_option("--law", o->first)->required();
    cmd->add_option("--alpha", o->second)->required();
    cmd->callback([&handler, o] {
      handler = [o](Output& res) {
        const auto params = MixingLawParams::from_json(read_text(o->first));
        const auto losses = eval_loss(params, make_proportions(parse_list(o->second)));
        const auto gamma = gamma_from_loss(losses);
        res.doc = {{"losses", losses}, {"gamma", gamma.values}};
        res.text = "losses " + format_vec(losses, 8) + "\ngamma  " + format_vec(gamma.values, 8) + "\n";
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = law->add_subcommand("invert", "Recover proportions from gamma or beta");
    struct Opts {
      std::string law, gamma, beta, mode = "constrained";
      double cap = kDefaultConditionCap;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--law", o->law)->required();
    auto* gopt = cmd->add_option("--gamma", o->gamma, "JSON array or comma list");
    auto* bopt = cmd->add_option("--beta", o->beta, "JSON array or comma list");
    gopt->excludes(bopt);
    cmd->add_option("--mode", o->mode, "raw | project | constrained")->capture_default_str();
    cmd->add_option("--condition-cap", o->cap)->capture_default_str();
    cmd->callback([&handler, o] {
      if (o->gamma.empty() && o->beta.empty()) throw CLI::RequiredError("--gamma or --beta");
      handler = [o](Output& res) {
        const auto params = MixingLawParams::from_json(read_text(o->law));
        const auto mode = parse_inversion_mode(o->mode);
        BetaVector beta;
        if (!o->gamma.empty()) {
          GammaVector gamma;
          gamma.values = parse_list(o->gamma);
          gamma.estimator = GammaEstimator::ExpOfMeanLoss;
          beta = beta_from_gamma(gamma, params);
        } else {
          beta.values = parse_list(o->beta);
        }
        const auto r = invert(params, beta, mode, o->cap);
        res.doc = inversion_json(r);
        res.doc["beta"] = beta.values;
        res.doc["mode"] = std::string(to_string(mode));
        std::ostringstream t;
        t << "alpha " << format_vec(r.alpha) << " (" << to_string(mode) << ", condition " << std::setprecision(4)
          << r.diagnostics.condition << ", residual " << r.diagnostics.residual << ")\n";
        res.text = t.str();
        return kExitOk;
      };
    });
  }

  {
    auto* cmd = law->add_subcommand("diag", "Conditioning and feasible ranges of a law");
    auto o = std::make_shared<std::string>();
    auto cap = std::make_shared<double>(kDefaultConditionCap);
    cmd->add_option("--law", *o)->required();
    cmd->add_option("--condition-cap", *cap)->capture_default_str();
    cmd->callback([&handler, o, cap] {
      handler = [o, cap](Output& res) {
        const auto params = MixingLawParams::from_json(read_text(*o));
        const auto d = law_diagnostics(params, *cap);
        res.doc = json::parse(d.to_json());
        std::ostringstream t;
        t << std::setprecision(6) << "condition " << d.condition << (d.singular ? " (singular)" : "") << "\n";
        for (std::size_t i = 0; i < params.size(); ++i) {
          t << "  domain " << i << ": loss [" << d.loss_min[i] << ", " << d.loss_max[i] << "], gamma ["
            << d.gamma_min[i] << ", " << d.gamma_max[i] << "]\n";
        }
        res.text = t.str();
        return kExitOk;
      };
    });
  }
}

// ---- detect ---------------------------------------------------------------------

void add_detect_commands(CLI::App& app, Globals& g, Handler& handler) {
  auto* detect_cmd = app.add_subcommand("detect", "Run proportion detection");
  detect_cmd->require_subcommand(1);

  {
    auto* cmd = detect_cmd->add_subcommand("run", "Generate, classify, estimate gamma and invert");
    struct Opts {
      std::string model, classifier, law, out, estimator, mode, truth, heldout, units;
      std::optional<std::size_t> samples, max_len;
      std::optional<double> temperature, cap;
      std::optional<std::uint64_t> seed;
      bool gamma_only = false, clamp = false, timing = false;
    };
    auto o = std::make_shared<Opts>();
    cmd->add_option("--model", o->model);
    cmd->add_option("--classifier", o->classifier);
    cmd->add_option("--law", o->law);
    cmd->add_option("--samples", o->samples, "M (default 100000)");
    cmd->add_option("--temperature", o->temperature, "Sampling temperature (default 1.0)");
    cmd->add_option("--max-len", o->max_len);
    cmd->add_option("--seed", o->seed);
    cmd->add_option("--estimator", o->estimator, "fraction | exp-mean-loss | mean-exp-loss");
    cmd->add_option("--mode", o->mode, "raw | project | constrained");
    cmd->add_option("--units", o->units, "per-token | per-sequence");
    cmd->add_option("--condition-cap", o->cap);
    cmd->add_flag("--gamma-only", o->gamma_only, "Treat gamma as the proportion estimate");
    cmd->add_flag("--clamp-gamma", o->clamp, "Move infeasible gamma inside the law's range");
    cmd->add_flag("--timing", o->timing, "Record stage timings in the report");
    cmd->add_option("--truth", o->truth, "Ground-truth proportions for error metrics");
    cmd->add_option("--heldout", o->heldout, "Labeled corpus for classifier accuracy");
    cmd->add_option("--out", o->out, "Report path");
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        DetectionConfig cfg = g.project ? g.project->detection : DetectionConfig{};
        if (g.project) cfg.seed = g.project->seed;
        if (o->samples) cfg.sample_count = *o->samples;
        if (o->temperature) cfg.temperature = *o->temperature;
        if (o->max_len) cfg.max_len = *o->max_len;
        if (o->seed) cfg.seed = *o->seed;
        if (!o->estimator.empty()) cfg.gamma_estimator = parse_gamma_estimator(o->estimator);
        if (!o->mode.empty()) cfg.inversion_mode = parse_inversion_mode(o->mode);
        if (!o->units.empty()) cfg.units = parse_loss_units(o->units);
        if (o->cap) cfg.condition_cap = *o->cap;
        if (o->clamp) cfg.clamp_gamma = true;
        if (o->timing) cfg.record_timing = true;
        cfg.threads = g.threads;

        const auto model = ToyLM::deserialize(read_text(from_project(o->model, g, &ProjectConfig::models, "--model")));
        const auto clf = Classifier::deserialize(
            read_text(from_project(o->classifier, g, &ProjectConfig::classifier, "--classifier")));
        DetectionReport report;
        if (o->gamma_only) {
          report = detect_gamma_only(model, clf, cfg);
        } else {
          const auto law = MixingLawParams::from_json(read_text(from_project(o->law, g, &ProjectConfig::law, "--law")));
          report = detect(model, clf, law, cfg);
        }
        if (!o->heldout.empty()) attach_classifier_accuracy(report, clf, load_corpus_set(o->heldout).merged());
        if (!o->truth.empty() && report.alpha_final) {
          evaluate_report(report, make_proportions(parse_list(o->truth)));
        }
        const auto text = report.to_json();
        fs::path out = o->out;
        if (out.empty() && g.project && !g.project->reports.empty()) out = g.project->reports / "report.json";
        if (!out.empty()) {
          if (out.has_parent_path()) fs::create_directories(out.parent_path());
          write_text_atomic(out, text);
        }
        res.doc = json::parse(text);
        std::ostringstream t;
        if (report.ok()) {
          t << "alpha " << format_vec(report.alpha_final->values());
          if (report.errors) t << "  L1 " << std::setprecision(4) << report.errors->l1;
          t << "\n";
        } else {
          t << "detection failed at stage " << report.failure->stage << ": " << report.failure->message << "\n";
        }
        if (!out.empty()) t << "report -> " << out.string() << "\n";
        res.text = t.str();
        return report.ok() ? kExitOk : kExitData;
      };
    });
  }

  {
    auto* cmd = detect_cmd->add_subcommand("sweep", "Sensitivity sweep over one axis on synthetic scenarios");
    struct Opts {
      std::string axis, values, out;
      std::size_t seeds = 5;
      ScenarioConfig scenario;
      DetectionConfig detection;
      std::string alpha;
    };
    auto o = std::make_shared<Opts>();
    o->detection.sample_count = 20000;
    cmd->add_option("--axis", o->axis, "M | overlap_fraction | condition | classifier_accuracy")->required();
    cmd->add_option("--values", o->values, "Comma-separated axis values")->required();
    cmd->add_option("--seeds", o->seeds)->capture_default_str();
    cmd->add_option("--samples", o->detection.sample_count, "M for non-M axes")->capture_default_str();
    cmd->add_option("--seed", o->detection.seed)->capture_default_str();
    cmd->add_option("--overlap", o->scenario.overlap_fraction)->capture_default_str();
    cmd->add_option("--alpha", o->alpha, "True proportions (default 0.4,0.3,0.2,0.1)");
    cmd->add_option("--train-total", o->scenario.train_total)->capture_default_str();
    cmd->add_option("--out", o->out, "CSV path (default stdout)");
    cmd->callback([&handler, &g, o] {
      handler = [&g, o](Output& res) {
        const auto axis = parse_sweep_axis(o->axis);
        const auto values = parse_list(o->values);
        auto scenario = o->scenario;
        if (!o->alpha.empty()) {
          scenario.alpha = parse_list(o->alpha);
          scenario.n_domains = scenario.alpha.size();
        }
        auto detection = o->detection;
        detection.threads = g.threads;
        const auto rows = sensitivity_sweep(scenario, detection, axis, values, o->seeds);
        const auto csv = sweep_to_csv(axis, rows);
        json table = json::array();
        for (const auto& r : rows) {
          table.push_back({{"value", r.value},
                           {"runs", r.runs},
                           {"failures", r.failures},
                           {"mean_l1", r.mean_l1},
                           {"mean_gamma_stderr", r.mean_gamma_stderr},
                           {"mean_accuracy", r.mean_accuracy}});
        }
        res.doc = {{"axis", std::string(to_string(axis))}, {"rows", table}};
        if (!o->out.empty()) {
          write_text_atomic(o->out, csv);
          res.doc["out"] = o->out;
          res.text = "sweep over " + std::string(to_string(axis)) + " -> " + o->out + "\n";
        } else {
          res.text = csv;
        }
        return kExitOk;
      };
    });
  }
}

// ---- report ---------------------------------------------------------------------

void add_report_commands(CLI::App& app, Handler& handler) {
  auto* report = app.add_subcommand("report", "Render detection reports");
  report->require_subcommand(1);
  auto* cmd = report->add_subcommand("show", "Render a report as markdown or CSV");
  auto o = std::make_shared<std::pair<std::string, std::string>>("", "md");
  cmd->add_option("--in", o->first)->required();
  cmd->add_option("--format", o->second, "md | csv")->capture_default_str()->check(CLI::IsMember({"md", "csv"}));
  cmd->callback([&handler, o] {
    handler = [o](Output& res) {
      const auto text = render_report(read_text(o->first), o->second);
      res.doc = {{"format", o->second}, {"rendered", text}};
      res.text = text;
      return kExitOk;
    };
  });
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detect training-data proportions of a toy language model", "mixdetect"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_flag("--json", g.json_out, "Print one JSON document on stdout");
  app.add_option("--threads", g.threads, "Worker threads (default MIXDETECT_THREADS or all cores)");
  app.add_option("--config", g.config_path, "Project config JSON");
  Handler handler;
  add_corpus_commands(app, g, handler);
  add_lm_commands(app, g, handler);
  add_clf_commands(app, g, handler);
  add_law_commands(app, handler);
  add_detect_commands(app, g, handler);
  add_report_commands(app, handler);

  std::vector<std::string> storage{"mixdetect"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (g.json_out) {
      out << json{{"error", {{"kind", "Usage"}, {"message", e.what()}}}}.dump() << "\n";
    }
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (!handler) {
    err << "usage error: missing subcommand\n";
    return kExitUsage;
  }

  Output res;
  int code = kExitOk;
  try {
    if (!g.config_path.empty()) g.project = ProjectConfig::load(g.config_path);
    code = handler(res);
  } catch (const Error& e) {
    if (g.json_out) out << json{{"error", error_json(e)}}.dump(2) << "\n";
    err << "error: " << e.what();
    if (e.domain()) err << " (domain " << *e.domain() << ")";
    err << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    if (g.json_out) out << json{{"error", {{"kind", "Io"}, {"message", e.what()}}}}.dump(2) << "\n";
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  if (g.json_out) {
    out << res.doc.dump(2) << "\n";
  } else {
    out << res.text;
  }
  return code;
}

}  // namespace mixdetect::cli
