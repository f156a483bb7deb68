// Command-line driver: gen-data, train, eval, generate, gradcheck, ablate.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 divergence, 4 check failed (gradcheck).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "reasoner/experiment.hpp"

namespace fs = std::filesystem;
using namespace reasoner;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitCheckFailed = 4;

struct CommonOptions {
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("-c,--config", o.config_file, "JSON config file");
  app->add_option("-s,--set", o.overrides, "override a config key, e.g. --set model.hidden=32 (repeatable)");
}

RunConfig resolve(const CommonOptions& o) {
  RunConfig c = o.config_file.empty() ? RunConfig{} : load_run_config(o.config_file);
  for (const auto& kv : o.overrides) apply_override(c, kv);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

void write_resolved_config(const RunConfig& c, const fs::path& dir, const std::string& command) {
  fs::create_directories(dir);
  json j = to_json(c);
  j["command"] = command;
  write_text(dir / "config.json", j.dump(2) + "\n");
}

fs::path split_path(const RunConfig& c, const std::string& split) { return fs::path(c.data_dir) / (split + ".jsonl"); }

std::vector<synth::Example> load_split(const RunConfig& c, const std::string& split) {
  const auto path = split_path(c, split);
  if (!fs::exists(path)) throw ConfigError("dataset " + path.string() + " not found (run gen-data first)");
  return synth::read_dataset(path.string());
}

std::string histogram(const std::map<std::size_t, std::size_t>& h) {
  std::ostringstream os;
  for (const auto& [k, v] : h) os << "  " << std::setw(3) << k << " : " << v << '\n';
  return os.str();
}

// ---- gen-data ---------------------------------------------------------------

int cmd_gen_data(RunConfig c) {
  c.grammar.validate();
  const auto g = synth::CausalGrammar::build(c.grammar);
  const auto splits = synth::generate_splits(g, c.splits, c.data_seed);
  fs::create_directories(c.data_dir);
  json stats = json::object();
  std::ostringstream text;
  for (auto [name, data] : {std::pair<const char*, const std::vector<synth::Example>*>{"train", &splits.train},
                            {"val", &splits.val},
                            {"test", &splits.test}}) {
    synth::write_dataset(*data, split_path(c, name).string());
    const auto s = synth::dataset_stats(*data);
    stats[name] = {{"examples", s.examples},
                   {"mean_events", s.mean_events},
                   {"mean_sentence_length", s.mean_length},
                   {"event_counts", s.event_counts},
                   {"sentence_lengths", s.sentence_lengths}};
    text << name << ": " << s.examples << " examples, " << std::fixed << std::setprecision(2) << s.mean_events
         << " events per example, " << s.mean_length << " words per sentence\n"
         << " events per example:\n"
         << histogram(s.event_counts) << " words per sentence:\n"
         << histogram(s.sentence_lengths);
  }
  write_text(fs::path(c.data_dir) / "stats.json", stats.dump(2) + "\n");
  write_text(fs::path(c.data_dir) / "stats.txt", text.str());
  write_resolved_config(c, c.data_dir, "gen-data");
  std::cout << text.str();
  return 0;
}

// ---- train ------------------------------------------------------------------

int cmd_train(RunConfig c, const std::string& resume) {
  c.validate();
  const auto train = load_split(c, "train");
  const fs::path out(c.out_dir);
  fs::create_directories(out);
  Trainer trainer = resume.empty() ? Trainer(c.model, c.train) : load_checkpoint(resume, &c.train);
  if (!resume.empty()) {
    if (to_json(trainer.model().config) != to_json(c.model))
      std::cerr << "note: model settings taken from checkpoint " << resume << "\n";
    c.model = trainer.model().config;
    c.checkpoint = resume;
  }
  write_resolved_config(c, out, "train");
  const bool append = !resume.empty() && fs::exists(out / "loss.tsv");
  std::ofstream log(out / "loss.tsv", append ? std::ios::app : std::ios::trunc);
  if (!append) log << "step\tmain\taux\ttotal\tper_token\tgrad_norm\n";
  log << std::setprecision(17);
  const std::size_t every = std::max<std::size_t>(1, c.log_every);
  train_loop(trainer, train, c.train.steps, [&](const LossReport& r) {
    log << r.step << '\t' << r.main << '\t' << r.aux << '\t' << r.total << '\t' << r.per_token << '\t' << r.grad_norm
        << '\n';
    if (r.step % every == 0 || r.step + 1 == c.train.steps) {
      std::cout << "step " << std::setw(5) << r.step << "  main " << std::fixed << std::setprecision(4) << r.main
                << "  aux " << r.aux << "  per-token " << r.per_token << std::defaultfloat << '\n';
    }
  });
  save_checkpoint(trainer, (out / "checkpoint.bin").string());
  std::cout << "saved " << (out / "checkpoint.bin").string() << " at step " << trainer.step() << '\n';
  return 0;
}

// ---- eval / generate ----------------------------------------------------------

Model model_from_checkpoint(RunConfig& c, const std::string& path) {
  if (path.empty()) throw ConfigError("a checkpoint is required (--checkpoint)");
  Trainer t = load_checkpoint(path);
  c.model = t.model().config;
  c.checkpoint = path;
  return t.model();
}

int cmd_eval(RunConfig c, const std::string& checkpoint, bool ground_truth) {
  const auto data = load_split(c, c.eval_split);
  EvaluationResult res;
  if (ground_truth) {
    std::vector<Prediction> preds;
    for (std::size_t e = 0; e < data.size(); ++e)
      for (std::size_t n = 0; n < data[e].events(); ++n)
        preds.push_back({e, n, n == data[e].explanation, data[e].sentences[n], data[e].sentences[n], 1.0});
    res = evaluate_predictions(std::move(preds), Vocabulary::synthetic(c.grammar.vocab_size), c.plain_cider);
  } else {
    const Model model = model_from_checkpoint(c, checkpoint.empty() ? c.checkpoint : checkpoint);
    res = evaluate_model(model, data, c.plain_cider);
  }
  const fs::path out(c.out_dir);
  write_resolved_config(c, out, ground_truth ? "eval --ground-truth" : "eval");
  write_text(out / "metrics.tsv", res.report.to_tsv());
  json j{{"split", c.eval_split},
         {"metrics", res.report.to_json()},
         {"explanation_token_accuracy", res.explanation_token_accuracy},
         {"premise_token_accuracy", res.premise_token_accuracy},
         {"mean_explanation_confidence", res.mean_explanation_confidence},
         {"cider", c.plain_cider ? "CIDEr" : "CIDEr-D"}};
  write_text(out / "metrics.json", j.dump(2) + "\n");
  std::ostringstream text;
  text << res.report.to_text() << std::fixed << std::setprecision(4)
       << "explanation token accuracy " << res.explanation_token_accuracy << '\n'
       << "premise token accuracy     " << res.premise_token_accuracy << '\n';
  write_text(out / "metrics.txt", text.str());
  std::cout << c.eval_split << " split, " << data.size() << " examples ("
            << (c.plain_cider ? "CIDEr" : "CIDEr-D") << ")\n"
            << text.str();
  return 0;
}

int cmd_generate(RunConfig c, const std::string& checkpoint, std::size_t limit) {
  const auto data = load_split(c, c.eval_split);
  const Model model = model_from_checkpoint(c, checkpoint.empty() ? c.checkpoint : checkpoint);
  const auto vocab = Vocabulary::synthetic(model.config.vocab_size);
  const fs::path out(c.out_dir);
  write_resolved_config(c, out, "generate");
  std::ofstream rec(out / "generations.jsonl");
  for (std::size_t e = 0; e < std::min(limit, data.size()); ++e) {
    const auto& ex = data[e];
    const auto stages = model.infer(synth::mask_explanation(ex));
    std::cout << "example " << e << " (" << ex.events() << " events, explanation " << ex.explanation + 1 << ")\n";
    json j{{"example", e}, {"explanation", ex.explanation}, {"stages", json::array()}};
    for (std::size_t k = 0; k < stages.size(); ++k) {
      json stage = json::array();
      for (const auto& ev : stages[k].events) stage.push_back({{"tokens", ev.tokens}, {"confidence", ev.confidence}});
      j["stages"].push_back(stage);
    }
    rec << j.dump() << '\n';
    for (std::size_t n = 0; n < ex.events(); ++n) {
      const auto& ev = stages.back().events[n];
      std::cout << (n == ex.explanation ? "  * " : "    ") << std::fixed << std::setprecision(3) << ev.confidence << "  "
                << vocab.render(ev.tokens) << "\n        ref  " << vocab.render(ex.sentences[n]) << '\n';
    }
  }
  return 0;
}

// ---- gradcheck ----------------------------------------------------------------

int cmd_gradcheck(RunConfig c, bool use_tiny, double eps, std::size_t coords, bool break_gradient) {
  ModelConfig mc = use_tiny ? ModelConfig::tiny() : c.model;
  synth::GrammarConfig gc = use_tiny ? tiny_grammar() : c.grammar;
  if (use_tiny) {
    c.model = mc;
    c.grammar = gc;
  }
  mc.validate();
  auto run = full_model_gradcheck(mc, gc, eps, {coords, c.train.seed}, break_gradient, c.train.seed, c.train.aux_weight);
  const fs::path out(c.out_dir);
  write_resolved_config(c, out, "gradcheck");
  json per = json::object();
  for (const auto& [name, err] : run.report.per_parameter) per[name] = err;
  json j{{"max_relative_error", run.report.max_relative_error},
         {"tolerance", run.tolerance},
         {"passed", run.passed()},
         {"worst_parameter", run.report.worst_parameter},
         {"worst_index", run.report.worst_index},
         {"analytic", run.report.worst_analytic},
         {"numeric", run.report.worst_numeric},
         {"coordinates", run.report.coordinates_checked},
         {"parameters", run.parameters},
         {"seconds", run.seconds},
         {"epsilon", eps},
         {"per_parameter", per}};
  write_text(out / "gradcheck.json", j.dump(2) + "\n");
  std::cout << std::setprecision(3) << "checked " << run.report.coordinates_checked << " of " << run.parameters
            << " coordinates in " << run.report.per_parameter.size() << " tensors, eps " << eps << ", " << std::fixed
            << run.seconds << " s\n"
            << std::scientific << "max relative error " << run.report.max_relative_error << " at "
            << run.report.worst_parameter << "[" << run.report.worst_index << "] (analytic " << run.report.worst_analytic
            << ", numeric " << run.report.worst_numeric << ")\n"
            << (run.passed() ? "PASS" : "FAIL") << " (tolerance " << run.tolerance << ")\n";
  return run.passed() ? 0 : kExitCheckFailed;
}

// ---- ablate -------------------------------------------------------------------

int cmd_ablate(RunConfig c) {
  c.validate();
  const auto train = load_split(c, "train");
  const auto eval = load_split(c, c.eval_split);
  const fs::path out(c.out_dir);
  write_resolved_config(c, out, "ablate");
  auto rows = run_ablation(c, train, eval, [](const std::string& v, std::size_t seed, double secs, const metrics::MetricReport& r) {
    std::cout << "  " << std::left << std::setw(32) << v << std::right << " seed " << seed << "  " << std::fixed
              << std::setprecision(1) << secs << " s  explanation CIDEr " << std::setprecision(4)
              << r.get("CIDEr", "explanation") << std::endl;
  });
  std::ostringstream tsv, text;
  tsv << "group\tvariant\tmetric\tsplit\tmedian\tstddev\tmin\tmax\tvalues\n" << std::setprecision(10);
  json j = json::array();
  text << std::left << std::setw(12) << "group" << std::setw(32) << "variant" << std::right << std::setw(20)
       << "CIDEr (expl.)" << std::setw(20) << "BLEU@4 (expl.)" << std::setw(20) << "ROUGE-L (expl.)" << '\n';
  for (const auto& row : rows) {
    text << std::left << std::setw(12) << row.group << std::setw(32) << row.name << std::right;
    json jr{{"group", row.group}, {"variant", row.name}, {"config", to_json(row.config)}, {"cells", json::array()}};
    for (const char* metric : {"CIDEr", "BLEU@4", "ROUGE-L"}) {
      for (const char* split : {"premise", "explanation", "pooled"}) {
        const auto s = row.stat(metric, split);
        tsv << row.group << '\t' << row.name << '\t' << metric << '\t' << split << '\t' << s.median << '\t' << s.stddev
            << '\t' << s.min << '\t' << s.max << '\t';
        for (std::size_t i = 0; i < s.values.size(); ++i) tsv << (i ? "," : "") << s.values[i];
        tsv << '\n';
        jr["cells"].push_back({{"metric", metric}, {"split", split}, {"median", s.median}, {"stddev", s.stddev},
                               {"min", s.min}, {"max", s.max}, {"values", s.values}});
      }
      const auto e = row.stat(metric, "explanation");
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4) << e.median << " ± " << std::setprecision(4) << e.stddev;
      text << std::setw(21) << cell.str();
    }
    text << '\n';
    j.push_back(jr);
  }
  write_text(out / "ablation.tsv", tsv.str());
  write_text(out / "ablation.json", j.dump(2) + "\n");
  text << "\ncells: median ± sample standard deviation over " << c.ablate.seeds << " seeds, " << c.ablate.steps
       << " steps each, " << c.eval_split << " split\n";
  write_text(out / "ablation.txt", text.str());
  std::cout << '\n' << text.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"REASONER encoder-decoder on synthetic abductive event sequences"};
  app.require_subcommand(1);

  CommonOptions gen_o, train_o, eval_o, gen_text_o, grad_o, ablate_o;

  auto* gen = app.add_subcommand("gen-data", "generate train/val/test splits and statistics");
  add_common(gen, gen_o);
  std::optional<std::uint64_t> gen_seed;
  std::vector<std::size_t> n_range;
  std::string gen_out;
  gen->add_option("--seed", gen_seed, "data seed");
  gen->add_option("--n-range", n_range, "min and max events per example")->expected(2);
  gen->add_option("-o,--out", gen_out, "output directory (data_dir)");

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint and loss log");
  add_common(train, train_o);
  std::optional<std::size_t> steps, k;
  std::optional<std::uint64_t> train_seed;
  std::string resume, train_out;
  train->add_option("--steps", steps, "train until this step count");
  train->add_option("--k", k, "refinement stages K");
  train->add_option("--seed", train_seed, "training seed");
  train->add_option("--resume", resume, "continue from a checkpoint");
  train->add_option("-o,--out", train_out, "run directory");

  auto* eval = app.add_subcommand("eval", "score greedy generations (premise / explanation / pooled)");
  add_common(eval, eval_o);
  std::string eval_ckpt, eval_split, eval_out;
  bool plain_cider = false, ground_truth = false;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  eval->add_option("--split", eval_split, "train | val | test");
  eval->add_option("-o,--out", eval_out, "output directory");
  eval->add_flag("--plain-cider", plain_cider, "plain CIDEr instead of CIDEr-D");
  eval->add_flag("--ground-truth", ground_truth, "score references against themselves");

  auto* generate = app.add_subcommand("generate", "print generated sentences for a split");
  add_common(generate, gen_text_o);
  std::string gen_ckpt, gen_split, gen_text_out;
  std::size_t limit = 5;
  generate->add_option("--checkpoint", gen_ckpt, "checkpoint file");
  generate->add_option("--split", gen_split, "train | val | test");
  generate->add_option("--limit", limit, "examples to show");
  generate->add_option("-o,--out", gen_text_out, "output directory");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient");
  add_common(grad, grad_o);
  double eps = 3e-5;
  std::size_t coords = 0;
  bool from_config = false, break_gradient = false;
  std::string grad_out;
  grad->add_option("--eps", eps, "central-difference step")->check(CLI::Range(1e-7, 1e-3));
  grad->add_option("--coords", coords, "coordinates sampled per tensor (0 = all)");
  grad->add_flag("--from-config", from_config, "check the configured model instead of the tiny one");
  grad->add_flag("--break-gradient", break_gradient, "inject a wrong backward rule (negative control)");
  grad->add_option("-o,--out", grad_out, "output directory");

  auto* ablate = app.add_subcommand("ablate", "ablation matrix, medians over seeds");
  add_common(ablate, ablate_o);
  std::optional<std::size_t> seeds, ablate_steps;
  std::string ablate_out;
  ablate->add_option("--seeds", seeds, "seeds per cell");
  ablate->add_option("--steps", ablate_steps, "training steps per run");
  ablate->add_option("-o,--out", ablate_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) {
      auto c = resolve(gen_o);
      if (gen_seed) c.data_seed = *gen_seed;
      if (!n_range.empty()) {
        c.grammar.min_events = n_range[0];
        c.grammar.max_events = n_range[1];
      }
      if (!gen_out.empty()) c.data_dir = gen_out;
      return cmd_gen_data(c);
    }
    if (*train) {
      auto c = resolve(train_o);
      if (steps) c.train.steps = *steps;
      if (k) c.model.cascade = *k;
      if (train_seed) c.train.seed = *train_seed;
      if (!train_out.empty()) c.out_dir = train_out;
      return cmd_train(c, resume);
    }
    if (*eval) {
      auto c = resolve(eval_o);
      if (!eval_split.empty()) c.eval_split = eval_split;
      if (!eval_out.empty()) c.out_dir = eval_out;
      if (plain_cider) c.plain_cider = true;
      return cmd_eval(c, eval_ckpt, ground_truth);
    }
    if (*generate) {
      auto c = resolve(gen_text_o);
      if (!gen_split.empty()) c.eval_split = gen_split;
      if (!gen_text_out.empty()) c.out_dir = gen_text_out;
      return cmd_generate(c, gen_ckpt, limit);
    }
    if (*grad) {
      auto c = resolve(grad_o);
      if (!grad_out.empty()) c.out_dir = grad_out;
      return cmd_gradcheck(c, !from_config, eps, coords, break_gradient);
    }
    if (*ablate) {
      auto c = resolve(ablate_o);
      if (seeds) c.ablate.seeds = *seeds;
      if (ablate_steps) c.ablate.steps = *ablate_steps;
      if (!ablate_out.empty()) c.out_dir = ablate_out;
      return cmd_ablate(c);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
