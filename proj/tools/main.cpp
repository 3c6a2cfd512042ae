// Command-line front end: corpus synthesis, training, evaluation, per-bag
// scoring, and enhanced-feature dumps.
//
// Exit codes: 0 ok, 1 I/O, 2 configuration, 3 evaluation undefined,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "prodisc/checkpoint.hpp"
#include "prodisc/config.hpp"
#include "prodisc/data.hpp"
#include "prodisc/evalkit.hpp"
#include "prodisc/trainer.hpp"

namespace {

using namespace prodisc;

struct SynthFlags {
  std::string config_path;
  std::string out_dir;
  int seed{-1};
  int d{-1};
  double rho{-1.0};
  double delta{-1.0};
  double sigma{-1.0};
  int t_min{-1};
  int t_max{-1};
  int train_bags{-1};
  int test_bags{-1};
  int clusters{-1};
};

int run_synth(const SynthFlags& f) {
  SynthConfig cfg;
  if (!f.config_path.empty()) {
    apply_synth_config(cfg, parse_key_value_file(f.config_path), f.config_path);
  }
  if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
  if (f.d >= 0) cfg.d = f.d;
  if (f.rho >= 0.0) cfg.rho = f.rho;
  if (f.delta >= 0.0) cfg.delta = f.delta;
  if (f.sigma >= 0.0) cfg.sigma = f.sigma;
  if (f.t_min >= 0) cfg.t_min = f.t_min;
  if (f.t_max >= 0) cfg.t_max = f.t_max;
  if (f.train_bags >= 0) cfg.train_bags_per_class = f.train_bags;
  if (f.test_bags >= 0) cfg.test_bags_per_class = f.test_bags;
  if (f.clusters >= 0) cfg.normal_clusters = f.clusters;

  const auto corpus = generate_synthetic(cfg);
  write_corpus(corpus, f.out_dir);
  std::cout << "wrote " << corpus.train.size() << " train bags and "
            << corpus.test.size() << " test bags to " << f.out_dir << "\n";
  return 0;
}

struct TrainFlags {
  std::string config_path;
  std::string corpus_dir;
  std::string out_dir;
  std::string ablation;
  std::string resume_from;
  std::map<std::string, std::string> overrides;
};

int run_train(const TrainFlags& f) {
  TrainConfig cfg;
  if (!f.config_path.empty()) {
    cfg.apply(parse_key_value_file(f.config_path), f.config_path);
  }
  if (!f.corpus_dir.empty()) cfg.corpus_dir = f.corpus_dir;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  if (!f.ablation.empty()) cfg.ablation = parse_ablation(f.ablation);
  if (!f.overrides.empty()) cfg.apply(f.overrides, "command line");

  const TrainResult result = f.resume_from.empty()
                                 ? train(cfg)
                                 : resume(f.resume_from, cfg);
  std::cout << "checkpoint: " << result.final_checkpoint << "\n";
  std::cout << "train AUC: " << result.final_train_auc << "\n";
  std::cout << "test AUC: " << result.final_test_auc << "\n";
  return 0;
}

ModelParams<float> load_model(const std::string& checkpoint_path, double tau_p) {
  auto ckpt = read_checkpoint(checkpoint_path);
  ckpt.params.bank.tau_p = static_cast<float>(tau_p);
  return std::move(ckpt.params);
}

int run_eval(const std::string& checkpoint_path, const std::string& manifest,
             const std::string& out_dir, const std::string& ablation,
             double tau_p, int smooth_window) {
  const auto params = load_model(checkpoint_path, tau_p);
  const bool pil_on = parse_ablation(ablation) == Ablation::pil ||
                      parse_ablation(ablation) == Ablation::full;
  const auto bags = load_bags(manifest);
  auto report = evaluate(params, bags, pil_on, smooth_window);
  report.checkpoint_path = checkpoint_path;
  report.manifest_path = manifest;
  const auto scores = score_bags(params, bags, pil_on);
  write_eval_outputs(report, bags, scores, out_dir);
  std::cout << "auc: " << std::setprecision(17) << report.auc << " (" << report.n_pos
            << " positive, " << report.n_neg << " negative instances)\n";
  std::cout << "report: " << out_dir << "/report.json\n";
  return 0;
}

int run_score(const std::string& checkpoint_path, const std::string& bag_path,
              const std::string& out_csv, const std::string& ablation,
              double tau_p) {
  const auto params = load_model(checkpoint_path, tau_p);
  const bool pil_on = parse_ablation(ablation) == Ablation::pil ||
                      parse_ablation(ablation) == Ablation::full;
  const auto bag = read_bag(bag_path);
  const std::vector<FeatureBag> bags{bag};
  const auto scores = score_bags(params, bags, pil_on);

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_csv.empty()) {
    file.open(out_csv, std::ios::binary | std::ios::trunc);
    if (!file) {
      throw IoError(IoError::Kind::open_failed, out_csv + ": cannot open");
    }
    out = &file;
  }
  *out << std::setprecision(17);
  for (uint32_t i = 0; i < bag.t; ++i) {
    *out << i << "," << scores[0][i] << "\n";
  }
  return 0;
}

int run_dump(const std::string& checkpoint_path, const std::string& manifest,
             const std::string& out_csv, const std::string& ablation,
             double tau_p) {
  const auto params = load_model(checkpoint_path, tau_p);
  const bool pil_on = parse_ablation(ablation) == Ablation::pil ||
                      parse_ablation(ablation) == Ablation::full;
  const auto bags = load_bags(manifest);
  dump_features(params, bags, pil_on, out_csv);
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Weakly-supervised anomaly-detection head on pre-extracted "
               "per-frame features: prototype-attention enhancement with "
               "extreme-instance contrastive training"};
  app.require_subcommand(1);

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus");
  synth_cmd->add_option("--config", synth.config_path, "Synthesis config file");
  synth_cmd->add_option("--out", synth.out_dir, "Output corpus directory")
      ->required();
  synth_cmd->add_option("--seed", synth.seed, "Override: RNG seed");
  synth_cmd->add_option("--d", synth.d, "Override: feature dimension");
  synth_cmd->add_option("--rho", synth.rho, "Override: anomaly ratio (0, 0.5]");
  synth_cmd->add_option("--delta", synth.delta, "Override: anomaly offset");
  synth_cmd->add_option("--sigma", synth.sigma, "Override: noise scale");
  synth_cmd->add_option("--t-min", synth.t_min, "Override: min bag length");
  synth_cmd->add_option("--t-max", synth.t_max, "Override: max bag length");
  synth_cmd->add_option("--train-bags", synth.train_bags,
                        "Override: train bags per class");
  synth_cmd->add_option("--test-bags", synth.test_bags,
                        "Override: test bags per class");
  synth_cmd->add_option("--clusters", synth.clusters,
                        "Override: normal cluster count");

  TrainFlags tr;
  std::vector<std::string> train_sets;
  auto* train_cmd = app.add_subcommand("train", "Train on a corpus");
  train_cmd->add_option("--config", tr.config_path, "Training config file");
  train_cmd->add_option("--corpus", tr.corpus_dir, "Corpus directory");
  train_cmd->add_option("--out", tr.out_dir, "Output directory");
  train_cmd->add_option("--ablation", tr.ablation,
                        "baseline | pil | pide | full");
  train_cmd->add_option("--resume", tr.resume_from,
                        "Continue from a training checkpoint");
  train_cmd->add_option("--set", train_sets,
                        "Override any config key, e.g. --set lr=0.01");

  std::string ckpt_path, manifest_path, out_path, bag_path;
  std::string ablation = "full";
  double tau_p = 0.1;
  int smooth_window = 0;

  auto* eval_cmd = app.add_subcommand("eval", "Frame-level AUC over a corpus");
  eval_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  eval_cmd->add_option("--corpus", manifest_path, "Corpus manifest file")
      ->required();
  eval_cmd->add_option("--out", out_path, "Output directory")->required();
  eval_cmd->add_option("--ablation", ablation, "Forward mode used in training");
  eval_cmd->add_option("--tau-p", tau_p, "Attention temperature");
  eval_cmd->add_option("--smooth", smooth_window,
                       "Moving-average window over score curves before AUC "
                       "(0 = off)");

  auto* score_cmd = app.add_subcommand("score", "Score one bag file");
  score_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  score_cmd->add_option("--bag", bag_path, "Bag file")->required();
  score_cmd->add_option("--out", out_path, "CSV path (default: stdout)");
  score_cmd->add_option("--ablation", ablation, "Forward mode used in training");
  score_cmd->add_option("--tau-p", tau_p, "Attention temperature");

  auto* dump_cmd =
      app.add_subcommand("dump-features", "Export enhanced instance features");
  dump_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  dump_cmd->add_option("--corpus", manifest_path, "Corpus manifest file")
      ->required();
  dump_cmd->add_option("--out", out_path, "CSV path")->required();
  dump_cmd->add_option("--ablation", ablation, "Forward mode used in training");
  dump_cmd->add_option("--tau-p", tau_p, "Attention temperature");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (synth_cmd->parsed()) return run_synth(synth);
  if (train_cmd->parsed()) {
    for (const auto& kv : train_sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      }
      tr.overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    return run_train(tr);
  }
  if (eval_cmd->parsed()) {
    return run_eval(ckpt_path, manifest_path, out_path, ablation, tau_p,
                    smooth_window);
  }
  if (score_cmd->parsed()) {
    return run_score(ckpt_path, bag_path, out_path, ablation, tau_p);
  }
  if (dump_cmd->parsed()) {
    return run_dump(ckpt_path, manifest_path, out_path, ablation, tau_p);
  }
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 2;
  } catch (const EvalUndefinedError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
