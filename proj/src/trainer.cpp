#include "prodisc/trainer.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "prodisc/checkpoint.hpp"
#include "prodisc/config.hpp"
#include "prodisc/data.hpp"
#include "prodisc/evalkit.hpp"
#include "prodisc/losses.hpp"
#include "prodisc/model.hpp"
#include "prodisc/optim.hpp"
#include "prodisc/rng.hpp"

namespace prodisc {

namespace fs = std::filesystem;

namespace {

constexpr int kCheckpointEveryEpochs = 10;
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool uses_pil(Ablation a) { return a == Ablation::pil || a == Ablation::full; }
bool uses_pide(Ablation a) { return a == Ablation::pide || a == Ablation::full; }

}  // namespace

Ablation parse_ablation(const std::string& name) {
  if (name == "baseline") return Ablation::baseline;
  if (name == "pil") return Ablation::pil;
  if (name == "pide") return Ablation::pide;
  if (name == "full") return Ablation::full;
  throw ConfigError("ablation must be one of baseline|pil|pide|full, got '" +
                    name + "'");
}

std::string ablation_name(Ablation a) {
  switch (a) {
    case Ablation::baseline: return "baseline";
    case Ablation::pil: return "pil";
    case Ablation::pide: return "pide";
    case Ablation::full: return "full";
  }
  return "?";
}

void TrainConfig::apply(std::map<std::string, std::string> kv,
                        const std::string& source) {
  ConfigMap cm(std::move(kv), source);
  d = cm.take_int("d", d);
  k = cm.take_int("k", k);
  h = cm.take_int("h", h);
  tau_p = cm.take_double("tau_p", tau_p);
  tau_c = cm.take_double("tau_c", tau_c);
  lambda = cm.take_double("lambda", lambda);
  lr = cm.take_double("lr", lr);
  batch_size = cm.take_int("batch_size", batch_size);
  epochs = cm.take_int("epochs", epochs);
  seed = cm.take_u64("seed", seed);
  ablation = parse_ablation(cm.take_string("ablation", ablation_name(ablation)));
  corpus_dir = cm.take_string("corpus_dir", corpus_dir);
  out_dir = cm.take_string("out_dir", out_dir);
  clip_grad_norm = cm.take_double("clip_grad_norm", clip_grad_norm);
  mil_top_k = cm.take_int("mil_top_k", mil_top_k);
  cm.finish();
}

void TrainConfig::validate() const {
  if (d < 0) throw ConfigError("d must be >= 0 (0 infers from the corpus)");
  if (k < 1 || h < 1) throw ConfigError("k and h must be >= 1");
  if (!(tau_p > 0.0) || !(tau_c > 0.0)) throw ConfigError("temperatures must be > 0");
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (clip_grad_norm < 0.0) throw ConfigError("clip_grad_norm must be >= 0");
  if (mil_top_k < 1) throw ConfigError("mil_top_k must be >= 1");
  if (corpus_dir.empty()) throw ConfigError("corpus_dir is required");
  if (out_dir.empty()) throw ConfigError("out_dir is required");
}

namespace {

struct Corpus {
  std::vector<FeatureBag> train;
  std::vector<FeatureBag> test;  // empty when the corpus has no test split
  int d{0};
};

Corpus load_corpus(const TrainConfig& cfg) {
  Corpus corpus;
  const fs::path root(cfg.corpus_dir);
  corpus.train = load_bags((root / "train_manifest.txt").string());
  if (corpus.train.empty()) {
    throw ConfigError(cfg.corpus_dir + ": train manifest lists no bags");
  }
  if (fs::exists(root / "test_manifest.txt")) {
    corpus.test = load_bags((root / "test_manifest.txt").string());
  }
  corpus.d = static_cast<int>(corpus.train[0].d);
  if (cfg.d != 0 && cfg.d != corpus.d) {
    throw ConfigError("config d=" + std::to_string(cfg.d) +
                      " does not match corpus D=" + std::to_string(corpus.d));
  }
  return corpus;
}

OptimizerSnapshot snapshot_of(const Adam<float>& adam, uint32_t next_epoch) {
  OptimizerSnapshot snap;
  snap.next_epoch = next_epoch;
  snap.step_count = adam.step_count();
  snap.first_moments = adam.first_moments();
  snap.second_moments = adam.second_moments();
  return snap;
}

double auc_or_nan(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.empty()) return kNan;
  try {
    return compute_auc(scores, labels);
  } catch (const EvalUndefinedError&) {
    return kNan;
  }
}

TrainResult run_training(ModelParams<float>& params, Adam<float>& adam,
                         int start_epoch, const TrainConfig& cfg,
                         const Corpus& corpus, bool append_log,
                         const std::string& initial_checkpoint = "") {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) {
    throw IoError(IoError::Kind::open_failed, cfg.out_dir + ": cannot create");
  }
  const std::string log_path = (fs::path(cfg.out_dir) / "train_log.jsonl").string();
  std::ofstream log(log_path, std::ios::binary |
                                  (append_log ? std::ios::app : std::ios::trunc));
  if (!log) {
    throw IoError(IoError::Kind::open_failed, log_path + ": cannot open");
  }

  const std::string last_path =
      (fs::path(cfg.out_dir) / "checkpoint_last.pdvh").string();
  const std::string final_path =
      (fs::path(cfg.out_dir) / "checkpoint_final.pdvh").string();
  std::string last_good = initial_checkpoint;

  const bool pil_on = uses_pil(cfg.ablation);
  const double lambda_eff = uses_pide(cfg.ablation) ? cfg.lambda : 0.0;
  auto named = params.named_params();

  TrainResult result;
  result.final_train_auc = kNan;
  result.final_test_auc = kNan;
  uint64_t step = adam.step_count();

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    const auto order = shuffle_rng.permutation(corpus.train.size());

    double sum_mil = 0.0, sum_pide = 0.0, sum_total = 0.0;
    size_t batches = 0;
    std::vector<double> epoch_scores;
    std::vector<int> epoch_labels;

    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      std::vector<const FeatureBag*> chunk;
      chunk.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) chunk.push_back(&corpus.train[order[i]]);

      try {
        auto batch = assemble_batch<float>(chunk);
        auto fwd = forward(batch.features, params, pil_on);
        auto l_mil = mil_loss(fwd.scores, batch.labels, batch.lengths,
                              static_cast<size_t>(cfg.mil_top_k));
        Tensor<float> l_pide = Tensor<float>::scalar(0.0f);
        if (lambda_eff != 0.0) {
          const auto selection = select_extremes(fwd.scores, batch.lengths);
          l_pide = pide_loss(fwd.enhanced, selection, static_cast<float>(cfg.tau_c));
        }
        Tensor<float> l_total =
            lambda_eff != 0.0
                ? add(l_mil, scale(l_pide, static_cast<float>(lambda_eff)))
                : l_mil;

        adam.zero_grad();
        backward(l_total);
        if (cfg.clip_grad_norm > 0.0) {
          clip_grad_norm(named, static_cast<float>(cfg.clip_grad_norm));
        }
        adam.step();
        ++step;

        LossBreakdown losses;
        losses.l_mil = static_cast<double>(l_mil.item());
        losses.l_pide = static_cast<double>(l_pide.item());
        losses.lambda = lambda_eff;
        losses.l_total = static_cast<double>(l_total.item());
        sum_mil += losses.l_mil;
        sum_pide += losses.l_pide;
        sum_total += losses.l_total;
        ++batches;

        nlohmann::json j;
        j["epoch"] = epoch;
        j["step"] = step;
        j["l_mil"] = losses.l_mil;
        j["l_pide"] = losses.l_pide;
        j["lambda"] = losses.lambda;
        j["l_total"] = losses.l_total;
        log << j.dump() << "\n";

        const auto sv = fwd.scores.values();
        const size_t t_max = fwd.scores.dim(1);
        for (size_t b = 0; b < batch.size(); ++b) {
          if (batch.frame_labels[b].empty()) continue;
          for (int i = 0; i < batch.lengths[b]; ++i) {
            epoch_scores.push_back(static_cast<double>(sv[b * t_max + i]));
            epoch_labels.push_back(batch.frame_labels[b][i]);
          }
        }
      } catch (const NumericError& e) {
        nlohmann::json j;
        j["epoch"] = epoch;
        j["step"] = step;
        j["error"] = e.what();
        log << j.dump() << "\n";
        throw NumericError(std::string(e.what()) + " (aborted at epoch " +
                           std::to_string(epoch) + "; last good checkpoint: " +
                           (last_good.empty() ? "none" : last_good) + ")");
      }
    }

    const double train_auc = auc_or_nan(epoch_scores, epoch_labels);
    result.final_train_auc = train_auc;

    nlohmann::json j;
    j["epoch"] = epoch;
    j["epoch_end"] = true;
    j["mean_l_mil"] = batches ? sum_mil / static_cast<double>(batches) : 0.0;
    j["mean_l_pide"] = batches ? sum_pide / static_cast<double>(batches) : 0.0;
    j["mean_l_total"] = batches ? sum_total / static_cast<double>(batches) : 0.0;
    j["train_auc"] = train_auc;
    log << j.dump() << "\n";

    if ((epoch + 1) % kCheckpointEveryEpochs == 0) {
      const auto snap = snapshot_of(adam, static_cast<uint32_t>(epoch + 1));
      write_checkpoint(last_path, params, &snap);
      last_good = last_path;
    }
  }

  const auto snap = snapshot_of(adam, static_cast<uint32_t>(cfg.epochs));
  write_checkpoint(final_path, params, &snap);
  result.final_checkpoint = final_path;
  result.epochs_completed = cfg.epochs;
  result.steps = adam.step_count();

  if (!corpus.test.empty()) {
    try {
      result.final_test_auc = evaluate(params, corpus.test, pil_on).auc;
    } catch (const EvalUndefinedError&) {
    } catch (const ConfigError&) {
      // test bags without frame labels: leave the AUC undefined
    }
  }

  nlohmann::json j;
  j["run_end"] = true;
  j["epochs"] = cfg.epochs;
  j["steps"] = adam.step_count();
  j["final_train_auc"] = result.final_train_auc;
  j["final_test_auc"] = result.final_test_auc;
  j["checkpoint"] = result.final_checkpoint;
  log << j.dump() << "\n";
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  ModelParams<float> params =
      init_params<float>(corpus.d, cfg.k, cfg.h, cfg.seed,
                         static_cast<float>(cfg.tau_p));
  Adam<float> adam(params.named_params(),
                   AdamConfig<float>{static_cast<float>(cfg.lr), 0.9f, 0.999f, 1e-8f});
  return run_training(params, adam, 0, cfg, corpus, /*append_log=*/false);
}

TrainResult resume(const std::string& checkpoint_path, const TrainConfig& cfg) {
  cfg.validate();
  const Corpus corpus = load_corpus(cfg);
  Checkpoint ckpt = read_checkpoint(checkpoint_path);
  if (!ckpt.optimizer) {
    throw ConfigError(checkpoint_path +
                      ": no optimizer state; cannot resume from an "
                      "inference checkpoint");
  }
  if (ckpt.params.d != corpus.d) {
    throw ConfigError("resume: checkpoint D=" + std::to_string(ckpt.params.d) +
                      " does not match corpus D=" + std::to_string(corpus.d));
  }
  if (ckpt.params.k != cfg.k || ckpt.params.h != cfg.h) {
    throw ConfigError("resume: checkpoint K=" + std::to_string(ckpt.params.k) +
                      " H=" + std::to_string(ckpt.params.h) +
                      " does not match config K=" + std::to_string(cfg.k) +
                      " H=" + std::to_string(cfg.h));
  }
  ModelParams<float> params = std::move(ckpt.params);
  params.bank.tau_p = static_cast<float>(cfg.tau_p);
  Adam<float> adam(params.named_params(),
                   AdamConfig<float>{static_cast<float>(cfg.lr), 0.9f, 0.999f, 1e-8f});
  adam.restore(ckpt.optimizer->step_count, std::move(ckpt.optimizer->first_moments),
               std::move(ckpt.optimizer->second_moments));
  const int start_epoch = static_cast<int>(ckpt.optimizer->next_epoch);
  if (start_epoch >= cfg.epochs) {
    throw ConfigError("resume: checkpoint already covers epoch " +
                      std::to_string(start_epoch) + " of " +
                      std::to_string(cfg.epochs));
  }
  return run_training(params, adam, start_epoch, cfg, corpus, /*append_log=*/true,
                      checkpoint_path);
}

}  // namespace prodisc
