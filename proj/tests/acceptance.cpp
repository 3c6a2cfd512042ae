// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Expensive experiments run on deterministic seeds, so the
// verdicts are stable from run to run.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "../tests/oracles.hpp"
#include "prodisc/checkpoint.hpp"
#include "prodisc/data.hpp"
#include "prodisc/evalkit.hpp"
#include "prodisc/gradcheck.hpp"
#include "prodisc/losses.hpp"
#include "prodisc/model.hpp"
#include "prodisc/trainer.hpp"

using namespace prodisc;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int criterion, const char* name, bool passed, const std::string& detail) {
  std::printf("[%s] %d. %s: %s\n", passed ? "PASS" : "FAIL", criterion, name,
              detail.c_str());
  std::fflush(stdout);
  if (!passed) ++failures;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("prodisc_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// 1. Gradient fidelity: finite differences of the total objective w.r.t.
//    every parameter block on seeded 2-bag batches, 64-bit, <= 1e-4.
void criterion_gradient_fidelity() {
  const auto start = Clock::now();
  double worst = 0.0;
  bool ok = true;
  size_t coords = 0;
  for (uint64_t seed : {101u, 202u, 303u}) {
    auto params = init_params<double>(8, 3, 8, seed);
    Rng rng(seed ^ 0xabcd);
    std::vector<double> vals(2 * 6 * 8);
    for (auto& v : vals) v = rng.normal();
    auto feats = Tensor<double>::from_values({2, 6, 8}, std::move(vals));
    const std::vector<int> labels = {1, 0};
    const std::vector<int> lengths = {6, 5};

    const auto loss_fn = [&]() {
      auto fwd = forward(feats, params, true);
      auto l_mil = mil_loss(fwd.scores, labels, lengths);
      const auto sel = select_extremes(fwd.scores, lengths);
      auto l_pide = pide_loss(fwd.enhanced, sel, 0.1);
      return add(l_mil, scale(l_pide, 5.0));
    };
    const auto rep = check_gradients(loss_fn, params.named_params(), 1e-4, 1e-4);
    worst = std::max(worst, rep.max_rel_err);
    coords += rep.coords_checked;
    ok = ok && rep.passed;
  }
  const double elapsed = seconds_since(start);
  ok = ok && elapsed < 60.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max rel err %.2e over %zu coordinates in %.1fs (tol 1e-4, budget 60s)",
                worst, coords, elapsed);
  report(1, "gradient fidelity of the total objective", ok, detail);
}

// ---------------------------------------------------------------------------
// 2. Contrastive loss equals the brute-force reference on randomized batches.
void criterion_pide_oracle() {
  const auto start = Clock::now();
  Rng rng(404);
  double worst = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const int b = rng.uniform_int(2, 8);
    const int t_max = rng.uniform_int(2, 40);
    std::vector<int> lengths;
    for (int i = 0; i < b; ++i) lengths.push_back(rng.uniform_int(2, t_max));
    const size_t d = static_cast<size_t>(rng.uniform_int(3, 16));

    std::vector<double> feat_vals(static_cast<size_t>(b) * t_max * d);
    for (auto& v : feat_vals) v = 2.0 * rng.normal();
    auto feats = Tensor<double>::from_values(
        {static_cast<size_t>(b), static_cast<size_t>(t_max), d},
        std::move(feat_vals));
    std::vector<double> score_vals(static_cast<size_t>(b) * t_max, 0.0);
    for (int bag = 0; bag < b; ++bag) {
      for (int i = 0; i < lengths[bag]; ++i) {
        score_vals[static_cast<size_t>(bag) * t_max + i] = rng.uniform(0.0, 1.0);
      }
    }
    auto scores = Tensor<double>::from_values(
        {static_cast<size_t>(b), static_cast<size_t>(t_max), 1},
        std::move(score_vals));

    const auto sel = select_extremes(scores, lengths);
    const double got = pide_loss(feats, sel, 0.1).item();
    std::vector<std::vector<double>> gathered;
    std::vector<int> labels;
    const auto fv = feats.values();
    for (const auto& e : sel.entries) {
      const size_t base = (e.bag * static_cast<size_t>(t_max) + e.instance) * d;
      gathered.emplace_back(fv.begin() + base, fv.begin() + base + d);
      labels.push_back(e.pseudo_label);
    }
    const double want = sel.count() < 2
                            ? 0.0
                            : oracles::supcon_reference(gathered, labels, 0.1, 1e-8);
    worst = std::max(worst, std::abs(got - want));
    ++checked;
  }
  const double elapsed = seconds_since(start);
  const bool ok = worst <= 1e-5 && checked >= 100 && elapsed < 60.0;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "max |impl - reference| %.2e over %d batches in %.1fs (tol 1e-5)",
                worst, checked, elapsed);
  report(2, "contrastive loss matches brute-force reference", ok, detail);
}

// ---------------------------------------------------------------------------
// 3. Selection edge cases.
void criterion_selection_edge_cases() {
  bool ok = true;

  // single-instance bag contributes nothing
  auto single = Tensor<double>::from_values({1, 1, 1}, {0.9});
  ok = ok && select_extremes(single, {1}).count() == 0;

  // constant scores collapse argmax and argmin onto index 0: skipped
  auto constant = Tensor<double>::from_values({1, 4, 1}, {0.5, 0.5, 0.5, 0.5});
  ok = ok && select_extremes(constant, {4}).count() == 0;

  // below two selected instances the loss is exactly zero
  Rng rng(505);
  std::vector<double> vals(2 * 4 * 6);
  for (auto& v : vals) v = rng.normal();
  auto feats = Tensor<double>::from_values({2, 4, 6}, std::move(vals));
  auto degenerate = Tensor<double>::from_values(
      {2, 4, 1}, {0.5, 0.5, 0.5, 0.5, 0.7, 0.0, 0.0, 0.0});
  const auto sel = select_extremes(degenerate, {4, 1});
  ok = ok && sel.count() == 0;
  ok = ok && pide_loss(feats, sel, 0.1).item() == 0.0;

  // one informative bag: two selections, no positive pairs, eps-guarded zero
  auto informative = Tensor<double>::from_values(
      {2, 4, 1}, {0.5, 0.5, 0.5, 0.5, 0.9, 0.1, 0.4, 0.4});
  const auto sel2 = select_extremes(informative, {4, 4});
  ok = ok && sel2.count() == 2;
  ok = ok && pide_loss(feats, sel2, 0.1).item() == 0.0;

  report(3, "extreme-selection edge cases", ok,
         ok ? "T=1 bags, constant bags, and |selection|<2 all handled"
            : "edge case mismatch");
}

// ---------------------------------------------------------------------------
// 4. AUC against exhaustive pair counting, ties included.
void criterion_auc_oracle() {
  Rng rng(606);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const size_t n = trial < 38 ? static_cast<size_t>(rng.uniform_int(100, 4000))
                                : 10000;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (size_t i = 0; i < n; ++i) {
      scores[i] = std::round(rng.uniform(0.0, 1.0) * 64.0) / 64.0;
      labels[i] = rng.uniform() < 0.25 ? 1 : 0;
    }
    labels[0] = 1;
    labels[n - 1] = 0;
    worst = std::max(worst, std::abs(compute_auc(scores, labels) -
                                     oracles::auc_pair_counting(scores, labels)));
  }
  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "max deviation %.2e over 40 randomized inputs up to 10000 points",
                worst);
  report(4, "rank AUC matches pair counting", worst <= 1e-9, detail);
}

// ---------------------------------------------------------------------------
// 5. Parameter count at the default configuration.
void criterion_parameter_count() {
  const auto params = init_params<float>(512, 5, 256, 1);
  size_t total = 0;
  for (const auto& [name, p] : params.named_params()) total += p.size();
  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "D=512 K=5 H=256 -> %zu scalars (expected 399361, ~0.4M)", total);
  report(5, "default parameter count", total == 399361 &&
             params.parameter_count() == 399361, detail);
}

// ---------------------------------------------------------------------------
// 6. Desk-scale learning: full model on the default corpus reaches test
//    frame-level AUC >= 0.95 within 50 epochs in under 5 minutes.
void criterion_desk_scale_learning() {
  const auto start = Clock::now();
  const auto corpus_dir = scratch("corpus_default");
  const auto out_dir = scratch("run_default");
  write_corpus(generate_synthetic(SynthConfig{}), corpus_dir.string());
  const auto test_bags = load_bags((corpus_dir / "test_manifest.txt").string());

  TrainConfig cfg;
  cfg.corpus_dir = corpus_dir.string();
  cfg.out_dir = out_dir.string();
  cfg.seed = 1;

  double auc = 0.0;
  int epochs_used = 0;
  int epochs_trained = 0;
  // train in 5-epoch slices and stop at the first evaluation >= 0.95, but run
  // at least 10 epochs so the loss-progress property below has material
  for (int target = 5; target <= 50; target += 5) {
    cfg.epochs = target;
    const auto result = target == 5
                            ? train(cfg)
                            : resume((out_dir / "checkpoint_final.pdvh").string(), cfg);
    auto params = read_checkpoint(result.final_checkpoint).params;
    params.bank.tau_p = static_cast<float>(cfg.tau_p);
    const double slice_auc = evaluate(params, test_bags, true).auc;
    epochs_trained = target;
    if (epochs_used == 0 && slice_auc >= 0.95) {
      auc = slice_auc;
      epochs_used = target;
    }
    if (epochs_used > 0 && epochs_trained >= 10) break;
    if (epochs_used == 0) auc = slice_auc;
  }

  // training makes progress: mean l_total over the last five epochs is below
  // the mean over the first five
  double first5 = 0.0, last5 = 0.0;
  {
    std::vector<double> epoch_totals;
    std::ifstream log(out_dir / "train_log.jsonl");
    std::string line;
    while (std::getline(log, line)) {
      const auto key = line.find("\"mean_l_total\":");
      if (key == std::string::npos) continue;
      epoch_totals.push_back(std::stod(line.substr(key + 15)));
    }
    for (int i = 0; i < 5 && i < static_cast<int>(epoch_totals.size()); ++i) {
      first5 += epoch_totals[static_cast<size_t>(i)];
      last5 += epoch_totals[epoch_totals.size() - 1 - static_cast<size_t>(i)];
    }
  }

  const double elapsed = seconds_since(start);
  const bool ok = auc >= 0.95 && epochs_used > 0 && epochs_used <= 50 &&
                  last5 < first5 && elapsed < 300.0;
  char detail[200];
  std::snprintf(detail, sizeof(detail),
                "test AUC %.4f after %d epochs, loss %.3f -> %.3f over %d "
                "epochs, %.1fs (needs AUC >= 0.95 within 50 epochs, < 300s)",
                auc, epochs_used, first5 / 5.0, last5 / 5.0, epochs_trained,
                elapsed);
  report(6, "desk-scale learning on the default corpus", ok, detail);
  fs::remove_all(corpus_dir);
  fs::remove_all(out_dir);
}

// ---------------------------------------------------------------------------
// 7. Ablation ordering over 5 seeds: median AUC(full) >= median of the
//    baseline and of each single-component ablation.
void criterion_ablation_ordering() {
  const auto corpus_dir = scratch("corpus_ablation");
  const auto out_dir = scratch("run_ablation");
  SynthConfig synth;
  synth.d = 32;
  synth.train_bags_per_class = 60;
  synth.test_bags_per_class = 20;
  synth.t_min = 20;
  synth.t_max = 40;
  synth.delta = 1.0;
  synth.rho = 0.05;
  synth.seed = 77;
  write_corpus(generate_synthetic(synth), corpus_dir.string());

  const auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };

  std::vector<double> medians;
  std::string detail;
  for (const Ablation mode :
       {Ablation::full, Ablation::baseline, Ablation::pil, Ablation::pide}) {
    std::vector<double> aucs;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
      TrainConfig cfg;
      cfg.corpus_dir = corpus_dir.string();
      cfg.out_dir = out_dir.string();
      cfg.ablation = mode;
      cfg.epochs = 30;
      cfg.batch_size = 20;
      cfg.seed = seed;
      aucs.push_back(train(cfg).final_test_auc);
    }
    medians.push_back(median(aucs));
    char part[64];
    std::snprintf(part, sizeof(part), "%s=%.4f ", ablation_name(mode).c_str(),
                  medians.back());
    detail += part;
  }
  const bool ok = medians[0] >= medians[1] && medians[0] >= medians[2] &&
                  medians[0] >= medians[3];
  report(7, "ablation ordering (medians over 5 seeds)", ok, detail);
  fs::remove_all(corpus_dir);
  fs::remove_all(out_dir);
}

// ---------------------------------------------------------------------------
// 8. Determinism: identical seed and config give bitwise-identical
//    checkpoints and evaluation reports.
void criterion_determinism() {
  const auto corpus_dir = scratch("corpus_det");
  SynthConfig synth;
  synth.d = 12;
  synth.train_bags_per_class = 8;
  synth.test_bags_per_class = 4;
  synth.t_min = 6;
  synth.t_max = 14;
  synth.seed = 5;
  write_corpus(generate_synthetic(synth), corpus_dir.string());
  const auto corpus_dir2 = scratch("corpus_det2");
  write_corpus(generate_synthetic(synth), corpus_dir2.string());

  bool ok = file_bytes(corpus_dir / "train" / "train_abnormal_0000.pdvb") ==
            file_bytes(corpus_dir2 / "train" / "train_abnormal_0000.pdvb");

  std::vector<fs::path> outs;
  for (int run = 0; run < 2; ++run) {
    const auto out_dir = scratch("run_det_" + std::to_string(run));
    TrainConfig cfg;
    cfg.corpus_dir = corpus_dir.string();
    cfg.out_dir = out_dir.string();
    cfg.k = 3;
    cfg.h = 8;
    cfg.epochs = 5;
    cfg.batch_size = 4;
    cfg.seed = 9;
    const auto result = train(cfg);

    auto params = read_checkpoint(result.final_checkpoint).params;
    auto report_data =
        evaluate(params, load_bags((corpus_dir / "test_manifest.txt").string()), true);
    report_data.checkpoint_path = "checkpoint_final.pdvh";
    report_data.manifest_path = "test_manifest.txt";
    write_eval_outputs(
        report_data, load_bags((corpus_dir / "test_manifest.txt").string()),
        score_bags(params, load_bags((corpus_dir / "test_manifest.txt").string()), true),
        (out_dir / "eval").string());
    outs.push_back(out_dir);
  }
  ok = ok && file_bytes(outs[0] / "checkpoint_final.pdvh") ==
                 file_bytes(outs[1] / "checkpoint_final.pdvh");
  ok = ok && file_bytes(outs[0] / "eval" / "report.json") ==
                 file_bytes(outs[1] / "eval" / "report.json");
  report(8, "bitwise determinism of checkpoints and reports", ok,
         ok ? "corpus bytes, checkpoint bytes, and report bytes all identical"
            : "byte mismatch between identically seeded runs");
  fs::remove_all(corpus_dir);
  fs::remove_all(corpus_dir2);
  for (const auto& o : outs) fs::remove_all(o);
}

// ---------------------------------------------------------------------------
// 9. Format robustness: lossless round-trips, corruption always detected.
void criterion_format_robustness() {
  const auto dir = scratch("formats");
  bool ok = true;
  Rng rng(707);

  // feature bag round-trip and corruption sweep
  FeatureBag bag;
  bag.id = "bag";
  bag.t = 9;
  bag.d = 7;
  bag.features.resize(63);
  for (auto& v : bag.features) v = static_cast<float>(rng.normal());
  bag.bag_label = 1;
  bag.frame_labels.assign(9, 0);
  bag.frame_labels[4] = 1;
  const auto bag_path = (dir / "bag.pdvb").string();
  write_bag(bag, bag_path);
  const auto bag_back = read_bag(bag_path);
  ok = ok && bag_back.features == bag.features &&
       bag_back.frame_labels == bag.frame_labels &&
       bag_back.bag_label == bag.bag_label;

  // checkpoint round-trip (with optimizer state)
  auto params = init_params<float>(6, 3, 4, 808);
  OptimizerSnapshot snap;
  snap.next_epoch = 3;
  snap.step_count = 21;
  for (const auto& [name, p] : params.named_params()) {
    std::vector<float> m(p.size()), v(p.size());
    for (auto& x : m) x = static_cast<float>(rng.normal());
    for (auto& x : v) x = static_cast<float>(std::abs(rng.normal()));
    snap.first_moments.push_back(std::move(m));
    snap.second_moments.push_back(std::move(v));
  }
  const auto ckpt_path = (dir / "model.pdvh").string();
  write_checkpoint(ckpt_path, params, &snap);
  const auto loaded = read_checkpoint(ckpt_path);
  ok = ok && loaded.optimizer.has_value() &&
       loaded.optimizer->step_count == 21 &&
       loaded.optimizer->first_moments == snap.first_moments;
  const auto orig = params.named_params();
  const auto back = loaded.params.named_params();
  for (size_t blk = 0; blk < 8; ++blk) {
    const auto a = orig[blk].second.values();
    const auto b = back[blk].second.values();
    ok = ok && std::equal(a.begin(), a.end(), b.begin(), b.end());
  }

  // every single-byte corruption of the payloads must be caught
  size_t detected = 0, attempts = 0;
  for (const auto& path : {bag_path, ckpt_path}) {
    const auto pristine = file_bytes(path);
    for (size_t pos = 0; pos < pristine.size(); pos += 7) {
      auto corrupt = pristine;
      corrupt[pos] = static_cast<char>(corrupt[pos] ^ 0xa5);
      {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
      }
      ++attempts;
      try {
        if (path == bag_path) {
          read_bag(path);
        } else {
          read_checkpoint(path);
        }
      } catch (const IoError&) {
        ++detected;
      }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(pristine.data(), static_cast<std::streamsize>(pristine.size()));
  }
  ok = ok && detected == attempts;

  char detail[120];
  std::snprintf(detail, sizeof(detail),
                "round-trips lossless; %zu/%zu single-byte corruptions detected",
                detected, attempts);
  report(9, "file format robustness", ok, detail);
  fs::remove_all(dir);
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  criterion_gradient_fidelity();
  criterion_pide_oracle();
  criterion_selection_edge_cases();
  criterion_auc_oracle();
  criterion_parameter_count();
  criterion_desk_scale_learning();
  criterion_ablation_ordering();
  criterion_determinism();
  criterion_format_robustness();
  if (failures > 0) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
