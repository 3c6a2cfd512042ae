#pragma once

// Frame-level ROC-AUC and evaluation exports.

#include <span>
#include <string>
#include <vector>

#include "prodisc/data.hpp"
#include "prodisc/model.hpp"

namespace prodisc {

struct EvalReport {
  double auc{0.0};
  size_t n_pos{0};
  size_t n_neg{0};
  std::string checkpoint_path;
  std::string manifest_path;
};

// Rank-based (Mann-Whitney) AUC with midrank tie handling:
// (R_pos - n_pos (n_pos + 1) / 2) / (n_pos * n_neg). Throws
// EvalUndefinedError when either class is absent.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

// Per-bag instance scores under the model, read-only.
std::vector<std::vector<float>> score_bags(const ModelParams<float>& params,
                                           const std::vector<FeatureBag>& bags,
                                           bool use_pil);

// Centered moving average over one bag's score curve, window clamped at the
// edges. window <= 1 returns the input unchanged.
std::vector<float> smooth_scores(const std::vector<float>& scores, int window);

// Frame-level AUC over all instances of all bags. Every bag must carry frame
// labels; offenders are listed in the error. smooth_window applies
// smooth_scores per bag before ranking (off by default).
EvalReport evaluate(const ModelParams<float>& params,
                    const std::vector<FeatureBag>& bags, bool use_pil,
                    int smooth_window = 0);

// Writes <out_dir>/report.json and one CSV per bag under <out_dir>/scores/
// (header instance_index,score,gt_label).
void write_eval_outputs(const EvalReport& report,
                        const std::vector<FeatureBag>& bags,
                        const std::vector<std::vector<float>>& bag_scores,
                        const std::string& out_dir);

// One row per instance: bag id, instance index, gt label (-1 when the bag has
// no frame labels), then the D enhanced-feature values.
void dump_features(const ModelParams<float>& params,
                   const std::vector<FeatureBag>& bags, bool use_pil,
                   const std::string& out_csv);

}  // namespace prodisc
