#include "prodisc/evalkit.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace prodisc {

namespace fs = std::filesystem;

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("compute_auc: " + std::to_string(scores.size()) +
                     " scores vs " + std::to_string(labels.size()) + " labels");
  }
  size_t n_pos = 0;
  for (auto l : labels) {
    if (l != 0 && l != 1) throw ShapeError("compute_auc: labels must be 0 or 1");
    n_pos += static_cast<size_t>(l);
  }
  const size_t n = scores.size();
  const size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw EvalUndefinedError("AUC undefined: need both classes, got " +
                             std::to_string(n_pos) + " positive and " +
                             std::to_string(n_neg) + " negative");
  }

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] < scores[b]; });

  // midranks over runs of equal scores, 1-based
  double rank_sum_pos = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t r = i; r <= j; ++r) {
      if (labels[order[r]] == 1) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

std::vector<std::vector<float>> score_bags(const ModelParams<float>& params,
                                           const std::vector<FeatureBag>& bags,
                                           bool use_pil) {
  NoGradGuard guard;
  std::vector<std::vector<float>> all_scores;
  all_scores.reserve(bags.size());
  for (const auto& bag : bags) {
    const std::vector<const FeatureBag*> one{&bag};
    auto batch = assemble_batch<float>(one);
    auto out = forward(batch.features, params, use_pil);
    const auto sv = out.scores.values();
    all_scores.emplace_back(sv.begin(), sv.end());
  }
  return all_scores;
}

std::vector<float> smooth_scores(const std::vector<float>& scores, int window) {
  if (window <= 1 || scores.size() <= 1) return scores;
  const auto n = static_cast<int>(scores.size());
  const int half = window / 2;
  std::vector<float> out(scores.size());
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j) acc += scores[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = static_cast<float>(acc / (hi - lo + 1));
  }
  return out;
}

EvalReport evaluate(const ModelParams<float>& params,
                    const std::vector<FeatureBag>& bags, bool use_pil,
                    int smooth_window) {
  std::string missing;
  for (const auto& bag : bags) {
    if (!bag.has_frame_labels()) {
      if (!missing.empty()) missing += ", ";
      missing += bag.id;
    }
  }
  if (!missing.empty()) {
    throw ConfigError("evaluate: bags without frame labels: " + missing);
  }

  const auto bag_scores = score_bags(params, bags, use_pil);
  std::vector<double> scores;
  std::vector<int> labels;
  for (size_t b = 0; b < bags.size(); ++b) {
    const auto curve = smooth_scores(bag_scores[b], smooth_window);
    for (uint32_t i = 0; i < bags[b].t; ++i) {
      scores.push_back(static_cast<double>(curve[i]));
      labels.push_back(bags[b].frame_labels[i]);
    }
  }
  EvalReport report;
  report.auc = compute_auc(scores, labels);
  for (auto l : labels) {
    if (l == 1) {
      ++report.n_pos;
    } else {
      ++report.n_neg;
    }
  }
  return report;
}

void write_eval_outputs(const EvalReport& report,
                        const std::vector<FeatureBag>& bags,
                        const std::vector<std::vector<float>>& bag_scores,
                        const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "scores", ec);
  if (ec) {
    throw IoError(IoError::Kind::open_failed, out_dir + ": cannot create");
  }

  nlohmann::json j;
  j["auc"] = report.auc;
  j["n_pos"] = report.n_pos;
  j["n_neg"] = report.n_neg;
  j["checkpoint"] = report.checkpoint_path;
  j["corpus_manifest"] = report.manifest_path;
  std::ofstream rf(fs::path(out_dir) / "report.json", std::ios::binary | std::ios::trunc);
  if (!rf) {
    throw IoError(IoError::Kind::open_failed, out_dir + "/report.json: cannot open");
  }
  rf << j.dump(2) << "\n";

  for (size_t b = 0; b < bags.size(); ++b) {
    const auto path = fs::path(out_dir) / "scores" / (bags[b].id + ".csv");
    std::ofstream cf(path, std::ios::binary | std::ios::trunc);
    if (!cf) {
      throw IoError(IoError::Kind::open_failed, path.string() + ": cannot open");
    }
    cf << "instance_index,score,gt_label\n";
    cf << std::setprecision(17);
    for (uint32_t i = 0; i < bags[b].t; ++i) {
      const int gt = bags[b].has_frame_labels() ? bags[b].frame_labels[i] : -1;
      cf << i << "," << bag_scores[b][i] << "," << gt << "\n";
    }
  }
}

void dump_features(const ModelParams<float>& params,
                   const std::vector<FeatureBag>& bags, bool use_pil,
                   const std::string& out_csv) {
  NoGradGuard guard;
  std::ofstream out(out_csv, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError(IoError::Kind::open_failed, out_csv + ": cannot open");
  }
  out << "bag_id,instance_index,gt_label";
  for (int j = 0; j < params.d; ++j) out << ",f" << j;
  out << "\n";
  out << std::setprecision(17);
  for (const auto& bag : bags) {
    const std::vector<const FeatureBag*> one{&bag};
    auto batch = assemble_batch<float>(one);
    auto fwd = forward(batch.features, params, use_pil);
    const auto fv = fwd.enhanced.values();
    for (uint32_t i = 0; i < bag.t; ++i) {
      const int gt = bag.has_frame_labels() ? bag.frame_labels[i] : -1;
      out << bag.id << "," << i << "," << gt;
      for (int j = 0; j < params.d; ++j) {
        out << "," << fv[i * static_cast<size_t>(params.d) + j];
      }
      out << "\n";
    }
  }
}

}  // namespace prodisc
