#include <doctest.h>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "prodisc/checkpoint.hpp"
#include "prodisc/data.hpp"
#include "prodisc/trainer.hpp"

using namespace prodisc;
namespace fs = std::filesystem;

namespace {

// Small corpus: trains in well under a second per run.
fs::path make_corpus(const char* name, int d = 8, uint64_t seed = 7) {
  SynthConfig cfg;
  cfg.d = d;
  cfg.train_bags_per_class = 6;
  cfg.test_bags_per_class = 3;
  cfg.t_min = 5;
  cfg.t_max = 10;
  cfg.seed = seed;
  const auto dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  write_corpus(generate_synthetic(cfg), dir.string());
  return dir;
}

TrainConfig small_config(const fs::path& corpus, const fs::path& out) {
  TrainConfig cfg;
  cfg.k = 3;
  cfg.h = 8;
  cfg.batch_size = 4;
  cfg.epochs = 4;
  cfg.seed = 11;
  cfg.corpus_dir = corpus.string();
  cfg.out_dir = out.string();
  return cfg;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<char>((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
}

std::vector<nlohmann::json> log_lines(const fs::path& out_dir) {
  std::ifstream in(out_dir / "train_log.jsonl");
  REQUIRE(in.good());
  std::vector<nlohmann::json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(nlohmann::json::parse(line));
  }
  return lines;
}

}  // namespace

TEST_CASE("baseline ablation logs l_total == l_mil with zero contrastive term") {
  const auto corpus = make_corpus("prodisc_tr_baseline");
  const auto out = fs::temp_directory_path() / "prodisc_tr_baseline_out";
  fs::remove_all(out);
  auto cfg = small_config(corpus, out);
  cfg.ablation = Ablation::baseline;
  train(cfg);

  size_t steps = 0;
  for (const auto& j : log_lines(out)) {
    if (!j.contains("l_total")) continue;
    ++steps;
    CHECK(j["l_pide"].get<double>() == 0.0);
    CHECK(j["lambda"].get<double>() == 0.0);
    CHECK(j["l_total"].get<double>() == j["l_mil"].get<double>());
  }
  CHECK(steps > 0);
  fs::remove_all(corpus);
  fs::remove_all(out);
}

TEST_CASE("full ablation accounts the weighted contrastive term") {
  const auto corpus = make_corpus("prodisc_tr_full");
  const auto out = fs::temp_directory_path() / "prodisc_tr_full_out";
  fs::remove_all(out);
  auto cfg = small_config(corpus, out);
  cfg.epochs = 2;
  train(cfg);

  for (const auto& j : log_lines(out)) {
    if (!j.contains("l_total")) continue;
    const double reconstructed =
        j["l_mil"].get<double>() + j["lambda"].get<double>() * j["l_pide"].get<double>();
    CHECK(j["l_total"].get<double>() ==
          doctest::Approx(reconstructed).epsilon(1e-6));
  }
  fs::remove_all(corpus);
  fs::remove_all(out);
}

TEST_CASE("identical seed and config give bitwise-identical checkpoints") {
  const auto corpus = make_corpus("prodisc_tr_det");
  const auto out_a = fs::temp_directory_path() / "prodisc_tr_det_a";
  const auto out_b = fs::temp_directory_path() / "prodisc_tr_det_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  auto cfg = small_config(corpus, out_a);
  const auto res_a = train(cfg);
  cfg.out_dir = out_b.string();
  const auto res_b = train(cfg);

  CHECK(file_bytes(res_a.final_checkpoint) == file_bytes(res_b.final_checkpoint));
  CHECK(res_a.final_test_auc == res_b.final_test_auc);

  // different seed diverges
  cfg.seed = 999;
  const auto res_c = train(cfg);
  CHECK(file_bytes(res_a.final_checkpoint) != file_bytes(res_c.final_checkpoint));

  fs::remove_all(corpus);
  fs::remove_all(out_a);
  fs::remove_all(out_b);
}

TEST_CASE("resume reproduces an uninterrupted run bit for bit") {
  const auto corpus = make_corpus("prodisc_tr_resume");
  const auto out_straight = fs::temp_directory_path() / "prodisc_tr_resume_a";
  const auto out_split = fs::temp_directory_path() / "prodisc_tr_resume_b";
  fs::remove_all(out_straight);
  fs::remove_all(out_split);

  auto cfg = small_config(corpus, out_straight);
  cfg.epochs = 6;
  const auto straight = train(cfg);

  cfg.out_dir = out_split.string();
  cfg.epochs = 3;
  const auto first_half = train(cfg);
  cfg.epochs = 6;
  const auto second_half = resume(first_half.final_checkpoint, cfg);

  CHECK(file_bytes(straight.final_checkpoint) ==
        file_bytes(second_half.final_checkpoint));
  CHECK(straight.final_test_auc == second_half.final_test_auc);

  fs::remove_all(corpus);
  fs::remove_all(out_straight);
  fs::remove_all(out_split);
}

TEST_CASE("resume rejects dimension mismatches and corrupt checkpoints") {
  const auto corpus8 = make_corpus("prodisc_tr_rej8", 8);
  const auto corpus6 = make_corpus("prodisc_tr_rej6", 6);
  const auto out = fs::temp_directory_path() / "prodisc_tr_rej_out";
  fs::remove_all(out);

  auto cfg = small_config(corpus8, out);
  cfg.epochs = 2;
  const auto res = train(cfg);

  // wrong feature dimension
  auto cfg6 = cfg;
  cfg6.corpus_dir = corpus6.string();
  cfg6.epochs = 4;
  CHECK_THROWS_AS(resume(res.final_checkpoint, cfg6), ConfigError);

  // wrong K
  auto cfg_k = cfg;
  cfg_k.k = 4;
  cfg_k.epochs = 4;
  CHECK_THROWS_AS(resume(res.final_checkpoint, cfg_k), ConfigError);

  // nothing left to do
  CHECK_THROWS_AS(resume(res.final_checkpoint, cfg), ConfigError);

  // inference-only checkpoint has no optimizer state
  const auto plain = (out / "plain.pdvh").string();
  write_checkpoint(plain, read_checkpoint(res.final_checkpoint).params);
  auto cfg_more = cfg;
  cfg_more.epochs = 4;
  CHECK_THROWS_AS(resume(plain, cfg_more), ConfigError);

  // corrupted checkpoint file
  auto bytes = file_bytes(res.final_checkpoint);
  bytes[30] = static_cast<char>(bytes[30] ^ 0x42);
  const auto corrupt = out / "corrupt.pdvh";
  std::ofstream(corrupt, std::ios::binary)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(resume(corrupt.string(), cfg_more), IoError);

  fs::remove_all(corpus8);
  fs::remove_all(corpus6);
  fs::remove_all(out);
}

TEST_CASE("missing corpus fails before any checkpoint is written") {
  const auto out = fs::temp_directory_path() / "prodisc_tr_missing_out";
  fs::remove_all(out);
  TrainConfig cfg;
  cfg.corpus_dir = (fs::temp_directory_path() / "prodisc_no_such_corpus").string();
  cfg.out_dir = out.string();
  CHECK_THROWS_AS(train(cfg), IoError);
  CHECK_FALSE(fs::exists(out / "checkpoint_final.pdvh"));
  CHECK_FALSE(fs::exists(out / "checkpoint_last.pdvh"));
  fs::remove_all(out);
}

TEST_CASE("training reduces the loss on an easy corpus") {
  const auto corpus = make_corpus("prodisc_tr_progress", 8, 21);
  const auto out = fs::temp_directory_path() / "prodisc_tr_progress_out";
  fs::remove_all(out);
  auto cfg = small_config(corpus, out);
  cfg.epochs = 14;
  train(cfg);

  std::vector<double> epoch_means;
  for (const auto& j : log_lines(out)) {
    if (j.contains("mean_l_total")) epoch_means.push_back(j["mean_l_total"]);
  }
  REQUIRE(epoch_means.size() == 14);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) {
    first += epoch_means[i];
    last += epoch_means[epoch_means.size() - 1 - i];
  }
  CHECK(last < first);

  fs::remove_all(corpus);
  fs::remove_all(out);
}

TEST_CASE("a numeric blow-up aborts training and names any retained checkpoint") {
  const auto corpus = make_corpus("prodisc_tr_blowup");
  const auto out = fs::temp_directory_path() / "prodisc_tr_blowup_out";
  fs::remove_all(out);
  auto cfg = small_config(corpus, out);
  cfg.lr = 1e30;  // first update launches the weights into overflow
  cfg.epochs = 2;
  try {
    train(cfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite") != std::string::npos);
    CHECK(msg.find("last good checkpoint") != std::string::npos);
  }
  // no checkpoint interval elapsed, so nothing was retained
  CHECK_FALSE(fs::exists(out / "checkpoint_final.pdvh"));
  CHECK_FALSE(fs::exists(out / "checkpoint_last.pdvh"));
  fs::remove_all(corpus);
  fs::remove_all(out);
}

TEST_CASE("config files merge with overrides and reject unknown keys") {
  TrainConfig cfg;
  cfg.apply({{"lr", "0.01"}, {"epochs", "7"}, {"ablation", "pide"}}, "test");
  CHECK(cfg.lr == doctest::Approx(0.01));
  CHECK(cfg.epochs == 7);
  CHECK(cfg.ablation == Ablation::pide);
  // later application wins, like command-line flags over the file
  cfg.apply({{"lr", "0.25"}}, "cli");
  CHECK(cfg.lr == doctest::Approx(0.25));

  CHECK_THROWS_AS(cfg.apply({{"learning_rate", "0.1"}}, "test"), ConfigError);
  CHECK_THROWS_AS(cfg.apply({{"ablation", "al"}}, "test"), ConfigError);
  CHECK_THROWS_AS(cfg.apply({{"epochs", "x"}}, "test"), ConfigError);

  TrainConfig bad;
  bad.corpus_dir = "c";
  bad.out_dir = "o";
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("epoch logs carry a train AUC on labeled corpora") {
  const auto corpus = make_corpus("prodisc_tr_auc");
  const auto out = fs::temp_directory_path() / "prodisc_tr_auc_out";
  fs::remove_all(out);
  auto cfg = small_config(corpus, out);
  cfg.epochs = 2;
  const auto res = train(cfg);

  bool saw_epoch_auc = false;
  for (const auto& j : log_lines(out)) {
    if (j.contains("train_auc") && j.contains("epoch_end")) {
      saw_epoch_auc = true;
      if (!j["train_auc"].is_null()) {
        const double auc = j["train_auc"].get<double>();
        CHECK(auc >= 0.0);
        CHECK(auc <= 1.0);
      }
    }
  }
  CHECK(saw_epoch_auc);
  CHECK(res.final_test_auc == res.final_test_auc);  // defined on this corpus
  fs::remove_all(corpus);
  fs::remove_all(out);
}
