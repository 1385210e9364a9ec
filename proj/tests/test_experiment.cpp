#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "fedad/errors.hpp"
#include "fedad/experiment.hpp"

using namespace fedad;
using namespace fedad::experiment;
namespace fs = std::filesystem;

namespace {

// a configuration small enough for unit-test turnaround
std::string tiny_config_text() {
  return R"(
seed = 5
data.n_clients = 2
data.train_steps = 400
data.test_steps = 200
data.dim = 1
data.anomaly_rate = 0.02
data.window = 40

backbone.d_model = 8
backbone.n_layers = 2
backbone.n_heads = 2
backbone.d_ff = 16
backbone.patch_len = 5
backbone.tune_last_k = 1

vae.latent_dim = 4
vae.hidden_dim = 16
vae.epochs = 30
vae.synth_length = 40

train.rounds = 2
train.local_epochs = 1
train.learning_rate = 0.01
train.lambda = 0.5
train.batch_size = 8
)";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("fedad_exp_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults and overrides") {
    const auto cfg = parse_config_text(tiny_config_text());
    CHECK(cfg.master_seed == 5);
    CHECK(cfg.synth.n_clients == 2);
    CHECK(cfg.model.d_model == 8);
    CHECK(cfg.train.lambda == 0.5);
    CHECK(cfg.adms_cfg.mask_ratio == 0.20);      // default
    CHECK(cfg.detection.threshold_pct == 1.0);   // default
    CHECK(cfg.model.max_patches == 8);           // derived from window/patch_len
  }

  SUBCASE("missing required key names it") {
    std::string text = tiny_config_text();
    const auto pos = text.find("train.learning_rate");
    text.erase(pos, text.find('\n', pos) - pos);
    try {
      parse_config_text(text);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.learning_rate") != std::string::npos);
    }
  }

  SUBCASE("unknown keys are rejected") {
    try {
      parse_config_text(tiny_config_text() + "\ntrain.learning_rte = 1\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("train.learning_rte") != std::string::npos);
    }
  }

  SUBCASE("comments and blank lines are ignored") {
    const auto cfg = parse_config_text("# comment\n\n" + tiny_config_text());
    CHECK(cfg.master_seed == 5);
  }
}

TEST_CASE("variants") {
  auto cfg = parse_config_text(tiny_config_text());

  apply_variant(cfg, "w/o_adms");
  CHECK_FALSE(cfg.use_adms);

  cfg = parse_config_text(tiny_config_text());
  apply_variant(cfg, "wo_ppds");
  CHECK_FALSE(cfg.use_ppds);
  CHECK(cfg.train.lambda == 0.0);
  CHECK(cfg.variant == "w/o_ppds");

  cfg = parse_config_text(tiny_config_text());
  apply_variant(cfg, "w/o_ft");
  CHECK_FALSE(cfg.fine_tune);

  cfg = parse_config_text(tiny_config_text());
  apply_variant(cfg, "fft");
  CHECK(cfg.model.tune_last_k == cfg.model.n_layers);

  CHECK_THROWS_AS(apply_variant(cfg, "nonsense"), ConfigError);
}

TEST_CASE("stage chaining errors name the missing artifact") {
  const auto cfg = parse_config_text(tiny_config_text());

  SUBCASE("train before gen-data") {
    TempDir tmp("chain1");
    try {
      stage_train(cfg, tmp.str());
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("client0_train.csv") != std::string::npos);
    }
  }

  SUBCASE("train with lambda > 0 but no shared dataset") {
    TempDir tmp("chain2");
    stage_gen_data(cfg, tmp.str());
    try {
      stage_train(cfg, tmp.str());
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("shared.csv") != std::string::npos);
    }
  }

  SUBCASE("evaluate before train") {
    TempDir tmp("chain3");
    stage_gen_data(cfg, tmp.str());
    try {
      stage_evaluate(cfg, tmp.str());
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("checkpoint.bin") != std::string::npos);
    }
  }
}

TEST_CASE("full pipeline runs and is byte-deterministic") {
  auto cfg = parse_config_text(tiny_config_text());
  TempDir tmp1("run1"), tmp2("run2");

  const auto evals1 = run_all(cfg, tmp1.str());
  const auto evals2 = run_all(cfg, tmp2.str());
  REQUIRE(evals1.size() == 2);

  CHECK(slurp(tmp1.str() + "/metrics.csv") == slurp(tmp2.str() + "/metrics.csv"));
  CHECK(slurp(tmp1.str() + "/ledger.csv") == slurp(tmp2.str() + "/ledger.csv"));
  CHECK(slurp(tmp1.str() + "/losses.csv") == slurp(tmp2.str() + "/losses.csv"));

  for (const char* name : {"client0_train.csv", "client0_test.csv", "client0_test_labels.csv",
                           "shared.csv", "checkpoint.bin", "metrics.csv", "ledger.csv",
                           "losses.csv"}) {
    CHECK(fs::exists(tmp1.path / name));
  }
}

TEST_CASE("evaluate on an untrained checkpoint still reports metrics") {
  auto cfg = parse_config_text(tiny_config_text());
  cfg.train.lambda = 0.0;
  TempDir tmp("untrained");
  stage_gen_data(cfg, tmp.str());
  const auto model =
      backbone::build_model(cfg.model, derive_seed(cfg.master_seed, "checkpoint"));
  backbone::save_checkpoint(tmp.str() + "/checkpoint.bin", model);
  const auto evals = stage_evaluate(cfg, tmp.str());
  CHECK(evals.size() == 2);
  for (const auto& ev : evals) {
    CHECK(ev.report.precision >= 0.0);
    CHECK(ev.report.auc >= 0.0);
  }
}

TEST_CASE("ablation variant flows through to the metrics file") {
  auto cfg = parse_config_text(tiny_config_text());
  apply_variant(cfg, "w/o_adms");
  TempDir tmp("variant");
  run_all(cfg, tmp.str());
  const std::string metrics = slurp(tmp.str() + "/metrics.csv");
  CHECK(metrics.find("w/o_adms,0,") != std::string::npos);
}

TEST_CASE("report renders percentages") {
  TempDir tmp("report");
  std::ofstream os(tmp.str() + "/metrics.csv");
  os << "variant,client_id,tp,fp,fn,tn,precision,recall,f1,auc,auc_pa\n";
  os << "full,0,1,1,1,1,0.9134,0.5,0.64,0.875,0.8\n";
  os.close();
  const std::string table = stage_report(tmp.str());
  CHECK(table.find("91.34") != std::string::npos);
  CHECK(table.find("87.50") != std::string::npos);
}
