#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "shadowdiff/config.hpp"
#include "shadowdiff/errors.hpp"

using namespace shadowdiff;
namespace fs = std::filesystem;

TEST_CASE("defaults validate") {
  RunConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.T == 100);
  CHECK(c.sample_steps == 10);
  CHECK(c.n_train == 500);
  CHECK(c.n_test == 50);
}

TEST_CASE("key=value parsing") {
  RunConfig c;
  apply_config_text(c, "# comment\n\n  T = 40  \nP=0.5 # trailing\nuse_mask=yes\ndiffusion_space=pixel\ndata_seed=18446744073709551615\n");
  CHECK(c.T == 40);
  CHECK(c.P == 0.5);
  CHECK(c.use_mask);
  CHECK(c.diffusion_space == "pixel");
  CHECK(c.data_seed == 18446744073709551615ull);
  apply_config_line(c, "use_mask=0");
  CHECK_FALSE(c.use_mask);
  apply_config_line(c, "ema_paper_literal=true");
  CHECK(c.ema_paper_literal);

  CHECK_THROWS_AS(apply_config_line(c, "nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(c, "T"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(c, "T=ten"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(c, "T=10.5"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(c, "P=0.5x"), ConfigError);
  CHECK_THROWS_AS(apply_config_line(c, "use_mask=maybe"), ConfigError);
}

TEST_CASE("text round trip and hash") {
  RunConfig c;
  c.T = 37;
  c.eta = 0.123456789012345678;
  c.work_dir = "w/x";
  c.per_sample_branch = true;
  RunConfig d;
  apply_config_text(d, config_to_text(c));
  CHECK(config_to_text(d) == config_to_text(c));
  CHECK(d.eta == c.eta);
  CHECK(config_hash(d) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  CHECK(config_hash(RunConfig{}) == config_hash(RunConfig{}));
  d.sample_seed += 1;
  CHECK(config_hash(d) != config_hash(c));
  CHECK(code_version_hash().size() == 16);
}

TEST_CASE("json and key docs cover every key") {
  RunConfig c;
  const auto j = nlohmann::json::parse(config_to_json(c));
  const auto& docs = describe_config_keys();
  CHECK(j.size() == docs.size() + 2);
  for (const auto& [k, help] : docs) {
    CHECK(j.contains(k));
    CHECK_FALSE(help.empty());
  }
  CHECK(j["config_hash"] == config_hash(c));
}

TEST_CASE("validate rejects bad values") {
  const char* bad[] = {"T=1",         "beta_min=0",        "beta_max=1",         "beta_min=0.05",
                       "sample_steps=0", "sample_steps=101", "P=1.5",             "u_max=100",
                       "eta=-0.1",    "ch=12",             "temb_dim=7",         "batch=0",
                       "ae_batch=0",  "detail_batch=0",    "weight_decay=-1",    "control_steps=-1",
                       "base_lr0=-1", "n_test=0",          "diffusion_space=rgb"};
  for (const char* line : bad) {
    CAPTURE(line);
    RunConfig c;
    apply_config_line(c, line);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("load_config") {
  const fs::path p = fs::temp_directory_path() / "shadowdiff_test_config.txt";
  {
    std::ofstream os(p);
    os << "T=50\nsample_steps=5\nu_max=20\n";
  }
  const RunConfig c = load_config(p);
  CHECK(c.T == 50);
  CHECK(c.sample_steps == 5);
  {
    std::ofstream os(p);
    os << "T=50\nsample_steps=60\n";
  }
  CHECK_THROWS_AS(load_config(p), ConfigError);
  fs::remove(p);
  CHECK_THROWS_AS(load_config(p), ConfigError);
}
