#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::path io = fs::temp_directory_path() / "cenlab_cli_io";
  fs::create_directories(io);
  std::string tag = std::to_string(counter++);
  std::string out_path = (io / ("out" + tag)).string();
  std::string err_path = (io / ("err" + tag)).string();
  std::string cmd =
      std::string(CENLAB_BIN) + " " + args + " >" + out_path + " 2>" + err_path;
  int status = std::system(cmd.c_str());
  CmdResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::string fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("cenlab_cli_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

// Tiny-budget config: full-size observations but a narrow model and few
// steps, so the whole pipeline runs in seconds.
json tiny_config(const std::string& out) {
  return {{"env", "spiders"},
          {"model", "cen"},
          {"seed_train", 11},
          {"seed_eval", 12},
          {"train_samples", 256},
          {"probe_samples", 120},
          {"eval_steps", 25},
          {"oracle_steps", 60},
          {"out", out},
          {"cen",
           {{"channels", 8},
            {"hidden", 8},
            {"latent", 16},
            {"action_embed", 4},
            {"batch", 8},
            {"steps", 25}}},
          {"inverse", {{"channels", 8}, {"hidden", 8}, {"batch", 8}, {"steps", 20}}},
          {"probe", {{"epochs", 3}, {"seeds", {101}}}}};
}

std::string write_config(const std::string& dir, const json& j) {
  std::string path = dir + "/config.json";
  std::ofstream(path) << j.dump(2);
  return path;
}

}  // namespace

TEST(CliUsage, UnknownCommandFails) {
  CmdResult r = run_cli("frobnicate");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("usage"), std::string::npos);
}

TEST(CliUsage, UnknownFlagFails) {
  CmdResult r = run_cli("collect --bogus 3");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("unknown flag"), std::string::npos);
}

TEST(CliValidation, EveryViolatedFieldIsListed) {
  std::string dir = fresh_dir("validation");
  json bad = {{"env", "volcano"},
              {"model", "gpt"},
              {"seed_train", 5},
              {"seed_eval", 5},
              {"probe_mode", "psychic"},
              {"train_samples", 0},
              {"out", dir},
              {"cen", {{"alpha", -1.0}, {"steps", 0}, {"typo_field", 3}}},
              {"mystery", true}};
  CmdResult r = run_cli("collect --config " + write_config(dir, bad));
  EXPECT_EQ(r.exit_code, 2);
  json err = json::parse(r.err);
  EXPECT_EQ(err["error"], "config validation");
  std::string all;
  for (const auto& f : err["fields"]) all += f.get<std::string>() + "\n";
  for (const char* needle :
       {"env:", "model:", "seed_train:", "probe_mode:", "train_samples:",
        "cen.alpha:", "cen.steps:", "cen.typo_field:", "mystery:"})
    EXPECT_NE(all.find(needle), std::string::npos) << needle << "\n" << all;
}

TEST(CliValidation, ConfigParseErrorIsMachineReadable) {
  std::string dir = fresh_dir("parse");
  std::ofstream(dir + "/config.json") << "{not json";
  CmdResult r = run_cli("collect --config " + dir + "/config.json");
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_EQ(json::parse(r.err)["error"], "config parse");
}

TEST(CliCollect, RerunIsByteIdentical) {
  std::string dir = fresh_dir("collect");
  json cfg = tiny_config(dir);
  cfg["train_samples"] = 64;
  std::string cpath = write_config(dir, cfg);

  CmdResult first = run_cli("collect --config " + cpath);
  ASSERT_EQ(first.exit_code, 0) << first.err;
  std::string bytes1 = slurp(dir + "/train.cend");
  ASSERT_FALSE(bytes1.empty());

  CmdResult second = run_cli("collect --config " + cpath);
  ASSERT_EQ(second.exit_code, 0) << second.err;
  EXPECT_EQ(bytes1, slurp(dir + "/train.cend"));
  EXPECT_EQ(first.out, second.out);

  json manifest = json::parse(slurp(dir + "/manifest.json"));
  EXPECT_EQ(manifest["commands"]["collect"]["config"]["train_samples"], 64);
  EXPECT_TRUE(manifest["commands"]["collect"].contains("config_hash"));
}

TEST(CliOracle, EvalPixelWithOracleMasksScoresOne) {
  std::string dir = fresh_dir("oracle_eval");
  json cfg = tiny_config(dir);
  cfg["model"] = "oracle";
  CmdResult r = run_cli("eval-pixel --config " + write_config(dir, cfg));
  ASSERT_EQ(r.exit_code, 0) << r.err;
  json rep = json::parse(r.out);
  EXPECT_DOUBLE_EQ(rep["overall_f1"].get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir + "/pixel_oracle.json"));
}

TEST(CliOracle, OracleCheckPassesOnEveryEnvironment) {
  for (const char* env : {"spiders", "clusters", "lights"}) {
    std::string dir = fresh_dir(std::string("oracle_") + env);
    json cfg = tiny_config(dir);
    cfg["env"] = env;
    CmdResult r = run_cli("oracle-check --config " + write_config(dir, cfg));
    ASSERT_EQ(r.exit_code, 0) << env << ": " << r.err;
    json rep = json::parse(r.out);
    EXPECT_TRUE(rep["ok"].get<bool>()) << env;
    EXPECT_EQ(rep["decomposition_violations"], 0) << env;
    EXPECT_TRUE(fs::exists(dir + "/oracle_check.json"));
  }
}

TEST(CliErrors, MissingInputsAreMachineReadable) {
  std::string dir = fresh_dir("missing");
  std::string cpath = write_config(dir, tiny_config(dir));

  CmdResult train = run_cli("train --config " + cpath);
  EXPECT_EQ(train.exit_code, 3);
  json terr = json::parse(train.err);
  EXPECT_EQ(terr["error"], "missing file");
  EXPECT_NE(terr["path"].get<std::string>().find("train.cend"), std::string::npos);

  CmdResult eval = run_cli("eval-pixel --config " + cpath);
  EXPECT_EQ(eval.exit_code, 3);
  EXPECT_NE(json::parse(eval.err)["path"].get<std::string>().find("cen.cenw"),
            std::string::npos);
}

TEST(CliErrors, OracleModelIsNotTrainable) {
  std::string dir = fresh_dir("oracle_train");
  json cfg = tiny_config(dir);
  cfg["model"] = "oracle";
  CmdResult r = run_cli("train --config " + write_config(dir, cfg));
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("not trainable"), std::string::npos);
}

TEST(CliPipeline, TrainEvalProbeAndDumpProduceArtifacts) {
  std::string dir = fresh_dir("pipeline");
  std::string cpath = write_config(dir, tiny_config(dir));

  ASSERT_EQ(run_cli("collect --config " + cpath).exit_code, 0);
  CmdResult train = run_cli("train --config " + cpath);
  ASSERT_EQ(train.exit_code, 0) << train.err;
  EXPECT_TRUE(fs::exists(dir + "/cen.cenw"));
  EXPECT_NE(slurp(dir + "/train_cen.csv").find("step,loss"), std::string::npos);

  CmdResult pixel = run_cli("eval-pixel --config " + cpath);
  ASSERT_EQ(pixel.exit_code, 0) << pixel.err;
  json prep = json::parse(pixel.out);
  EXPECT_GE(prep["overall_f1"].get<double>(), 0.0);
  EXPECT_TRUE(fs::exists(dir + "/pixel_cen.json"));
  EXPECT_TRUE(fs::exists(dir + "/pixel_cen.csv"));

  CmdResult probe = run_cli("eval-probe --config " + cpath);
  ASSERT_EQ(probe.exit_code, 0) << probe.err;
  EXPECT_TRUE(fs::exists(dir + "/probe_cen_mask.json"));
  EXPECT_TRUE(fs::exists(dir + "/probe_cen_mask.cenp"));

  CmdResult dump = run_cli("dump-masks --config " + cpath + " --n 2");
  ASSERT_EQ(dump.exit_code, 0) << dump.err;
  EXPECT_TRUE(fs::exists(dir + "/masks/step_0000.png"));
  EXPECT_TRUE(fs::exists(dir + "/masks/step_0001.f1.txt"));

  json manifest = json::parse(slurp(dir + "/manifest.json"));
  for (const char* cmd : {"collect", "train", "eval-pixel", "eval-probe", "dump-masks"})
    ASSERT_TRUE(manifest["commands"].contains(cmd)) << cmd;
  // one config drove everything, so every entry carries the same hash
  std::string hash = manifest["commands"]["collect"]["config_hash"];
  for (const auto& [name, entry] : manifest["commands"].items())
    EXPECT_EQ(entry["config_hash"], hash) << name;
  EXPECT_EQ(manifest["commands"]["train"]["config"]["env"], "spiders");
}

TEST(CliPipeline, EvalPixelRerunIsByteIdentical) {
  std::string dir = fresh_dir("repro");
  json cfg = tiny_config(dir);
  cfg["train_samples"] = 128;
  cfg["cen"]["steps"] = 10;
  cfg["eval_steps"] = 15;
  std::string cpath = write_config(dir, cfg);
  ASSERT_EQ(run_cli("collect --config " + cpath).exit_code, 0);
  ASSERT_EQ(run_cli("train --config " + cpath).exit_code, 0);
  ASSERT_EQ(run_cli("eval-pixel --config " + cpath).exit_code, 0);
  std::string report1 = slurp(dir + "/pixel_cen.json");
  ASSERT_EQ(run_cli("eval-pixel --config " + cpath).exit_code, 0);
  EXPECT_EQ(report1, slurp(dir + "/pixel_cen.json"));
}

TEST(CliProbe, LatentModeWorksOnInverseAndMaskModeRejectsIt) {
  std::string dir = fresh_dir("latent");
  json cfg = tiny_config(dir);
  cfg["model"] = "inverse";
  cfg["probe_samples"] = 80;
  cfg["probe_mode"] = "latent";
  std::string cpath = write_config(dir, cfg);
  ASSERT_EQ(run_cli("collect --config " + cpath).exit_code, 0);
  ASSERT_EQ(run_cli("train --config " + cpath).exit_code, 0);
  CmdResult probe = run_cli("eval-probe --config " + cpath);
  ASSERT_EQ(probe.exit_code, 0) << probe.err;
  json rep = json::parse(probe.out);
  EXPECT_EQ(rep["probe_mode"], "latent");
  EXPECT_EQ(rep["attributes"].size(), 4u);  // spiders schema
  EXPECT_TRUE(fs::exists(dir + "/probe_inverse_latent.json"));

  cfg["probe_mode"] = "mask";
  CmdResult reject = run_cli("eval-probe --config " + write_config(dir, cfg));
  EXPECT_EQ(reject.exit_code, 2);
  EXPECT_NE(reject.err.find("probe_mode"), std::string::npos);
}

TEST(CliFlags, SeedAndProfileOverridesLandInManifest) {
  std::string dir = fresh_dir("flags");
  std::string cpath = write_config(dir, tiny_config(dir));
  CmdResult r = run_cli("oracle-check --config " + cpath + " --seed 777 --profile paper");
  ASSERT_EQ(r.exit_code, 0) << r.err;
  json manifest = json::parse(slurp(dir + "/manifest.json"));
  const json& echoed = manifest["commands"]["oracle-check"]["config"];
  EXPECT_EQ(echoed["seed_train"], 777);
  EXPECT_EQ(echoed["train_samples"], 300000);
  EXPECT_EQ(echoed["eval_steps"], 5000);
}

TEST(CliFlags, SeedOverrideCollidingWithEvalSeedFailsValidation) {
  std::string dir = fresh_dir("seed_collide");
  std::string cpath = write_config(dir, tiny_config(dir));
  CmdResult r = run_cli("collect --config " + cpath + " --seed 12");  // == seed_eval
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("seed_train"), std::string::npos);
}
