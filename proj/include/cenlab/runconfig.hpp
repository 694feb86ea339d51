#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cenlab/baselines.hpp"
#include "cenlab/cen.hpp"
#include "cenlab/evalsuite.hpp"

namespace cenlab {

// Declarative run description. JSON round-trips through run_config_json and
// parse_run_config; defaults are the published hyperparameters, so an empty
// config object is a complete desk-scale run.
struct RunConfig {
  EnvKind env = EnvKind::Spiders;
  // cen | adm | inverse, plus the untrained pseudo-model oracle whose masks
  // are the counterfactual ground truth (eval commands only)
  std::string model = "cen";
  uint64_t seed_train = 1;
  uint64_t seed_eval = 2;
  size_t train_samples = 60000;
  size_t probe_samples = 10000;
  int eval_steps = 2000;
  int oracle_steps = 1000;
  int threads = 1;
  std::string out = "runs/out";
  std::string probe_mode = "mask";  // mask | latent
  CenConfig cen;
  AdmConfig adm;
  InverseConfig inverse;
  ProbeTrainOptions probe;
};

namespace detail {

// Typed field extraction that records every violation instead of stopping at
// the first, including unknown keys, so one pass reports the whole config.
class JsonFields {
 public:
  JsonFields(const nlohmann::json& j, std::string prefix, std::vector<std::string>& errs)
      : j_(&j), prefix_(std::move(prefix)), errs_(&errs) {}

  void integer(const char* key, int& dst) {
    const nlohmann::json* v = get(key);
    if (!v) return;
    if (!v->is_number_integer()) err(key, "expected an integer");
    else dst = v->get<int>();
  }

  void unsigned64(const char* key, uint64_t& dst) {
    const nlohmann::json* v = get(key);
    if (!v) return;
    if (!v->is_number_integer() || (v->is_number_integer() && v->get<int64_t>() < 0))
      err(key, "expected a non-negative integer");
    else dst = v->get<uint64_t>();
  }

  void size(const char* key, size_t& dst) {
    uint64_t u = dst;
    unsigned64(key, u);
    dst = static_cast<size_t>(u);
  }

  void real(const char* key, float& dst) {
    const nlohmann::json* v = get(key);
    if (!v) return;
    if (!v->is_number()) err(key, "expected a number");
    else dst = v->get<float>();
  }

  void text(const char* key, std::string& dst) {
    const nlohmann::json* v = get(key);
    if (!v) return;
    if (!v->is_string()) err(key, "expected a string");
    else dst = v->get<std::string>();
  }

  void seed_list(const char* key, std::vector<uint64_t>& dst) {
    const nlohmann::json* v = get(key);
    if (!v) return;
    if (!v->is_array()) {
      err(key, "expected an array of seeds");
      return;
    }
    std::vector<uint64_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer() || e.get<int64_t>() < 0) {
        err(key, "expected non-negative integer seeds");
        return;
      }
      out.push_back(e.get<uint64_t>());
    }
    dst = std::move(out);
  }

  const nlohmann::json* object(const char* key) {
    const nlohmann::json* v = get(key);
    if (!v) return nullptr;
    if (!v->is_object()) {
      err(key, "expected an object");
      return nullptr;
    }
    return v;
  }

  void unknown_keys() {
    for (const auto& [k, v] : j_->items())
      if (!seen_.contains(k)) errs_->push_back(prefix_ + k + ": unknown field");
  }

 private:
  const nlohmann::json* get(const char* key) {
    seen_.insert(key);
    auto it = j_->find(key);
    return it == j_->end() ? nullptr : &*it;
  }

  void err(const char* key, const char* what) {
    errs_->push_back(prefix_ + key + ": " + what);
  }

  const nlohmann::json* j_;
  std::string prefix_;
  std::vector<std::string>* errs_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Fills cfg from JSON, appending one message per violated field. Fields left
// out of the JSON keep their defaults.
inline RunConfig parse_run_config(const nlohmann::json& j,
                                  std::vector<std::string>& errs) {
  RunConfig cfg;
  if (!j.is_object()) {
    errs.push_back("config: expected a JSON object");
    return cfg;
  }
  detail::JsonFields top(j, "", errs);
  std::string env = env_kind_name(cfg.env);
  top.text("env", env);
  try {
    cfg.env = parse_env_kind(env);
  } catch (const std::invalid_argument&) {
    errs.push_back("env: must be one of spiders, clusters, lights");
  }
  top.text("model", cfg.model);
  top.unsigned64("seed_train", cfg.seed_train);
  top.unsigned64("seed_eval", cfg.seed_eval);
  top.size("train_samples", cfg.train_samples);
  top.size("probe_samples", cfg.probe_samples);
  top.integer("eval_steps", cfg.eval_steps);
  top.integer("oracle_steps", cfg.oracle_steps);
  top.integer("threads", cfg.threads);
  top.text("out", cfg.out);
  top.text("probe_mode", cfg.probe_mode);

  if (const nlohmann::json* sub = top.object("cen")) {
    detail::JsonFields f(*sub, "cen.", errs);
    f.integer("obs_size", cfg.cen.obs_size);
    f.integer("channels", cfg.cen.channels);
    f.integer("hidden", cfg.cen.hidden);
    f.integer("latent", cfg.cen.latent);
    f.integer("action_embed", cfg.cen.action_embed);
    f.real("alpha", cfg.cen.alpha);
    f.real("threshold", cfg.cen.threshold);
    f.real("lr", cfg.cen.lr);
    f.integer("batch", cfg.cen.batch);
    f.integer("steps", cfg.cen.steps);
    f.unknown_keys();
  }
  if (const nlohmann::json* sub = top.object("adm")) {
    detail::JsonFields f(*sub, "adm.", errs);
    f.integer("obs_size", cfg.adm.obs_size);
    f.real("entropy_weight", cfg.adm.entropy_weight);
    f.integer("hidden", cfg.adm.hidden);
    f.integer("attention_size", cfg.adm.attention_size);
    f.real("threshold", cfg.adm.threshold);
    f.real("lr", cfg.adm.lr);
    f.integer("batch", cfg.adm.batch);
    f.integer("steps", cfg.adm.steps);
    f.unknown_keys();
  }
  if (const nlohmann::json* sub = top.object("inverse")) {
    detail::JsonFields f(*sub, "inverse.", errs);
    f.integer("obs_size", cfg.inverse.obs_size);
    f.integer("channels", cfg.inverse.channels);
    f.integer("hidden", cfg.inverse.hidden);
    f.real("lr", cfg.inverse.lr);
    f.integer("batch", cfg.inverse.batch);
    f.integer("steps", cfg.inverse.steps);
    f.unknown_keys();
  }
  if (const nlohmann::json* sub = top.object("probe")) {
    detail::JsonFields f(*sub, "probe.", errs);
    f.integer("epochs", cfg.probe.epochs);
    f.integer("batch", cfg.probe.batch);
    f.real("lr", cfg.probe.lr);
    f.seed_list("seeds", cfg.probe.seeds);
    f.unknown_keys();
  }
  top.unknown_keys();
  return cfg;
}

// Semantic validation; returns one message per violated field.
inline std::vector<std::string> validate_run_config(const RunConfig& cfg) {
  std::vector<std::string> errs;
  if (cfg.seed_train == cfg.seed_eval)
    errs.push_back("seed_train: must differ from seed_eval");
  if (cfg.model != "cen" && cfg.model != "adm" && cfg.model != "inverse" &&
      cfg.model != "oracle")
    errs.push_back("model: must be one of cen, adm, inverse, oracle");
  if (cfg.probe_mode != "mask" && cfg.probe_mode != "latent")
    errs.push_back("probe_mode: must be mask or latent");
  if (cfg.train_samples == 0) errs.push_back("train_samples: must be positive");
  if (cfg.probe_samples == 0) errs.push_back("probe_samples: must be positive");
  if (cfg.eval_steps <= 0) errs.push_back("eval_steps: must be positive");
  if (cfg.oracle_steps <= 0) errs.push_back("oracle_steps: must be positive");
  if (cfg.threads < 1) errs.push_back("threads: must be at least 1");
  if (cfg.out.empty()) errs.push_back("out: must not be empty");
  if (cfg.probe.epochs < 1) errs.push_back("probe.epochs: must be positive");
  if (cfg.probe.batch < 1) errs.push_back("probe.batch: must be positive");
  if (!(cfg.probe.lr > 0)) errs.push_back("probe.lr: must be positive");
  if (cfg.probe.seeds.empty()) errs.push_back("probe.seeds: must not be empty");

  // Module invariants restated field by field: the module validate() calls
  // stop at the first problem, but a validation report must name them all.
  auto positive = [&errs](const char* field, auto v) {
    if (v <= 0) errs.push_back(std::string(field) + ": must be positive");
  };
  auto pow2_obs = [&errs](const char* field, int v) {
    if (v < 8 || (v & (v - 1)) != 0)
      errs.push_back(std::string(field) + ": must be a power of two >= 8");
  };
  if (cfg.cen.alpha < 0) errs.push_back("cen.alpha: must be >= 0");
  positive("cen.threshold", cfg.cen.threshold);
  pow2_obs("cen.obs_size", cfg.cen.obs_size);
  positive("cen.channels", cfg.cen.channels);
  positive("cen.hidden", cfg.cen.hidden);
  positive("cen.latent", cfg.cen.latent);
  positive("cen.action_embed", cfg.cen.action_embed);
  positive("cen.batch", cfg.cen.batch);
  positive("cen.steps", cfg.cen.steps);
  positive("cen.lr", cfg.cen.lr);
  if (cfg.adm.entropy_weight < 0) errs.push_back("adm.entropy_weight: must be >= 0");
  positive("adm.threshold", cfg.adm.threshold);
  if (cfg.adm.obs_size < 8 || cfg.adm.obs_size % 8 != 0)
    errs.push_back("adm.obs_size: must be a multiple of 8, >= 8");
  positive("adm.hidden", cfg.adm.hidden);
  positive("adm.attention_size", cfg.adm.attention_size);
  positive("adm.batch", cfg.adm.batch);
  positive("adm.steps", cfg.adm.steps);
  positive("adm.lr", cfg.adm.lr);
  pow2_obs("inverse.obs_size", cfg.inverse.obs_size);
  positive("inverse.channels", cfg.inverse.channels);
  positive("inverse.hidden", cfg.inverse.hidden);
  positive("inverse.batch", cfg.inverse.batch);
  positive("inverse.steps", cfg.inverse.steps);
  positive("inverse.lr", cfg.inverse.lr);
  return errs;
}

// Canonical full echo: every field materialized, object keys sorted by the
// JSON library, so equal configs serialize to equal bytes.
inline nlohmann::json run_config_json(const RunConfig& cfg) {
  return {
      {"env", env_kind_name(cfg.env)},
      {"model", cfg.model},
      {"seed_train", cfg.seed_train},
      {"seed_eval", cfg.seed_eval},
      {"train_samples", cfg.train_samples},
      {"probe_samples", cfg.probe_samples},
      {"eval_steps", cfg.eval_steps},
      {"oracle_steps", cfg.oracle_steps},
      {"threads", cfg.threads},
      {"out", cfg.out},
      {"probe_mode", cfg.probe_mode},
      {"cen",
       {{"obs_size", cfg.cen.obs_size},
        {"channels", cfg.cen.channels},
        {"hidden", cfg.cen.hidden},
        {"latent", cfg.cen.latent},
        {"action_embed", cfg.cen.action_embed},
        {"alpha", cfg.cen.alpha},
        {"threshold", cfg.cen.threshold},
        {"lr", cfg.cen.lr},
        {"batch", cfg.cen.batch},
        {"steps", cfg.cen.steps}}},
      {"adm",
       {{"obs_size", cfg.adm.obs_size},
        {"entropy_weight", cfg.adm.entropy_weight},
        {"hidden", cfg.adm.hidden},
        {"attention_size", cfg.adm.attention_size},
        {"threshold", cfg.adm.threshold},
        {"lr", cfg.adm.lr},
        {"batch", cfg.adm.batch},
        {"steps", cfg.adm.steps}}},
      {"inverse",
       {{"obs_size", cfg.inverse.obs_size},
        {"channels", cfg.inverse.channels},
        {"hidden", cfg.inverse.hidden},
        {"lr", cfg.inverse.lr},
        {"batch", cfg.inverse.batch},
        {"steps", cfg.inverse.steps}}},
      {"probe",
       {{"epochs", cfg.probe.epochs},
        {"batch", cfg.probe.batch},
        {"lr", cfg.probe.lr},
        {"seeds", cfg.probe.seeds}}}};
}

// FNV-1a over the canonical echo.
inline std::string config_hash(const RunConfig& cfg) {
  std::string dump = run_config_json(cfg).dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// paper: published scale. desk: the reduced scale the default config already
// carries, restated so a paper config can be stepped back down.
inline void apply_profile(RunConfig& cfg, const std::string& profile) {
  if (profile == "paper") {
    cfg.train_samples = 300000;
    cfg.eval_steps = 5000;
  } else if (profile == "desk") {
    cfg.train_samples = 60000;
    cfg.probe_samples = 10000;
    cfg.eval_steps = 2000;
  } else {
    throw std::invalid_argument("profile: must be paper or desk");
  }
}

// Every command records the exact config, its hash, and the artifact format
// versions next to its outputs. Merged per command name; no timestamps, so a
// rerun of the same config leaves the manifest byte-identical.
inline void update_manifest(const RunConfig& cfg, const std::string& command,
                            const std::vector<std::string>& outputs) {
  std::filesystem::create_directories(cfg.out);
  std::string path = cfg.out + "/manifest.json";
  nlohmann::json m;
  {
    std::ifstream in(path, std::ios::binary);
    if (in.good()) {
      try {
        in >> m;
      } catch (const nlohmann::json::exception&) {
        m = nlohmann::json();
      }
    }
  }
  if (!m.is_object()) m = nlohmann::json::object();
  m["tool"] = "cenlab";
  m["versions"] = {{"dataset", kDatasetVersion},
                   {"probe_dataset", kProbeVersion},
                   {"checkpoint", nn::kCheckpointVersion}};
  m["commands"][command] = {{"config", run_config_json(cfg)},
                            {"config_hash", config_hash(cfg)},
                            {"outputs", outputs}};
  detail::write_text_file(path, m.dump(2) + "\n");
}

}  // namespace cenlab
