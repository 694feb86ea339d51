// cenlab: collection, training, evaluation, and artifact dumps from one
// declarative JSON config. Errors print a single machine-readable JSON object
// on stderr; successful commands print a JSON summary on stdout.

#include <cstdio>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cenlab/runconfig.hpp"

using namespace cenlab;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitMissingFile = 3;
constexpr int kExitRuntime = 4;

int fail(int code, const json& err) {
  std::cerr << err.dump() << "\n";
  return code;
}

int fail_usage(const std::string& message) {
  return fail(kExitUsage, {{"error", "usage"}, {"message", message}});
}

int fail_fields(const std::vector<std::string>& fields) {
  return fail(kExitUsage, {{"error", "config validation"}, {"fields", fields}});
}

int fail_missing(const std::string& path, const std::string& hint) {
  return fail(kExitMissingFile,
              {{"error", "missing file"}, {"path", path}, {"hint", hint}});
}

void emit(const json& summary) { std::cout << summary.dump(2) << "\n"; }

const char kUsage[] =
    "usage: cenlab <command> [options]\n"
    "commands:\n"
    "  collect       collect the training dataset\n"
    "  train         train the configured model on the collected dataset\n"
    "  eval-pixel    score the model's masks against oracle masks on a rollout\n"
    "  eval-probe    train linear probes on masked effects or latents\n"
    "  dump-masks    write overlay PNGs for the first n rollout steps\n"
    "  oracle-check  run the counterfactual oracle property suite\n"
    "options:\n"
    "  --config <path>   JSON run config (defaults are a desk-scale cen run)\n"
    "  --seed <int>      override seed_train\n"
    "  --out <dir>       override the output directory\n"
    "  --threads <int>   worker threads; 1 is bit-exact\n"
    "  --profile <name>  paper or desk scale\n"
    "  --n <int>         steps to dump (dump-masks only, default 16)\n";

struct CliArgs {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<std::string> profile;
  int dump_n = 16;
};

bool parse_u64(const std::string& s, uint64_t& out) {
  if (s.empty()) return false;
  uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<uint64_t>(c - '0');
  }
  out = v;
  return true;
}

int parse_args(int argc, char** argv, CliArgs& args, std::string& err) {
  if (argc < 2) {
    err = "missing command";
    return 1;
  }
  args.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string flag = argv[i];
    auto value = [&](std::string& dst) {
      if (i + 1 >= argc) {
        err = flag + " requires a value";
        return false;
      }
      dst = argv[++i];
      return true;
    };
    std::string v;
    if (flag == "--config") {
      if (!value(v)) return 1;
      args.config_path = v;
    } else if (flag == "--seed") {
      uint64_t s;
      if (!value(v) || !parse_u64(v, s)) {
        err = "--seed requires a non-negative integer";
        return 1;
      }
      args.seed = s;
    } else if (flag == "--out") {
      if (!value(v)) return 1;
      args.out = v;
    } else if (flag == "--threads") {
      uint64_t t;
      if (!value(v) || !parse_u64(v, t) || t < 1) {
        err = "--threads requires a positive integer";
        return 1;
      }
      args.threads = static_cast<int>(t);
    } else if (flag == "--profile") {
      if (!value(v)) return 1;
      args.profile = v;
    } else if (flag == "--n") {
      uint64_t n;
      if (!value(v) || !parse_u64(v, n) || n < 1) {
        err = "--n requires a positive integer";
        return 1;
      }
      args.dump_n = static_cast<int>(n);
    } else {
      err = "unknown flag: " + flag;
      return 1;
    }
  }
  return 0;
}

std::string dataset_path(const RunConfig& cfg) { return cfg.out + "/train.cend"; }
std::string checkpoint_path(const RunConfig& cfg) {
  return cfg.out + "/" + cfg.model + ".cenw";
}

// --- model plumbing -----------------------------------------------------------

struct LoadedModel {
  std::optional<CenModel> cen;
  std::optional<AdmModel> adm;
  std::optional<InverseModel> inverse;
};

int load_checkpoint(const RunConfig& cfg, LoadedModel& m) {
  if (cfg.model == "oracle") return kExitOk;  // nothing to load
  std::string path = checkpoint_path(cfg);
  if (!std::filesystem::exists(path))
    return fail_missing(path, "run `cenlab train` with this config first");
  if (cfg.model == "cen") {
    m.cen.emplace(cfg.cen, 0);
    load_model(path, *m.cen);
  } else if (cfg.model == "adm") {
    m.adm.emplace(cfg.adm, 0);
    load_model(path, *m.adm);
  } else {
    m.inverse.emplace(cfg.inverse, 0);
    load_model(path, *m.inverse);
  }
  return kExitOk;
}

// null when the model has no pixel-mask readout
std::optional<MaskSource> mask_source(const RunConfig& cfg, LoadedModel& m) {
  if (cfg.model == "cen")
    return MaskSource([&m](const TransitionView& v) {
      return cen_predict_mask(*m.cen, v.obs, v.action);
    });
  if (cfg.model == "adm")
    return MaskSource([&m](const TransitionView& v) {
      return adm_predict_mask(*m.adm, v.obs, v.next_obs);
    });
  if (cfg.model == "oracle")
    return MaskSource([](const TransitionView& v) {
      return gt_mask_counterfactual(v.state, v.action);
    });
  return std::nullopt;
}

// --- commands -----------------------------------------------------------------

int cmd_collect(const RunConfig& cfg) {
  CollectOptions opt;
  opt.threads = cfg.threads;
  Dataset ds = collect(cfg.env, cfg.seed_train, cfg.train_samples, opt);
  std::filesystem::create_directories(cfg.out);
  std::string path = dataset_path(cfg);
  save_dataset(path, ds);
  update_manifest(cfg, "collect", {path});
  emit({{"command", "collect"},
        {"dataset", path},
        {"samples", ds.samples.size()},
        {"env", env_kind_name(cfg.env)}});
  return kExitOk;
}

int cmd_train(const RunConfig& cfg) {
  if (cfg.model == "oracle")
    return fail_fields({"model: oracle is not trainable"});
  std::string dpath = dataset_path(cfg);
  if (!std::filesystem::exists(dpath))
    return fail_missing(dpath, "run `cenlab collect` with this config first");
  Dataset ds = load_dataset(dpath);

  std::string log_path = cfg.out + "/train_" + cfg.model + ".csv";
  std::string log = "step,loss,term1,term2\n";
  TrainHooks hooks;
  hooks.on_log = [&log](const TrainLogRow& r) {
    char row[128];
    std::snprintf(row, sizeof(row), "%d,%.6f,%.6f,%.6f\n", r.step, r.loss, r.term1,
                  r.term2);
    log += row;
  };

  std::string cpath = checkpoint_path(cfg);
  float final_loss = 0;
  std::vector<TrainLogRow> rows;
  if (cfg.model == "cen") {
    CenModel model(cfg.cen, cfg.seed_train);
    rows = train_cen(model, ds, cfg.seed_train, hooks);
    save_model(cpath, model);
  } else if (cfg.model == "adm") {
    AdmModel model(cfg.adm, cfg.seed_train);
    rows = train_adm(model, ds, cfg.seed_train, hooks);
    save_model(cpath, model);
  } else {
    InverseModel model(cfg.inverse, cfg.seed_train);
    rows = train_inverse(model, ds, cfg.seed_train, hooks);
    save_model(cpath, model);
  }
  if (!rows.empty()) final_loss = rows.back().loss;
  detail::write_text_file(log_path, log);
  update_manifest(cfg, "train", {cpath, log_path});
  emit({{"command", "train"},
        {"model", cfg.model},
        {"checkpoint", cpath},
        {"final_loss", final_loss}});
  return kExitOk;
}

int cmd_eval_pixel(const RunConfig& cfg) {
  if (cfg.model == "inverse")
    return fail_fields({"model: inverse has no pixel-mask readout"});
  LoadedModel m;
  if (int rc = load_checkpoint(cfg, m); rc != kExitOk) return rc;
  PixelEvalOptions opt;
  opt.steps = cfg.eval_steps;
  F1Report rep = evaluate_pixel(*mask_source(cfg, m), cfg.env, cfg.seed_eval, opt);
  std::string base = "pixel_" + cfg.model;
  write_f1_report(cfg.out, base, rep);
  update_manifest(cfg, "eval-pixel",
                  {cfg.out + "/" + base + ".json", cfg.out + "/" + base + ".csv"});
  json summary = f1_report_json(rep);
  summary["command"] = "eval-pixel";
  summary["model"] = cfg.model;
  emit(summary);
  return kExitOk;
}

int cmd_eval_probe(const RunConfig& cfg) {
  if (cfg.probe_mode == "mask" && cfg.model == "inverse")
    return fail_fields({"probe_mode: inverse has no pixel mask; use latent"});
  if (cfg.probe_mode == "latent" && cfg.model != "cen" && cfg.model != "inverse")
    return fail_fields({"probe_mode: latent probing supports cen and inverse"});
  LoadedModel m;
  if (int rc = load_checkpoint(cfg, m); rc != kExitOk) return rc;

  ProbeReport rep;
  std::vector<std::string> outputs;
  std::string base = "probe_" + cfg.model + "_" + cfg.probe_mode;
  if (cfg.probe_mode == "mask") {
    ProbeDataset pd =
        collect_probe(cfg.env, cfg.seed_eval, cfg.probe_samples, *mask_source(cfg, m));
    std::string pd_path = cfg.out + "/" + base + ".cenp";
    std::filesystem::create_directories(cfg.out);
    save_probe_dataset(pd_path, pd);
    outputs.push_back(pd_path);
    rep = probe_report(pd, cfg.probe);
  } else {
    Dataset ds = collect(cfg.env, cfg.seed_eval, cfg.probe_samples);
    int h = ds.obs_h, w = ds.obs_w;
    std::function<std::vector<float>(const Sample&)> latent_fn;
    if (cfg.model == "cen")
      latent_fn = [&m, h, w](const Sample& s) {
        return cen_controlled_latent(*m.cen, unpack_obs(s.obs, w, h), s.action);
      };
    else
      latent_fn = [&m, h, w](const Sample& s) {
        return inverse_latent(*m.inverse, unpack_obs(s.obs, w, h),
                              unpack_obs(s.next_obs, w, h));
      };
    rep = latent_probe(latent_fn, ds, cfg.probe);
  }
  write_probe_report(cfg.out, base, rep);
  outputs.push_back(cfg.out + "/" + base + ".json");
  outputs.push_back(cfg.out + "/" + base + ".csv");
  update_manifest(cfg, "eval-probe", outputs);
  json summary = probe_report_json(rep);
  summary["command"] = "eval-probe";
  summary["model"] = cfg.model;
  summary["probe_mode"] = cfg.probe_mode;
  emit(summary);
  return kExitOk;
}

int cmd_dump_masks(const RunConfig& cfg, int n) {
  if (cfg.model == "inverse")
    return fail_fields({"model: inverse has no pixel-mask readout"});
  LoadedModel m;
  if (int rc = load_checkpoint(cfg, m); rc != kExitOk) return rc;
  std::string dir = cfg.out + "/masks";
  std::vector<double> f1s =
      dump_mask_overlays(dir, *mask_source(cfg, m), cfg.env, cfg.seed_eval, n);
  update_manifest(cfg, "dump-masks", {dir});
  double mean = 0;
  for (double v : f1s) mean += v;
  emit({{"command", "dump-masks"},
        {"dir", dir},
        {"steps", n},
        {"mean_f1", f1s.empty() ? 0.0 : mean / static_cast<double>(f1s.size())}});
  return kExitOk;
}

int cmd_oracle_check(const RunConfig& cfg) {
  OracleCheckReport rep = oracle_selfcheck(cfg.env, cfg.seed_eval, cfg.oracle_steps);
  std::filesystem::create_directories(cfg.out);
  json j = {{"command", "oracle-check"},
            {"env", env_kind_name(cfg.env)},
            {"steps", rep.steps},
            {"decomposition_violations", rep.decomposition_violations},
            {"membership_violations", rep.membership_violations},
            {"spider_variant_pixels", rep.spider_variant_pixels},
            {"ok", rep.ok()}};
  std::string path = cfg.out + "/oracle_check.json";
  detail::write_text_file(path, j.dump(2) + "\n");
  update_manifest(cfg, "oracle-check", {path});
  emit(j);
  return rep.ok() ? kExitOk : kExitPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CliArgs args;
  std::string perr;
  if (parse_args(argc, argv, args, perr) != 0) {
    std::fputs(kUsage, stderr);
    return fail_usage(perr);
  }

  RunConfig cfg;
  std::vector<std::string> parse_errs;
  if (args.config_path) {
    std::ifstream in(*args.config_path, std::ios::binary);
    if (!in.good()) return fail_missing(*args.config_path, "config file not found");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      return fail(kExitUsage, {{"error", "config parse"}, {"message", e.what()}});
    }
    cfg = parse_run_config(j, parse_errs);
  }
  if (args.profile) {
    try {
      apply_profile(cfg, *args.profile);
    } catch (const std::invalid_argument& e) {
      parse_errs.push_back(e.what());
    }
  }
  if (args.seed) cfg.seed_train = *args.seed;
  if (args.out) cfg.out = *args.out;
  if (args.threads) cfg.threads = *args.threads;
  std::vector<std::string> errs = validate_run_config(cfg);
  parse_errs.insert(parse_errs.end(), errs.begin(), errs.end());
  if (!parse_errs.empty()) return fail_fields(parse_errs);

  try {
    if (args.command == "collect") return cmd_collect(cfg);
    if (args.command == "train") return cmd_train(cfg);
    if (args.command == "eval-pixel") return cmd_eval_pixel(cfg);
    if (args.command == "eval-probe") return cmd_eval_probe(cfg);
    if (args.command == "dump-masks") return cmd_dump_masks(cfg, args.dump_n);
    if (args.command == "oracle-check") return cmd_oracle_check(cfg);
  } catch (const FormatError& e) {
    return fail(kExitRuntime, {{"error", "format"}, {"message", e.what()}});
  } catch (const std::exception& e) {
    return fail(kExitRuntime, {{"error", "exception"}, {"message", e.what()}});
  }
  std::fputs(kUsage, stderr);
  return fail_usage("unknown command: " + args.command);
}
