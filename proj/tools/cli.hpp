#pragma once

// Command-line surface: train, eval, ablate, importance, validate-features,
// report. run() is the whole program minus process setup, so tests can drive it.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "drex/drex.hpp"

namespace drex::cli {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = DREX_VERSION;

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything a run depends on. Serialized as flat dotted keys.
struct RunConfig {
  FusionConfig model{};
  TrainConfig train{};
  std::string features;
  std::string val;
  std::string ckpt;
  std::string mode = "branch";
  std::size_t n_perm = 10000;
  double alpha = 0.01;
  std::uint64_t seed = 0;
};

inline Json to_json(const RunConfig& rc, const std::string& command) {
  Json j = Json::object();
  j["tool.version"] = kVersion;
  j["run.command"] = command;
  if (!rc.features.empty()) j["run.features"] = rc.features;
  if (!rc.val.empty()) j["run.val"] = rc.val;
  if (!rc.ckpt.empty()) j["run.ckpt"] = rc.ckpt;
  j["run.seed"] = rc.seed;
  if (command == "ablate") j["run.mode"] = rc.mode;
  if (command == "ablate" || command == "importance") j["run.n_perm"] = rc.n_perm;
  if (command == "ablate") j["run.alpha"] = rc.alpha;
  if (command == "train") {
    to_flat(rc.model, j);
    to_flat(rc.train, j);
  } else {
    j["train.eval_with_ema"] = rc.train.eval_with_ema;
  }
  return j;
}

/// Loads a flat config file. Unknown keys are rejected.
inline void apply_config_file(RunConfig& rc, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (apply_key(rc.model, rc.train, key, v)) continue;
    try {
      if (key == "run.features") rc.features = v.get<std::string>();
      else if (key == "run.val") rc.val = v.get<std::string>();
      else if (key == "run.ckpt") rc.ckpt = v.get<std::string>();
      else if (key == "run.mode") rc.mode = v.get<std::string>();
      else if (key == "run.n_perm") rc.n_perm = v.get<std::size_t>();
      else if (key == "run.alpha") rc.alpha = v.get<double>();
      else if (key == "run.seed") rc.seed = v.get<std::uint64_t>();
      else if (key == "tool.version" || key == "run.command") continue;
      else throw ConfigError("unknown config key '" + key + "'");
    } catch (const Json::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline fs::path checkpoint_path(const std::string& ckpt) {
  if (ckpt.empty()) throw UsageError("--ckpt is required");
  fs::path p(ckpt);
  return fs::is_directory(p) ? p / "checkpoint.drxc" : p;
}

inline std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string ablation_csv(const std::vector<analysis::AblationResult>& rows) {
  std::string s =
      "name,baseline_r,ablated_r,delta_r,baseline_rho,ablated_rho,delta_rho,baseline_rmse,ablated_rmse,p_value,"
      "fdr_significant\n";
  for (const auto& r : rows)
    s += r.name + "," + num(r.baseline.pearson_r) + "," + num(r.ablated.pearson_r) + "," + num(r.delta_r) + "," +
         num(r.baseline.spearman_rho) + "," + num(r.ablated.spearman_rho) + "," + num(r.delta_rho) + "," +
         num(r.baseline.rmse) + "," + num(r.ablated.rmse) + "," + num(r.p_value) + "," +
         (r.fdr_significant ? "1" : "0") + "\n";
  return s;
}

// Sidecar next to a file output: dims.csv -> dims.<suffix>
inline fs::path sidecar(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + "." + suffix);
}

inline void require(const std::string& v, const char* flag) {
  if (v.empty()) throw UsageError(std::string(flag) + " is required");
}

}  // namespace detail

struct Context {
  RunConfig rc;
  std::string out;
  std::size_t threads = 1;
  std::ostream& stdout_;
  std::ostream& stderr_;

  /// EMA weights unless the checkpoint or the command line opted out.
  bool use_ema(const Checkpoint& ck) const { return rc.train.eval_with_ema && ck.train_config.eval_with_ema; }
};

inline int cmd_train(Context& c) {
  detail::require(c.rc.features, "--features");
  detail::require(c.out, "--out");
  const auto train_set = read_features(c.rc.features);
  const auto val_set = c.rc.val.empty() ? DatasetManifest{} : read_features(c.rc.val);
  const auto res = train(c.rc.model, c.rc.train, train_set, val_set);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  save_checkpoint(res.checkpoint, dir / "checkpoint.drxc");
  detail::write_text(dir / "report.txt", format_train_report(res.report));
  detail::write_text(dir / "timing.txt", format_timings(res.report));
  detail::write_text(dir / "config.json", to_json(c.rc, "train").dump(2) + "\n");
  c.stdout_ << format_train_report(res.report);
  return 0;
}

inline int cmd_eval(Context& c) {
  detail::require(c.rc.features, "--features");
  const auto ck = load_checkpoint(detail::checkpoint_path(c.rc.ckpt));
  const auto set = read_features(c.rc.features);
  const auto model = ck.eval_model(c.use_ema(ck));
  const auto m = evaluate(ck, set, c.use_ema(ck), c.threads);
  const auto report = metrics::format_report(m);
  c.stdout_ << report;
  if (!c.out.empty()) {
    const fs::path dir(c.out);
    const auto preds = predict_manifest(model, set, ZeroBranch::none, c.threads);
    std::string csv = "id,score,prediction,w_dino\n";
    for (std::size_t i = 0; i < set.size(); ++i)
      csv += set.records[i].id + "," + detail::num(*set.records[i].score) + "," + detail::num(preds.score[i]) + "," +
             detail::num(preds.w_dino[i]) + "\n";
    detail::write_text(dir / "predictions.csv", csv);
    detail::write_text(dir / "eval.txt", report);
    detail::write_text(dir / "config.json", to_json(c.rc, "eval").dump(2) + "\n");
  }
  return 0;
}

inline int cmd_ablate(Context& c) {
  detail::require(c.rc.features, "--features");
  detail::require(c.out, "--out");
  const auto ck = load_checkpoint(detail::checkpoint_path(c.rc.ckpt));
  const auto set = read_features(c.rc.features);
  const auto model = ck.eval_model(c.use_ema(ck));
  analysis::Options opt;
  opt.n_perm = c.rc.n_perm;
  opt.seed = c.rc.seed;
  opt.fdr_alpha = c.rc.alpha;
  opt.threads = c.threads;

  std::vector<analysis::AblationResult> rows;
  if (c.rc.mode == "branch") {
    rows.push_back(analysis::ablate_branch(model, set, analysis::Branch::dino, opt));
    rows.push_back(analysis::ablate_branch(model, set, analysis::Branch::resnet, opt));
    std::vector<double> p = {rows[0].p_value, rows[1].p_value};
    const auto mask = analysis::bh_fdr(p, opt.fdr_alpha);
    rows[0].fdr_significant = mask[0];
    rows[1].fdr_significant = mask[1];
  } else if (c.rc.mode == "dino-dims") {
    rows = analysis::ablate_dino_dims(model, set, opt);
  } else if (c.rc.mode == "resnet-blocks") {
    rows = analysis::ablate_resnet_blocks(model, set, opt);
  } else {
    throw UsageError("--mode must be branch, dino-dims or resnet-blocks (got '" + c.rc.mode + "')");
  }

  const fs::path out(c.out);
  detail::write_text(out, detail::ablation_csv(rows));
  std::size_t significant = 0;
  for (const auto& r : rows) significant += r.fdr_significant;
  std::string summary = "mode: " + c.rc.mode + "\nrows: " + std::to_string(rows.size()) +
                        "\nfdr_alpha: " + detail::num(c.rc.alpha) + "\nn_perm: " + std::to_string(c.rc.n_perm) +
                        "\nfdr_significant: " + std::to_string(significant) + "\n";
  if (!rows.empty()) summary += metrics::format_report(rows.front().baseline, "baseline_");
  detail::write_text(detail::sidecar(out, "report.txt"), summary);
  detail::write_text(detail::sidecar(out, "config.json"), to_json(c.rc, "ablate").dump(2) + "\n");
  c.stdout_ << summary;
  return 0;
}

inline int cmd_importance(Context& c) {
  detail::require(c.rc.features, "--features");
  detail::require(c.out, "--out");
  const auto ck = load_checkpoint(detail::checkpoint_path(c.rc.ckpt));
  const auto set = read_features(c.rc.features);
  const auto model = ck.eval_model(c.use_ema(ck));
  analysis::Options opt;
  opt.n_perm = c.rc.n_perm;
  opt.seed = c.rc.seed;
  opt.threads = c.threads;
  const auto prof = analysis::grad_importance(model, set, opt);

  const fs::path out(c.out);
  std::string csv = "dim,importance\n";
  for (std::size_t j = 0; j < prof.importance.size(); ++j)
    csv += std::to_string(j) + "," + detail::num(prof.importance[j]) + "\n";
  detail::write_text(out, csv);
  std::string summary = "dims: " + std::to_string(prof.importance.size()) +
                        "\nskewness: " + detail::num(prof.skewness) + "\nskewness_p: " + detail::num(prof.skewness_p) +
                        "\nbootstrap: " + std::to_string(c.rc.n_perm) + "\n";
  detail::write_text(detail::sidecar(out, "report.txt"), summary);
  detail::write_text(detail::sidecar(out, "config.json"), to_json(c.rc, "importance").dump(2) + "\n");
  c.stdout_ << summary;
  return 0;
}

inline int cmd_validate(Context& c, const std::string& path) {
  const auto m = read_features(path);
  const auto violations = validate_manifest(m);
  std::size_t scored = 0;
  for (const auto& r : m.records) scored += r.score.has_value();
  c.stdout_ << path << ": " << m.size() << " records (" << scored << " scored), dino " << m.dims.dino_dim
            << ", resnet " << m.dims.resnet_dim() << "\n";
  for (const auto& v : violations) c.stdout_ << "  " << v.record_id << ": " << v.rule << "\n";
  c.stdout_ << violations.size() << " violations\n";
  return violations.empty() ? 0 : 1;
}

inline int cmd_report(Context& c) {
  const auto ck = load_checkpoint(detail::checkpoint_path(c.rc.ckpt));
  const auto model = ck.eval_model(c.use_ema(ck));
  Json header = checkpoint_header(ck);
  std::ostringstream s;
  s << "tool_version: " << kVersion << "\n";
  s << "param_count: " << model.param_count() << "\n";
  s << "has_ema: " << (ck.ema_shadow ? "true" : "false") << "\n";
  s << "weights: " << (c.use_ema(ck) && ck.ema_shadow ? "ema" : "raw") << "\n";
  s << "tau: " << detail::num(model.tau()) << "\n";
  s << "alpha: " << detail::num(model.alpha()) << "\n";
  for (const auto& [k, v] : header["config"].items()) s << k << ": " << v.dump() << "\n";
  if (!c.rc.features.empty()) {
    const auto set = read_features(c.rc.features);
    s << metrics::format_report(evaluate(ck, set, c.use_ema(ck), c.threads), "eval_");
    try {
      s << "w_dino_score_r: " << detail::num(analysis::attention_weight_correlation(model, set, c.threads)) << "\n";
    } catch (const metrics::DegenerateVarianceError& e) {
      s << "w_dino_score_r: undefined (" << e.what() << ")\n";
    }
  }
  c.stdout_ << s.str();
  if (!c.out.empty()) detail::write_text(c.out, s.str());
  return 0;
}

/// Runs one command. `args` excludes the program name. Returns the exit code:
/// 0 success, 1 failure (or violations found), 2 usage error.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Attention-fused image complexity regressor over precomputed features", "drex"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  std::string features, val, ckpt, outp, config, mode;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 0, n_perm = 0;
  double alpha = 0;
  bool no_ema = false;
  std::string validate_path;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "JSON config file (flat dotted keys); flags override it");
    sub->add_option("--seed", seed, "Seed for all randomness");
    sub->add_option("--threads", threads, "Worker threads (default: DREX_THREADS or 1)");
  };
  auto* train_cmd = app.add_subcommand("train", "Train on a feature file and write a checkpoint directory");
  common(train_cmd);
  train_cmd->add_option("--features", features, "Training features (.drxf)");
  train_cmd->add_option("--val", val, "Validation features (.drxf)");
  train_cmd->add_option("--out", outp, "Output directory");
  train_cmd->add_flag("--no-ema-eval", no_ema, "Evaluate with raw instead of EMA weights");

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on a labelled feature file");
  common(eval_cmd);
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file or directory");
  eval_cmd->add_option("--features", features, "Evaluation features (.drxf)");
  eval_cmd->add_option("--out", outp, "Directory for predictions.csv and eval.txt");
  eval_cmd->add_flag("--no-ema-eval", no_ema, "Use raw instead of EMA weights");

  auto* ablate_cmd = app.add_subcommand("ablate", "Branch, DINO-dimension or ResNet-block ablations");
  common(ablate_cmd);
  ablate_cmd->add_option("--ckpt", ckpt, "Checkpoint file or directory");
  ablate_cmd->add_option("--features", features, "Evaluation features (.drxf)");
  ablate_cmd->add_option("--out", outp, "Output CSV");
  ablate_cmd->add_option("--mode", mode, "branch | dino-dims | resnet-blocks");
  ablate_cmd->add_option("--n-perm", n_perm, "Permutations per test (default 10000)");
  ablate_cmd->add_option("--alpha", alpha, "FDR level (default 0.01)");
  ablate_cmd->add_flag("--no-ema-eval", no_ema, "Use raw instead of EMA weights");

  auto* imp_cmd = app.add_subcommand("importance", "Gradient-activation importance of each DINO dimension");
  common(imp_cmd);
  imp_cmd->add_option("--ckpt", ckpt, "Checkpoint file or directory");
  imp_cmd->add_option("--features", features, "Evaluation features (.drxf)");
  imp_cmd->add_option("--out", outp, "Output CSV");
  imp_cmd->add_option("--n-perm", n_perm, "Bootstrap resamples for the skewness test (default 10000)");
  imp_cmd->add_flag("--no-ema-eval", no_ema, "Use raw instead of EMA weights");

  auto* val_cmd = app.add_subcommand("validate-features", "Check a feature file against the format invariants");
  val_cmd->add_option("path", validate_path, "Feature file (.drxf)");
  val_cmd->add_option("--features", features, "Feature file (alternative to the positional path)");

  auto* rep_cmd = app.add_subcommand("report", "Summarize a checkpoint, optionally with metrics on a feature file");
  common(rep_cmd);
  rep_cmd->add_option("--ckpt", ckpt, "Checkpoint file or directory");
  rep_cmd->add_option("--features", features, "Labelled features to evaluate");
  rep_cmd->add_option("--out", outp, "Also write the report to this file");
  rep_cmd->add_flag("--no-ema-eval", no_ema, "Use raw instead of EMA weights");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "drex: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  auto* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    Context c{RunConfig{}, outp, resolve_threads(threads), out, err};
    if (!config.empty()) apply_config_file(c.rc, config);
    auto given = [&](const char* flag) {
      const auto* opt = sub->get_option_no_throw(flag);
      return opt != nullptr && opt->count() > 0;
    };
    if (given("--features")) c.rc.features = features;
    if (given("--val")) c.rc.val = val;
    if (given("--ckpt")) c.rc.ckpt = ckpt;
    if (given("--mode")) c.rc.mode = mode;
    if (given("--n-perm")) c.rc.n_perm = n_perm;
    if (given("--alpha")) c.rc.alpha = alpha;
    if (given("--no-ema-eval")) c.rc.train.eval_with_ema = false;
    if (seed) {
      c.rc.seed = *seed;
      c.rc.model.seed = *seed;
      c.rc.train.seed = *seed;
    }

    if (name == "train") return cmd_train(c);
    if (name == "eval") return cmd_eval(c);
    if (name == "ablate") return cmd_ablate(c);
    if (name == "importance") return cmd_importance(c);
    if (name == "report") return cmd_report(c);
    const std::string path = !validate_path.empty() ? validate_path : features;
    if (path.empty()) throw UsageError("validate-features needs a file path");
    return cmd_validate(c, path);
  } catch (const UsageError& e) {
    err << "drex " << name << ": " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "drex " << name << ": error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace drex::cli
