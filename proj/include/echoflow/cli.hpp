#pragma once

// Subcommand dispatch for the echoflow tool. Every run writes into its own
// directory and starts by echoing the resolved configuration there.

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "echoflow/config.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/manifest.hpp"
#include "echoflow/nn/checkpoint.hpp"
#include "echoflow/nn/train.hpp"
#include "echoflow/saliency.hpp"
#include "echoflow/stats/delong.hpp"
#include "echoflow/stats/impute.hpp"
#include "echoflow/stats/io.hpp"
#include "echoflow/synth.hpp"

namespace echoflow::cli {

namespace fs = std::filesystem;

inline const std::vector<std::string>& subcommands() {
  static const std::vector<std::string> names{"synth", "preprocess", "flow", "train",
                                              "predict", "saliency", "eval", "impute"};
  return names;
}

// Runs fn(i) for i in [0, n) on a small pool. Results must go to per-index
// slots; the first failure (lowest index) is rethrown.
template <typename F>
void parallel_for(std::size_t n, F&& fn, std::size_t threads = 0) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct RunContext {
  PipelineConfig cfg;
  fs::path out;
  std::ostream* log = &std::cout;
};

namespace detail {

inline std::string absolute_path(const std::string& p) {
  return p.empty() ? p : fs::absolute(fs::path(p)).lexically_normal().string();
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t b = 0;
  while (b <= s.size()) {
    const auto e = std::min(s.find(',', b), s.size());
    const auto item = config_detail::trim(s.substr(b, e - b));
    if (!item.empty()) out.push_back(item);
    b = e + 1;
  }
  return out;
}

// Paths in the resolved config are absolute so a rerun works from any
// directory.
inline void absolutize(PipelineConfig& c) {
  c.data.manifest = absolute_path(c.data.manifest);
  c.eval.predictions = absolute_path(c.eval.predictions);
  c.saliency.model = absolute_path(c.saliency.model);
  c.impute.data = absolute_path(c.impute.data);
  std::string models;
  for (const auto& m : split_list(c.predict.models)) models += (models.empty() ? "" : ",") + absolute_path(m);
  c.predict.models = models;
}

inline void require_file(const std::string& path, const std::string& key) {
  require(!path.empty(), ErrorCode::config, key + " is required");
  require(fs::is_regular_file(path), ErrorCode::io, key + ": no such file " + path);
}

// Scan ids become file names.
inline void require_safe_id(const std::string& id) {
  const bool ok = !id.empty() && id != "." && id != ".." && std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
  require(ok, ErrorCode::invalid_argument, "scan id '" + id + "' is not usable as a file name");
}

inline std::vector<const ManifestRow*> rows_for(const Manifest& m, const std::string& split) {
  if (split == "all") {
    std::vector<const ManifestRow*> out;
    for (const auto& r : m.rows) out.push_back(&r);
    return out;
  }
  return m.in_split(parse_split(split));
}

inline Manifest load_manifest(const PipelineConfig& c) {
  require_file(c.data.manifest, "data.manifest");
  auto m = read_manifest(c.data.manifest);
  for (const auto& r : m.rows) require_safe_id(r.scan_id);
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// subcommands

inline void run_synth(RunContext& ctx) {
  const auto& c = ctx.cfg;
  require(c.seed_set, ErrorCode::config, "synth needs a seed (--seed or seed = ...)");
  auto opt = c.synth;
  opt.seed = c.seed;
  auto m = synth::gen_dataset(opt, ctx.out);
  m = synth::stratified_split(std::move(m), c.data.split, derive_seed(c.seed, 1));
  write_manifest((ctx.out / "manifest.csv").string(), m);
  *ctx.log << "synth: " << m.rows.size() << " scans in " << (ctx.out / "manifest.csv").string() << "\n";
}

inline void run_preprocess(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto m = detail::load_manifest(c);
  fs::create_directories(ctx.out / "videos");
  Manifest out;
  out.base_dir = ctx.out;
  out.rows = m.rows;
  std::vector<char> degenerate(m.rows.size(), 0);
  parallel_for(m.rows.size(), [&](std::size_t i) {
    const auto& r = m.rows[i];
    const auto p = preprocess_video(read_video(m.resolve(r.video_path)), c.data.preprocess);
    degenerate[i] = p.degenerate;
    write_video((ctx.out / "videos" / (r.scan_id + ".etns")).string(), p.video);
  });
  std::string report = "scan_id,degenerate\n";
  std::size_t n_degenerate = 0;
  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    out.rows[i].video_path = "videos/" + out.rows[i].scan_id + ".etns";
    out.rows[i].flow_path.clear();  // any old flow no longer matches
    report += out.rows[i].scan_id + "," + (degenerate[i] ? "1" : "0") + "\n";
    n_degenerate += std::size_t(degenerate[i]);
  }
  write_manifest((ctx.out / "manifest.csv").string(), out);
  stats::write_text((ctx.out / "preprocess.csv").string(), report);
  *ctx.log << "preprocess: " << out.rows.size() << " scans, " << n_degenerate << " degenerate\n";
}

inline void run_flow(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto m = detail::load_manifest(c);
  fs::create_directories(ctx.out / "flow");
  Manifest out;
  out.base_dir = ctx.out;
  out.rows = m.rows;
  parallel_for(m.rows.size(), [&](std::size_t i) {
    const auto& r = m.rows[i];
    const auto gray = read_video(m.resolve(r.video_path));
    require(gray.channels == 1, ErrorCode::invalid_argument, r.scan_id + ": flow needs a preprocessed gray video");
    write_video((ctx.out / "flow" / (r.scan_id + ".etns")).string(), compute_flow_video(gray, c.flow));
  });
  for (auto& r : out.rows) {
    r.video_path = detail::absolute_path(m.resolve(r.video_path));
    r.flow_path = "flow/" + r.scan_id + ".etns";
  }
  write_manifest((ctx.out / "manifest.csv").string(), out);
  *ctx.log << "flow: " << out.rows.size() << " scans\n";
}

inline void run_train(RunContext& ctx) {
  const auto& c = ctx.cfg;
  require(c.seed_set, ErrorCode::config, "train needs a seed (--seed or seed = ...)");
  const auto m = detail::load_manifest(c);
  const auto train = nn::load_split(m, Split::train, c.flow);
  const auto val = nn::load_split(m, Split::val, c.flow);
  std::vector<nn::TrainReport> reports;
  auto models = nn::train_ensemble(c.model.config, train, val, c.train_config(), c.train.ensemble, &reports);
  for (std::size_t k = 0; k < models.size(); ++k) {
    const std::string tag = "model_" + std::to_string(k);
    nn::save_checkpoint((ctx.out / (tag + ".ckpt")).string(), models[k]);
    stats::write_text((ctx.out / ("history_" + std::to_string(k) + ".csv")).string(),
                      nn::format_history(reports[k].history));
    *ctx.log << "train: " << tag << " best epoch " << reports[k].best_epoch << " of " << reports[k].history.size()
             << (reports[k].stopped_early ? " (stopped early)" : "") << "\n";
  }
}

inline void run_predict(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto m = detail::load_manifest(c);
  const auto paths = detail::split_list(c.predict.models);
  require(!paths.empty(), ErrorCode::config, "predict.models is required");
  std::vector<nn::TwoStreamModel<float>> models;
  for (const auto& p : paths) {
    detail::require_file(p, "predict.models");
    models.push_back(nn::load_checkpoint(p));
  }
  std::vector<nn::TwoStreamModel<float>*> members;
  for (auto& mdl : models) members.push_back(&mdl);
  const auto rows = detail::rows_for(m, c.predict.split);
  require(!rows.empty(), ErrorCode::invalid_argument, "no scans in split '" + c.predict.split + "'");
  const auto tc = c.train_config();
  std::vector<stats::ScoredSample> preds;
  for (const ManifestRow* r : rows) {
    const auto s = nn::load_sample(m, *r, c.flow);
    const double p = nn::ensemble_predict(members, s.gray, s.flow, tc.n_eval_clips, tc.clip_len,
                                          nn::scan_seed(c.seed, s.scan_id));
    preds.push_back({p, s.label, s.scan_id, s.patient_id});
  }
  stats::write_predictions((ctx.out / "predictions.csv").string(), preds);
  *ctx.log << "predict: " << preds.size() << " scans, " << models.size() << " model(s)\n";
}

inline void run_saliency(RunContext& ctx) {
  const auto& c = ctx.cfg;
  const auto m = detail::load_manifest(c);
  detail::require_file(c.saliency.model, "saliency.model");
  auto model = nn::load_checkpoint(c.saliency.model);
  const auto rows = detail::rows_for(m, c.saliency.split);
  require(!rows.empty(), ErrorCode::invalid_argument, "no scans in split '" + c.saliency.split + "'");
  const std::size_t clip_len = c.train.config.clip_len;
  std::string summary = "scan_id,stream,clip_start,all_zero\n";
  for (const ManifestRow* r : rows) {
    const auto s = nn::load_sample(m, *r, c.flow);
    const std::size_t start = sample_clip_starts(s.gray.frames, 1, clip_len, nn::scan_seed(c.seed, s.scan_id))[0];
    const auto gray = slice_frames(s.gray, start, clip_len), flow = slice_frames(s.flow, start, clip_len);
    const auto [sg, sf] = saliency::guided_backprop(model, gray, flow, s.scan_id);
    const fs::path dir = ctx.out / "saliency" / s.scan_id;
    fs::create_directories(dir);
    for (const auto* vol : {&sg, &sf}) {
      if (vol->map.data.empty()) continue;
      write_video((dir / (vol->stream + ".etns")).string(), vol->map);
      const auto proj = saliency::saliency_project(vol->map, c.saliency.project);
      const auto under = c.saliency.project == saliency::ProjectMode::per_frame ? gray : slice_frames(gray, 0, 1);
      const auto over = saliency::overlay(under, proj.images, c.saliency.overlay_alpha);
      for (std::size_t t = 0; t < proj.images.frames; ++t) {
        char name[64];
        std::snprintf(name, sizeof name, "_%03zu.pgm", t);
        saliency::write_pgm((dir / (vol->stream + name)).string(), proj.images, t);
        saliency::write_pgm((dir / (vol->stream + "_overlay" + name)).string(), over, t);
      }
      summary += s.scan_id + "," + vol->stream + "," + std::to_string(start) + "," + (proj.all_zero ? "1" : "0") + "\n";
    }
  }
  stats::write_text((ctx.out / "saliency.csv").string(), summary);
  *ctx.log << "saliency: " << rows.size() << " scans\n";
}

inline void run_eval(RunContext& ctx) {
  const auto& c = ctx.cfg;
  detail::require_file(c.eval.predictions, "eval.predictions");
  auto samples = stats::read_predictions(c.eval.predictions);
  if (c.eval.level == "patient") samples = stats::patient_aggregate(samples, c.eval.aggregation);
  const auto report = stats::compute_metrics(samples, c.eval.level, c.eval.alpha, c.eval.target);
  const auto text = stats::format_metrics(report);
  stats::write_text((ctx.out / "metrics.json").string(), text);
  stats::write_text((ctx.out / "roc.csv").string(), stats::format_roc_csv(stats::roc_curve(samples)));
  stats::write_text((ctx.out / "pr.csv").string(), stats::format_pr_csv(stats::pr_curve_davis_goadrich(samples)));
  *ctx.log << text;
}

inline void run_impute(RunContext& ctx) {
  const auto& c = ctx.cfg;
  detail::require_file(c.impute.data, "impute.data");
  const auto data = stats::read_data_matrix(c.impute.data);
  auto opt = c.impute.pmm;
  opt.seed = c.seed;
  const auto sets = stats::pmm_chained_impute(data, opt);
  fs::create_directories(ctx.out / "imputed");
  for (std::size_t k = 0; k < sets.size(); ++k) {
    char name[64];
    std::snprintf(name, sizeof name, "imputation_%03zu.csv", k + 1);
    stats::write_text((ctx.out / "imputed" / name).string(), stats::format_data_matrix(sets[k]));
  }
  *ctx.log << "impute: " << data.missing_count() << " missing entries, " << sets.size() << " imputations\n";
  if (c.impute.label_column.empty()) return;

  const auto it = std::find(data.columns.begin(), data.columns.end(), c.impute.label_column);
  require(it != data.columns.end(), ErrorCode::config,
          "impute.label_column: no column '" + c.impute.label_column + "'");
  const std::size_t lab = std::size_t(it - data.columns.begin());
  std::vector<int> labels;
  for (const auto& row : data.values) {
    require(row[lab] == 0.0 || row[lab] == 1.0, ErrorCode::invalid_argument,
            "label column must be fully observed and 0/1");
    labels.push_back(int(row[lab]));
  }
  nlohmann::ordered_json pooled = nlohmann::ordered_json::object();
  for (std::size_t j = 0; j < data.cols(); ++j) {
    if (j == lab) continue;
    std::vector<stats::PerImputation> per;
    for (const auto& set : sets) {
      std::vector<double> scores;
      for (const auto& row : set.values) scores.push_back(row[j]);
      const auto est = stats::delong_ci(stats::make_samples(scores, labels), c.eval.alpha);
      per.push_back({est.auc, est.variance});
    }
    const auto p = stats::rubin_pool_auc(per, c.eval.transform, c.eval.alpha);
    pooled[data.columns[j]] = {{"auc", p.auc},         {"ci_low", p.ci_low},   {"ci_high", p.ci_high},
                               {"within", p.within},   {"between", p.between}, {"total", p.total},
                               {"df", std::isinf(p.df) ? nlohmann::ordered_json("inf") : nlohmann::ordered_json(p.df)},
                               {"m", p.m},             {"transform", stats::to_string(p.transform)}};
  }
  stats::write_text((ctx.out / "pooled.json").string(), pooled.dump(2) + "\n");
  *ctx.log << pooled.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

inline std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Returns the process exit status: 0 on success, 1 for pipeline errors, 2 for
// usage errors. Failures print one line "error: <code>: <message>" to err.
inline int parse_and_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                              std::ostream& err = std::cerr) {
  CLI::App app{"Two-stream echo video classification pipeline", "echoflow"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  std::vector<std::string> sets;
  std::vector<std::pair<std::string, std::string>> flag_overrides;
  std::map<std::string, std::string> flag_values;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "INI config file");
    sub->add_option("--set", sets, "override, section.key=value (repeatable)");
    sub->add_option("--out", out_dir, "run directory (default runs/<subcommand>)");
    sub->add_option("--seed", flag_values["seed"], "random seed");
  };
  auto bind = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option(flag, flag_values[key], help);
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic labelled corpus");
  common(synth);
  bind(synth, "--n", "synth.n", "number of patients");
  bind(synth, "--fraction", "synth.positive_fraction", "positive fraction");
  auto* pre = app.add_subcommand("preprocess", "mask, normalise and resize raw videos");
  common(pre);
  bind(pre, "--manifest", "data.manifest", "input manifest");
  auto* flow = app.add_subcommand("flow", "compute dense optical flow per scan");
  common(flow);
  bind(flow, "--manifest", "data.manifest", "input manifest");
  auto* train = app.add_subcommand("train", "train the two-stream ensemble");
  common(train);
  bind(train, "--manifest", "data.manifest", "manifest with splits");
  auto* predict = app.add_subcommand("predict", "clip-averaged ensemble predictions");
  common(predict);
  bind(predict, "--manifest", "data.manifest", "manifest with splits");
  bind(predict, "--models", "predict.models", "comma-separated checkpoints");
  bind(predict, "--split", "predict.split", "train|val|test|all");
  auto* sal = app.add_subcommand("saliency", "guided-backprop saliency maps");
  common(sal);
  bind(sal, "--manifest", "data.manifest", "manifest with splits");
  bind(sal, "--model", "saliency.model", "checkpoint");
  bind(sal, "--split", "saliency.split", "train|val|test|all");
  bind(sal, "--project", "saliency.project", "per-frame|max-over-time");
  auto* eval = app.add_subcommand("eval", "ROC/PR metrics with DeLong intervals");
  common(eval);
  bind(eval, "--pred", "eval.predictions", "predictions CSV");
  bind(eval, "--level", "eval.level", "scan|patient");
  auto* imp = app.add_subcommand("impute", "PMM multiple imputation and pooled AUCs");
  common(imp);
  bind(imp, "--data", "impute.data", "data matrix CSV");
  bind(imp, "--label-column", "impute.label_column", "0/1 outcome column for pooled AUCs");

  if (argc > 1 && argv[1][0] != '-' &&
      std::find(subcommands().begin(), subcommands().end(), argv[1]) == subcommands().end()) {
    err << "error: usage: unknown subcommand '" << argv[1]
        << "' (expected synth|preprocess|flow|train|predict|saliency|eval|impute)\n";
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    std::vector<std::string> overrides = sets;
    for (const auto& [key, value] : flag_values)
      if (!value.empty()) overrides.push_back(key + "=" + value);
    const std::string name = chosen->get_name();
    if (out_dir.empty()) out_dir = (fs::path("runs") / name).string();
    RunContext ctx{config_load(config_path, overrides), fs::path(out_dir), &out};
    detail::absolutize(ctx.cfg);
    fs::create_directories(ctx.out);
    stats::write_text((ctx.out / "config.resolved").string(), format_config(ctx.cfg));
    if (name == "synth") run_synth(ctx);
    else if (name == "preprocess") run_preprocess(ctx);
    else if (name == "flow") run_flow(ctx);
    else if (name == "train") run_train(ctx);
    else if (name == "predict") run_predict(ctx);
    else if (name == "saliency") run_saliency(ctx);
    else if (name == "eval") run_eval(ctx);
    else run_impute(ctx);
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << one_line(e.what()) << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: io: " << one_line(e.what()) << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: internal: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}

}  // namespace echoflow::cli
