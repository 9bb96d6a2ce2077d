#pragma once

// Pipeline configuration: an INI file with fixed keys. Values resolve as
// built-in defaults, then the file, then `section.key=value` overrides.
// The resolved form lists every key and parses back to the same config.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "echoflow/augment.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/nn/model.hpp"
#include "echoflow/nn/train.hpp"
#include "echoflow/saliency.hpp"
#include "echoflow/stats/impute.hpp"
#include "echoflow/stats/io.hpp"
#include "echoflow/stats/roc.hpp"
#include "echoflow/synth.hpp"
#include "echoflow/video.hpp"

namespace echoflow {

struct DataSection {
  std::string manifest;
  PreprocessOptions preprocess;
  synth::SplitRatios split;
};

struct ModelSection {
  std::string depth = "r3d152";
  nn::ModelConfig config{nn::depth_blocks("r3d152")};
};

struct TrainSection {
  nn::TrainConfig config;  // clip_len, n_eval_clips, augment and seed are bound from other sections
  std::size_t ensemble = 3;
};

struct EvalSection {
  std::string predictions;
  std::string level = "scan";  // scan | patient
  double alpha = 0.05;
  double target = 0.8;
  stats::PoolTransform transform = stats::PoolTransform::log;
  stats::Aggregation aggregation = stats::Aggregation::mean;
};

struct PredictSection {
  std::string models;  // comma-separated checkpoint paths
  std::string split = "test";  // train | val | test | all
};

struct SaliencySection {
  std::string model;
  std::string split = "test";
  saliency::ProjectMode project = saliency::ProjectMode::per_frame;
  double overlay_alpha = 0.5;
};

struct ImputeSection {
  std::string data;
  std::string label_column;  // optional: pool per-column AUCs against this column
  stats::PmmOptions pmm;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  bool seed_set = false;
  DataSection data;
  synth::DatasetOptions synth;
  FlowParams flow;
  AugmentParams augment;
  ModelSection model;
  TrainSection train;
  EvalSection eval;
  PredictSection predict;
  SaliencySection saliency;
  ImputeSection impute;

  // Training config with the cross-section bindings applied.
  nn::TrainConfig train_config() const {
    nn::TrainConfig t = train.config;
    t.seed = seed;
    t.augment_params = augment;
    return t;
  }
};

namespace config_detail {

inline std::string fmt(double v) { return stats::format_double(v); }
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(Range r) { return fmt(r.lo) + "," + fmt(r.hi); }

inline double parse_real(const std::string& key, const std::string& s) {
  double v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size() && std::isfinite(v), ErrorCode::config,
          key + ": '" + s + "' is not a finite number");
  return v;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  require(ec == std::errc() && p == s.data() + s.size() && !s.empty(), ErrorCode::config,
          key + ": '" + s + "' is not a non-negative integer");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  fail(ErrorCode::config, key + ": '" + s + "' is not a boolean");
}

inline Range parse_range(const std::string& key, const std::string& s) {
  const auto comma = s.find(',');
  require(comma != std::string::npos, ErrorCode::config, key + ": expected 'lo,hi', got '" + s + "'");
  Range r{parse_real(key, s.substr(0, comma)), parse_real(key, s.substr(comma + 1))};
  require(r.lo <= r.hi, ErrorCode::config, key + ": lo > hi");
  return r;
}

// Converts library errors from the enum parsers into config errors naming the key.
template <typename F>
auto keyed(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    fail(ErrorCode::config, key + ": " + e.what());
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

struct Field {
  std::string key;  // "section.name", or "seed" at top level
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

inline std::vector<Field> fields() {
  std::vector<Field> f;
  auto real = [&f](std::string key, auto member) {
    f.push_back({key, [member](const PipelineConfig& c) { return fmt(member(c)); },
                 [member, key](PipelineConfig& c, const std::string& v) { member(c) = parse_real(key, v); }});
  };
  auto count = [&f](std::string key, auto member) {
    f.push_back({key, [member](const PipelineConfig& c) { return fmt(std::size_t(member(c))); },
                 [member, key](PipelineConfig& c, const std::string& v) { member(c) = parse_uint(key, v); }});
  };
  auto flag = [&f](std::string key, auto member) {
    f.push_back({key, [member](const PipelineConfig& c) { return fmt(bool(member(c))); },
                 [member, key](PipelineConfig& c, const std::string& v) { member(c) = parse_bool(key, v); }});
  };
  auto text = [&f](std::string key, auto member) {
    f.push_back({key, [member](const PipelineConfig& c) { return std::string(member(c)); },
                 [member](PipelineConfig& c, const std::string& v) { member(c) = v; }});
  };
  auto range = [&f](std::string key, auto member) {
    f.push_back({key, [member](const PipelineConfig& c) { return fmt(member(c)); },
                 [member, key](PipelineConfig& c, const std::string& v) { member(c) = parse_range(key, v); }});
  };
  auto choice = [&f](std::string key, auto member, auto parse, auto print) {
    f.push_back({key, [member, print](const PipelineConfig& c) { return print(member(c)); },
                 [member, parse, key](PipelineConfig& c, const std::string& v) {
                   member(c) = keyed(key, [&] { return parse(v); });
                 }});
  };

  f.push_back({"seed", [](const PipelineConfig& c) { return std::to_string(c.seed); },
               [](PipelineConfig& c, const std::string& v) {
                 c.seed = parse_uint("seed", v);
                 c.seed_set = true;
               }});

  text("data.manifest", [](auto& c) -> auto& { return c.data.manifest; });
  count("data.clip_len", [](auto& c) -> auto& { return c.train.config.clip_len; });
  count("data.n_clips", [](auto& c) -> auto& { return c.train.config.n_eval_clips; });
  count("data.height", [](auto& c) -> auto& { return c.data.preprocess.out_height; });
  count("data.width", [](auto& c) -> auto& { return c.data.preprocess.out_width; });
  real("data.mask_threshold", [](auto& c) -> auto& { return c.data.preprocess.mask_threshold; });
  real("data.split_train", [](auto& c) -> auto& { return c.data.split.train; });
  real("data.split_val", [](auto& c) -> auto& { return c.data.split.val; });
  real("data.split_test", [](auto& c) -> auto& { return c.data.split.test; });

  count("synth.n", [](auto& c) -> auto& { return c.synth.n; });
  real("synth.positive_fraction", [](auto& c) -> auto& { return c.synth.positive_fraction; });
  count("synth.scans_per_patient", [](auto& c) -> auto& { return c.synth.scans_per_patient; });
  count("synth.frames", [](auto& c) -> auto& { return c.synth.frames; });
  count("synth.height", [](auto& c) -> auto& { return c.synth.height; });
  count("synth.width", [](auto& c) -> auto& { return c.synth.width; });

  count("flow.pyramid_levels", [](auto& c) -> auto& { return c.flow.pyramid_levels; });
  real("flow.pyramid_scale", [](auto& c) -> auto& { return c.flow.pyramid_scale; });
  count("flow.window_size", [](auto& c) -> auto& { return c.flow.window_size; });
  count("flow.iterations", [](auto& c) -> auto& { return c.flow.iterations; });
  count("flow.poly_n", [](auto& c) -> auto& { return c.flow.poly_n; });
  real("flow.poly_sigma", [](auto& c) -> auto& { return c.flow.poly_sigma; });

  flag("augment.enabled", [](auto& c) -> auto& { return c.train.config.augment; });
  const char* shear_names[] = {"shear_ty", "shear_tx", "shear_yt", "shear_yx", "shear_xt", "shear_xy"};
  for (std::size_t i = 0; i < 6; ++i)
    range(std::string("augment.") + shear_names[i], [i](auto& c) -> auto& { return c.augment.shear[i]; });
  range("augment.scale", [](auto& c) -> auto& { return c.augment.scale; });
  flag("augment.scale_time", [](auto& c) -> auto& { return c.augment.scale_time; });
  range("augment.rotation", [](auto& c) -> auto& { return c.augment.rotation_deg; });
  range("augment.rotation_ty", [](auto& c) -> auto& { return c.augment.rotation_ty_deg; });
  range("augment.rotation_tx", [](auto& c) -> auto& { return c.augment.rotation_tx_deg; });
  range("augment.brightness", [](auto& c) -> auto& { return c.augment.brightness; });

  f.push_back({"model.depth", [](const PipelineConfig& c) { return c.model.depth; },
               [](PipelineConfig& c, const std::string& v) {
                 c.model.config.blocks = keyed("model.depth", [&] { return nn::depth_blocks(v); });
                 c.model.depth = v;
               }});
  count("model.base_channels", [](auto& c) -> auto& { return c.model.config.base_channels; });
  flag("model.batch_norm", [](auto& c) -> auto& { return c.model.config.batch_norm; });
  choice("model.streams", [](auto& c) -> auto& { return c.model.config.streams; }, nn::parse_streams,
         [](nn::Streams s) { return nn::to_string(s); });
  choice("model.output", [](auto& c) -> auto& { return c.model.config.output; },
         nn::parse_output_activation, [](nn::OutputActivation a) { return nn::to_string(a); });

  count("train.epochs", [](auto& c) -> auto& { return c.train.config.epochs; });
  count("train.batch_size", [](auto& c) -> auto& { return c.train.config.batch_size; });
  real("train.lr", [](auto& c) -> auto& { return c.train.config.lr; });
  count("train.patience", [](auto& c) -> auto& { return c.train.config.patience; });
  choice("train.monitor", [](auto& c) -> auto& { return c.train.config.monitor; }, nn::parse_monitor,
         [](nn::Monitor m) { return nn::to_string(m); });
  choice("train.class_weight", [](auto& c) -> auto& { return c.train.config.class_weight; },
         nn::parse_class_weighting, [](nn::ClassWeighting w) { return nn::to_string(w); });
  real("train.weight_decay", [](auto& c) -> auto& { return c.train.config.weight_decay; });
  count("train.ensemble", [](auto& c) -> auto& { return c.train.ensemble; });

  text("eval.predictions", [](auto& c) -> auto& { return c.eval.predictions; });
  f.push_back({"eval.level", [](const PipelineConfig& c) { return c.eval.level; },
               [](PipelineConfig& c, const std::string& v) {
                 require(v == "scan" || v == "patient", ErrorCode::config,
                         "eval.level: '" + v + "' (expected scan|patient)");
                 c.eval.level = v;
               }});
  real("eval.alpha", [](auto& c) -> auto& { return c.eval.alpha; });
  real("eval.target", [](auto& c) -> auto& { return c.eval.target; });
  choice("eval.transform", [](auto& c) -> auto& { return c.eval.transform; }, stats::parse_transform,
         [](stats::PoolTransform t) { return stats::to_string(t); });
  choice("eval.aggregation", [](auto& c) -> auto& { return c.eval.aggregation; },
         stats::parse_aggregation, [](stats::Aggregation a) { return stats::to_string(a); });

  text("predict.models", [](auto& c) -> auto& { return c.predict.models; });
  f.push_back({"predict.split", [](const PipelineConfig& c) { return c.predict.split; },
               [](PipelineConfig& c, const std::string& v) {
                 if (v != "all") keyed("predict.split", [&] { return parse_split(v); });
                 c.predict.split = v;
               }});

  text("saliency.model", [](auto& c) -> auto& { return c.saliency.model; });
  f.push_back({"saliency.split", [](const PipelineConfig& c) { return c.saliency.split; },
               [](PipelineConfig& c, const std::string& v) {
                 if (v != "all") keyed("saliency.split", [&] { return parse_split(v); });
                 c.saliency.split = v;
               }});
  choice("saliency.project", [](auto& c) -> auto& { return c.saliency.project; },
         saliency::parse_project_mode,
         [](saliency::ProjectMode m) { return std::string(m == saliency::ProjectMode::per_frame ? "per-frame" : "max-over-time"); });
  real("saliency.overlay_alpha", [](auto& c) -> auto& { return c.saliency.overlay_alpha; });

  text("impute.data", [](auto& c) -> auto& { return c.impute.data; });
  text("impute.label_column", [](auto& c) -> auto& { return c.impute.label_column; });
  count("impute.m", [](auto& c) -> auto& { return c.impute.pmm.m; });
  count("impute.maxit", [](auto& c) -> auto& { return c.impute.pmm.maxit; });
  count("impute.donors", [](auto& c) -> auto& { return c.impute.pmm.donors; });
  return f;
}

inline const std::vector<Field>& field_table() {
  static const std::vector<Field> table = fields();
  return table;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& f : field_table())
    if (f.key == key) return &f;
  return nullptr;
}

inline void set_key(PipelineConfig& c, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  require(f != nullptr, ErrorCode::config, "unknown config key '" + key + "'");
  f->set(c, trim(value));
}

}  // namespace config_detail

inline void validate(const PipelineConfig& c) {
  nn::validate(c.train_config());
  nn::validate(c.model.config);
  validate(c.augment);
  require(c.train.ensemble >= 1, ErrorCode::config, "train.ensemble must be >= 1");
  require(c.eval.alpha > 0.0 && c.eval.alpha < 1.0, ErrorCode::config, "eval.alpha must lie in (0, 1)");
  require(c.eval.target > 0.0 && c.eval.target <= 1.0, ErrorCode::config, "eval.target must lie in (0, 1]");
  require(c.saliency.overlay_alpha >= 0.0 && c.saliency.overlay_alpha <= 1.0, ErrorCode::config,
          "saliency.overlay_alpha must lie in [0, 1]");
  require(c.impute.pmm.m >= 1 && c.impute.pmm.maxit >= 1 && c.impute.pmm.donors >= 1, ErrorCode::config,
          "impute.m, impute.maxit and impute.donors must be >= 1");
  const auto& s = c.data.split;
  require(s.train > 0 && s.val > 0 && s.test > 0 && std::abs(s.train + s.val + s.test - 1.0) < 1e-9,
          ErrorCode::config, "data.split_* must be positive and sum to 1");
  require(c.synth.positive_fraction > 0.0 && c.synth.positive_fraction < 1.0, ErrorCode::config,
          "synth.positive_fraction must lie in (0, 1)");
  require(c.data.preprocess.out_height >= 16 && c.data.preprocess.out_width >= 16, ErrorCode::config,
          "data.height and data.width must be >= 16");
}

// Applies `key=value` pairs in order.
inline void apply_overrides(PipelineConfig& c, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, ErrorCode::config, "override '" + o + "' is not key=value");
    config_detail::set_key(c, config_detail::trim(o.substr(0, eq)), o.substr(eq + 1));
  }
}

inline void apply_ini(PipelineConfig& c, std::istream& in, const std::string& what) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorCode::config, what + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [name, node] : tree) {
    if (node.empty()) {
      config_detail::set_key(c, name, node.data());
      continue;
    }
    for (const auto& [key, leaf] : node) config_detail::set_key(c, name + "." + key, leaf.data());
  }
}

// defaults <- file (optional) <- overrides
inline PipelineConfig config_load(const std::string& path, const std::vector<std::string>& overrides = {}) {
  PipelineConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::io, "cannot open config " + path);
    apply_ini(c, in, path);
  }
  apply_overrides(c, overrides);
  validate(c);
  return c;
}

inline PipelineConfig config_parse(const std::string& text, const std::vector<std::string>& overrides = {}) {
  PipelineConfig c;
  std::istringstream in(text);
  apply_ini(c, in, "config");
  apply_overrides(c, overrides);
  validate(c);
  return c;
}

inline std::string config_value(const PipelineConfig& c, const std::string& key) {
  const auto* f = config_detail::find_field(key);
  require(f != nullptr, ErrorCode::config, "unknown config key '" + key + "'");
  return f->get(c);
}

// Every key, grouped by section in a fixed order.
inline std::string format_config(const PipelineConfig& c) {
  std::string out, section;
  for (const auto& f : config_detail::field_table()) {
    const auto dot = f.key.find('.');
    if (dot == std::string::npos) {
      out += f.key + " = " + f.get(c) + "\n";
      continue;
    }
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += "\n[" + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(c) + "\n";
  }
  return out;
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : config_detail::field_table()) out.push_back(f.key);
  return out;
}

}  // namespace echoflow
