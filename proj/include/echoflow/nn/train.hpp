#pragma once

// Mini-batch training with early stopping, multi-clip scan prediction and
// seed ensembles.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "echoflow/augment.hpp"
#include "echoflow/flow.hpp"
#include "echoflow/manifest.hpp"
#include "echoflow/nn/adamw.hpp"
#include "echoflow/nn/loss.hpp"
#include "echoflow/nn/model.hpp"
#include "echoflow/stats/roc.hpp"
#include "echoflow/video.hpp"

namespace echoflow::nn {

enum class Monitor { train, val };
enum class ClassWeighting { balanced, none };

inline Monitor parse_monitor(const std::string& s) {
  if (s == "train") return Monitor::train;
  if (s == "val") return Monitor::val;
  fail(ErrorCode::invalid_argument, "unknown monitor '" + s + "' (expected train|val)");
}
inline std::string to_string(Monitor m) { return m == Monitor::train ? "train" : "val"; }

inline ClassWeighting parse_class_weighting(const std::string& s) {
  if (s == "balanced") return ClassWeighting::balanced;
  if (s == "none") return ClassWeighting::none;
  fail(ErrorCode::invalid_argument, "unknown class weighting '" + s + "' (expected balanced|none)");
}
inline std::string to_string(ClassWeighting w) { return w == ClassWeighting::balanced ? "balanced" : "none"; }

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 8;
  double lr = 1e-5;
  std::size_t patience = 5;
  Monitor monitor = Monitor::train;
  ClassWeighting class_weight = ClassWeighting::balanced;
  std::uint64_t seed = 0;
  std::size_t clip_len = kDefaultClipLen;
  std::size_t n_eval_clips = kDefaultEvalClips;
  double weight_decay = 0.01;
  bool augment = true;
  AugmentParams augment_params;
};

inline void validate(const TrainConfig& c) {
  require(c.epochs >= 1 && c.batch_size >= 1 && c.patience >= 1 && c.clip_len >= 2 && c.n_eval_clips >= 1,
          ErrorCode::config, "epochs, batch_size, patience, n_eval_clips must be >= 1 and clip_len >= 2");
  require(c.patience <= c.epochs, ErrorCode::config, "patience exceeds epochs");
  require(c.lr > 0.0 && std::isfinite(c.lr), ErrorCode::config, "lr must be positive");
  require(c.weight_decay >= 0.0, ErrorCode::config, "weight_decay must be >= 0");
  validate(c.augment_params);
}

// One scan ready for the network: preprocessed grayscale (T x H x W x 1) and
// the matching flow stream (T x H x W x 2).
struct Sample {
  std::string scan_id;
  std::string patient_id;
  int label = 0;
  VideoTensor gray;
  VideoTensor flow;
};

// Reads one manifest row. A row without a flow file gets its flow computed
// on the fly.
inline Sample load_sample(const Manifest& m, const ManifestRow& r, const FlowParams& flow_params = {}) {
  Sample s{r.scan_id, r.patient_id, r.label, read_video(m.resolve(r.video_path)), {}};
  require(s.gray.channels == 1, ErrorCode::invalid_argument, r.scan_id + ": expected a preprocessed gray video");
  s.flow = r.flow_path.empty() ? compute_flow_video(s.gray, flow_params) : read_video(m.resolve(r.flow_path));
  require(s.flow.frames == s.gray.frames && s.flow.height == s.gray.height && s.flow.width == s.gray.width &&
              s.flow.channels == 2,
          ErrorCode::shape_mismatch,
          r.scan_id + ": flow " + shape_string(s.flow) + " does not match video " + shape_string(s.gray));
  return s;
}

inline std::vector<Sample> load_split(const Manifest& m, Split split, const FlowParams& flow_params = {}) {
  std::vector<Sample> out;
  for (const ManifestRow* r : m.in_split(split)) out.push_back(load_sample(m, *r, flow_params));
  return out;
}

// Stops once the monitored value has failed to strictly improve for
// `patience` consecutive epochs.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Returns true when this value is a new best.
  bool update(double value) {
    if (value < best_) {
      best_ = value;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }
  std::size_t stale() const { return stale_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_history(const std::vector<EpochRecord>& h) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string();
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
  };
  std::string out = "epoch,train_loss,val_loss,val_auc\n";
  for (const auto& r : h)
    out += std::to_string(r.epoch) + "," + num(r.train_loss) + "," + num(r.val_loss) + "," + num(r.val_auc) + "\n";
  return out;
}

struct TrainReport {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

namespace detail {

// Anchored mean, order independent: inputs are sorted first.
inline double sorted_mean(std::vector<double> v) {
  require(!v.empty(), ErrorCode::invalid_argument, "mean of nothing");
  std::sort(v.begin(), v.end());
  double s = 0;
  for (double x : v) s += x - v.front();
  return v.front() + s / double(v.size());
}

inline double sample_loss(OutputActivation out, double label, double logit, double weight) {
  const double y[1] = {label}, z[1] = {logit}, w[1] = {weight};
  return out == OutputActivation::sigmoid ? weighted_bce_logits(y, z, w).loss : weighted_mse(y, z, w).loss;
}

// Shuffled index batches; a trailing batch of one joins the previous batch so
// batch statistics never come from a single clip.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + long(i), order.begin() + long(std::min(n, i + batch_size)));
  if (out.size() >= 2 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

template <typename T>
struct Snapshot {
  std::vector<Tensor<T>> params, buffers;
};

template <typename Model>
auto snapshot(Model& model) {
  auto refs = model.params();
  Snapshot<std::decay_t<decltype(refs.params.front()->value.data.front())>> s;
  for (auto* p : refs.params) s.params.push_back(p->value);
  for (const auto& b : refs.buffers) s.buffers.push_back(*b.value);
  return s;
}

template <typename Model, typename S>
void restore(Model& model, const S& s) {
  auto refs = model.params();
  for (std::size_t i = 0; i < refs.params.size(); ++i) refs.params[i]->value = s.params[i];
  for (std::size_t i = 0; i < refs.buffers.size(); ++i) *refs.buffers[i].value = s.buffers[i];
}

}  // namespace detail

// Mean model output over n_clips clips whose starts are shared by the two
// streams. Each clip is forwarded on its own in inference mode.
template <typename Model>
double predict_scan(Model& model, const VideoTensor& gray, const VideoTensor& flow, std::size_t n_clips,
                    std::size_t clip_len, std::uint64_t seed) {
  require(gray.frames == flow.frames, ErrorCode::shape_mismatch, "gray and flow videos differ in frame count");
  require(n_clips >= 1, ErrorCode::invalid_argument, "n_clips must be >= 1");
  std::vector<double> outs;
  for (std::size_t s : sample_clip_starts(gray.frames, n_clips, clip_len, seed)) {
    const auto g = make_batch<float>(slice_frames(gray, s, clip_len));
    const auto f = make_batch<float>(slice_frames(flow, s, clip_len));
    outs.push_back(double(model.activate(model.forward_logits(g, f, false).data[0])));
  }
  model.clear_cache();
  return detail::sorted_mean(outs);
}

// Per-scan seed for evaluation clips, independent of scan order.
inline std::uint64_t scan_seed(std::uint64_t seed, const std::string& scan_id) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : scan_id) h = (h ^ c) * 1099511628211ull;
  return derive_seed(seed, h);
}

template <typename Model>
std::vector<double> predict_samples(Model& model, const std::vector<Sample>& data, std::size_t n_clips,
                                    std::size_t clip_len, std::uint64_t seed) {
  std::vector<double> out;
  for (const auto& s : data) out.push_back(predict_scan(model, s.gray, s.flow, n_clips, clip_len, scan_seed(seed, s.scan_id)));
  return out;
}

template <typename Model>
double ensemble_predict(const std::vector<Model*>& models, const VideoTensor& gray, const VideoTensor& flow,
                        std::size_t n_clips, std::size_t clip_len, std::uint64_t seed) {
  require(!models.empty(), ErrorCode::invalid_argument, "ensemble needs at least one model");
  std::vector<double> outs;
  for (Model* m : models) outs.push_back(predict_scan(*m, gray, flow, n_clips, clip_len, seed));
  return detail::sorted_mean(outs);
}

// Trains `model` in place. Model needs forward_logits, backward, activate,
// output, params, zero_grad and clear_cache as on TwoStreamModel.
template <typename Model>
TrainReport fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
                const TrainConfig& cfg) {
  validate(cfg);
  require(!train.empty(), ErrorCode::invalid_argument, "training split is empty");
  std::vector<int> labels;
  for (const auto& s : train) {
    labels.push_back(s.label);
    require(s.gray.frames >= cfg.clip_len, ErrorCode::insufficient_frames,
            s.scan_id + " has " + std::to_string(s.gray.frames) + " frames, fewer than clip_len " +
                std::to_string(cfg.clip_len));
  }
  const ClassWeights cw = class_weights(labels);  // also rejects single-class splits
  const ClassWeights weights = cfg.class_weight == ClassWeighting::balanced ? cw : ClassWeights{};
  if (cfg.monitor == Monitor::val) require(!val.empty(), ErrorCode::invalid_argument, "val monitor needs a val split");

  AdamW<float> opt(AdamWOptions{0.9, 0.999, 1e-8, cfg.weight_decay});
  EarlyStopper stopper(cfg.patience);
  TrainReport report;
  auto best = detail::snapshot(model);
  const auto refs = model.params();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, epoch);
    std::vector<double> per_sample(train.size(), 0.0);
    for (const auto& batch : detail::make_batches(train.size(), cfg.batch_size, rng)) {
      std::vector<VideoTensor> gray, flow;
      std::vector<double> y, w;
      for (std::size_t idx : batch) {
        const Sample& s = train[idx];
        const std::size_t start = uniform_index(rng, 0, s.gray.frames - cfg.clip_len);
        Clip clip{slice_frames(s.gray, start, cfg.clip_len), s.scan_id, start};
        VideoTensor f = slice_frames(s.flow, start, cfg.clip_len);
        if (cfg.augment) std::tie(clip, f) = random_augment(clip, f, cfg.augment_params, rng);
        gray.push_back(std::move(clip.video));
        flow.push_back(std::move(f));
        y.push_back(double(s.label));
        w.push_back(weights.of(s.label));
      }
      std::vector<const VideoTensor*> gp, fp;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        gp.push_back(&gray[i]);
        fp.push_back(&flow[i]);
      }
      model.zero_grad();
      const auto logits = model.forward_logits(make_batch<float>(gp), make_batch<float>(fp), true);
      const std::vector<double> z(logits.data.begin(), logits.data.end());
      const auto loss = model.output() == OutputActivation::sigmoid ? weighted_bce_logits(y, z, w)
                                                                     : weighted_mse(y, z, w);
      for (std::size_t i = 0; i < batch.size(); ++i)
        per_sample[batch[i]] = detail::sample_loss(model.output(), y[i], z[i], w[i]);
      Tensor<float> dz({batch.size()});
      for (std::size_t i = 0; i < batch.size(); ++i) dz.data[i] = static_cast<float>(loss.grad[i]);
      model.backward(dz, false);
      opt.step(refs.params, cfg.lr);
    }
    model.clear_cache();

    EpochRecord rec;
    rec.epoch = epoch;
    // summed in dataset order so the value does not depend on the shuffle
    rec.train_loss = std::accumulate(per_sample.begin(), per_sample.end(), 0.0) / double(train.size());
    if (!val.empty()) {
      const auto p = predict_samples(model, val, cfg.n_eval_clips, cfg.clip_len, cfg.seed);
      std::vector<double> vy, vw(val.size(), 1.0);
      std::vector<stats::ScoredSample> scored;
      for (std::size_t i = 0; i < val.size(); ++i) {
        vy.push_back(double(val[i].label));
        scored.push_back({p[i], val[i].label, val[i].scan_id, val[i].patient_id});
      }
      rec.val_loss = model.output() == OutputActivation::sigmoid ? weighted_bce(vy, p, vw).loss
                                                                 : weighted_mse(vy, p, vw).loss;
      const auto counts = stats::count_classes(scored);
      if (counts.positives > 0 && counts.negatives > 0) rec.val_auc = stats::auc_trapezoid(scored);
    }
    report.history.push_back(rec);
    if (stopper.update(cfg.monitor == Monitor::train ? rec.train_loss : rec.val_loss)) {
      best = detail::snapshot(model);
      report.best_epoch = epoch;
    }
    if (stopper.should_stop()) {
      report.stopped_early = epoch < cfg.epochs;
      break;
    }
  }
  detail::restore(model, best);
  return report;
}

// Builds and initialises a model from the training seed, then fits it.
inline std::pair<TwoStreamModel<float>, TrainReport> train_model(const ModelConfig& mcfg,
                                                                 const std::vector<Sample>& train,
                                                                 const std::vector<Sample>& val,
                                                                 const TrainConfig& cfg) {
  TwoStreamModel<float> model(mcfg);
  Rng init = make_rng(cfg.seed, 0);
  model.init(init);
  auto report = fit(model, train, val, cfg);
  return {std::move(model), std::move(report)};
}

// Ensemble members differ only in their seed.
inline std::vector<TwoStreamModel<float>> train_ensemble(const ModelConfig& mcfg, const std::vector<Sample>& train,
                                                         const std::vector<Sample>& val, TrainConfig cfg,
                                                         std::size_t members,
                                                         std::vector<TrainReport>* reports = nullptr) {
  std::vector<TwoStreamModel<float>> out;
  const std::uint64_t root = cfg.seed;
  for (std::size_t k = 0; k < members; ++k) {
    cfg.seed = derive_seed(root, k);
    auto [m, r] = train_model(mcfg, train, val, cfg);
    out.push_back(std::move(m));
    if (reports) reports->push_back(std::move(r));
  }
  return out;
}

}  // namespace echoflow::nn
