#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "clue/datagen.hpp"
#include "clue/manifest.hpp"
#include "clue/metrics.hpp"
#include "clue/optim.hpp"
#include "clue/pipeline.hpp"
#include "clue/streams.hpp"
#include "clue/text.hpp"

namespace clue {

/// Seed used to initialise the model of a run; kept distinct from the split seed.
inline std::uint64_t model_seed(std::uint64_t seed) { return mix_seed(seed, 0x6d6f64656cULL); }

/// Per-frame backbone features of every episode, computed once per
/// (backbone, model seed, pixel-noise setting) and shared between runs.
class FeatureCache {
 public:
  using Features = std::vector<std::vector<Tensor<float>>>;

  const Features& get(const std::string& key, const std::function<Features()>& compute) {
    {
      std::lock_guard lock(mu_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return *it->second;
    }
    auto f = std::make_shared<Features>(compute());
    std::lock_guard lock(mu_);
    auto [it, inserted] = cache_.emplace(key, std::move(f));
    return *it->second;
  }

  void clear() {
    std::lock_guard lock(mu_);
    cache_.clear();
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Features>> cache_;
};

inline std::string backbone_key(const BackboneConfig& b) {
  return std::string(to_string(b.kind)) + ":" + text::format_double(b.width_multiplier) + ":" +
         std::to_string(b.input_size) + ":" + (b.with_avg_pool ? "ap" : "noap");
}

inline const std::string kBackbonePrefix = "visual.backbone.";

/// Hash of the backbone's weights, so imported backbones never share cached
/// features with freshly initialised ones.
inline std::uint64_t backbone_fingerprint(const ClueModel<float>& model) {
  std::uint64_t h = 0;
  for (const auto& p : model.params()) {
    if (p.name.rfind(kBackbonePrefix, 0) != 0) continue;
    const auto* bytes = reinterpret_cast<const char*>(p.value().ptr());
    h = mix_seed(h, fnv1a(std::string_view(bytes, p.value().size() * sizeof(float))));
  }
  return h;
}

inline void load_backbone_weights(ClueModel<float>& model, const std::filesystem::path& dir) {
  if (!model.has_backbone()) throw ConfigError("backbone weights given but the visual stream is disabled");
  auto sub = select_params(model.params(), kBackbonePrefix);
  read_weights(sub, dir);
  assign_params(model.params(), sub);
}

/// Everything needed to run one configuration over a list of seeds.
struct ExperimentPlan {
  std::string config_id = "default";
  ModelConfig model;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1};
  double train_fraction = 0.8;
  double test_pixel_flip = 0.0;  // noise applied to test frames only
  std::size_t jobs = 1;
  std::string backbone_weights;  // optional backbone-only weight directory

  void validate() const {
    model.validate();
    train.validate();
    if (seeds.empty()) throw ConfigError("seed list is empty");
    auto s = seeds;
    std::sort(s.begin(), s.end());
    if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ConfigError("seed list has duplicates");
  }
};

/// A prepared dataset plus the manifest it came from.
struct PreparedDataset {
  DatasetManifest manifest;
  std::vector<PreparedEpisode> episodes;
  std::map<std::string, std::size_t> index;
  FeatureCache* cache = nullptr;  // optional, shared across runs

  const PreparedEpisode& by_id(const std::string& id) const {
    auto it = index.find(id);
    if (it == index.end()) throw InputError("no episode with id '" + id + "'");
    return episodes[it->second];
  }
};

inline PreparedDataset prepare_dataset(const Dataset& d, std::size_t input_size, const audio::MfccParams& mp) {
  PreparedDataset p{d.manifest, prepare_all(d.episodes, input_size, mp), {}, nullptr};
  for (std::size_t i = 0; i < p.episodes.size(); ++i) p.index[p.episodes[i].id] = i;
  return p;
}

/// Builds model inputs for the given episodes with cached backbone features.
/// Test-time pixel zeroing is seeded per (run seed, episode id, frame).
inline std::vector<EpisodeInputs<float>> model_inputs(const PreparedDataset& data, const std::vector<std::string>& ids,
                                                      const ClueModel<float>& model, std::uint64_t seed,
                                                      double pixel_flip) {
  const auto& cfg = model.config();
  auto compute_one = [&](const PreparedEpisode& e) {
    std::vector<Tensor<float>> frames = e.inputs.frames;
    if (pixel_flip > 0.0)
      for (std::size_t t = 0; t < frames.size(); ++t) {
        Rng rng(mix_seed(seed, fnv1a(e.id)), "pixel-noise:" + std::to_string(t));
        zero_pixels(frames[t], pixel_flip, rng);
      }
    return model.backbone_features(frames);
  };
  const FeatureCache::Features* all = nullptr;
  FeatureCache::Features local;
  if (cfg.use_visual && !cfg.backbone_trainable) {
    auto compute = [&] {
      FeatureCache::Features f;
      f.reserve(data.episodes.size());
      for (const auto& e : data.episodes) f.push_back(compute_one(e));
      return f;
    };
    if (data.cache) {
      const std::string key = backbone_key(cfg.backbone) + "|" + std::to_string(backbone_fingerprint(model)) + "|" +
                              text::format_double(pixel_flip) + "|" + std::to_string(seed);
      all = &data.cache->get(key, compute);
    } else {
      local = compute();
      all = &local;
    }
  }
  std::vector<EpisodeInputs<float>> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto& e = data.by_id(id);
    EpisodeInputs<float> in;
    if (cfg.use_visual) {
      if (all) {
        in.features = (*all)[data.index.at(id)];
      } else {
        in.frames = e.inputs.frames;
        if (pixel_flip > 0.0)
          for (std::size_t t = 0; t < in.frames.size(); ++t) {
            Rng rng(mix_seed(seed, fnv1a(e.id)), "pixel-noise:" + std::to_string(t));
            zero_pixels(in.frames[t], pixel_flip, rng);
          }
      }
    }
    if (cfg.use_audio) in.mfcc = e.inputs.mfcc;
    if (cfg.use_proprio) in.proprio = e.inputs.proprio;
    out.push_back(std::move(in));
  }
  return out;
}

inline std::vector<std::size_t> labels_of(const PreparedDataset& data, const std::vector<std::string>& ids) {
  std::vector<std::size_t> y;
  for (const auto& id : ids) y.push_back(data.by_id(id).label);
  return y;
}

struct TrainResult {
  std::vector<double> loss_history;  // mean weighted loss per epoch
};

/// Per-episode Adam with weighted cross-entropy. Episodes are visited in a
/// seeded random order each epoch.
inline TrainResult train(ClueModel<float>& model, const std::vector<EpisodeInputs<float>>& inputs,
                         const std::vector<std::size_t>& labels, const std::vector<std::string>& ids,
                         const TrainConfig& tcfg) {
  tcfg.validate();
  if (inputs.empty()) throw InputError("training set is empty");
  if (inputs.size() != labels.size()) throw DimensionError("inputs and labels differ in count");
  if (tcfg.class_weights.size() != model.config().num_classes)
    throw ConfigError("class weight count does not match num_classes");
  std::vector<float> weights(tcfg.class_weights.begin(), tcfg.class_weights.end());
  if (model.config().use_visual) {
    std::vector<Tensor<float>> all;
    for (const auto& in : inputs) {
      auto f = in.features.empty() ? model.backbone_features(in.frames) : in.features;
      for (auto& x : f) all.push_back(std::move(x));
    }
    model.calibrate_feature_norm(all);
  }
  auto params = model.trainable_params();
  AdamState<float> state;
  Rng order_rng(tcfg.seed, "order");
  Rng dropout_rng(tcfg.seed, "dropout");
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult r;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[order_rng.below(i + 1)]);
    double total = 0;
    for (std::size_t k : order) {
      model.params().zero_grad();
      Var<float> loss;
      try {
        auto fr = model.forward(inputs[k], Mode::train, dropout_rng);
        loss = softmax_cross_entropy(fr.logits, labels[k], std::span<const float>(weights));
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", episode " +
                           (k < ids.size() ? ids[k] : std::to_string(k)) + ": " + e.what());
      }
      backward(loss);
      adam_step(params, state, tcfg, ++step);
      total += static_cast<double>(loss.value()[0]);
    }
    r.loss_history.push_back(total / static_cast<double>(inputs.size()));
    if (!std::isfinite(r.loss_history.back()))
      throw NumericError("non-finite mean loss at epoch " + std::to_string(epoch + 1));
  }
  return r;
}

inline std::vector<std::size_t> predict_all(const ClueModel<float>& model,
                                            const std::vector<EpisodeInputs<float>>& inputs) {
  std::vector<std::size_t> pred;
  pred.reserve(inputs.size());
  for (const auto& in : inputs) pred.push_back(model.predict(in).predicted);
  return pred;
}

inline MetricsReport evaluate(const ClueModel<float>& model, const std::vector<EpisodeInputs<float>>& inputs,
                              const std::vector<std::size_t>& labels) {
  return compute_metrics(labels, predict_all(model, inputs), model.config().num_classes);
}

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsReport report;
  std::vector<double> loss_history;
  std::vector<std::string> test_ids;
  std::vector<std::size_t> predictions;
};

using Clock = std::chrono::steady_clock;

inline double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

/// Fresh model for one seed, with the plan's backbone weights if any.
inline ClueModel<float> build_model(const PreparedDataset& data, const ExperimentPlan& plan, std::uint64_t seed) {
  ClueModel<float> model(plan.model, geometry_for(data.episodes, plan.model.backbone.input_size), model_seed(seed));
  if (!plan.backbone_weights.empty() && plan.model.use_visual) load_backbone_weights(model, plan.backbone_weights);
  return model;
}

/// Layout written by `train`: <root>/seed_<s>/weights.
inline std::filesystem::path seed_weights_dir(const std::filesystem::path& root, std::uint64_t seed) {
  return root / ("seed_" + std::to_string(seed)) / "weights";
}

/// The trained model of `seed` read back from a `train` output directory.
inline ClueModel<float> load_trained(const PreparedDataset& data, const ExperimentPlan& plan, std::uint64_t seed,
                                     const std::filesystem::path& root) {
  ClueModel<float> model(plan.model, geometry_for(data.episodes, plan.model.backbone.input_size), model_seed(seed));
  read_weights(model.params(), seed_weights_dir(root, seed));
  return model;
}

/// One seed: split, initialise, train, evaluate. Optionally hands the trained
/// model to `after` (e.g. for noise sweeps or weight export).
inline SeedResult run_seed(const PreparedDataset& data, const ExperimentPlan& plan, std::uint64_t seed,
                           const std::function<void(ClueModel<float>&, const Split&)>& after = {}) {
  const auto split = stratified_split(data.manifest, plan.train_fraction, seed);
  auto model = build_model(data, plan, seed);
  TrainConfig tcfg = plan.train;
  tcfg.seed = seed;

  const auto t0 = Clock::now();
  const auto train_in = model_inputs(data, split.train, model, seed, 0.0);
  auto result = train(model, train_in, labels_of(data, split.train), split.train, tcfg);
  const double train_s = seconds_since(t0);

  const auto t1 = Clock::now();
  const auto test_in = model_inputs(data, split.test, model, seed, plan.test_pixel_flip);
  const auto labels = labels_of(data, split.test);
  SeedResult r;
  r.seed = seed;
  r.predictions = predict_all(model, test_in);
  r.report = compute_metrics(labels, r.predictions, plan.model.num_classes);
  r.report.test_seconds = seconds_since(t1);
  r.report.train_seconds = train_s;
  r.loss_history = std::move(result.loss_history);
  r.test_ids = split.test;
  if (after) after(model, split);
  return r;
}

/// Evaluates a model saved by `train` on the test split of its seed.
inline SeedResult evaluate_saved(const PreparedDataset& data, const ExperimentPlan& plan, std::uint64_t seed,
                                 const std::filesystem::path& root) {
  const auto split = stratified_split(data.manifest, plan.train_fraction, seed);
  const auto model = load_trained(data, plan, seed, root);
  const auto t1 = Clock::now();
  const auto test_in = model_inputs(data, split.test, model, seed, plan.test_pixel_flip);
  SeedResult r;
  r.seed = seed;
  r.predictions = predict_all(model, test_in);
  r.report = compute_metrics(labels_of(data, split.test), r.predictions, plan.model.num_classes);
  r.report.test_seconds = seconds_since(t1);
  r.test_ids = split.test;
  return r;
}

/// Runs `fn(i)` for i in [0,n) on up to `jobs` threads. The first exception
/// is rethrown after all workers stop.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

struct AggregateResult {
  std::string config_id;
  std::vector<SeedResult> seeds;  // in plan order
  MeanStd precision, recall, f1, accuracy, train_seconds, test_seconds;
};

inline AggregateResult aggregate(std::string config_id, std::vector<SeedResult> seeds) {
  AggregateResult a;
  a.config_id = std::move(config_id);
  std::vector<double> p, r, f, acc, tr, te;
  for (const auto& s : seeds) {
    p.push_back(s.report.weighted_precision);
    r.push_back(s.report.weighted_recall);
    f.push_back(s.report.weighted_f1);
    acc.push_back(s.report.accuracy);
    tr.push_back(s.report.train_seconds);
    te.push_back(s.report.test_seconds);
  }
  a.precision = mean_std(p);
  a.recall = mean_std(r);
  a.f1 = mean_std(f);
  a.accuracy = mean_std(acc);
  a.train_seconds = mean_std(tr);
  a.test_seconds = mean_std(te);
  a.seeds = std::move(seeds);
  return a;
}

inline AggregateResult run_seeded(const PreparedDataset& data, const ExperimentPlan& plan) {
  plan.validate();
  std::vector<SeedResult> results(plan.seeds.size());
  parallel_for(plan.seeds.size(), plan.jobs, [&](std::size_t i) { results[i] = run_seed(data, plan, plan.seeds[i]); });
  return aggregate(plan.config_id, std::move(results));
}

// ---------------------------------------------------------------------------
// Experiment grids

struct AblationRow {
  std::string id;
  bool visual, audio, proprio, attention;
};

/// The seven modality/attention combinations, in table order.
inline std::vector<AblationRow> ablation_rows() {
  return {{"p", false, false, true, false},        {"a", false, true, false, false},
          {"v+attn", true, false, false, true},    {"v+p+attn", true, false, true, true},
          {"v+a+attn", true, true, false, true},   {"v+a+p", true, true, true, false},
          {"v+a+p+attn", true, true, true, true}};
}

inline ModelConfig apply_ablation(ModelConfig cfg, const AblationRow& row) {
  cfg.use_visual = row.visual;
  cfg.use_audio = row.audio;
  cfg.use_proprio = row.proprio;
  cfg.attention = row.attention;
  cfg.validate();
  return cfg;
}

inline std::vector<AggregateResult> ablation_suite(const PreparedDataset& data, const ExperimentPlan& base) {
  std::vector<AggregateResult> out;
  for (const auto& row : ablation_rows()) {
    ExperimentPlan p = base;
    p.config_id = row.id;
    p.model = apply_ablation(base.model, row);
    out.push_back(run_seeded(data, p));
  }
  return out;
}

struct NoisePoint {
  double p;
  MeanStd f1;
  std::vector<double> per_seed;
};

/// Trains once per seed on clean data (or reads the models saved under
/// `weights_root`), then evaluates the same model on test frames with pixels
/// zeroed at each probability.
inline std::vector<NoisePoint> noise_sweep(const PreparedDataset& data, const ExperimentPlan& plan,
                                           const std::vector<double>& probs,
                                           const std::filesystem::path& weights_root = {}) {
  plan.validate();
  for (double p : probs)
    if (!(p >= 0.0 && p < 1.0)) throw ParameterError("noise probabilities must lie in [0,1)");
  if (!plan.model.use_visual) throw ConfigError("noise sweep needs the visual stream");
  std::vector<std::vector<double>> f1(plan.seeds.size(), std::vector<double>(probs.size()));
  parallel_for(plan.seeds.size(), plan.jobs, [&](std::size_t i) {
    const auto seed = plan.seeds[i];
    auto curve = [&](ClueModel<float>& model, const Split& split) {
      const auto labels = labels_of(data, split.test);
      for (std::size_t k = 0; k < probs.size(); ++k) {
        const auto in = model_inputs(data, split.test, model, seed, probs[k]);
        f1[i][k] = evaluate(model, in, labels).weighted_f1;
      }
    };
    if (!weights_root.empty()) {
      auto model = load_trained(data, plan, seed, weights_root);
      curve(model, stratified_split(data.manifest, plan.train_fraction, seed));
      return;
    }
    ExperimentPlan clean = plan;
    clean.test_pixel_flip = 0.0;
    run_seed(data, clean, seed, curve);
  });
  std::vector<NoisePoint> out;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    NoisePoint np{probs[k], {}, {}};
    for (std::size_t i = 0; i < plan.seeds.size(); ++i) np.per_seed.push_back(f1[i][k]);
    np.f1 = mean_std(np.per_seed);
    out.push_back(std::move(np));
  }
  return out;
}

/// Square 3x3 audio kernels against the rectangular (16,4)/(16,5) plan, with
/// identical seeds.
inline std::vector<AggregateResult> kernel_sweep(const PreparedDataset& data, const ExperimentPlan& base) {
  std::vector<AggregateResult> out;
  const std::pair<const char*, std::vector<AudioLayerSpec>> rows[] = {
      {"square_3x3", ModelConfig::square_audio_layers()}, {"rect_16x4_16x5", ModelConfig::rect_audio_layers()}};
  const auto geom = geometry_for(data.episodes, base.model.backbone.input_size);
  for (const auto& [id, layers] : rows) {
    ExperimentPlan p = base;
    p.config_id = id;
    p.model.audio_layers = layers;
    if (detail::audio_flat_dim(p.model, geom.mfcc_frames, geom.n_mfcc) == 0)
      throw ConfigError(std::string("audio kernels of ") + id + " need at least " +
                        std::to_string(detail::min_audio_frames(p.model, geom.n_mfcc)) + " MFCC frames, have " +
                        std::to_string(geom.mfcc_frames));
    out.push_back(run_seeded(data, p));
  }
  return out;
}

struct BackboneRow {
  std::string id;
  BackboneKind kind;
  bool avg_pool;
};

inline std::vector<BackboneRow> backbone_rows() {
  return {{"resnet18_ap", BackboneKind::resnet18, true},
          {"resnet18_noap", BackboneKind::resnet18, false},
          {"alexnet", BackboneKind::alexnet, false},
          {"vgg16", BackboneKind::vgg16, false}};
}

/// Backbone comparison. Every row uses `sweep_input_size` so AlexNet's stride
/// plan fits; frames are rescaled from the dataset resolution.
inline std::vector<AggregateResult> backbone_sweep(const Dataset& raw, const ExperimentPlan& base,
                                                   std::size_t sweep_input_size, const audio::MfccParams& mp,
                                                   FeatureCache* cache = nullptr) {
  auto data = prepare_dataset(raw, sweep_input_size, mp);
  data.cache = cache;
  std::vector<AggregateResult> out;
  for (const auto& row : backbone_rows()) {
    ExperimentPlan p = base;
    p.config_id = row.id;
    p.model.backbone.kind = row.kind;
    p.model.backbone.with_avg_pool = row.avg_pool;
    p.model.backbone.input_size = sweep_input_size;
    out.push_back(run_seeded(data, p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV writers. All floats use six decimals.

inline std::string per_seed_csv(const std::vector<AggregateResult>& results) {
  std::string s = "seed,config";
  for (const char* c : kClassNames) s += std::string(",") + c + "_precision," + c + "_recall," + c + "_f1";
  s += ",weighted_precision,weighted_recall,weighted_f1,accuracy,zero_division_classes\n";
  for (const auto& a : results)
    for (const auto& r : a.seeds) {
      s += std::to_string(r.seed) + "," + a.config_id;
      std::string flags;
      for (std::size_t c = 0; c < r.report.per_class.size(); ++c) {
        const auto& m = r.report.per_class[c];
        s += "," + text::fixed6(m.precision) + "," + text::fixed6(m.recall) + "," + text::fixed6(m.f1);
        if (m.precision_undefined || m.recall_undefined) flags += (flags.empty() ? "" : ";") + std::string(kClassNames[c]);
      }
      s += "," + text::fixed6(r.report.weighted_precision) + "," + text::fixed6(r.report.weighted_recall) + "," +
           text::fixed6(r.report.weighted_f1) + "," + text::fixed6(r.report.accuracy) + "," + flags + "\n";
    }
  return s;
}

inline std::string summary_csv(const std::vector<AggregateResult>& results) {
  std::string s = "# std columns are population standard deviations over seeds\n";
  s += "config,seeds,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std,accuracy_mean,accuracy_std\n";
  for (const auto& a : results)
    s += a.config_id + "," + std::to_string(a.seeds.size()) + "," + text::fixed6(a.precision.mean) + "," +
         text::fixed6(a.precision.std) + "," + text::fixed6(a.recall.mean) + "," + text::fixed6(a.recall.std) + "," +
         text::fixed6(a.f1.mean) + "," + text::fixed6(a.f1.std) + "," + text::fixed6(a.accuracy.mean) + "," +
         text::fixed6(a.accuracy.std) + "\n";
  return s;
}

inline std::string ablation_csv(const std::vector<AggregateResult>& results) {
  std::string s = "# std columns are population standard deviations over seeds\n";
  s += "config,visual,audio,proprio,attention,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n";
  const auto rows = ablation_rows();
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& a = results[i];
    const auto& r = rows.at(i);
    s += a.config_id + "," + (r.visual ? "1" : "0") + "," + (r.audio ? "1" : "0") + "," + (r.proprio ? "1" : "0") +
         "," + (r.attention ? "1" : "0") + "," + text::fixed6(a.precision.mean) + "," + text::fixed6(a.precision.std) +
         "," + text::fixed6(a.recall.mean) + "," + text::fixed6(a.recall.std) + "," + text::fixed6(a.f1.mean) + "," +
         text::fixed6(a.f1.std) + "\n";
  }
  return s;
}

inline std::string confusion_csv(const MetricsReport& r) {
  std::string s = "true\\pred";
  for (std::size_t c = 0; c < r.num_classes; ++c) s += std::string(",") + kClassNames[c];
  s += ",zero_support\n";
  for (std::size_t i = 0; i < r.num_classes; ++i) {
    s += kClassNames[i];
    for (std::size_t j = 0; j < r.num_classes; ++j) s += "," + text::fixed6(r.confusion[i][j]);
    s += std::string(",") + (r.zero_support_rows[i] ? "1" : "0") + "\n";
  }
  return s;
}

inline std::string noise_csv(const std::vector<NoisePoint>& pts) {
  std::string s = "# std is the population standard deviation over seeds\np,f1_mean,f1_std\n";
  for (const auto& p : pts) s += text::fixed6(p.p) + "," + text::fixed6(p.f1.mean) + "," + text::fixed6(p.f1.std) + "\n";
  return s;
}

inline std::string timing_csv(const std::vector<AggregateResult>& results) {
  std::string s = "config,seeds,train_seconds_mean,train_seconds_std,test_seconds_mean,test_seconds_std\n";
  for (const auto& a : results)
    s += a.config_id + "," + std::to_string(a.seeds.size()) + "," + text::fixed6(a.train_seconds.mean) + "," +
         text::fixed6(a.train_seconds.std) + "," + text::fixed6(a.test_seconds.mean) + "," +
         text::fixed6(a.test_seconds.std) + "\n";
  return s;
}

inline std::string loss_csv(const std::vector<double>& history) {
  std::string s = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < history.size(); ++e) s += std::to_string(e + 1) + "," + text::fixed6(history[e]) + "\n";
  return s;
}

/// Writes per_seed.csv, summary.csv, timing.csv and one confusion file per
/// (config, seed).
inline void write_results(const std::vector<AggregateResult>& results, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  text::write_file(dir / "per_seed.csv", per_seed_csv(results));
  text::write_file(dir / "summary.csv", summary_csv(results));
  text::write_file(dir / "timing.csv", timing_csv(results));
  for (const auto& a : results)
    for (const auto& r : a.seeds)
      text::write_file(dir / ("confusion_" + a.config_id + "_" + std::to_string(r.seed) + ".csv"),
                       confusion_csv(r.report));
}

}  // namespace clue
