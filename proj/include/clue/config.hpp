#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clue/audio.hpp"
#include "clue/datagen.hpp"
#include "clue/experiments.hpp"
#include "clue/streams.hpp"
#include "clue/text.hpp"

namespace clue {

/// Every tunable of a run, flattened to key=value pairs.
struct RunConfig {
  // dataset
  std::string data_dir;
  std::string out_dir = "out";
  std::uint64_t dataset_seed = 1;
  std::array<std::size_t, kNumClasses> counts = kReferenceCounts;
  GeneratorParams gen;
  double frame_rate_hz = 0.125;
  // model and features
  ModelConfig model;
  audio::MfccParams mfcc;
  // training and experiments
  TrainConfig train;
  bool class_weighting = true;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  double train_fraction = 0.8;
  std::size_t jobs = 1;
  std::vector<double> noise_probs{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  std::size_t sweep_input_size = 64;
  // explanation
  std::string cam_episode;
  std::string cam_class;
  long long cam_frame = -1;  // -1: the episode's event frame
  std::string cam_layer;
  // weights
  std::string weights_dir;       // a `train` output directory (eval, noise, cam)
  std::string backbone_weights;  // backbone-only weight directory used at init
};

namespace cfgfmt {

inline std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& key) {
  std::vector<std::size_t> out;
  for (const auto& part : text::split(s, ',')) {
    const auto v = text::parse_int(part, key);
    if (v < 0) throw ConfigError(key + " entries must be >= 0");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + text::format_double(v[i]);
  return s;
}

inline std::vector<double> parse_doubles(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : text::split(s, ',')) out.push_back(text::parse_double(part, key));
  return out;
}

inline std::string pair_str(Pair p) { return std::to_string(p.h) + "x" + std::to_string(p.w); }

inline Pair parse_pair(const std::string& s, const std::string& key) {
  const auto parts = text::split(s, 'x');
  if (parts.size() != 2) throw ConfigError(key + ": expected HxW, got '" + s + "'");
  const auto h = text::parse_int(parts[0], key), w = text::parse_int(parts[1], key);
  if (h < 0 || w < 0) throw ConfigError(key + ": extents must be >= 0");
  return {static_cast<std::size_t>(h), static_cast<std::size_t>(w)};
}

/// Layers as kernel:stride:pad triples, e.g. "3x3:1x1:1x1,16x4:1x1:0x0".
/// The presets "square" and "rect" are accepted on input.
inline std::string layers_str(const std::vector<AudioLayerSpec>& ls) {
  std::string s;
  for (std::size_t i = 0; i < ls.size(); ++i)
    s += (i ? "," : "") + pair_str(ls[i].kernel) + ":" + pair_str(ls[i].stride) + ":" + pair_str(ls[i].pad);
  return s;
}

inline std::vector<AudioLayerSpec> parse_layers(const std::string& s, const std::string& key) {
  const std::string t = text::trim(s);
  if (t == "square") return ModelConfig::square_audio_layers();
  if (t == "rect") return ModelConfig::rect_audio_layers();
  std::vector<AudioLayerSpec> out;
  for (const auto& part : text::split(t, ',')) {
    const auto f = text::split(text::trim(part), ':');
    if (f.size() != 3) throw ConfigError(key + ": expected kernel:stride:pad, got '" + part + "'");
    out.push_back({parse_pair(f[0], key), parse_pair(f[1], key), parse_pair(f[2], key)});
  }
  return out;
}

inline std::string modality_str(const ModelConfig& m) {
  std::string s;
  auto add = [&](bool on, const char* n) {
    if (on) s += (s.empty() ? "" : ",") + std::string(n);
  };
  add(m.use_visual, "v");
  add(m.use_audio, "a");
  add(m.use_proprio, "p");
  return s;
}

inline void parse_modality(const std::string& s, ModelConfig& m) {
  m.use_visual = m.use_audio = m.use_proprio = false;
  for (const auto& part : text::split(s, ',')) {
    const auto t = text::trim(part);
    if (t == "v") m.use_visual = true;
    else if (t == "a") m.use_audio = true;
    else if (t == "p") m.use_proprio = true;
    else if (!t.empty()) throw ConfigError("modality: unknown stream '" + t + "' (use v, a, p)");
  }
}

}  // namespace cfgfmt

/// Key registry: each key renders and parses one RunConfig field.
class ConfigSchema {
 public:
  struct Field {
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
  };

  static const ConfigSchema& instance() {
    static const ConfigSchema s;
    return s;
  }

  const std::vector<Field>& fields() const { return fields_; }

  bool has(const std::string& key) const {
    for (const auto& f : fields_)
      if (f.key == key) return true;
    return false;
  }

  void set(RunConfig& c, const std::string& key, const std::string& value) const {
    for (const auto& f : fields_)
      if (f.key == key) {
        f.set(c, text::trim(value));
        return;
      }
    throw ConfigError("unknown config key '" + key + "'");
  }

  std::string render(const RunConfig& c) const {
    std::string s;
    for (const auto& f : fields_) s += f.key + "=" + f.get(c) + "\n";
    return s;
  }

 private:
  ConfigSchema() {
    using namespace cfgfmt;
    auto str = [&](const char* k, auto member) {
      fields_.push_back({k, [member](const RunConfig& c) { return c.*member; },
                         [member](RunConfig& c, const std::string& v) { c.*member = v; }});
    };
    auto num = [&](const char* k, auto get_ref) {
      std::string key = k;
      fields_.push_back({key,
                         [get_ref](const RunConfig& c) {
                           const auto& r = get_ref(const_cast<RunConfig&>(c));
                           using V = std::decay_t<decltype(r)>;
                           if constexpr (std::is_floating_point_v<V>) return text::format_double(r);
                           else return std::to_string(r);
                         },
                         [get_ref, key](RunConfig& c, const std::string& v) {
                           auto& r = get_ref(c);
                           using V = std::decay_t<decltype(r)>;
                           if constexpr (std::is_floating_point_v<V>) {
                             r = static_cast<V>(text::parse_double(v, key));
                           } else {
                             const auto x = text::parse_int(v, key);
                             if (std::is_unsigned_v<V> && x < 0) throw ConfigError(key + " must be >= 0");
                             r = static_cast<V>(x);
                           }
                         }});
    };
    auto flag = [&](const char* k, auto get_ref) {
      std::string key = k;
      fields_.push_back({key, [get_ref](const RunConfig& c) { return get_ref(const_cast<RunConfig&>(c)) ? "on" : "off"; },
                         [get_ref, key](RunConfig& c, const std::string& v) { get_ref(c) = text::parse_bool(v, key); }});
    };
    auto custom = [&](const char* k, std::function<std::string(const RunConfig&)> g,
                      std::function<void(RunConfig&, const std::string&)> s) { fields_.push_back({k, g, s}); };

    str("data_dir", &RunConfig::data_dir);
    str("out_dir", &RunConfig::out_dir);
    num("dataset_seed", [](RunConfig& c) -> auto& { return c.dataset_seed; });
    custom(
        "counts", [](const RunConfig& c) { return counts_str(c.counts); },
        [](RunConfig& c, const std::string& v) {
          const auto xs = parse_sizes(v, "counts");
          if (xs.size() != kNumClasses) throw ConfigError("counts needs 7 comma-separated values");
          for (std::size_t i = 0; i < kNumClasses; ++i) {
            if (xs[i] < 1) throw ConfigError(std::string("counts: class ") + kClassNames[i] + " needs at least one episode");
            c.counts[i] = xs[i];
          }
        });
    num("frames", [](RunConfig& c) -> auto& { return c.gen.frames; });
    num("image_size", [](RunConfig& c) -> auto& { return c.gen.image_size; });
    num("duration_s", [](RunConfig& c) -> auto& { return c.gen.duration_s; });
    num("audio_seconds", [](RunConfig& c) -> auto& { return c.gen.audio_seconds; });
    num("sample_rate", [](RunConfig& c) -> auto& { return c.gen.sample_rate; });
    num("proprio_len", [](RunConfig& c) -> auto& { return c.gen.proprio_len; });
    num("pixel_noise", [](RunConfig& c) -> auto& { return c.gen.pixel_noise; });
    num("sensor_noise", [](RunConfig& c) -> auto& { return c.gen.sensor_noise; });
    num("audio_noise", [](RunConfig& c) -> auto& { return c.gen.audio_noise; });
    num("frame_rate_hz", [](RunConfig& c) -> auto& { return c.frame_rate_hz; });

    custom(
        "backbone", [](const RunConfig& c) { return std::string(to_string(c.model.backbone.kind)); },
        [](RunConfig& c, const std::string& v) { c.model.backbone.kind = parse_backbone_kind(v); });
    num("width_mult", [](RunConfig& c) -> auto& { return c.model.backbone.width_multiplier; });
    num("input_size", [](RunConfig& c) -> auto& { return c.model.backbone.input_size; });
    flag("avg_pool", [](RunConfig& c) -> auto& { return c.model.backbone.with_avg_pool; });
    flag("backbone_trainable", [](RunConfig& c) -> auto& { return c.model.backbone_trainable; });
    num("lstm_hidden", [](RunConfig& c) -> auto& { return c.model.lstm_hidden; });
    num("lstm_layers", [](RunConfig& c) -> auto& { return c.model.lstm_layers; });
    custom(
        "recurrent", [](const RunConfig& c) { return std::string(to_string(c.model.recurrent)); },
        [](RunConfig& c, const std::string& v) {
          if (v == "lstm") c.model.recurrent = RecurrentKind::lstm;
          else if (v == "rnn") c.model.recurrent = RecurrentKind::rnn;
          else throw ConfigError("recurrent must be lstm or rnn, got '" + v + "'");
        });
    flag("attention", [](RunConfig& c) -> auto& { return c.model.attention; });
    custom(
        "modality", [](const RunConfig& c) { return modality_str(c.model); },
        [](RunConfig& c, const std::string& v) { parse_modality(v, c.model); });
    custom(
        "audio_channels", [](const RunConfig& c) { return join_sizes(c.model.audio_channels); },
        [](RunConfig& c, const std::string& v) { c.model.audio_channels = parse_sizes(v, "audio_channels"); });
    custom(
        "audio_kernels", [](const RunConfig& c) { return layers_str(c.model.audio_layers); },
        [](RunConfig& c, const std::string& v) { c.model.audio_layers = parse_layers(v, "audio_kernels"); });
    custom(
        "audio_pool", [](const RunConfig& c) { return pair_str(c.model.audio_pool); },
        [](RunConfig& c, const std::string& v) { c.model.audio_pool = parse_pair(v, "audio_pool"); });
    num("audio_dim", [](RunConfig& c) -> auto& { return c.model.audio_dim; });
    num("proprio_channels", [](RunConfig& c) -> auto& { return c.model.proprio_channels; });
    num("proprio_kernel", [](RunConfig& c) -> auto& { return c.model.proprio_kernel; });
    num("proprio_pool", [](RunConfig& c) -> auto& { return c.model.proprio_pool; });
    num("proprio_dim", [](RunConfig& c) -> auto& { return c.model.proprio_dim; });
    num("dropout_visual", [](RunConfig& c) -> auto& { return c.model.dropout_visual; });
    num("dropout_fusion", [](RunConfig& c) -> auto& { return c.model.dropout_fusion; });
    num("dropout_proprio", [](RunConfig& c) -> auto& { return c.model.dropout_proprio; });
    num("fusion_hidden", [](RunConfig& c) -> auto& { return c.model.fusion_hidden; });

    num("mfcc_frame_len", [](RunConfig& c) -> auto& { return c.mfcc.frame_len; });
    num("mfcc_hop", [](RunConfig& c) -> auto& { return c.mfcc.hop; });
    num("mfcc_n_mels", [](RunConfig& c) -> auto& { return c.mfcc.n_mels; });
    num("mfcc_n_mfcc", [](RunConfig& c) -> auto& { return c.mfcc.n_mfcc; });
    num("mfcc_f_min", [](RunConfig& c) -> auto& { return c.mfcc.f_min; });
    num("mfcc_f_max", [](RunConfig& c) -> auto& { return c.mfcc.f_max; });
    num("mfcc_pre_emphasis", [](RunConfig& c) -> auto& { return c.mfcc.pre_emphasis; });
    num("mfcc_lifter", [](RunConfig& c) -> auto& { return c.mfcc.lifter; });

    num("learning_rate", [](RunConfig& c) -> auto& { return c.train.learning_rate; });
    num("epochs", [](RunConfig& c) -> auto& { return c.train.epochs; });
    num("beta1", [](RunConfig& c) -> auto& { return c.train.beta1; });
    num("beta2", [](RunConfig& c) -> auto& { return c.train.beta2; });
    num("epsilon", [](RunConfig& c) -> auto& { return c.train.epsilon; });
    flag("class_weighting", [](RunConfig& c) -> auto& { return c.class_weighting; });
    custom(
        "seeds",
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
          return s;
        },
        [](RunConfig& c, const std::string& v) {
          c.seeds.clear();
          for (auto x : parse_sizes(v, "seeds")) c.seeds.push_back(x);
        });
    num("train_fraction", [](RunConfig& c) -> auto& { return c.train_fraction; });
    num("jobs", [](RunConfig& c) -> auto& { return c.jobs; });
    custom(
        "noise_probs", [](const RunConfig& c) { return join_doubles(c.noise_probs); },
        [](RunConfig& c, const std::string& v) { c.noise_probs = parse_doubles(v, "noise_probs"); });
    num("sweep_input_size", [](RunConfig& c) -> auto& { return c.sweep_input_size; });
    str("cam_episode", &RunConfig::cam_episode);
    str("cam_class", &RunConfig::cam_class);
    num("cam_frame", [](RunConfig& c) -> auto& { return c.cam_frame; });
    str("cam_layer", &RunConfig::cam_layer);
    str("weights_dir", &RunConfig::weights_dir);
    str("backbone_weights", &RunConfig::backbone_weights);
  }

  std::vector<Field> fields_;
};

/// Parses `key=value` lines; `#` starts a comment, blank lines are skipped.
inline std::vector<std::pair<std::string, std::string>> parse_kv_text(const std::string& content,
                                                                      const std::string& source) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t line_no = 0;
  for (const auto& raw : text::split(content, '\n')) {
    ++line_no;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value, got '" + line + "'");
    out.emplace_back(text::trim(line.substr(0, eq)), text::trim(line.substr(eq + 1)));
  }
  return out;
}

/// Applies pairs after checking every key exists, so a typo fails before
/// anything is set.
inline void apply_pairs(RunConfig& c, const std::vector<std::pair<std::string, std::string>>& kv,
                        const std::string& source) {
  const auto& schema = ConfigSchema::instance();
  for (const auto& [k, v] : kv)
    if (!schema.has(k)) throw ConfigError(source + ": unknown config key '" + k + "'");
  for (const auto& [k, v] : kv) schema.set(c, k, v);
}

inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  apply_pairs(c, parse_kv_text(text::read_file(path), path.string()), path.string());
}

inline std::string render_config(const RunConfig& c) {
  return "# fully resolved configuration; rerun with --config <this file>\n" + ConfigSchema::instance().render(c);
}

/// Checks cross-field constraints shared by every subcommand.
inline void validate_config(const RunConfig& c) {
  c.gen.validate();
  c.model.validate();
  c.train.validate();
  if (!(c.frame_rate_hz > 0.0)) throw ConfigError("frame_rate_hz must be > 0");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0,1)");
  if (c.jobs < 1) throw ConfigError("jobs must be >= 1");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  for (double p : c.noise_probs)
    if (!(p >= 0.0 && p < 1.0)) throw ConfigError("noise_probs must lie in [0,1)");
}

/// The experiment plan implied by a run config and a dataset manifest.
inline ExperimentPlan make_plan(const RunConfig& c, const DatasetManifest& m, std::string config_id = "default") {
  ExperimentPlan p;
  p.config_id = std::move(config_id);
  p.model = c.model;
  p.train = c.train;
  p.train.class_weights = c.class_weighting ? class_weights(m) : std::vector<double>(kNumClasses, 1.0);
  p.seeds = c.seeds;
  p.train_fraction = c.train_fraction;
  p.jobs = c.jobs;
  p.backbone_weights = c.backbone_weights;
  return p;
}

}  // namespace clue
