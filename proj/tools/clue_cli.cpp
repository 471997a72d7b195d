// clue: dataset generation, training, experiments and explanation.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "clue/config.hpp"
#include "clue/experiments.hpp"
#include "clue/explain.hpp"

namespace fs = std::filesystem;
using namespace clue;

namespace {

/// Flags shared by every subcommand. Each maps onto a config key and is
/// applied after the config file, before --set.
struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> data, out, weights, modality, seeds, counts, probs;
  std::optional<long long> epochs, jobs;
  std::optional<double> lr;
  std::optional<std::string> episode, cls, layer;
  std::optional<std::string> backbone, width_mult, input_size, avg_pool;
  std::optional<long long> frame;
  bool backbone_only = false;
};

void add_common(CLI::App* sub, CommonFlags& f, bool dataset_flags) {
  sub->add_option("--config", f.config, "key=value config file");
  sub->add_option("--set", f.sets, "override, key=value (repeatable)");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--seed,--seeds", f.seeds, "seed or comma-separated seeds");
  sub->add_option("--jobs", f.jobs, "parallel seeds");
  if (dataset_flags) {
    sub->add_option("--data", f.data, "dataset directory (default $CLUE_DATA_DIR)");
    sub->add_option("--epochs", f.epochs);
    sub->add_option("--lr", f.lr, "learning rate");
    sub->add_option("--modality", f.modality, "enabled streams, e.g. v,a,p");
    sub->add_option("--backbone", f.backbone, "vgg16, alexnet or resnet18");
    sub->add_option("--width-mult", f.width_mult, "backbone channel multiplier");
    sub->add_option("--input-size", f.input_size, "square frame size fed to the backbone");
    sub->add_option("--avg-pool", f.avg_pool, "on or off (resnet18)");
  }
}

RunConfig resolve(const CommonFlags& f, bool gen) {
  RunConfig c;
  if (const char* env = std::getenv("CLUE_DATA_DIR"); env && *env) c.data_dir = env;
  if (!f.config.empty()) load_config_file(c, f.config);
  std::vector<std::pair<std::string, std::string>> kv;
  auto put = [&](const char* k, const auto& v) {
    if (v) {
      if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>) {
        kv.emplace_back(k, *v);
      } else {
        kv.emplace_back(k, text::format_double(static_cast<double>(*v)));
      }
    }
  };
  put("data_dir", f.data);
  put("out_dir", f.out);
  put(gen ? "dataset_seed" : "seeds", f.seeds);
  put("counts", f.counts);
  put("jobs", f.jobs);
  put("epochs", f.epochs);
  put("learning_rate", f.lr);
  put("modality", f.modality);
  put("backbone", f.backbone);
  put("width_mult", f.width_mult);
  put("input_size", f.input_size);
  put("avg_pool", f.avg_pool);
  put("noise_probs", f.probs);
  put("weights_dir", f.weights);
  put("cam_episode", f.episode);
  put("cam_class", f.cls);
  put("cam_frame", f.frame);
  put("cam_layer", f.layer);
  apply_pairs(c, kv, "command line");
  std::vector<std::pair<std::string, std::string>> sets;
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    sets.emplace_back(text::trim(s.substr(0, eq)), text::trim(s.substr(eq + 1)));
  }
  apply_pairs(c, sets, "--set");
  validate_config(c);
  return c;
}

void write_resolved(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  text::write_file(dir / "resolved_config.txt", render_config(c));
}

Dataset open_dataset(const RunConfig& c) {
  if (c.data_dir.empty()) throw InputError("no dataset directory: pass --data or set CLUE_DATA_DIR");
  if (!fs::exists(fs::path(c.data_dir) / "manifest.tsv"))
    throw IoError("no dataset at " + c.data_dir + " (manifest.tsv missing)");
  return load_dataset(c.data_dir, c.frame_rate_hz);
}

PreparedDataset open_prepared(const RunConfig& c, FeatureCache& cache) {
  auto d = prepare_dataset(open_dataset(c), c.model.backbone.input_size, c.mfcc);
  d.cache = &cache;
  return d;
}

fs::path weights_root(const RunConfig& c) {
  if (c.weights_dir.empty()) throw InputError("no trained weights: pass --weights <train output directory>");
  return c.weights_dir;
}

void print_summary(const std::vector<AggregateResult>& rs) {
  for (const auto& a : rs)
    std::printf("%-16s F1 %.4f +- %.4f  acc %.4f  (%zu seeds)\n", a.config_id.c_str(), a.f1.mean, a.f1.std,
                a.accuracy.mean, a.seeds.size());
}

int cmd_gen(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  const auto m = generate_dataset(c.counts, c.dataset_seed, c.gen, out);
  std::size_t total = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    std::printf("%-5s %zu\n", kClassNames[k], m.counts[k]);
    total += m.counts[k];
  }
  std::printf("total %zu episodes in %s\n", total, out.string().c_str());
  return 0;
}

int cmd_train(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto plan = make_plan(c, data.manifest);
  std::vector<SeedResult> results(plan.seeds.size());
  parallel_for(plan.seeds.size(), plan.jobs, [&](std::size_t i) {
    const auto seed = plan.seeds[i];
    results[i] = run_seed(data, plan, seed, [&](ClueModel<float>& model, const Split&) {
      write_weights(model.params(), seed_weights_dir(out, seed));
    });
    text::write_file(out / ("seed_" + std::to_string(seed)) / "loss.csv", loss_csv(results[i].loss_history));
  });
  std::vector<AggregateResult> rs{aggregate(plan.config_id, std::move(results))};
  write_results(rs, out);
  print_summary(rs);
  return 0;
}

int cmd_eval(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto plan = make_plan(c, data.manifest);
  const auto root = weights_root(c);
  std::vector<SeedResult> results(plan.seeds.size());
  parallel_for(plan.seeds.size(), plan.jobs,
               [&](std::size_t i) { results[i] = evaluate_saved(data, plan, plan.seeds[i], root); });
  std::vector<AggregateResult> rs{aggregate(plan.config_id, std::move(results))};
  write_results(rs, out);
  print_summary(rs);
  return 0;
}

int cmd_ablate(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto rs = ablation_suite(data, make_plan(c, data.manifest));
  write_results(rs, out);
  text::write_file(out / "ablation.csv", ablation_csv(rs));
  print_summary(rs);
  return 0;
}

int cmd_noise(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto pts = noise_sweep(data, make_plan(c, data.manifest), c.noise_probs,
                               c.weights_dir.empty() ? fs::path{} : fs::path(c.weights_dir));
  text::write_file(out / "noise_curve.csv", noise_csv(pts));
  for (const auto& p : pts) std::printf("p=%.2f F1 %.4f +- %.4f\n", p.p, p.f1.mean, p.f1.std);
  return 0;
}

int cmd_kernels(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto rs = kernel_sweep(data, make_plan(c, data.manifest));
  write_results(rs, out);
  text::write_file(out / "kernels.csv", summary_csv(rs));
  print_summary(rs);
  return 0;
}

int cmd_backbones(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto raw = open_dataset(c);
  const auto rs = backbone_sweep(raw, make_plan(c, raw.manifest), c.sweep_input_size, c.mfcc, &cache);
  write_results(rs, out);
  text::write_file(out / "backbones.csv", summary_csv(rs));
  print_summary(rs);
  return 0;
}

int cmd_cam(const RunConfig& c) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto plan = make_plan(c, data.manifest);
  if (c.cam_episode.empty()) throw InputError("cam needs --episode");
  const auto& ep = data.by_id(c.cam_episode);
  const std::size_t target = c.cam_class.empty() ? ep.label : class_index(parse_class(c.cam_class));
  if (c.cam_frame < -1) throw InputError("cam frame must be >= 0 (or -1 for the event frame)");
  const std::size_t frame = c.cam_frame < 0 ? ep.event_frame : static_cast<std::size_t>(c.cam_frame);
  auto model = load_trained(data, plan, plan.seeds.front(), weights_root(c));
  const auto map = grad_cam(model, ep.inputs, target, frame, c.cam_layer);
  const std::string stem = "cam_" + ep.id + "_" + kClassNames[target] + "_" + std::to_string(frame);
  io::write_bytes(out / (stem + ".ppm"), io::encode_ppm(overlay(map.upsampled, ep.inputs.frames[frame])));
  text::write_file(out / (stem + ".tsv"), map_tsv(map.raw));
  std::printf("%s: %zux%zu map%s, signal-region mass %.4f\n", stem.c_str(), map.values.dim(0), map.values.dim(1),
              map.zero_map ? " (zero map)" : "", quadrant_mass(map.upsampled, ep.signal_region));
  return 0;
}

/// Model of the first seed, initialised from the config (and the trained
/// weights when --weights is given).
ClueModel<float> model_for_export(const RunConfig& c, const PreparedDataset& data) {
  const auto plan = make_plan(c, data.manifest);
  const auto seed = plan.seeds.front();
  if (!c.weights_dir.empty()) return load_trained(data, plan, seed, c.weights_dir);
  return build_model(data, plan, seed);
}

int cmd_export(const RunConfig& c, bool backbone_only) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto model = model_for_export(c, data);
  if (backbone_only) {
    write_weights(select_params(model.params(), kBackbonePrefix), out / "weights");
  } else {
    write_weights(model.params(), out / "weights");
  }
  std::printf("wrote %s\n", (out / "weights").string().c_str());
  return 0;
}

int cmd_import(const RunConfig& c, const std::string& source, bool backbone_only) {
  const fs::path out = c.out_dir;
  write_resolved(c, out);
  if (source.empty()) throw InputError("import-weights needs --from <weight directory>");
  FeatureCache cache;
  const auto data = open_prepared(c, cache);
  const auto plan = make_plan(c, data.manifest);
  auto model = build_model(data, plan, plan.seeds.front());
  if (backbone_only) {
    load_backbone_weights(model, source);
    write_weights(select_params(model.params(), kBackbonePrefix), out / "weights");
  } else {
    read_weights(model.params(), source);
    write_weights(model.params(), out / "weights");
  }
  std::printf("validated %s, wrote %s\n", source.c_str(), (out / "weights").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clue: multimodal anomaly identification"};
  app.require_subcommand(1);
  CommonFlags f;
  std::string import_from;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, f, false);
  gen->add_option("--counts", f.counts, "episodes per class, 7 comma-separated values");

  auto* train = app.add_subcommand("train", "train one model per seed and save weights");
  auto* eval = app.add_subcommand("eval", "evaluate saved models on their test splits");
  auto* ablate = app.add_subcommand("ablate", "modality and attention ablation grid");
  auto* noise = app.add_subcommand("noise", "F1 against test pixel-zeroing probability");
  auto* kernels = app.add_subcommand("kernels", "square against rectangular audio kernels");
  auto* backbones = app.add_subcommand("backbones", "backbone comparison");
  auto* cam = app.add_subcommand("cam", "Grad-CAM heatmap for one episode frame");
  auto* exp = app.add_subcommand("export-weights", "write a model's weights with a manifest");
  auto* imp = app.add_subcommand("import-weights", "validate a weight directory and rewrite it");
  for (auto* s : {train, eval, ablate, noise, kernels, backbones, cam, exp, imp}) add_common(s, f, true);
  for (auto* s : {eval, noise, cam, exp}) s->add_option("--weights", f.weights, "train output directory");
  noise->add_option("--probs", f.probs, "comma-separated flip probabilities");
  cam->add_option("--episode", f.episode, "episode id");
  cam->add_option("--class", f.cls, "target class (default: the episode's label)");
  cam->add_option("--frame", f.frame, "frame index (default: the event frame)");
  cam->add_option("--layer", f.layer, "backbone layer (default: last conv)");
  for (auto* s : {exp, imp}) s->add_flag("--backbone-only", f.backbone_only, "backbone parameters only");
  imp->add_option("--from", import_from, "weight directory to import")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    auto* sub = app.get_subcommands().front();
    const auto c = resolve(f, sub == gen);
    const std::string name = sub->get_name();
    if (name == "gen") return cmd_gen(c);
    if (name == "train") return cmd_train(c);
    if (name == "eval") return cmd_eval(c);
    if (name == "ablate") return cmd_ablate(c);
    if (name == "noise") return cmd_noise(c);
    if (name == "kernels") return cmd_kernels(c);
    if (name == "backbones") return cmd_backbones(c);
    if (name == "cam") return cmd_cam(c);
    if (name == "export-weights") return cmd_export(c, f.backbone_only);
    if (name == "import-weights") return cmd_import(c, import_from, f.backbone_only);
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
