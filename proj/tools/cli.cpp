// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ofa/checkpoint.hpp"
#include "ofa/diffcore.hpp"
#include "ofa/error.hpp"
#include "ofa/opam.hpp"
#include "ofa/rollout.hpp"
#include "ofa/synthgen.hpp"
#include "ofa/train.hpp"
#include "ofa/vit3d.hpp"

namespace ofa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorKind::BadConfig, msg); }

void merge_declared(json& base, const json& patch, const std::string& prefix) {
  if (!patch.is_object()) config_error("'" + (prefix.empty() ? std::string("config") : prefix) + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) config_error("unknown config key '" + path + "'");
    auto& slot = base[key];
    if (slot.is_object() && value.is_object()) {
      merge_declared(slot, value, path);
    } else if (slot.is_object()) {
      config_error("config key '" + path + "' is a section");
    } else {
      slot = value;
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) config_error("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) config_error("unknown config key '" + key + "'");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) config_error("config key '" + key + "' is a section");
  *node = std::move(value);
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) config_error(path.string() + " is not valid JSON");
  return j;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

class JsonLines {
 public:
  explicit JsonLines(const fs::path& path) : out_(path, std::ios::trunc) {
    if (!out_) throw Error(ErrorKind::Io, "cannot write " + path.string());
  }
  void write(const json& j) { out_ << j.dump() << '\n' << std::flush; }

 private:
  std::ofstream out_;
};

std::uint64_t global_seed(const json& c) { return c.at("seed").get<std::uint64_t>(); }

std::uint64_t seed_or_global(const json& v, const json& c) { return v.is_null() ? global_seed(c) : v.get<std::uint64_t>(); }

PhantomConfig phantom_config(const json& c) {
  json p = c.at("phantom");
  p["seed"] = seed_or_global(p.at("seed"), c);
  auto cfg = p.get<PhantomConfig>();
  cfg.validate();
  return cfg;
}

RunConfig run_config(const json& c) {
  RunConfig r;
  r.vit = c.at("vit").get<VitConfig>();
  const auto& data = c.at("data");
  r.manifest = data.at("manifest").get<std::string>();
  const auto ratios = data.at("ratios").get<std::vector<double>>();
  if (ratios.size() != 3) config_error("data.ratios must hold [train, val, test]");
  r.ratios = {ratios[0], ratios[1], ratios[2]};
  r.split_seed = seed_or_global(data.at("split_seed"), c);
  const auto& t = c.at("train");
  r.alpha = t.at("alpha").get<double>();
  r.layers = parse_layer_preset(t.at("layers").get<std::string>());
  r.heads = parse_head_aggregation(t.at("heads").get<std::string>());
  r.lr = t.at("lr").get<double>();
  r.batch_size = t.at("batch_size").get<std::size_t>();
  r.epochs = t.at("epochs").get<std::size_t>();
  r.sbc = t.at("sbc").get<bool>();
  r.crop_margin = t.at("crop_margin").get<std::int64_t>();
  r.augment_flip = t.at("augment_flip").get<bool>();
  r.augment_intensity = t.at("augment_intensity").get<bool>();
  r.opam_min_voxels = t.at("opam_min_voxels").get<std::size_t>();
  r.seed = global_seed(c);
  r.threads = c.at("threads").get<std::size_t>();
  if (r.epochs == 0) config_error("train.epochs must be >= 1");
  r.validate();
  return r;
}

fs::path required_path(const json& v, const std::string& key) {
  const auto s = v.get<std::string>();
  if (s.empty()) config_error(key + " is not set");
  return s;
}

DataSplit split_for(const Dataset& data, const RunConfig& rc) {
  return stratified_split(data.labels(), rc.ratios, rc.split_seed);
}

json split_json(const DataSplit& s) { return {{"train", s.train}, {"val", s.val}, {"test", s.test}}; }

EvalOptions eval_options(const RunConfig& rc, const json& meta) {
  EvalOptions o;
  o.sbc = meta.value("sbc", rc.sbc);
  o.crop_margin = meta.value("crop_margin", rc.crop_margin);
  o.opam_min_voxels = rc.opam_min_voxels;
  o.threads = rc.threads;
  return o;
}

json metrics_json(const EvalResult& r, bool threshold_on_test) {
  json j = r.test;
  j["val_auc"] = r.val_auc;
  j["threshold_split"] = threshold_on_test ? "test" : "val";
  j["organ_attention_mass"] = r.organ_attention_mass ? json(*r.organ_attention_mass) : json(nullptr);
  return j;
}

// --------------------------------------------------------------------------
// Subcommands

int cmd_synth(const json& c, const fs::path& out) {
  const auto cfg = phantom_config(c);
  const auto manifest = generate(cfg, out);
  json summary = {{"samples", manifest.size()}, {"manifest", (out / "manifest.json").string()}};
  if (c.at("synth").at("bayes_check").get<bool>()) {
    const auto b = bayes_check(cfg);
    summary["organ_oracle_auc"] = b.organ_oracle_auc;
    summary["background_oracle_auc"] = b.background_oracle_auc;
    summary["learnable"] = b.learnable();
  }
  write_json(out / "synth.json", summary);
  return 0;
}

int cmd_opam(const json& c, const fs::path& out) {
  const auto mask = load_mask(required_path(c.at("opam").at("mask"), "opam.mask"));
  const auto vit = c.at("vit").get<VitConfig>();
  const auto grid = partition(mask.dims(), vit.patch_size);
  const auto m = build_opam(mask, grid, c.at("train").at("opam_min_voxels").get<std::size_t>());
  const auto t = softmax_target(m);
  std::vector<double> mv(m.values().begin(), m.values().end());
  save_matrix(mv, m.n(), m.n(), out / "opam.vmat");
  save_matrix(t.values(), t.n(), t.n(), out / "opam_target.vmat");
  std::size_t organ = 0;
  for (std::size_t i = 0; i < m.n(); ++i) organ += m.at(i, i);
  write_json(out / "opam.json", {{"patches", m.n()}, {"organ_patches", organ}});
  return 0;
}

int cmd_train(const json& c, const fs::path& out) {
  const auto rc = run_config(c);
  const auto data = load_dataset(required_path(c.at("data").at("manifest"), "data.manifest"), rc.alpha > 0.0 || rc.sbc);
  const auto split = split_for(data, rc);
  write_json(out / "split.json", split_json(split));

  JsonLines loss_log(out / "loss_log.jsonl");
  JsonLines epoch_log(out / "train_log.jsonl");
  Trainer trainer(rc, data, split);
  trainer.on_step = [&](const json& line) { loss_log.write(line); };

  const json base_meta = {{"method", rc.method()}, {"alpha", rc.alpha}, {"layers", to_string(rc.layers)},
                          {"heads", to_string(rc.heads)}, {"sbc", rc.sbc}, {"crop_margin", rc.crop_margin},
                          {"seed", rc.seed}};
  double best_auc = 0.0, best_loss = 0.0;
  std::size_t best_epoch = 0;
  for (std::size_t e = 0; e < rc.epochs; ++e) {
    const auto r = trainer.run_epoch();
    for (const auto& line : epoch_log_lines(r)) epoch_log.write(line);
    if (best_epoch == 0 || r.val_auc > best_auc || (r.val_auc == best_auc && r.val_l_cls < best_loss)) {
      best_auc = r.val_auc;
      best_loss = r.val_l_cls;
      best_epoch = r.epoch;
      json meta = base_meta;
      meta["epoch"] = r.epoch;
      meta["val_auc"] = r.val_auc;
      save_checkpoint(out / "checkpoint_best.ckpt", trainer.params(), nullptr, meta);
    }
  }
  json last_meta = base_meta;
  last_meta["epoch"] = trainer.epochs_done();
  last_meta["step"] = trainer.steps_done();
  save_checkpoint(out / "checkpoint_last.ckpt", trainer.params(), &trainer.optimizer(), last_meta);
  write_json(out / "summary.json",
             {{"best_epoch", best_epoch}, {"best_val_auc", best_auc}, {"steps", trainer.steps_done()}});
  return 0;
}

fs::path checkpoint_path(const json& c, const char* section) {
  return required_path(c.at(section).at("checkpoint"), std::string(section) + ".checkpoint");
}

int cmd_eval(const json& c, const fs::path& out) {
  const auto rc = run_config(c);
  const auto ck = load_checkpoint(checkpoint_path(c, "eval"));
  auto options = eval_options(rc, ck.meta);
  options.threshold_on_test = c.at("eval").at("threshold_on_test").get<bool>();
  const bool want_mass = c.at("eval").at("attention_mass").get<bool>();
  const auto data = load_dataset(required_path(c.at("data").at("manifest"), "data.manifest"), want_mass || options.sbc);
  const auto split = split_for(data, rc);
  const auto result = evaluate(ck.params, data, split, options);
  write_json(out / "metrics.json", metrics_json(result, options.threshold_on_test));

  SweepRow row;
  row.method = ck.meta.value("method", rc.method());
  row.alpha = ck.meta.value("alpha", rc.alpha);
  row.layers = row.alpha > 0.0 ? ck.meta.value("layers", to_string(rc.layers)) : "none";
  row.result = result;
  append_results_csv(out / "results.csv", std::span<const SweepRow>(&row, 1));
  return 0;
}

int cmd_rollout(const json& c, const fs::path& out) {
  const auto& rcfg = c.at("rollout");
  const auto ck = load_checkpoint(checkpoint_path(c, "rollout"));
  const auto& vit = ck.params.config;
  Sample sample;
  sample.volume = load_volume(required_path(rcfg.at("volume"), "rollout.volume"));
  const auto mask_path = rcfg.at("mask").is_null() ? std::string() : rcfg.at("mask").get<std::string>();
  if (!mask_path.empty()) sample.mask = load_mask(mask_path);
  const bool sbc = ck.meta.value("sbc", false);
  const auto input = model_input(sample, vit, sbc, ck.meta.value("crop_margin", kDefaultCropMargin));

  const auto pred = forward(ck.params, input);
  const auto map = attention_rollout(pred.attention);
  const auto grid = partition(vit.input_dims, vit.patch_size);
  const auto heat = heatmap_volume(map, grid);
  save_volume(heat, out / "heatmap.vvol");
  for (const auto& z : rcfg.at("slices")) {
    const auto zi = z.get<std::int64_t>();
    char name[64];
    std::snprintf(name, sizeof name, "heatmap_z%03lld.pgm", static_cast<long long>(zi));
    write_pgm_slice(heat, zi, out / name);
  }
  json record = {{"probability", sigmoid(pred.logit)}, {"cls_to_patch", map.cls_to_patch}};
  if (sample.mask && !sbc) {
    const auto organ = organ_patch_indices(*sample.mask, grid, c.at("train").at("opam_min_voxels").get<std::size_t>());
    record["organ_attention_mass"] = organ_attention_mass(map, organ);
  } else {
    record["organ_attention_mass"] = nullptr;
  }
  write_json(out / "rollout.json", record);
  return 0;
}

int cmd_sweep(const json& c, const fs::path& out) {
  const auto rc = run_config(c);
  SweepSpec spec;
  spec.alphas = c.at("sweep").at("alphas").get<std::vector<double>>();
  for (const auto& p : c.at("sweep").at("presets")) spec.presets.push_back(parse_layer_preset(p.get<std::string>()));
  const auto csv = out / "results.csv";
  fs::remove(csv);
  {
    std::ofstream header(csv);
    header << kResultsCsvHeader << '\n';
  }
  if (spec.alphas.empty()) return 0;

  const bool needs_masks = rc.sbc || std::any_of(spec.alphas.begin(), spec.alphas.end(), [](double a) { return a > 0.0; });
  const auto data = load_dataset(required_path(c.at("data").at("manifest"), "data.manifest"), needs_masks);
  const auto split = split_for(data, rc);
  EvalOptions eval = eval_options(rc, json::object());
  JsonLines detail(out / "sweep.jsonl");
  bool failed = false;
  run_sweep(rc, data, split, spec, eval, [&](const SweepRow& row) {
    append_results_csv(csv, std::span<const SweepRow>(&row, 1));
    json line = {{"method", row.method}, {"alpha", row.alpha}, {"layers", row.layers}};
    if (row.result) {
      line["metrics"] = metrics_json(*row.result, false);
    } else {
      line["error"] = row.error;
      failed = true;
      std::cerr << "sweep cell alpha=" << row.alpha << " layers=" << row.layers << " failed: " << row.error << '\n';
    }
    detail.write(line);
  });
  return failed ? 1 : 0;
}

int cmd_grad_check(const json& c, const fs::path& out) {
  const auto& g = c.at("grad_check");
  auto vit = c.at("vit").get<VitConfig>();
  json vj = vit;
  merge_declared(vj, g.at("vit"), "grad_check.vit");
  vit = vj.get<VitConfig>();
  vit.seed = global_seed(c);
  vit.validate();

  PhantomConfig pc = phantom_config(c);
  pc.dims = vit.input_dims;
  const auto grid = partition(vit.input_dims, vit.patch_size);
  struct Item {
    Tensor tokens;
    OpamTarget target;
    int label;
  };
  std::vector<Item> batch;
  for (int label : {1, 0}) {
    const auto s = generate_sample(pc, batch.size(), label);
    batch.push_back({tokenize(s.volume, grid), softmax_target(build_opam(s.mask, grid)), label});
  }

  ObjectiveOptions obj;
  obj.alpha = g.at("alpha").get<double>();
  obj.heads = parse_head_aggregation(c.at("train").at("heads").get<std::string>());
  if (obj.alpha > 0.0) obj.selection = OfaLayerSelection::from_preset(parse_layer_preset(g.at("layers").get<std::string>()), vit.layers);

  diff::GradCheckOptions opt;
  opt.epsilon = g.at("epsilon").get<double>();
  opt.tolerance = g.at("tolerance").get<double>();
  opt.max_coordinates = g.at("max_coordinates").get<std::size_t>();
  opt.seed = global_seed(c);
  const auto params = init_params(vit);
  const auto report = diff::grad_check(
      [&](diff::Tape& tape, std::span<const Var> vars) {
        Var total;
        for (const auto& item : batch) {
          const auto graph = forward_graph(tape, vit, vars, item.tokens);
          const auto l = composite_loss(graph, item.label, &item.target, obj).l_final;
          total = total.valid() ? diff::add(total, l) : l;
        }
        return diff::scale(total, 1.0 / static_cast<double>(batch.size()));
      },
      params.tensors, opt);

  write_json(out / "grad_check.json", {{"max_rel_error", report.max_rel_error},
                                       {"tolerance", opt.tolerance},
                                       {"coordinates_checked", report.coordinates_checked},
                                       {"total_coordinates", report.total_coordinates},
                                       {"worst_param", params.names[report.worst_param]},
                                       {"worst_index", report.worst_index},
                                       {"worst_analytic", report.worst_analytic},
                                       {"worst_numeric", report.worst_numeric},
                                       {"passed", report.passed}});
  std::cout << "grad-check: max rel err " << report.max_rel_error << " over " << report.coordinates_checked << " of "
            << report.total_coordinates << " coordinates (" << (report.passed ? "pass" : "FAIL") << ")\n";
  return report.passed ? 0 : 1;
}

bool is_config_error(ErrorKind k) {
  return k == ErrorKind::BadConfig || k == ErrorKind::ConfigInfeasible || k == ErrorKind::BadLayer;
}

}  // namespace

json default_config() {
  RunConfig rc;
  PhantomConfig pc;
  json phantom = pc;
  phantom["seed"] = nullptr;
  return {
      {"seed", 0},
      {"threads", 1},
      {"phantom", phantom},
      {"synth", {{"bayes_check", false}}},
      {"vit", VitConfig::toy_scale()},
      {"data", {{"manifest", ""}, {"ratios", {rc.ratios.train, rc.ratios.val, rc.ratios.test}}, {"split_seed", nullptr}}},
      {"train",
       {{"alpha", rc.alpha},
        {"layers", to_string(rc.layers)},
        {"heads", to_string(rc.heads)},
        {"lr", rc.lr},
        {"batch_size", rc.batch_size},
        {"epochs", rc.epochs},
        {"sbc", rc.sbc},
        {"crop_margin", rc.crop_margin},
        {"augment_flip", rc.augment_flip},
        {"augment_intensity", rc.augment_intensity},
        {"opam_min_voxels", rc.opam_min_voxels}}},
      {"eval", {{"checkpoint", ""}, {"threshold_on_test", false}, {"attention_mass", true}}},
      {"rollout", {{"checkpoint", ""}, {"volume", ""}, {"mask", nullptr}, {"slices", json::array()}}},
      {"opam", {{"mask", ""}}},
      {"sweep", {{"alphas", {900.0, 1000.0, 1100.0}}, {"presets", {"first", "first+last", "first+middle+last"}}}},
      {"grad_check",
       {{"vit", {{"layers", 2}, {"heads", 2}, {"embed_dim", 32}}},
        {"alpha", 1000.0},
        {"layers", "first+last"},
        {"epsilon", 1e-5},
        {"tolerance", 1e-4},
        {"max_coordinates", 6000}}},
  };
}

json resolve_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides,
                    std::optional<std::uint64_t> seed, std::optional<std::size_t> threads) {
  json config = default_config();
  if (file) merge_declared(config, read_json(*file), "");
  for (const auto& o : overrides) apply_override(config, o);
  if (seed) config["seed"] = *seed;
  if (threads) config["threads"] = *threads;
  return config;
}

int run(int argc, const char* const* argv) {
  CLI::App app{"Organ-focused attention for 3D vision transformers", "ofa"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--set", overrides, "Override a declared key, e.g. train.alpha=1000 (repeatable)");
  app.add_option("--out", out_dir, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Global seed (overrides the config)");
  auto* threads_opt = app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);

  std::string manifest, checkpoint, volume, mask;
  double imbalance = -1.0;
  auto* synth = app.add_subcommand("synth", "Generate the phantom dataset");
  synth->add_option("--imbalance", imbalance, "Fraction of positive samples");
  auto* opam = app.add_subcommand("opam", "Dump the organ patch attention matrix and its soft target");
  opam->add_option("--mask", mask, "Mask VVOL file");
  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--manifest", manifest, "Dataset manifest");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--manifest", manifest, "Dataset manifest");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file");
  auto* rollout = app.add_subcommand("rollout", "Attention rollout heatmap for one volume");
  rollout->add_option("--checkpoint", checkpoint, "Checkpoint file");
  rollout->add_option("--volume", volume, "Volume VVOL file");
  rollout->add_option("--mask", mask, "Optional mask for organ attention mass");
  auto* sweep = app.add_subcommand("sweep", "Alpha x layer-selection ablation");
  sweep->add_option("--manifest", manifest, "Dataset manifest");
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of the full objective");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    if (!manifest.empty()) overrides.push_back("data.manifest=" + json(manifest).dump());
    if (!checkpoint.empty()) overrides.push_back(sub->get_name() + ".checkpoint=" + json(checkpoint).dump());
    if (!volume.empty()) overrides.push_back("rollout.volume=" + json(volume).dump());
    if (!mask.empty()) overrides.push_back(sub->get_name() + ".mask=" + json(mask).dump());
    if (imbalance >= 0.0) overrides.push_back("phantom.class_balance=" + json(imbalance).dump());

    const auto config = resolve_config(config_path.empty() ? std::nullopt : std::optional<fs::path>(config_path),
                                       overrides, *seed_opt ? std::optional(seed) : std::nullopt,
                                       *threads_opt ? std::optional(threads) : std::nullopt);
    if (config.at("threads").get<std::size_t>() == 0) config_error("threads must be >= 1");
    const fs::path out(out_dir);
    fs::create_directories(out);
    json echo = config;
    echo["command"] = sub->get_name();
    write_json(out / "run.json", echo);

    if (sub == synth) return cmd_synth(config, out);
    if (sub == opam) return cmd_opam(config, out);
    if (sub == train) return cmd_train(config, out);
    if (sub == eval) return cmd_eval(config, out);
    if (sub == rollout) return cmd_rollout(config, out);
    if (sub == sweep) return cmd_sweep(config, out);
    if (sub == grad) return cmd_grad_check(config, out);
    return 2;
  } catch (const Error& e) {
    std::cerr << "ofa " << sub->get_name() << ": " << e.what() << '\n';
    return is_config_error(e.kind()) ? 2 : 1;
  } catch (const json::exception& e) {
    std::cerr << "ofa " << sub->get_name() << ": invalid configuration value: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "ofa " << sub->get_name() << ": " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ofa::cli
