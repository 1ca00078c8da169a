// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <tuple>

#include "ofa/error.hpp"
#include "ofa/parallel.hpp"
#include "ofa/rollout.hpp"

namespace ofa {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return mix(mix(mix(seed) ^ a) ^ b);
}

constexpr std::uint64_t kShuffleStream = 0x5bu;
constexpr std::uint64_t kAugmentStream = 0xa6u;

struct Augmentation {
  bool flip[3] = {false, false, false};
  double scale = 1.0;
  bool identity() const { return !flip[0] && !flip[1] && !flip[2] && scale == 1.0; }
};

Augmentation draw_augmentation(const RunConfig& cfg, std::size_t epoch, std::size_t sample) {
  Augmentation a;
  std::mt19937_64 rng(stream_seed(cfg.seed ^ kAugmentStream, epoch, sample));
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> gain(0.9, 1.1);
  for (auto& f : a.flip) f = coin(rng);
  const double s = gain(rng);
  if (!cfg.augment_flip) a.flip[0] = a.flip[1] = a.flip[2] = false;
  if (cfg.augment_intensity) a.scale = s;
  return a;
}

template <typename T, typename Get>
std::vector<T> flipped(const Dims3& d, const Augmentation& a, Get get) {
  std::vector<T> out(d.voxels());
  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.h; ++y) {
      for (std::int64_t x = 0; x < d.w; ++x) {
        out[d.index(z, y, x)] = get(a.flip[0] ? d.d - 1 - z : z, a.flip[1] ? d.h - 1 - y : y, a.flip[2] ? d.w - 1 - x : x);
      }
    }
  }
  return out;
}

Volume augment(const Volume& v, const Augmentation& a) {
  auto data = flipped<float>(v.dims(), a, [&](auto z, auto y, auto x) { return v.at(z, y, x); });
  if (a.scale != 1.0) {
    for (auto& x : data) x = static_cast<float>(x * a.scale);
  }
  return Volume(v.dims(), std::move(data), v.spacing());
}

SegMask augment(const SegMask& m, const Augmentation& a) {
  return SegMask(m.dims(), flipped<std::uint8_t>(m.dims(), a, [&](auto z, auto y, auto x) { return m.at(z, y, x); }),
                 m.max_label(), m.spacing());
}

std::uint64_t hash_mask(const SegMask& mask) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto v : mask.labels()) {
    h ^= v;
    h *= 1099511628211ULL;
  }
  return h;
}

const SegMask& require_mask(const Sample& s, std::size_t index, const char* why) {
  if (!s.mask) throw Error(ErrorKind::MissingMask, "sample " + std::to_string(index) + " has no mask (" + why + ")");
  return *s.mask;
}

double safe_auc(const ScoredSet& set) {
  if (set.positives() == 0 || set.negatives() == 0) return 0.0;
  return roc_auc(set);
}

}  // namespace

void RunConfig::validate() const {
  vit.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::BadConfig, "lr must be positive");
  if (batch_size == 0) throw Error(ErrorKind::BadConfig, "batch_size must be positive");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error(ErrorKind::BadConfig, "alpha must be finite and >= 0");
  if (crop_margin < 0) throw Error(ErrorKind::BadConfig, "crop_margin must be >= 0");
  if (opam_min_voxels == 0) throw Error(ErrorKind::BadConfig, "opam_min_voxels must be >= 1");
  if (threads == 0) throw Error(ErrorKind::BadConfig, "threads must be >= 1");
}

ObjectiveOptions RunConfig::objective() const {
  ObjectiveOptions o;
  o.alpha = alpha;
  o.heads = heads;
  if (alpha > 0.0) o.selection = OfaLayerSelection::from_preset(layers, vit.layers);
  return o;
}

std::string RunConfig::method() const {
  if (sbc) return "sbc";
  return alpha > 0.0 ? "ofa" : "baseline";
}

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

Dataset load_dataset(const std::filesystem::path& manifest, bool load_masks) {
  const auto entries = load_manifest(manifest);
  const auto base = manifest.parent_path();
  auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
  };
  Dataset data;
  data.samples.reserve(entries.size());
  for (const auto& e : entries) {
    Sample s;
    s.volume = load_volume(resolve(e.volume));
    if (load_masks && !e.mask.empty()) s.mask = load_mask(resolve(e.mask));
    s.label = e.label;
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset dataset_from_phantoms(std::vector<PhantomSample> samples) {
  Dataset data;
  data.samples.reserve(samples.size());
  for (auto& p : samples) data.samples.push_back({std::move(p.volume), std::move(p.mask), p.label});
  return data;
}

struct OpamCache::Impl {
  using Key = std::tuple<std::uint64_t, std::int64_t, std::int64_t, std::int64_t, std::int64_t, std::int64_t, std::int64_t>;
  struct Entry {
    SegMask mask;
    std::shared_ptr<const OpamTarget> target;
  };
  mutable std::mutex mu;
  std::map<Key, std::vector<Entry>> buckets;
  std::size_t count = 0;
};

OpamCache::OpamCache(std::size_t min_voxels) : min_voxels_(min_voxels), impl_(std::make_shared<Impl>()) {}

std::shared_ptr<const OpamTarget> OpamCache::get(const SegMask& mask, const PatchGrid& grid) {
  const auto& v = grid.volume_dims();
  const auto& p = grid.patch_size();
  const Impl::Key key{hash_mask(mask), v.d, v.h, v.w, p.d, p.h, p.w};
  {
    std::lock_guard lock(impl_->mu);
    for (const auto& e : impl_->buckets[key]) {
      if (e.mask == mask) return e.target;
    }
  }
  auto target = std::make_shared<const OpamTarget>(softmax_target(build_opam(mask, grid, min_voxels_)));
  std::lock_guard lock(impl_->mu);
  auto& bucket = impl_->buckets[key];
  for (const auto& e : bucket) {
    if (e.mask == mask) return e.target;
  }
  bucket.push_back({mask, target});
  ++impl_->count;
  return target;
}

std::size_t OpamCache::size() const {
  std::lock_guard lock(impl_->mu);
  return impl_->count;
}

BatchGradients batch_gradients(const VitParams& params, std::span<const BatchItem> batch,
                               const ObjectiveOptions& objective, std::size_t threads) {
  if (batch.empty()) throw Error(ErrorKind::BadConfig, "empty batch");
  struct PerSample {
    std::vector<Tensor> grads;
    LossBreakdown breakdown;
    double logit = 0.0;
  };
  std::vector<PerSample> results(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    diff::Tape tape;
    const auto vars = bind_params(tape, params, true);
    const auto graph = forward_graph(tape, params.config, vars, *batch[i].tokens);
    const auto obj = composite_loss(graph, batch[i].label, batch[i].target, objective);
    tape.backward(obj.l_final);
    auto& r = results[i];
    r.grads.reserve(vars.size());
    for (const auto& v : vars) r.grads.push_back(v.grad());
    r.breakdown = obj.breakdown;
    r.logit = graph.logit.item();
  });

  BatchGradients out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.grads = std::move(results[0].grads);
  for (std::size_t i = 1; i < results.size(); ++i) {
    for (std::size_t k = 0; k < out.grads.size(); ++k) {
      double* dst = out.grads[k].data();
      const double* src = results[i].grads[k].data();
      for (std::size_t e = 0; e < out.grads[k].size(); ++e) dst[e] += src[e];
    }
  }
  for (auto& g : out.grads) {
    for (auto& x : g.values()) x *= inv;
  }
  auto& b = out.breakdown;
  b.alpha = objective.alpha;
  for (const auto& r : results) {
    b.l_classification += r.breakdown.l_classification * inv;
    b.l_ofa_total += r.breakdown.l_ofa_total * inv;
    b.l_final += r.breakdown.l_final * inv;
    for (const auto& [layer, v] : r.breakdown.l_ofa_per_layer) b.l_ofa_per_layer[layer] += v * inv;
    out.logits.push_back(r.logit);
  }
  return out;
}

Volume model_input(const Sample& sample, const VitConfig& vit, bool sbc, std::int64_t crop_margin) {
  if (!sbc) return sample.volume;
  if (!sample.mask) throw Error(ErrorKind::MissingMask, "segmentation-based cropping needs a mask");
  return crop_to_organ(sample.volume, *sample.mask, crop_margin, vit.input_dims);
}

Trainer::Trainer(RunConfig config, const Dataset& data, DataSplit split)
    : config_(std::move(config)),
      data_(data),
      split_(std::move(split)),
      grid_(partition(config_.vit.input_dims, config_.vit.patch_size)),
      cache_(config_.opam_min_voxels) {
  config_.validate();
  config_.vit.seed = config_.seed;
  params_ = init_params(config_.vit);
  adam_ = make_adam_state(params_.tensors, AdamHyper{config_.lr});
  prepare();
}

Trainer::Trainer(RunConfig config, const Dataset& data, DataSplit split, VitParams params, AdamState state,
                 std::size_t epochs_done, std::size_t steps_done)
    : config_(std::move(config)),
      data_(data),
      split_(std::move(split)),
      grid_(partition(config_.vit.input_dims, config_.vit.patch_size)),
      params_(std::move(params)),
      adam_(std::move(state)),
      cache_(config_.opam_min_voxels),
      epoch_(epochs_done),
      step_(steps_done) {
  config_.validate();
  config_.vit.seed = config_.seed;
  if (params_.config.input_dims != config_.vit.input_dims || params_.config.patch_size != config_.vit.patch_size ||
      params_.config.embed_dim != config_.vit.embed_dim || params_.config.layers != config_.vit.layers ||
      params_.config.heads != config_.vit.heads) {
    throw Error(ErrorKind::BadConfig, "checkpoint architecture does not match the run configuration");
  }
  prepare();
}

void Trainer::prepare() {
  objective_ = config_.objective();
  const auto n = data_.size();
  for (const auto* part : {&split_.train, &split_.val, &split_.test}) {
    for (auto i : *part) {
      if (i >= n) throw Error(ErrorKind::BadConfig, "split index " + std::to_string(i) + " out of range");
    }
  }
  const bool needs_targets = config_.alpha > 0.0;
  if (needs_targets) {
    for (auto i : split_.train) require_mask(data_.samples[i], i, "alpha > 0");
  }
  tokens_.assign(n, Tensor());
  targets_.assign(n, nullptr);
  std::vector<std::size_t> used(split_.train);
  used.insert(used.end(), split_.val.begin(), split_.val.end());
  parallel_for(used.size(), config_.threads, [&](std::size_t k) {
    const auto i = used[k];
    const auto& s = data_.samples[i];
    tokens_[i] = tokenize(model_input(s, config_.vit, config_.sbc, config_.crop_margin), grid_);
    if (needs_targets && s.mask && !config_.sbc) targets_[i] = cache_.get(*s.mask, grid_);
  });
  if (needs_targets && config_.sbc) {
    // Cropped inputs are all organ; the target is recomputed on the resampled mask.
    for (auto i : used) {
      const auto& s = data_.samples[i];
      if (!s.mask) continue;
      const auto box = organ_bounding_box(*s.mask, config_.crop_margin);
      Volume as_float(s.mask->dims());
      auto dst = as_float.data();
      const auto src = s.mask->labels();
      for (std::size_t v = 0; v < src.size(); ++v) dst[v] = src[v];
      const auto resampled = resample_box(as_float, box, config_.vit.input_dims);
      std::vector<std::uint8_t> labels(resampled.data().size());
      for (std::size_t v = 0; v < labels.size(); ++v) labels[v] = resampled.data()[v] >= 0.5f ? 1 : 0;
      targets_[i] = cache_.get(SegMask(config_.vit.input_dims, std::move(labels)), grid_);
    }
  }
}

EpochReport Trainer::run_epoch() {
  EpochReport report;
  report.epoch = epoch_ + 1;
  const bool augmenting = config_.augment_flip || config_.augment_intensity;

  std::vector<std::size_t> order = split_.train;
  std::mt19937_64 rng(stream_seed(config_.seed ^ kShuffleStream, epoch_));
  std::shuffle(order.begin(), order.end(), rng);

  ScoredSet train_scores;
  double l_cls = 0.0;
  double l_ofa = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
    const std::size_t end = std::min(order.size(), start + config_.batch_size);
    const std::size_t b = end - start;
    std::vector<Tensor> aug_tokens(augmenting ? b : 0);
    std::vector<std::shared_ptr<const OpamTarget>> aug_targets(augmenting ? b : 0);
    std::vector<BatchItem> batch(b);
    parallel_for(b, config_.threads, [&](std::size_t k) {
      const auto i = order[start + k];
      const auto& s = data_.samples[i];
      batch[k].label = s.label;
      const auto a = draw_augmentation(config_, epoch_, i);
      if (!augmenting || a.identity() || config_.sbc) {
        batch[k].tokens = &tokens_[i];
        batch[k].target = targets_[i].get();
        return;
      }
      aug_tokens[k] = tokenize(augment(s.volume, a), grid_);
      batch[k].tokens = &aug_tokens[k];
      if (config_.alpha > 0.0 && s.mask) {
        aug_targets[k] = cache_.get(augment(*s.mask, a), grid_);
        batch[k].target = aug_targets[k].get();
      }
    });
    auto grads = batch_gradients(params_, batch, objective_, config_.threads);
    adam_step(params_.tensors, grads.grads, adam_);
    ++step_;
    if (on_step) on_step(loss_log_line(step_, grads.breakdown));
    l_cls += grads.breakdown.l_classification * static_cast<double>(b);
    l_ofa += grads.breakdown.l_ofa_total * static_cast<double>(b);
    for (std::size_t k = 0; k < b; ++k) {
      train_scores.scores.push_back(grads.logits[k]);
      train_scores.labels.push_back(batch[k].label);
    }
  }
  const double n_train = static_cast<double>(std::max<std::size_t>(order.size(), 1));
  report.train_l_cls = l_cls / n_train;
  report.train_l_ofa = l_ofa / n_train;
  report.train_auc = safe_auc(train_scores);

  // Validation with the updated parameters; OFA terms only where a mask exists.
  struct ValOut {
    double logit = 0.0;
    double l_cls = 0.0;
    double l_ofa = 0.0;
  };
  std::vector<ValOut> val(split_.val.size());
  parallel_for(val.size(), config_.threads, [&](std::size_t k) {
    const auto i = split_.val[k];
    diff::Tape tape;
    const auto vars = bind_params(tape, params_, false);
    const auto graph = forward_graph(tape, params_.config, vars, tokens_[i]);
    const OpamTarget* target = targets_[i].get();
    ObjectiveOptions obj = objective_;
    if (target == nullptr) obj.alpha = 0.0;
    const auto out = composite_loss(graph, data_.samples[i].label, target, obj);
    val[k] = {graph.logit.item(), out.breakdown.l_classification, out.breakdown.l_ofa_total};
  });
  ScoredSet val_scores;
  for (std::size_t k = 0; k < val.size(); ++k) {
    val_scores.scores.push_back(val[k].logit);
    val_scores.labels.push_back(data_.samples[split_.val[k]].label);
    report.val_l_cls += val[k].l_cls;
    report.val_l_ofa += val[k].l_ofa;
  }
  if (!val.empty()) {
    report.val_l_cls /= static_cast<double>(val.size());
    report.val_l_ofa /= static_cast<double>(val.size());
  }
  report.val_auc = safe_auc(val_scores);
  ++epoch_;
  return report;
}

TrainResult train(const RunConfig& config, const Dataset& data, const DataSplit& split,
                  const std::function<void(const nlohmann::json&)>& on_step,
                  const std::function<void(const EpochReport&)>& on_epoch) {
  Trainer trainer(config, data, split);
  trainer.on_step = on_step;
  TrainResult result;
  result.best = trainer.params();
  double best_loss = 0.0;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    auto r = trainer.run_epoch();
    if (on_epoch) on_epoch(r);
    const bool better = result.epochs.empty() || r.val_auc > result.best_val_auc ||
                        (r.val_auc == result.best_val_auc && r.val_l_cls < best_loss);
    if (better) {
      result.best = trainer.params();
      result.best_epoch = r.epoch;
      result.best_val_auc = r.val_auc;
      best_loss = r.val_l_cls;
    }
    result.epochs.push_back(r);
  }
  result.last = trainer.params();
  result.last_state = trainer.optimizer();
  result.steps = trainer.steps_done();
  return result;
}

std::vector<nlohmann::json> epoch_log_lines(const EpochReport& r) {
  return {
      {{"epoch", r.epoch}, {"split", "train"}, {"l_cls", r.train_l_cls}, {"l_ofa_total", r.train_l_ofa}, {"auc", r.train_auc}},
      {{"epoch", r.epoch}, {"split", "val"}, {"l_cls", r.val_l_cls}, {"l_ofa_total", r.val_l_ofa}, {"auc", r.val_auc}},
  };
}

std::vector<double> predict_scores(const VitParams& params, const Dataset& data, std::span<const std::size_t> indices,
                                   const EvalOptions& options) {
  std::vector<double> scores(indices.size());
  parallel_for(indices.size(), options.threads, [&](std::size_t k) {
    const auto& s = data.samples.at(indices[k]);
    scores[k] = sigmoid(forward(params, model_input(s, params.config, options.sbc, options.crop_margin)).logit);
  });
  return scores;
}

double mean_organ_attention_mass(const VitParams& params, const Dataset& data, std::span<const std::size_t> indices,
                                 const EvalOptions& options) {
  const PatchGrid grid = partition(params.config.input_dims, params.config.patch_size);
  std::vector<double> mass(indices.size(), 0.0);
  std::vector<char> has(indices.size(), 0);
  parallel_for(indices.size(), options.threads, [&](std::size_t k) {
    const auto& s = data.samples.at(indices[k]);
    if (!s.mask) return;
    const auto pred = forward(params, s.volume);
    const auto organ = organ_patch_indices(*s.mask, grid, options.opam_min_voxels);
    mass[k] = organ_attention_mass(attention_rollout(pred.attention), organ);
    has[k] = 1;
  });
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < mass.size(); ++k) {
    if (has[k]) {
      total += mass[k];
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::MissingMask, "no sample with a mask to measure organ attention");
  return total / static_cast<double>(n);
}

EvalResult evaluate(const VitParams& params, const Dataset& data, const DataSplit& split, const EvalOptions& options) {
  auto scored = [&](std::span<const std::size_t> idx, std::vector<double> scores) {
    ScoredSet set;
    set.scores = std::move(scores);
    for (auto i : idx) set.labels.push_back(data.samples.at(i).label);
    return set;
  };
  const auto val = scored(split.val, predict_scores(params, data, split.val, options));
  const auto test = scored(split.test, predict_scores(params, data, split.test, options));

  EvalResult r;
  r.val_auc = roc_auc(val);
  r.threshold = youden_threshold(options.threshold_on_test ? test : val);
  r.test = prf1(test, r.threshold);
  r.test.auc = roc_auc(test);
  r.test_scores = test.scores;
  const bool all_masks = !options.sbc && std::all_of(split.test.begin(), split.test.end(),
                                                    [&](std::size_t i) { return data.samples.at(i).mask.has_value(); });
  if (all_masks && !split.test.empty()) {
    r.organ_attention_mass = mean_organ_attention_mass(params, data, split.test, options);
  }
  return r;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, const Dataset& data, const DataSplit& split,
                                const SweepSpec& spec, const EvalOptions& eval,
                                const std::function<void(const SweepRow&)>& on_row) {
  std::vector<SweepRow> rows;
  for (double alpha : spec.alphas) {
    // The baseline does not depend on the layer choice; run it once.
    std::vector<std::optional<LayerPreset>> presets;
    if (alpha == 0.0) {
      presets.push_back(std::nullopt);
    } else {
      presets.assign(spec.presets.begin(), spec.presets.end());
    }
    for (const auto& preset : presets) {
      RunConfig cfg = base;
      cfg.alpha = alpha;
      if (preset) cfg.layers = *preset;
      SweepRow row;
      row.method = cfg.method();
      row.alpha = alpha;
      row.layers = preset ? to_string(*preset) : "none";
      try {
        const auto trained = train(cfg, data, split);
        row.result = evaluate(trained.best, data, split, eval);
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string results_csv_row(const SweepRow& row) {
  char buf[256];
  if (row.result) {
    const auto& m = row.result->test;
    std::snprintf(buf, sizeof buf, "%s,%.6g,%s,%.6f,%.6f,%.6f,%.6f", row.method.c_str(), row.alpha, row.layers.c_str(),
                  m.auc, m.precision, m.recall, m.f1);
  } else {
    std::snprintf(buf, sizeof buf, "%s,%.6g,%s,nan,nan,nan,nan", row.method.c_str(), row.alpha, row.layers.c_str());
  }
  return buf;
}

void append_results_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string());
  if (fresh) out << kResultsCsvHeader << '\n';
  for (const auto& r : rows) out << results_csv_row(r) << '\n';
}

}  // namespace ofa
