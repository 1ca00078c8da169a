// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop with attention supervision, evaluation protocol and the
// alpha x layer-selection sweep.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ofa/losses.hpp"
#include "ofa/metrics.hpp"
#include "ofa/opam.hpp"
#include "ofa/optim.hpp"
#include "ofa/synthgen.hpp"
#include "ofa/vit3d.hpp"

namespace ofa {

struct RunConfig {
  VitConfig vit;
  std::filesystem::path manifest;
  SplitRatios ratios;
  std::uint64_t split_seed = 0;
  double alpha = 1000.0;
  LayerPreset layers = LayerPreset::FirstMiddleLast;
  HeadAggregation heads = HeadAggregation::Mean;
  double lr = 1e-5;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  /// Segmentation-based cropping arm: every input is cropped to the organ.
  bool sbc = false;
  std::int64_t crop_margin = kDefaultCropMargin;
  bool augment_flip = false;
  bool augment_intensity = false;
  std::size_t opam_min_voxels = 1;
  /// Drives initialisation (replacing vit.seed), batch order and augmentation.
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  /// Throws BadConfig.
  void validate() const;
  ObjectiveOptions objective() const;
  /// "baseline", "ofa" or "sbc".
  std::string method() const;
};

struct Sample {
  Volume volume;
  std::optional<SegMask> mask;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  std::vector<int> labels() const;
};

/// Reads the manifest and the referenced files. Masks are only read when
/// `load_masks` is set; the inference path never needs them.
Dataset load_dataset(const std::filesystem::path& manifest, bool load_masks);
Dataset dataset_from_phantoms(std::vector<PhantomSample> samples);

/// Cache of attention targets keyed by (mask content hash, patch grid).
class OpamCache {
 public:
  explicit OpamCache(std::size_t min_voxels = 1);
  /// Thread-safe.
  std::shared_ptr<const OpamTarget> get(const SegMask& mask, const PatchGrid& grid);
  std::size_t size() const;

 private:
  struct Impl;
  std::size_t min_voxels_;
  std::shared_ptr<Impl> impl_;
};

struct BatchItem {
  const Tensor* tokens = nullptr;
  int label = 0;
  const OpamTarget* target = nullptr;
};

struct BatchGradients {
  /// Gradient of the mean per-sample objective.
  std::vector<Tensor> grads;
  /// Component-wise mean over the batch.
  LossBreakdown breakdown;
  std::vector<double> logits;
};

/// Per-sample graphs run on up to `threads` workers and are reduced in batch
/// order, so the result is bitwise independent of the thread count.
BatchGradients batch_gradients(const VitParams& params, std::span<const BatchItem> batch,
                               const ObjectiveOptions& objective, std::size_t threads);

struct EpochReport {
  std::size_t epoch = 0;
  double train_l_cls = 0.0;
  double train_l_ofa = 0.0;
  double train_auc = 0.0;
  double val_l_cls = 0.0;
  double val_l_ofa = 0.0;
  double val_auc = 0.0;
};

class Trainer {
 public:
  /// Fresh model initialised from config.seed. Throws MissingMask when
  /// alpha > 0 (or SBC is on) and a required mask is absent.
  Trainer(RunConfig config, const Dataset& data, DataSplit split);
  /// Resumes from saved parameters and optimizer state after `epochs_done`
  /// epochs and `steps_done` optimizer steps.
  Trainer(RunConfig config, const Dataset& data, DataSplit split, VitParams params, AdamState state,
          std::size_t epochs_done, std::size_t steps_done);

  /// One pass over the training split followed by a validation pass.
  EpochReport run_epoch();

  const VitParams& params() const noexcept { return params_; }
  const AdamState& optimizer() const noexcept { return adam_; }
  std::size_t epochs_done() const noexcept { return epoch_; }
  std::size_t steps_done() const noexcept { return step_; }
  const DataSplit& split() const noexcept { return split_; }

  /// Called with one LossBreakdown JSON line per optimizer step.
  std::function<void(const nlohmann::json&)> on_step;

 private:
  void prepare();

  RunConfig config_;
  const Dataset& data_;
  DataSplit split_;
  PatchGrid grid_;
  VitParams params_;
  AdamState adam_;
  ObjectiveOptions objective_;
  std::vector<Tensor> tokens_;
  std::vector<std::shared_ptr<const OpamTarget>> targets_;
  OpamCache cache_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
};

struct TrainResult {
  VitParams best;
  std::size_t best_epoch = 0;
  double best_val_auc = 0.0;
  VitParams last;
  AdamState last_state;
  std::size_t steps = 0;
  std::vector<EpochReport> epochs;
};

/// Trains for config.epochs and keeps the parameters of the epoch with the
/// best validation AUC (ties: lower validation loss, then earlier epoch).
TrainResult train(const RunConfig& config, const Dataset& data, const DataSplit& split,
                  const std::function<void(const nlohmann::json&)>& on_step = {},
                  const std::function<void(const EpochReport&)>& on_epoch = {});

/// {epoch, split, l_cls, l_ofa_total, auc} lines for train and val.
std::vector<nlohmann::json> epoch_log_lines(const EpochReport& r);

/// Model inputs as seen by the network: the raw volume, or the organ crop
/// resampled to the model input when SBC is enabled.
Volume model_input(const Sample& sample, const VitConfig& vit, bool sbc, std::int64_t crop_margin);

struct EvalOptions {
  /// Select the Youden threshold on the test split instead of validation.
  bool threshold_on_test = false;
  bool sbc = false;
  std::int64_t crop_margin = kDefaultCropMargin;
  std::size_t opam_min_voxels = 1;
  std::size_t threads = 1;
};

struct EvalResult {
  MetricsReport test;
  double val_auc = 0.0;
  /// Chosen on validation (unless threshold_on_test) and applied unchanged.
  double threshold = 0.0;
  /// Mean organ share of CLS rollout over test samples, when all test masks
  /// are available.
  std::optional<double> organ_attention_mass;
  std::vector<double> test_scores;
};

/// Probabilities for the given samples. Never reads masks unless SBC is on.
std::vector<double> predict_scores(const VitParams& params, const Dataset& data, std::span<const std::size_t> indices,
                                   const EvalOptions& options);

EvalResult evaluate(const VitParams& params, const Dataset& data, const DataSplit& split, const EvalOptions& options);

/// Mean rollout organ share over samples that carry a mask.
double mean_organ_attention_mass(const VitParams& params, const Dataset& data, std::span<const std::size_t> indices,
                                 const EvalOptions& options);

struct SweepSpec {
  std::vector<double> alphas;
  std::vector<LayerPreset> presets;
};

struct SweepRow {
  std::string method;
  double alpha = 0.0;
  std::string layers;
  std::optional<EvalResult> result;
  std::string error;
};

/// One train + evaluate per (alpha, preset) cell, alpha-major. A failing cell
/// is reported in its row and the sweep continues.
std::vector<SweepRow> run_sweep(const RunConfig& base, const Dataset& data, const DataSplit& split,
                                const SweepSpec& spec, const EvalOptions& eval,
                                const std::function<void(const SweepRow&)>& on_row = {});

inline constexpr const char* kResultsCsvHeader = "method,alpha,layers,auc,precision,recall,f1";
std::string results_csv_row(const SweepRow& row);
/// Writes the header when the file is new or empty.
void append_results_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);

}  // namespace ofa
