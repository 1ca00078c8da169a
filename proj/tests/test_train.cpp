// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "ofa/checkpoint.hpp"
#include "ofa/error.hpp"
#include "ofa/train.hpp"
#include "test_support.hpp"

using namespace ofa;

namespace {

const Dataset& phantoms() {
  static const Dataset data = [] {
    PhantomConfig pc;
    pc.count = 40;
    pc.seed = 3;
    return dataset_from_phantoms(generate_all(pc));
  }();
  return data;
}

Dataset without_masks(const Dataset& d) {
  Dataset out = d;
  for (auto& s : out.samples) s.mask.reset();
  return out;
}

RunConfig small_run() {
  RunConfig c;
  c.vit = VitConfig::toy_scale();
  c.vit.layers = 2;
  c.vit.heads = 2;
  c.vit.embed_dim = 32;
  c.alpha = 100.0;
  c.layers = LayerPreset::FirstLast;
  c.lr = 3e-4;
  c.batch_size = 8;
  c.epochs = 2;
  c.seed = 1;
  return c;
}

DataSplit small_split() { return stratified_split(phantoms().labels(), {0.6, 0.2, 0.2}, 0); }

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("batch gradients do not depend on the thread count") {
  const auto cfg = small_run();
  auto vit = cfg.vit;
  const auto params = init_params(vit);
  const auto grid = partition(vit.input_dims, vit.patch_size);
  OpamCache cache;
  std::vector<Tensor> tokens;
  std::vector<std::shared_ptr<const OpamTarget>> targets;
  for (std::size_t i = 0; i < 6; ++i) {
    tokens.push_back(tokenize(phantoms().samples[i].volume, grid));
    targets.push_back(cache.get(*phantoms().samples[i].mask, grid));
  }
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < 6; ++i) batch.push_back({&tokens[i], phantoms().samples[i].label, targets[i].get()});
  const auto one = batch_gradients(params, batch, cfg.objective(), 1);
  const auto four = batch_gradients(params, batch, cfg.objective(), 4);
  CHECK(one.grads == four.grads);
  CHECK(one.logits == four.logits);
  CHECK(one.breakdown.l_final == four.breakdown.l_final);

  // The attention term reaches the query and key projections.
  ObjectiveOptions plain = cfg.objective();
  plain.alpha = 0.0;
  const auto base = batch_gradients(params, batch, plain, 1);
  const auto q = layer_param_index(vit, 0, "q.w");
  const auto k = layer_param_index(vit, 0, "k.w");
  CHECK(one.grads[q] != base.grads[q]);
  CHECK(one.grads[k] != base.grads[k]);
  CHECK(one.breakdown.l_ofa_total > 0.0);
  CHECK(one.breakdown.l_final == doctest::Approx(one.breakdown.l_classification + 100.0 * one.breakdown.l_ofa_total));
}

TEST_CASE("opam cache shares identical masks") {
  const auto grid = partition({24, 24, 24}, {8, 8, 8});
  OpamCache cache;
  const auto a = cache.get(*phantoms().samples[0].mask, grid);
  const auto b = cache.get(*phantoms().samples[0].mask, grid);
  const auto c = cache.get(*phantoms().samples[1].mask, grid);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(cache.size() == 2);
}

TEST_CASE("alpha zero ignores masks entirely") {
  auto cfg = small_run();
  cfg.alpha = 0.0;
  cfg.epochs = 1;
  const auto split = small_split();
  const auto with = train(cfg, phantoms(), split);
  const Dataset bare = without_masks(phantoms());
  const auto without = train(cfg, bare, split);
  CHECK(with.last == without.last);
  CHECK(with.best == without.best);
  cfg.alpha = 10.0;
  CHECK(kind_of([&] { train(cfg, bare, split); }) == ErrorKind::MissingMask);
}

TEST_CASE("training reduces the objective") {
  auto cfg = small_run();
  cfg.epochs = 6;
  cfg.alpha = 1000.0;
  std::vector<double> losses;
  const auto r = train(cfg, phantoms(), small_split(), [&](const nlohmann::json& j) {
    losses.push_back(j["l_final"].get<double>());
  });
  REQUIRE(losses.size() == 6 * 3);
  const double first = (losses[0] + losses[1] + losses[2]) / 3.0;
  const double last = (losses[15] + losses[16] + losses[17]) / 3.0;
  CHECK(last < first);
  CHECK(r.epochs.size() == 6);
  CHECK(r.steps == 18);
  CHECK(r.epochs.back().train_l_ofa < r.epochs.front().train_l_ofa);
  CHECK(r.best_epoch >= 1);
  CHECK(r.best_val_auc == r.epochs[r.best_epoch - 1].val_auc);
}

TEST_CASE("resuming continues bitwise") {
  auto cfg = small_run();
  cfg.augment_flip = true;
  const auto split = small_split();
  const auto full = train(cfg, phantoms(), split);

  Trainer first(cfg, phantoms(), split);
  first.run_epoch();
  ofa::testing::TempDir tmp("resume");
  save_checkpoint(tmp / "c.ckpt", first.params(), &first.optimizer(), {{"epoch", 1}});
  const auto ck = load_checkpoint(tmp / "c.ckpt");
  REQUIRE(ck.optimizer.has_value());
  Trainer second(cfg, phantoms(), split, ck.params, *ck.optimizer, first.epochs_done(), first.steps_done());
  second.run_epoch();
  CHECK(second.params() == full.last);
  CHECK(second.optimizer() == full.last_state);
}

TEST_CASE("checkpoint round trip") {
  ofa::testing::TempDir tmp("ckpt");
  const auto params = init_params(small_run().vit);
  auto st = make_adam_state(params.tensors, AdamHyper{2e-4});
  st.t = 7;
  st.m[3][0] = 0.125;
  const nlohmann::json meta{{"method", "ofa"}, {"alpha", 1000.0}};
  save_checkpoint(tmp / "a.ckpt", params, &st, meta);
  const auto ck = load_checkpoint(tmp / "a.ckpt");
  CHECK(ck.params == params);
  REQUIRE(ck.optimizer.has_value());
  CHECK(*ck.optimizer == st);
  CHECK(ck.meta == meta);
  save_checkpoint(tmp / "b.ckpt", params);
  CHECK_FALSE(load_checkpoint(tmp / "b.ckpt").optimizer.has_value());

  const auto bytes = ofa::testing::read_file(tmp / "a.ckpt");
  {
    std::ofstream out(tmp / "c.ckpt", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 16));
  }
  CHECK(kind_of([&] { load_checkpoint(tmp / "c.ckpt"); }) == ErrorKind::PayloadMismatch);
  {
    std::ofstream out(tmp / "d.ckpt", std::ios::binary);
    out << "NOTACKPT\n";
  }
  CHECK(kind_of([&] { load_checkpoint(tmp / "d.ckpt"); }) == ErrorKind::BadHeader);
}

TEST_CASE("evaluation") {
  auto cfg = small_run();
  cfg.epochs = 1;
  const auto split = small_split();
  const auto r = train(cfg, phantoms(), split);
  const auto with = evaluate(r.best, phantoms(), split, {});
  REQUIRE(with.organ_attention_mass.has_value());
  CHECK(*with.organ_attention_mass > 0.0);
  CHECK(*with.organ_attention_mass < 1.0);
  CHECK(with.test_scores.size() == split.test.size());
  CHECK(with.test.tp + with.test.fp + with.test.tn + with.test.fn == split.test.size());

  const Dataset bare = without_masks(phantoms());
  const auto without = evaluate(r.best, bare, split, {});
  CHECK_FALSE(without.organ_attention_mass.has_value());
  CHECK(without.test_scores == with.test_scores);
  CHECK(without.threshold == with.threshold);

  ScoredSet val;
  val.scores = predict_scores(r.best, phantoms(), split.val, {});
  for (auto i : split.val) val.labels.push_back(phantoms().samples[i].label);
  CHECK(with.threshold == youden_threshold(val));
  CHECK(with.val_auc == roc_auc(val));
}

TEST_CASE("segmentation-based cropping needs masks at inference") {
  auto cfg = small_run();
  cfg.sbc = true;
  cfg.epochs = 1;
  CHECK(cfg.method() == "sbc");
  const auto split = small_split();
  const auto r = train(cfg, phantoms(), split);
  EvalOptions opt;
  opt.sbc = true;
  CHECK_NOTHROW(evaluate(r.best, phantoms(), split, opt));
  CHECK(kind_of([&] { evaluate(r.best, without_masks(phantoms()), split, opt); }) == ErrorKind::MissingMask);
}

TEST_CASE("sweep structure") {
  auto cfg = small_run();
  cfg.epochs = 1;
  const auto split = small_split();
  SweepSpec spec;
  spec.alphas = {900.0, 1000.0, 1100.0};
  spec.presets = {LayerPreset::First, LayerPreset::FirstLast, LayerPreset::FirstMiddleLast};
  const auto rows = run_sweep(cfg, phantoms(), split, spec, {});
  REQUIRE(rows.size() == 9);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].error.empty());
    CHECK(rows[i].result.has_value());
    CHECK(rows[i].method == "ofa");
    CHECK(rows[i].alpha == spec.alphas[i / 3]);
    CHECK(rows[i].layers == to_string(spec.presets[i % 3]));
  }
  CHECK(run_sweep(cfg, phantoms(), split, SweepSpec{}, {}).empty());
}

TEST_CASE("a one-cell sweep equals a single run") {
  auto cfg = small_run();
  cfg.epochs = 1;
  const auto split = small_split();
  const auto rows = run_sweep(cfg, phantoms(), split, {{0.0, 50.0}, {LayerPreset::First}}, {});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].method == "baseline");
  CHECK(rows[0].layers == "none");
  cfg.alpha = 50.0;
  cfg.layers = LayerPreset::First;
  const auto direct = evaluate(train(cfg, phantoms(), split).best, phantoms(), split, {});
  REQUIRE(rows[1].result.has_value());
  CHECK(rows[1].result->test_scores == direct.test_scores);
  CHECK(rows[1].result->test.f1 == direct.test.f1);
}

TEST_CASE("a failing cell does not stop the sweep") {
  auto cfg = small_run();
  cfg.epochs = 1;
  const Dataset bare = without_masks(phantoms());
  const auto rows = run_sweep(cfg, bare, small_split(), {{0.0, 10.0}, {LayerPreset::First}}, {});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].result.has_value());
  CHECK_FALSE(rows[1].result.has_value());
  CHECK(rows[1].error.find("MissingMask") != std::string::npos);
  CHECK(results_csv_row(rows[1]) == "ofa,10,first,nan,nan,nan,nan");
}

TEST_CASE("results csv") {
  ofa::testing::TempDir tmp("csv");
  SweepRow row;
  row.method = "ofa";
  row.alpha = 1000.0;
  row.layers = "first+middle+last";
  row.result = EvalResult{};
  row.result->test.auc = 0.75;
  row.result->test.precision = 0.5;
  row.result->test.recall = 1.0;
  row.result->test.f1 = 2.0 / 3.0;
  CHECK(results_csv_row(row) == "ofa,1000,first+middle+last,0.750000,0.500000,1.000000,0.666667");
  const std::vector<SweepRow> rows{row};
  append_results_csv(tmp / "r.csv", rows);
  append_results_csv(tmp / "r.csv", rows);
  std::istringstream in(ofa::testing::read_file(tmp / "r.csv"));
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == kResultsCsvHeader);
  CHECK(lines[2] == lines[1]);
}

TEST_CASE("manifest paths resolve against the manifest directory") {
  ofa::testing::TempDir tmp("load");
  PhantomConfig pc;
  pc.count = 4;
  generate(pc, tmp / "data");
  const auto with = load_dataset(tmp / "data" / "manifest.json", true);
  REQUIRE(with.size() == 4);
  CHECK(with.samples[0].mask.has_value());
  const auto direct = generate_sample(pc, 0, with.samples[0].label);
  CHECK(with.samples[0].volume == direct.volume);
  const auto without = load_dataset(tmp / "data" / "manifest.json", false);
  CHECK_FALSE(without.samples[0].mask.has_value());
  CHECK(kind_of([&] { load_dataset(tmp / "nope.json", false); }) == ErrorKind::ManifestError);
}

TEST_CASE("run config validation") {
  auto cfg = small_run();
  CHECK(cfg.method() == "ofa");
  cfg.alpha = 0.0;
  CHECK(cfg.method() == "baseline");
  cfg.lr = 0.0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::BadConfig);
  cfg = small_run();
  cfg.batch_size = 0;
  CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::BadConfig);
  const auto lines = epoch_log_lines(EpochReport{3, 0.5, 0.1, 0.6, 0.7, 0.2, 0.8});
  REQUIRE(lines.size() == 2);
  CHECK(lines[0]["split"] == "train");
  CHECK(lines[1]["auc"].get<double>() == 0.8);
  CHECK(lines[1]["epoch"] == 3);
}

}  // TEST_SUITE
