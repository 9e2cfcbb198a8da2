#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <vector>

#include "dpn/checks.hpp"
#include "dpn/config.hpp"
#include "dpn/error.hpp"
#include "dpn/model.hpp"
#include "dpn/rng.hpp"
#include "dpn/train.hpp"

using namespace dpn;
namespace fs = std::filesystem;

namespace {

DetectorConfig tiny_detector() {
  DetectorConfig d;
  d.backbone.num_seeds = 32;
  d.backbone.k_neighbors = 12;
  d.backbone.num_fa_layers = 3;
  d.backbone.group_sizes = {4, 4, 4};
  d.backbone.mlp_widths = {{8}, {8}, {12}};
  d.head_hidden = 8;
  return d;
}

SceneSpec small_scene() {
  SceneSpec s;
  s.max_range_m = 30;
  s.ground_extent_m = 30;
  s.num_objects = 4;
  s.noise_points = 300;
  return s;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

}  // namespace

TEST(Detector, ConfigTaps) {
  DetectorConfig d = tiny_detector();
  EXPECT_EQ(d.top_tap(), 2u);
  EXPECT_EQ(d.aux_taps(), (std::vector<std::size_t>{1, 0}));
  d.head_tap = 1;
  d.num_aux_heads = 1;
  EXPECT_EQ(d.top_tap(), 1u);
  EXPECT_EQ(d.aux_taps(), (std::vector<std::size_t>{0}));
  d.num_aux_heads = 2;  // capped at the taps below the top head
  EXPECT_EQ(d.aux_taps(), (std::vector<std::size_t>{0}));
  d.head_tap = 3;
  EXPECT_EQ(code_of([&] { d.validate(); }), ErrorCode::Validation);
}

TEST(Detector, AuxHeadsDoNotChangeTopInference) {
  const CheckResult r = check_aux_neutrality(4);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Detector, AuxOnOffSameStepZeroTopOutputs) {
  DetectorConfig with_aux = tiny_detector();
  DetectorConfig no_aux = with_aux;
  no_aux.num_aux_heads = 0;
  const Detector a = Detector::init(with_aux, 4, 7);
  const Detector b = Detector::init(no_aux, 4, 7);
  const SyntheticScene scene = generate_scene(small_scene(), 1);
  const HeadOutput ya = infer(a, scene.cloud, 3);
  const HeadOutput yb = infer(b, scene.cloud, 3);
  EXPECT_TRUE(same_values(ya.logits, yb.logits));
  EXPECT_TRUE(same_values(ya.residuals, yb.residuals));
  const HeadOutput yd = infer(a.without_aux(), scene.cloud, 3);
  EXPECT_TRUE(same_values(ya.logits, yd.logits));
}

TEST(Detector, LossHeadsNamedAndSummed) {
  const Detector det = Detector::init(tiny_detector(), 4, 2);
  const SyntheticScene scene = generate_scene(small_scene(), 5);
  Tape tape;
  const DetectorOutput out = run_detector(tape, det, scene.cloud, 1);
  const Targets targets = assign_targets(scene.boxes, out.backbone.sg.seeds.xyz);
  const DetectorLoss loss = detector_loss(tape, det, out, targets);
  ASSERT_EQ(loss.report.heads.size(), 6u);
  EXPECT_EQ(loss.report.heads[0].name, "rpn.tap2");
  double total = 0;
  for (const HeadLoss& h : loss.report.heads) total += h.total;
  EXPECT_NEAR(loss.report.total, total, 1e-12);
  EXPECT_DOUBLE_EQ(loss.total.item(), loss.report.total);
}

TEST(Checkpoint, RoundTripPreservesInference) {
  const Detector det = Detector::init(tiny_detector(), 4, 9);
  const fs::path dir = fs::temp_directory_path() / "dpn_test_ckpt";
  fs::create_directories(dir);
  save_checkpoint(det, dir / "ckpt.json", dir / "ckpt.bin");
  const Detector back = load_checkpoint(dir / "ckpt.json");
  const auto a = det.named_parameters();
  const auto b = back.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    for (std::size_t j = 0; j < a[i].second.size(); ++j)
      EXPECT_EQ(static_cast<float>(a[i].second.values()[j]), b[i].second.values()[j]);
  }
  fs::remove_all(dir);
}

TEST(Checkpoint, TruncatedBlobRejected) {
  const Detector det = Detector::init(tiny_detector(), 4, 9);
  const fs::path dir = fs::temp_directory_path() / "dpn_test_ckpt_bad";
  fs::create_directories(dir);
  save_checkpoint(det, dir / "ckpt.json", dir / "ckpt.bin");
  fs::resize_file(dir / "ckpt.bin", fs::file_size(dir / "ckpt.bin") - 4);
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "ckpt.json"); }), ErrorCode::Format);
  fs::remove_all(dir);
}

TEST(Adam, MovesAgainstGradient) {
  Tensor p = Tensor::from(1, 2, {1.0, -1.0}, true);
  Adam opt({p}, 0.1);
  for (int i = 0; i < 3; ++i) {
    opt.zero_grad();
    Tape tape;
    tape.backward(sum(tape, mul(tape, p, p)));
    opt.step();
  }
  EXPECT_LT(p.values()[0], 1.0);
  EXPECT_GT(p.values()[1], -1.0);
  EXPECT_EQ(opt.steps(), 3u);
}

TEST(Train, ShortRunDeterministicAndDecreasing) {
  const auto scenes = make_scenes(small_scene(), 6, 3);
  TrainOptions opts;
  opts.epochs = 3;
  opts.num_points = 512;
  opts.learning_rate = 3e-3;
  Detector a = Detector::init(tiny_detector(), 4, 3);
  Detector b = Detector::init(tiny_detector(), 4, 3);
  std::vector<double> logged;
  const TrainResult ra =
      train_detector(a, scenes, opts, [&](const StepRecord& r) { logged.push_back(r.loss.total); });
  const TrainResult rb = train_detector(b, scenes, opts);
  ASSERT_EQ(ra.steps.size(), 18u);
  ASSERT_EQ(logged.size(), 18u);
  for (std::size_t i = 0; i < ra.steps.size(); ++i)
    EXPECT_EQ(ra.steps[i].loss.total, rb.steps[i].loss.total);
  EXPECT_EQ(ra.final_dataset_loss, rb.final_dataset_loss);
  EXPECT_LT(ra.final_dataset_loss, ra.initial_dataset_loss);
}

TEST(Train, MakeScenesIndependentOfThreads) {
  const auto a = make_scenes(small_scene(), 5, 11, 1);
  const auto b = make_scenes(small_scene(), 5, 11, 4);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(scene_to_json(a[i]), scene_to_json(b[i]));
}

TEST(RunConfig, PresetsDiffer) {
  const RunConfig desk = desk_preset();
  const RunConfig paper = paper_preset();
  EXPECT_EQ(desk.train.learning_rate, 1e-3);
  EXPECT_EQ(paper.train.learning_rate, 0.01);
  EXPECT_EQ(paper.detector.backbone.num_seeds, 4096u);
  EXPECT_EQ(paper.train.num_points, 16384u);
  EXPECT_EQ(paper.detector.backbone.group_sizes, (std::vector<std::size_t>{6, 6, 6, 6}));
  EXPECT_NO_THROW(desk.validate());
  EXPECT_NO_THROW(paper.validate());
}

TEST(RunConfig, JsonRoundTrip) {
  RunConfig c = desk_preset();
  c.detector.backbone.radius_m = 2.0;
  c.train.epochs = 7;
  const RunConfig back = apply_json(paper_preset(), to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(RunConfig, UnknownKeyRejected) {
  EXPECT_EQ(code_of([] { apply_json(desk_preset(), {{"radius", 2.0}}); }), ErrorCode::Validation);
}

TEST(RunConfig, PerLayerRadiiRejected) {
  EXPECT_EQ(code_of([] { apply_json(desk_preset(), {{"radius_m", {1.0, 2.0}}}); }),
            ErrorCode::Validation);
}

TEST(RunConfig, GroupSizeMismatchFailsValidation) {
  const RunConfig c = apply_json(desk_preset(), {{"group_sizes", {6, 6, 6, 5}}});
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::Validation);
}

TEST(RunConfig, ChangingKRepartitions) {
  const RunConfig c = apply_json(desk_preset(), {{"k_neighbors", 32}});
  EXPECT_EQ(c.detector.backbone.group_sizes, (std::vector<std::size_t>{8, 8, 8, 8}));
  const RunConfig l = apply_json(c, {{"num_fa_layers", 2}});
  EXPECT_EQ(l.detector.backbone.group_sizes, (std::vector<std::size_t>{16, 16}));
  EXPECT_EQ(l.detector.backbone.mlp_widths.size(), 2u);
  EXPECT_NO_THROW(l.validate());
}

TEST(RunConfig, MalformedFileIsFormatError) {
  const fs::path p = fs::temp_directory_path() / "dpn_test_bad_config.json";
  std::ofstream(p) << "{not json";
  EXPECT_EQ(code_of([&] { load_run_config(p, desk_preset()); }), ErrorCode::Format);
  fs::remove(p);
}

TEST(RunConfig, FilePresetAppliedFirst) {
  const fs::path p = fs::temp_directory_path() / "dpn_test_preset.json";
  std::ofstream(p) << R"({"radius_m": 2.0, "preset": "paper"})";
  const RunConfig c = load_run_config(p, desk_preset());
  EXPECT_EQ(c.preset, "paper");
  EXPECT_EQ(c.train.learning_rate, 0.01);
  EXPECT_EQ(c.detector.backbone.radius_m, 2.0);
  fs::remove(p);
}
