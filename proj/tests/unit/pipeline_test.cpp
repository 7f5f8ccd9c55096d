#include <gtest/gtest.h>

#include "support/test_support.hpp"

using namespace maskpipe;
using maskpipe::testing::TempDir;

namespace {

nlohmann::json face_json(BoundingBox b, double score) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : maskpipe::testing::landmarks_for(b).points) pts.push_back({p.x, p.y});
  return {{"box", {b.x_min, b.y_min, b.x_max, b.y_max}}, {"landmarks", pts}, {"score", score}};
}

Frame textured_frame(const std::string& id, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  Image img(200, 120);
  // smooth gradient on the left, noise on the right
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 200; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(x, y, c) = x < 100 ? static_cast<std::uint8_t>(60 + c * 40) : static_cast<std::uint8_t>(gen() >> 56);
  return {id, img, 0.0};
}

FrameResult result_at(double ts, std::vector<MaskLabel> labels) {
  FrameResult r{"f" + std::to_string(ts), ts, {}, 0, {}};
  for (auto l : labels) r.faces.push_back({{}, 0, l, 0.5, 0.5});
  return r;
}

}  // namespace

TEST(RunPipeline, NoFaces) {
  ScriptedBackend det(nlohmann::json::object());
  HeuristicBackend cls;
  const auto out = run_pipeline(textured_frame("f", 1), det, cls, {});
  EXPECT_TRUE(out.faces.empty());
  EXPECT_EQ(out.n_detections, 0u);
}

TEST(RunPipeline, ScriptedScoresDecideLabels) {
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({10, 10, 60, 60}, 0.99), face_json({110, 10, 160, 60}, 0.9)}}}}});
  ScriptedClassifier cls(nlohmann::json{{"f", {0.99, 0.10}}});
  const auto out = run_pipeline(textured_frame("f", 1), det, cls, {});
  ASSERT_EQ(out.faces.size(), 2u);
  EXPECT_EQ(out.faces[0].label, MaskLabel::Mask);
  EXPECT_EQ(out.faces[1].label, MaskLabel::NoMask);
  EXPECT_DOUBLE_EQ(out.faces[0].confidence, 0.99 * 0.99);
  EXPECT_DOUBLE_EQ(out.faces[1].confidence, 0.9 * 0.9);
  EXPECT_EQ(out.faces[1].detection_index, 1u);

  PipelineConfig detector_only;
  detector_only.confidence = ConfidenceMode::DetectorOnly;
  const auto d = run_pipeline(textured_frame("f", 1), det, cls, detector_only);
  EXPECT_EQ(d.faces[0].confidence, 0.99);
  EXPECT_EQ(d.faces[1].confidence, 0.9);
}

TEST(RunPipeline, DegenerateFaceSkippedWithWarning) {
  nlohmann::json bad = face_json({110, 10, 160, 60}, 0.9);
  bad["landmarks"] = {{130, 30}, {130, 30}, {130, 30}, {130, 30}, {130, 30}};
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({10, 10, 60, 60}, 0.99), bad}}}}});
  ScriptedClassifier cls(nlohmann::json{{"f", {0.99, 0.10}}});
  const auto out = run_pipeline(textured_frame("f", 1), det, cls, {});
  EXPECT_EQ(out.n_detections, 2u);
  EXPECT_EQ(out.n_skipped, 1u);
  EXPECT_EQ(out.faces.size(), out.n_detections - out.n_skipped);
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("[align]"), std::string::npos);
}

TEST(RunPipeline, ClassifierFailureTagged) {
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({10, 10, 60, 60}, 0.99)}}}}});
  ScriptedClassifier cls(nlohmann::json::object());
  try {
    run_pipeline(textured_frame("f", 1), det, cls, {});
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_EQ(e.stage(), "classify");
  }
}

TEST(RunPipeline, OffAndZerosAgreeForLowerHalfBackend) {
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({20, 10, 80, 80}, 0.99), face_json({110, 20, 170, 90}, 0.95)}},
                                            {"640", {face_json({22, 12, 82, 82}, 0.97)}}}}});
  HeuristicBackend cls;
  PipelineConfig off, zeros, noise;
  zeros.upper_half = UpperHalfMode::Zeros;
  noise.upper_half = UpperHalfMode::Noise;
  const Frame frame = textured_frame("f", 3);
  const auto a = run_pipeline(frame, det, cls, off);
  const auto b = run_pipeline(frame, det, cls, zeros);
  const auto c = run_pipeline(frame, det, cls, noise);
  ASSERT_EQ(a.faces.size(), 2u);
  EXPECT_EQ(a.faces, b.faces);
  EXPECT_EQ(a.faces, c.faces);
}

TEST(RunPipeline, SeededAndDeterministic) {
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({20, 10, 80, 80}, 0.99)}}}}});
  // reads the whole chip, so occlusion noise reaches the score
  HeuristicBackend cls(0.0);
  PipelineConfig cfg;
  cfg.upper_half = UpperHalfMode::Noise;
  cfg.seed = 42;
  const Frame frame = textured_frame("f", 4);
  const auto a = run_pipeline(frame, det, cls, cfg);
  const auto b = run_pipeline(frame, det, cls, cfg);
  EXPECT_EQ(a.faces, b.faces);
  cfg.seed = 43;
  EXPECT_NE(run_pipeline(frame, det, cls, cfg).faces[0].p_mask, a.faces[0].p_mask);
}

TEST(RunPipeline, EyesOnlyAlignment) {
  ScriptedBackend det(nlohmann::json{{"f", {{"320", {face_json({20, 10, 80, 80}, 0.99)}}}}});
  ScriptedClassifier cls(nlohmann::json{{"f", {0.97}}});
  PipelineConfig cfg;
  cfg.alignment = AlignmentMode::EyesOnly;
  const auto out = run_pipeline(textured_frame("f", 1), det, cls, cfg);
  ASSERT_EQ(out.faces.size(), 1u);
  EXPECT_EQ(out.faces[0].label, MaskLabel::Mask);
}

TEST(PipelineConfig, JsonRoundTripAndPaths) {
  PipelineConfig c;
  c.upper_half = UpperHalfMode::Noise;
  c.alignment = AlignmentMode::EyesOnly;
  c.seed = 99;
  c.workers = 3;
  c.detector = {"scripted", "/abs/det.json"};
  const auto back = pipeline_config_from_json(pipeline_config_to_json(c));
  EXPECT_EQ(pipeline_config_to_json(back), pipeline_config_to_json(c));

  const auto rel = pipeline_config_from_json(nlohmann::json{{"detector_backend", {{"type", "scripted"}, {"fixture", "d.json"}}}},
                                             "/base");
  EXPECT_EQ(rel.detector.fixture, std::filesystem::path("/base/d.json"));
  EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"upper_half", "sideways"}}), ParseError);

  const PipelineConfig defaults;
  EXPECT_EQ(defaults.detection.scales, (std::vector<int>{320, 640, 960}));
  EXPECT_EQ(defaults.classifier.decision_threshold, 0.95);
  EXPECT_EQ(defaults.chip_width, 224);
}

TEST(PipelineConfig, EnvironmentFallback) {
  TempDir dir;
  write_file(dir / "cfg.json", R"({"seed": 77})");
  ::setenv("MASKPIPE_CONFIG", (dir / "cfg.json").c_str(), 1);
  EXPECT_EQ(load_pipeline_config({}).seed, 77u);
  ::unsetenv("MASKPIPE_CONFIG");
  EXPECT_EQ(load_pipeline_config({}).seed, 0u);
}

TEST(ProcessFrames, WorkerCountsAgree) {
  TempDir dir;
  std::mt19937_64 gen(5);
  const auto fx = maskpipe::testing::write_stream_fixture(dir / "s", 12, 1.0, gen);
  auto cfg = load_pipeline_config(fx.config);
  cfg.upper_half = UpperHalfMode::Noise;
  auto det = make_detector(cfg.detector);
  auto cls = make_classifier(cfg.classifier_backend);
  const auto frames = list_frames(fx.dir);
  ASSERT_EQ(frames.size(), 12u);
  cfg.workers = 1;
  const auto a = process_frames(frames, *det, *cls, cfg);
  cfg.workers = 8;
  const auto b = process_frames(frames, *det, *cls, cfg);
  EXPECT_EQ(write_predictions_jsonl(to_predictions(a)), write_predictions_jsonl(to_predictions(b)));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].frame_id, frames[i].frame_id);
}

TEST(ProcessFrames, LowestFailingFrameReported) {
  TempDir dir;
  std::mt19937_64 gen(6);
  const auto fx = maskpipe::testing::write_stream_fixture(dir / "s", 6, 1.0, gen);
  auto cfg = load_pipeline_config(fx.config);
  ScriptedBackend det(nlohmann::json{{"frame_000002", {{"640", {{"error", "two"}}}}},
                                     {"frame_000004", {{"640", {{"error", "four"}}}}}});
  HeuristicBackend cls;
  cfg.workers = 4;
  try {
    process_frames(list_frames(fx.dir), det, cls, cfg);
    FAIL();
  } catch (const PipelineError& e) {
    EXPECT_NE(std::string(e.what()).find("frame_000002"), std::string::npos);
  }
}

TEST(ListFrames, StillDirectoryAndManifest) {
  TempDir dir;
  for (const char* s : {"b", "a", "c"}) save_image(dir / (std::string(s) + ".jpg"), Image(4, 4));
  const auto stills = list_frames(dir.path());
  ASSERT_EQ(stills.size(), 3u);
  EXPECT_EQ(stills[0].frame_id, "a");
  EXPECT_EQ(stills[2].timestamp, 2.0);
  write_file(dir / "manifest.csv", "frame_id,timestamp\nc,0.5\na,1.25\n");
  const auto seq = list_frames(dir.path());
  ASSERT_EQ(seq.size(), 2u);
  EXPECT_EQ(seq[0].frame_id, "c");
  EXPECT_EQ(seq[1].timestamp, 1.25);
  write_file(dir / "manifest.csv", "zz,1\n");
  EXPECT_THROW(list_frames(dir.path()), NotFoundError);
}

TEST(AggregateMaskRate, Examples) {
  std::vector<FrameResult> one{result_at(0, {MaskLabel::Mask, MaskLabel::Mask, MaskLabel::NoMask}),
                               result_at(1, {MaskLabel::Mask, MaskLabel::Mask, MaskLabel::Mask}),
                               result_at(2, {MaskLabel::Mask, MaskLabel::Mask, MaskLabel::NoMask, MaskLabel::NoMask})};
  const auto p = aggregate_mask_rate(one, 10);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].n_faces, 10u);
  EXPECT_EQ(p[0].rate, 0.7);

  std::vector<FrameResult> gap{result_at(0, {MaskLabel::Mask}), result_at(25, {MaskLabel::NoMask})};
  const auto g = aggregate_mask_rate(gap, 10);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_FALSE(g[1].rate.has_value());
  EXPECT_EQ(g[1].n_faces, 0u);
  EXPECT_EQ(g[2].window_start, 20);
  EXPECT_TRUE(aggregate_mask_rate({}, 5).empty());
}

TEST(AggregateMaskRate, ErrorsAndConservation) {
  try {
    aggregate_mask_rate({result_at(5, {}), result_at(3, {})}, 1);
    FAIL();
  } catch (const StreamError& e) {
    EXPECT_NE(std::string(e.what()).find("f3"), std::string::npos);
  }
  EXPECT_THROW(aggregate_mask_rate({}, 0), UsageError);

  std::mt19937_64 gen(9);
  std::uniform_int_distribution<int> n(0, 4);
  std::uniform_real_distribution<double> dt(0, 3);
  std::vector<FrameResult> stream;
  double t = 100;
  std::size_t total = 0;
  for (int i = 0; i < 200; ++i) {
    std::vector<MaskLabel> labels(n(gen), MaskLabel::Mask);
    if (!labels.empty()) labels[0] = MaskLabel::NoMask;
    total += labels.size();
    stream.push_back(result_at(t, labels));
    t += dt(gen);
  }
  std::size_t sum = 0;
  for (const auto& p : aggregate_mask_rate(stream, 7.5)) {
    sum += p.n_faces;
    if (p.rate) {
      EXPECT_EQ(*p.rate, static_cast<double>(p.n_masked) / p.n_faces);
    }
  }
  EXPECT_EQ(sum, total);
}

TEST(ExportReport, RatesCsvJsonTable) {
  EXPECT_EQ(export_report(std::vector<MaskRatePoint>{}, ExportFormat::Csv), std::string(kRateCsvHeader) + "\n");
  const std::vector<MaskRatePoint> pts{{0, 10, 3, 1, 1.0 / 3}, {10, 20, 0, 0, std::nullopt}, {20, 30, 4, 4, 1.0}};
  EXPECT_EQ(parse_rate_csv(export_report(pts, ExportFormat::Csv)), pts);
  const auto j = nlohmann::json::parse(export_report(pts, ExportFormat::Json));
  EXPECT_TRUE(j[1]["rate"].is_null());
  EXPECT_EQ(j[0]["rate"].get<double>(), 1.0 / 3);
  EXPECT_NE(export_report(pts, ExportFormat::Table).find("empty"), std::string::npos);
  EXPECT_THROW(parse_export_format("xml"), UsageError);
}

TEST(ExportReport, EvalJsonRoundTripAndCsv) {
  std::mt19937_64 gen(10);
  const Dataset d = maskpipe::testing::synthetic_dataset(gen, 3, 2);
  const auto r = evaluate(d, {{"frame_0001", d.frames[1].faces[0].box, d.frames[1].faces[0].label, 0.6}});
  EXPECT_EQ(eval_report_from_json(nlohmann::json::parse(export_report(r, ExportFormat::Json))), r);
  const auto csv = export_report(r, ExportFormat::Csv);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kEvalCsvHeader);
  EXPECT_NE(csv.find("\nNoMask,"), std::string::npos);
  EXPECT_NE(csv.find("\nmAP,"), std::string::npos);
}
