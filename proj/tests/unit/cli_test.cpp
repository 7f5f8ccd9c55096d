#include <gtest/gtest.h>

#include "support/test_support.hpp"

using namespace maskpipe;
using maskpipe::testing::CliResult;
using maskpipe::testing::fixture_dir;
using maskpipe::testing::run_cli;
using maskpipe::testing::TempDir;

namespace {

const std::filesystem::path kWorksheet = fixture_dir() / "worksheet";

}  // namespace

TEST(Cli, DetectThenEvaluateWorksheet) {
  TempDir dir;
  const auto preds = dir / "preds.jsonl";
  auto r = run_cli({"detect", "--input", (kWorksheet / "dataset").string(), "--config",
                    (kWorksheet / "config.json").string(), "--out", preds.string()},
                   dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.err.find("[align]"), std::string::npos);
  EXPECT_EQ(parse_predictions_jsonl(read_file(preds)).size(), 12u);

  const auto report = dir / "report.json";
  r = run_cli({"evaluate", "--dataset", (kWorksheet / "dataset").string(), "--format", "aizoo", "--preds",
               preds.string(), "--out", report.string()},
              dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_NE(r.out.find("Precision"), std::string::npos);
  const auto got = eval_report_from_json(nlohmann::json::parse(read_file(report)));
  const auto expected = nlohmann::json::parse(read_file(kWorksheet / "expected_report.json"));
  const auto bad = maskpipe::testing::worksheet_mismatches(got, expected);
  EXPECT_TRUE(bad.empty()) << nlohmann::json(bad).dump();

  // csv and table outputs by extension
  r = run_cli({"evaluate", "--dataset", (kWorksheet / "dataset").string(), "--preds", preds.string(), "--out",
               (dir / "report.csv").string()},
              dir.path());
  ASSERT_EQ(r.exit_code, 0);
  EXPECT_EQ(read_file(dir / "report.csv").rfind(std::string(kEvalCsvHeader), 0), 0u);
}

TEST(Cli, EvaluateUnknownFrameIsUsageError) {
  TempDir dir;
  write_file(dir / "p.jsonl", R"({"frame_id":"nope","box":[0,0,1,1],"label":"Mask","confidence":0.5})" "\n");
  const auto r = run_cli({"evaluate", "--dataset", (kWorksheet / "dataset").string(), "--preds",
                          (dir / "p.jsonl").string(), "--out", (dir / "r.json").string()},
                         dir.path());
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.err.find("nope"), std::string::npos);
}

TEST(Cli, Stats) {
  TempDir dir;
  const auto r = run_cli({"stats", "--dataset", (kWorksheet / "dataset").string(), "--format", "aizoo"}, dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto s = nlohmann::json::parse(r.out).get<DatasetStats>();
  EXPECT_EQ(s.n_images, 5u);
  EXPECT_EQ(s.n_faces, 12u);
  EXPECT_EQ(s.n_mask, 6u);
  EXPECT_EQ(s.fraction_no_mask, 0.5);
}

TEST(Cli, RelabelApplyAndDiffRoundTrip) {
  TempDir dir;
  const RelabelDiff diff{{{{"f1", 0}, RelabelAction::SetNoMask}, {{"f2", 1}, RelabelAction::Remove},
                          {{"f3", 2}, RelabelAction::SetMask}}};
  write_file(dir / "diff.tsv", serialize_relabel_diff(diff));
  auto r = run_cli({"relabel", "apply", "--dataset", (kWorksheet / "dataset").string(), "--diff",
                    (dir / "diff.tsv").string(), "--out", (dir / "out").string()},
                   dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "f1.png"));
  const auto relabeled = load_dataset(dir / "out", DatasetFormat::Aizoo);
  EXPECT_TRUE(relabeled.errors.empty());
  EXPECT_EQ(relabeled.dataset.face_count(), 11u);

  r = run_cli({"relabel", "diff", "--a", (kWorksheet / "dataset").string(), "--b", (dir / "out").string(), "--out",
               (dir / "back.json").string()},
              dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  EXPECT_EQ(load_relabel_diff(dir / "back.json"), diff);

  write_file(dir / "bad.tsv", serialize_relabel_diff({{{{"ghost", 0}, RelabelAction::Remove}}}));
  r = run_cli({"relabel", "apply", "--dataset", (kWorksheet / "dataset").string(), "--diff",
               (dir / "bad.tsv").string(), "--out", (dir / "out2").string()},
              dir.path());
  EXPECT_EQ(r.exit_code, 1);
  EXPECT_NE(r.err.find("ghost:0"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(dir / "out2"));
}

TEST(Cli, MonitorCsv) {
  TempDir dir;
  std::mt19937_64 gen(12);
  const auto fx = maskpipe::testing::write_stream_fixture(dir / "stream", 9, 1.0, gen);
  const auto r = run_cli({"monitor", "--frames", fx.dir.string(), "--window", "3", "--config", fx.config.string(),
                          "--out", (dir / "rates.csv").string()},
                         dir.path());
  ASSERT_EQ(r.exit_code, 0) << r.err;
  const auto pts = parse_rate_csv(read_file(dir / "rates.csv"));
  ASSERT_EQ(pts.size(), 3u);
  std::size_t faces = 0;
  for (const auto& m : fx.masked) faces += m.size();
  std::size_t sum = 0;
  for (const auto& p : pts) sum += p.n_faces;
  EXPECT_EQ(sum, faces);
}

TEST(Cli, MissingArgumentsFail) {
  TempDir dir;
  EXPECT_NE(run_cli({}, dir.path()).exit_code, 0);
  EXPECT_NE(run_cli({"detect"}, dir.path()).exit_code, 0);
  EXPECT_NE(run_cli({"stats", "--dataset", (kWorksheet / "dataset").string(), "--format", "voc"}, dir.path()).exit_code, 0);
}
