// maskpipe command-line front end.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "maskpipe/maskpipe.hpp"

namespace fs = std::filesystem;
using namespace maskpipe;

namespace {

httplib::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

// Loads a dataset; per-file errors are printed and make the result fatal.
Dataset load_or_fail(const fs::path& dir, const std::string& format) {
  auto load = load_dataset(dir, parse_dataset_format(format));
  print_warnings(load.warnings);
  for (const auto& e : load.errors) std::cerr << "error: " << e.path.string() << ": " << e.message << "\n";
  if (!load.errors.empty())
    throw Error(std::to_string(load.errors.size()) + " annotation file(s) failed to load");
  return std::move(load.dataset);
}

ExportFormat format_for(const fs::path& out) {
  const auto ext = out.extension();
  if (ext == ".json") return ExportFormat::Json;
  if (ext == ".txt") return ExportFormat::Table;
  return ExportFormat::Csv;
}

int run_detect(const fs::path& input, const fs::path& config_path, const fs::path& out, int workers) {
  PipelineConfig cfg = load_pipeline_config(config_path);
  if (workers > 0) cfg.workers = workers;
  auto detector = make_detector(cfg.detector);
  auto classifier = make_classifier(cfg.classifier_backend);
  const auto frames = list_frames(input);
  const auto results = process_frames(frames, *detector, *classifier, cfg);
  std::size_t skipped = 0;
  for (const auto& r : results) {
    print_warnings(r.warnings);
    skipped += r.n_skipped;
  }
  const auto preds = to_predictions(results);
  write_file(out, write_predictions_jsonl(preds));
  std::cerr << frames.size() << " frames, " << preds.size() << " faces, " << skipped << " skipped\n";
  return 0;
}

int run_evaluate(const fs::path& dataset_dir, const std::string& format, const fs::path& preds_path,
                 const fs::path& relabel, const fs::path& out, double iou_threshold) {
  Dataset gts = load_or_fail(dataset_dir, format);
  if (!relabel.empty()) gts = apply_relabel_diff(gts, load_relabel_diff(relabel));
  const auto preds = parse_predictions_jsonl(read_file(preds_path));
  const auto report = evaluate(gts, preds, iou_threshold);
  print_warnings(report.warnings);
  write_file(out, export_report(report, format_for(out)));
  std::cout << export_report(report, ExportFormat::Table);
  return 0;
}

int run_stats(const fs::path& dataset_dir, const std::string& format) {
  auto load = load_dataset(dataset_dir, parse_dataset_format(format));
  print_warnings(load.warnings);
  for (const auto& e : load.errors) std::cerr << "error: " << e.path.string() << ": " << e.message << "\n";
  std::cout << nlohmann::json(dataset_stats(load.dataset)).dump(2) << "\n";
  return load.errors.empty() ? 0 : 1;
}

int run_relabel_apply(const fs::path& dataset_dir, const std::string& format, const fs::path& diff_path,
                      const fs::path& out_dir) {
  const Dataset d = load_or_fail(dataset_dir, format);
  const RelabelDiff diff = load_relabel_diff(diff_path);
  const Dataset relabeled = apply_relabel_diff(d, diff);
  fs::create_directories(out_dir);
  const auto images = index_images(dataset_dir);
  for (const auto& f : relabeled.frames) {
    write_file(out_dir / (f.frame_id + ".xml"), write_voc_annotation(f));
    if (auto it = images.find(f.frame_id); it != images.end())
      fs::copy_file(it->second, out_dir / it->second.filename(), fs::copy_options::overwrite_existing);
  }
  std::cerr << "applied " << diff.entries.size() << " entries: " << diff.count(RelabelAction::SetMask)
            << " SetMask, " << diff.count(RelabelAction::SetNoMask) << " SetNoMask, "
            << diff.count(RelabelAction::Remove) << " Remove\n";
  return 0;
}

int run_relabel_diff(const fs::path& a, const fs::path& b, const std::string& format, const fs::path& out) {
  const RelabelDiff diff = diff_datasets(load_or_fail(a, format), load_or_fail(b, format));
  if (out.extension() == ".json") write_file(out, relabel_diff_to_json(diff).dump(2) + "\n");
  else write_file(out, serialize_relabel_diff(diff));
  std::cerr << diff.entries.size() << " entries\n";
  return 0;
}

int run_monitor(const fs::path& frames_dir, double window, const fs::path& out, const fs::path& config_path,
                int workers) {
  PipelineConfig cfg = load_pipeline_config(config_path);
  if (workers > 0) cfg.workers = workers;
  auto detector = make_detector(cfg.detector);
  auto classifier = make_classifier(cfg.classifier_backend);
  const auto results = process_frames(list_frames(frames_dir), *detector, *classifier, cfg);
  for (const auto& r : results) print_warnings(r.warnings);
  const auto points = aggregate_mask_rate(results, window);
  write_file(out, export_report(points, format_for(out)));
  std::cout << export_report(points, ExportFormat::Table);
  return 0;
}

int run_review_serve(const fs::path& dataset_dir, const std::string& format, const std::string& host, int port,
                     fs::path log_path, const fs::path& ui_dir, double margin) {
  if (log_path.empty()) log_path = dataset_dir / "review_decisions.jsonl";
  ReviewStore store(load_or_fail(dataset_dir, format), log_path, margin);
  print_warnings(store.replay_warnings());

  httplib::Server server;
  mount_review_api(server, store, index_images(dataset_dir), ui_dir);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  if (port == 0) port = server.bind_to_any_port(host);
  else if (!server.bind_to_port(host, port)) port = -1;
  if (port < 0) throw Error("cannot bind " + host);
  const auto p = store.progress();
  std::cout << "listening on http://" << host << ":" << port << " (" << p.pending << " pending, " << p.decided
            << " decided)" << std::endl;
  server.listen_after_bind();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"maskpipe: two-step face mask detection, evaluation and relabeling tools"};
  app.require_subcommand(1);

  fs::path input, config, out, dataset, preds, relabel, diff_path, a_dir, b_dir, frames, log_path, ui_dir;
  std::string format = "aizoo", host = "127.0.0.1";
  int workers = 0, port = 8080;
  double iou_threshold = 0.5, window = 60.0, margin = 0.4;

  auto* detect = app.add_subcommand("detect", "Run the pipeline over an image directory");
  detect->add_option("--input", input, "Image or frame-sequence directory")->required()->check(CLI::ExistingDirectory);
  detect->add_option("--config", config, "Pipeline config JSON (default: $MASKPIPE_CONFIG)");
  detect->add_option("--out", out, "Predictions JSON-lines output")->required();
  detect->add_option("--workers", workers, "Worker threads (overrides config)")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("evaluate", "Score predictions against a dataset");
  eval->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--format", format)->check(CLI::IsMember({"aizoo", "moxa3k"}));
  eval->add_option("--preds", preds)->required()->check(CLI::ExistingFile);
  eval->add_option("--relabel", relabel, "Relabel diff applied to the ground truth first")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Report (.json, .csv or .txt table)")->required();
  eval->add_option("--iou", iou_threshold, "Matching IOU threshold")->check(CLI::Range(0.0, 1.0));

  auto* stats = app.add_subcommand("stats", "Print dataset statistics as JSON");
  stats->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  stats->add_option("--format", format)->check(CLI::IsMember({"aizoo", "moxa3k"}));

  auto* relabel_cmd = app.add_subcommand("relabel", "Apply or compute relabel diffs");
  relabel_cmd->require_subcommand(1);
  auto* apply = relabel_cmd->add_subcommand("apply", "Write a relabeled copy of a dataset");
  apply->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  apply->add_option("--format", format)->check(CLI::IsMember({"aizoo", "moxa3k"}));
  apply->add_option("--diff", diff_path)->required()->check(CLI::ExistingFile);
  apply->add_option("--out", out, "Output dataset directory")->required();
  auto* diff = relabel_cmd->add_subcommand("diff", "Compute the diff turning dataset A into B");
  diff->add_option("--a", a_dir)->required()->check(CLI::ExistingDirectory);
  diff->add_option("--b", b_dir)->required()->check(CLI::ExistingDirectory);
  diff->add_option("--format", format)->check(CLI::IsMember({"aizoo", "moxa3k"}));
  diff->add_option("--out", out, "Diff file (.json for the JSON mirror)")->required();

  auto* monitor = app.add_subcommand("monitor", "Mask-wearing rate over tumbling windows");
  monitor->add_option("--frames", frames, "Frame-sequence directory with manifest.csv")
      ->required()
      ->check(CLI::ExistingDirectory);
  monitor->add_option("--window", window, "Window length in seconds")->required()->check(CLI::PositiveNumber);
  monitor->add_option("--out", out, "Rates (.csv, .json or .txt table)")->required();
  monitor->add_option("--config", config, "Pipeline config JSON (default: $MASKPIPE_CONFIG)");
  monitor->add_option("--workers", workers)->check(CLI::PositiveNumber);

  auto* review = app.add_subcommand("review", "Relabeling review service");
  review->require_subcommand(1);
  auto* serve = review->add_subcommand("serve", "Serve the review API");
  serve->add_option("--dataset", dataset)->required()->check(CLI::ExistingDirectory);
  serve->add_option("--format", format)->check(CLI::IsMember({"aizoo", "moxa3k"}));
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host);
  serve->add_option("--log", log_path, "Decision log (default: DATASET/review_decisions.jsonl)");
  serve->add_option("--ui", ui_dir, "Static UI bundle directory")->check(CLI::ExistingDirectory);
  serve->add_option("--margin", margin, "Context padding around crops, fraction of box size")
      ->check(CLI::Range(0.0, 10.0));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*detect) return run_detect(input, config, out, workers);
    if (*eval) return run_evaluate(dataset, format, preds, relabel, out, iou_threshold);
    if (*stats) return run_stats(dataset, format);
    if (*apply) return run_relabel_apply(dataset, format, diff_path, out);
    if (*diff) return run_relabel_diff(a_dir, b_dir, format, out);
    if (*monitor) return run_monitor(frames, window, out, config, workers);
    if (*serve) return run_review_serve(dataset, format, host, port, log_path, ui_dir, margin);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
