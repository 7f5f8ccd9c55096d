#pragma once

// Ground-truth annotations: VOC-style XML parsing, dataset loading for the
// AIZOO and Moxa 3K layouts, dataset statistics and relabel diffs.

#include <algorithm>
#include <compare>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "maskpipe/errors.hpp"
#include "maskpipe/geometry.hpp"
#include "maskpipe/image_io.hpp"

namespace maskpipe {

enum class MaskLabel { Mask, NoMask };

inline constexpr std::string_view to_string(MaskLabel l) noexcept {
  return l == MaskLabel::Mask ? "Mask" : "NoMask";
}

inline MaskLabel other(MaskLabel l) noexcept {
  return l == MaskLabel::Mask ? MaskLabel::NoMask : MaskLabel::Mask;
}

inline MaskLabel parse_mask_label(std::string_view s) {
  if (s == "Mask") return MaskLabel::Mask;
  if (s == "NoMask") return MaskLabel::NoMask;
  throw LabelError(std::string(s));
}

// Stable face identity: frame id plus zero-based index in annotation document order.
// The index is assigned at parse time and survives removals of sibling faces.
struct FaceId {
  std::string frame_id;
  std::size_t index = 0;

  std::string str() const { return frame_id + ":" + std::to_string(index); }

  friend auto operator<=>(const FaceId&, const FaceId&) = default;
  friend bool operator==(const FaceId&, const FaceId&) = default;
};

inline FaceId parse_face_id(std::string_view s) {
  const auto hash = s.rfind(':');
  if (hash == std::string_view::npos || hash + 1 == s.size())
    throw ParseError("face id '" + std::string(s) + "' is not of the form frame_id:index");
  std::size_t idx = 0;
  for (char c : s.substr(hash + 1)) {
    if (c < '0' || c > '9') throw ParseError("face id '" + std::string(s) + "' has a bad index");
    idx = idx * 10 + static_cast<std::size_t>(c - '0');
  }
  return {std::string(s.substr(0, hash)), idx};
}

struct GroundTruthFace {
  FaceId id;
  BoundingBox box;
  MaskLabel label = MaskLabel::NoMask;

  friend bool operator==(const GroundTruthFace&, const GroundTruthFace&) = default;
};

struct FrameAnnotation {
  std::string frame_id;
  int image_width = 0;
  int image_height = 0;
  std::vector<GroundTruthFace> faces;

  friend bool operator==(const FrameAnnotation&, const FrameAnnotation&) = default;
};

enum class Split { Train, Val, Test };

inline constexpr std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "test";
}

struct Dataset {
  std::string name;
  Split split = Split::Test;
  std::vector<FrameAnnotation> frames;

  const FrameAnnotation* find(std::string_view frame_id) const {
    auto it = std::find_if(frames.begin(), frames.end(),
                           [&](const FrameAnnotation& f) { return f.frame_id == frame_id; });
    return it == frames.end() ? nullptr : &*it;
  }

  std::size_t face_count() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.faces.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Throws ValidationError if two frames share an id or two faces share an id.
inline void validate_dataset(const Dataset& d) {
  std::set<std::string_view> frame_ids;
  std::set<FaceId> face_ids;
  for (const auto& f : d.frames) {
    if (!frame_ids.insert(f.frame_id).second)
      throw ValidationError("duplicate frame_id '" + f.frame_id + "'");
    for (const auto& face : f.faces) {
      if (face.id.frame_id != f.frame_id)
        throw ValidationError("face " + face.id.str() + " listed under frame " + f.frame_id);
      if (!face_ids.insert(face.id).second)
        throw ValidationError("duplicate face id " + face.id.str());
    }
  }
}

// ---------------------------------------------------------------------------
// VOC XML

// Class names recognised in annotation files. AIZOO uses face / face_mask.
struct ClassNameMap {
  std::map<std::string, MaskLabel, std::less<>> names{{"face", MaskLabel::NoMask},
                                                      {"face_mask", MaskLabel::Mask}};

  MaskLabel lookup(std::string_view name) const {
    auto it = names.find(name);
    if (it == names.end()) throw LabelError(std::string(name));
    return it->second;
  }

  // Moxa 3K ships "mask" / "nomask" in addition.
  static ClassNameMap moxa3k() {
    ClassNameMap m;
    m.names.emplace("mask", MaskLabel::Mask);
    m.names.emplace("nomask", MaskLabel::NoMask);
    m.names.emplace("no_mask", MaskLabel::NoMask);
    return m;
  }
};

namespace detail {

inline std::string trimmed(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline double xml_number(const boost::property_tree::ptree& node, const std::string& key,
                         const std::string& context) {
  auto v = node.get_optional<std::string>(key);
  if (!v) throw ParseError(context + ": missing <" + key + ">");
  try {
    std::size_t used = 0;
    const std::string s = trimmed(*v);
    double d = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return d;
  } catch (const std::exception&) {
    throw ParseError(context + ": <" + key + "> is not a number: '" + *v + "'");
  }
}

inline GroundTruthFace make_face(const std::string& frame_id, std::size_t index, BoundingBox raw,
                                 MaskLabel label, int width, int height) {
  BoundingBox box = raw.clamped(width, height);
  if (!box.valid())
    throw ValidationError("frame " + frame_id + ": face " + std::to_string(index) +
                          " has a degenerate box after clamping to the image");
  return {{frame_id, index}, box, label};
}

}  // namespace detail

inline FrameAnnotation parse_voc_annotation(const std::string& xml_text, const std::string& frame_id,
                                            const ClassNameMap& classes = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(xml_text);
  try {
    pt::read_xml(in, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError("malformed XML in " + frame_id + ": " + e.message(), e.line());
  }
  if (tree.empty()) throw ParseError("empty XML document in " + frame_id);
  const pt::ptree& root = tree.begin()->second;

  const auto* size = root.get_child_optional("size").get_ptr();
  if (!size) throw ParseError(frame_id + ": missing <size>");
  FrameAnnotation frame;
  frame.frame_id = frame_id;
  const double w = detail::xml_number(*size, "width", frame_id);
  const double h = detail::xml_number(*size, "height", frame_id);
  if (!(w >= 1 && h >= 1)) throw ValidationError(frame_id + ": image size must be positive");
  frame.image_width = static_cast<int>(w);
  frame.image_height = static_cast<int>(h);

  std::size_t index = 0;
  for (const auto& [tag, obj] : root) {
    if (tag != "object") continue;
    const std::string context = frame_id + " object " + std::to_string(index);
    const auto name = obj.get_optional<std::string>("name");
    if (!name) throw ParseError(context + ": missing <name>");
    const MaskLabel label = classes.lookup(detail::trimmed(*name));
    const auto* bb = obj.get_child_optional("bndbox").get_ptr();
    if (!bb) throw ParseError(context + ": missing <bndbox>");
    BoundingBox raw{detail::xml_number(*bb, "xmin", context), detail::xml_number(*bb, "ymin", context),
                    detail::xml_number(*bb, "xmax", context), detail::xml_number(*bb, "ymax", context)};
    auto face = detail::make_face(frame_id, index, raw, label, frame.image_width, frame.image_height);
    // Files written by write_voc_annotation keep the original identity of each face.
    if (obj.get_child_optional("maskpipe_index"))
      face.id.index = static_cast<std::size_t>(detail::xml_number(obj, "maskpipe_index", context));
    if (std::any_of(frame.faces.begin(), frame.faces.end(),
                    [&](const GroundTruthFace& f) { return f.id == face.id; }))
      throw ValidationError(context + ": duplicate face index " + std::to_string(face.id.index));
    frame.faces.push_back(std::move(face));
    ++index;
  }
  return frame;
}

// Writes the frame back as VOC XML. Each object carries <maskpipe_index> so a
// dataset with removed faces reloads with the same face ids.
inline std::string write_voc_annotation(const FrameAnnotation& frame) {
  namespace pt = boost::property_tree;
  pt::ptree root;
  root.put("filename", frame.frame_id);
  root.put("size.width", frame.image_width);
  root.put("size.height", frame.image_height);
  root.put("size.depth", 3);
  for (const auto& face : frame.faces) {
    pt::ptree obj;
    obj.put("name", face.label == MaskLabel::Mask ? "face_mask" : "face");
    obj.put("maskpipe_index", face.id.index);
    obj.put("bndbox.xmin", nlohmann::json(face.box.x_min).dump());
    obj.put("bndbox.ymin", nlohmann::json(face.box.y_min).dump());
    obj.put("bndbox.xmax", nlohmann::json(face.box.x_max).dump());
    obj.put("bndbox.ymax", nlohmann::json(face.box.y_max).dump());
    root.add_child("object", obj);
  }
  pt::ptree doc;
  doc.add_child("annotation", root);
  std::ostringstream out;
  pt::write_xml(out, doc, pt::xml_writer_make_settings<std::string>(' ', 2));
  return out.str();
}

// Darknet-style text annotation: one "class_id cx cy w h" line per face,
// coordinates normalised to [0,1]. class_names maps class ids to labels.
inline FrameAnnotation parse_yolo_annotation(const std::string& text, const std::string& frame_id,
                                             int image_width, int image_height,
                                             const std::vector<MaskLabel>& class_labels) {
  FrameAnnotation frame{frame_id, image_width, image_height, {}};
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trimmed(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    long cls = -1;
    double cx, cy, bw, bh;
    std::string extra;
    if (!(fields >> cls >> cx >> cy >> bw >> bh) || (fields >> extra))
      throw ParseError(frame_id + ": expected 'class cx cy w h'", line_no);
    if (cls < 0 || static_cast<std::size_t>(cls) >= class_labels.size())
      throw LabelError("class id " + std::to_string(cls));
    BoundingBox raw{(cx - bw / 2) * image_width, (cy - bh / 2) * image_height,
                    (cx + bw / 2) * image_width, (cy + bh / 2) * image_height};
    frame.faces.push_back(detail::make_face(frame_id, index, raw, class_labels[cls], image_width,
                                            image_height));
    ++index;
  }
  return frame;
}

// ---------------------------------------------------------------------------
// Dataset loading

enum class DatasetFormat { Aizoo, Moxa3k };

inline DatasetFormat parse_dataset_format(std::string_view s) {
  if (s == "aizoo") return DatasetFormat::Aizoo;
  if (s == "moxa3k") return DatasetFormat::Moxa3k;
  throw UsageError("unknown dataset format '" + std::string(s) + "' (expected aizoo|moxa3k)");
}

struct FileError {
  std::filesystem::path path;
  std::string message;
};

struct DatasetLoad {
  Dataset dataset;
  std::vector<std::string> warnings;
  std::vector<FileError> errors;
};

namespace detail {

struct DatasetLayout {
  std::filesystem::path image_dir;
  std::filesystem::path annotation_dir;
};

inline DatasetLayout layout_for(const std::filesystem::path& root, DatasetFormat format) {
  namespace fs = std::filesystem;
  if (format == DatasetFormat::Moxa3k && fs::is_directory(root / "images") &&
      fs::is_directory(root / "annotations"))
    return {root / "images", root / "annotations"};
  return {root, root};
}

inline std::vector<MaskLabel> yolo_classes(const std::filesystem::path& annotation_dir) {
  const auto names_file = annotation_dir / "classes.txt";
  if (!std::filesystem::exists(names_file)) return {MaskLabel::Mask, MaskLabel::NoMask};
  std::vector<MaskLabel> labels;
  std::istringstream in(read_file(names_file));
  const auto map = ClassNameMap::moxa3k();
  for (std::string line; std::getline(in, line);) {
    line = trimmed(line);
    if (!line.empty()) labels.push_back(map.lookup(line));
  }
  return labels;
}

}  // namespace detail

// Loads every annotation file under root. Per-file failures are collected in
// DatasetLoad::errors (ordered by path) and loading continues.
inline DatasetLoad load_dataset(const std::filesystem::path& root, DatasetFormat format,
                                Split split = Split::Test) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw NotFoundError("dataset directory not found: " + root.string());

  const auto layout = detail::layout_for(root, format);
  std::map<std::string, fs::path> images;
  std::map<std::string, fs::path> annotations;
  for (const auto& entry : fs::directory_iterator(layout.image_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path()))
      images.emplace(entry.path().stem().string(), entry.path());
  }
  for (const auto& entry : fs::directory_iterator(layout.annotation_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    const bool text_ok = format == DatasetFormat::Moxa3k && ext == ".txt" &&
                         entry.path().filename() != "classes.txt";
    if (ext == ".xml" || text_ok) {
      auto [it, inserted] = annotations.emplace(entry.path().stem().string(), entry.path());
      // Prefer XML when both variants exist.
      if (!inserted && ext == ".xml") it->second = entry.path();
    }
  }

  DatasetLoad out;
  out.dataset.name = root.filename().empty() ? root.parent_path().filename().string()
                                             : root.filename().string();
  out.dataset.split = split;
  if (annotations.empty()) out.warnings.push_back("no annotation files found in " + root.string());

  const auto classes = format == DatasetFormat::Moxa3k ? ClassNameMap::moxa3k() : ClassNameMap{};
  std::optional<std::vector<MaskLabel>> yolo_labels;
  for (const auto& [stem, path] : annotations) {
    if (!images.contains(stem))
      out.warnings.push_back("annotation " + path.filename().string() + " has no matching image");
    try {
      if (path.extension() == ".xml") {
        out.dataset.frames.push_back(parse_voc_annotation(read_file(path), stem, classes));
      } else {
        if (!yolo_labels) yolo_labels = detail::yolo_classes(layout.annotation_dir);
        auto it = images.find(stem);
        if (it == images.end()) throw ValidationError("text annotation needs its image for dimensions");
        cv::Mat img = cv::imread(it->second.string(), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw Error("cannot decode image " + it->second.string());
        out.dataset.frames.push_back(
            parse_yolo_annotation(read_file(path), stem, img.cols, img.rows, *yolo_labels));
      }
    } catch (const Error& e) {
      out.errors.push_back({path, e.what()});
    }
  }
  for (const auto& [stem, path] : images) {
    if (!annotations.contains(stem))
      out.warnings.push_back("image " + path.filename().string() + " has no annotation");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

struct DatasetStats {
  std::size_t n_images = 0;
  std::size_t n_faces = 0;
  std::size_t n_mask = 0;
  std::size_t n_no_mask = 0;
  double fraction_no_mask = 0.0;

  friend bool operator==(const DatasetStats&, const DatasetStats&) = default;
};

inline DatasetStats dataset_stats(const Dataset& d) {
  DatasetStats s;
  s.n_images = d.frames.size();
  for (const auto& f : d.frames) {
    for (const auto& face : f.faces) (face.label == MaskLabel::Mask ? s.n_mask : s.n_no_mask)++;
  }
  s.n_faces = s.n_mask + s.n_no_mask;
  s.fraction_no_mask = s.n_faces ? static_cast<double>(s.n_no_mask) / s.n_faces : 0.0;
  return s;
}

inline void to_json(nlohmann::json& j, const DatasetStats& s) {
  j = {{"n_images", s.n_images},
       {"n_faces", s.n_faces},
       {"n_mask", s.n_mask},
       {"n_no_mask", s.n_no_mask},
       {"fraction_no_mask", s.fraction_no_mask}};
}

inline void from_json(const nlohmann::json& j, DatasetStats& s) {
  j.at("n_images").get_to(s.n_images);
  j.at("n_faces").get_to(s.n_faces);
  j.at("n_mask").get_to(s.n_mask);
  j.at("n_no_mask").get_to(s.n_no_mask);
  j.at("fraction_no_mask").get_to(s.fraction_no_mask);
}

// ---------------------------------------------------------------------------
// Relabel diffs

enum class RelabelAction { SetMask, SetNoMask, Remove };

inline constexpr std::string_view to_string(RelabelAction a) noexcept {
  switch (a) {
    case RelabelAction::SetMask: return "SetMask";
    case RelabelAction::SetNoMask: return "SetNoMask";
    case RelabelAction::Remove: return "Remove";
  }
  return "Remove";
}

inline std::optional<RelabelAction> parse_relabel_action(std::string_view s) noexcept {
  if (s == "SetMask") return RelabelAction::SetMask;
  if (s == "SetNoMask") return RelabelAction::SetNoMask;
  if (s == "Remove") return RelabelAction::Remove;
  return std::nullopt;
}

struct RelabelEntry {
  FaceId face_id;
  RelabelAction action = RelabelAction::Remove;

  friend bool operator==(const RelabelEntry&, const RelabelEntry&) = default;
};

struct RelabelDiff {
  std::vector<RelabelEntry> entries;

  bool empty() const noexcept { return entries.empty(); }
  std::size_t count(RelabelAction a) const {
    return static_cast<std::size_t>(std::count_if(
        entries.begin(), entries.end(), [a](const RelabelEntry& e) { return e.action == a; }));
  }

  friend bool operator==(const RelabelDiff&, const RelabelDiff&) = default;
};

// Applies diff to a copy of d. Validates everything up front, so either every
// entry applies or an exception is thrown and nothing changes.
inline Dataset apply_relabel_diff(const Dataset& d, const RelabelDiff& diff) {
  std::map<FaceId, RelabelAction> actions;
  for (const auto& e : diff.entries) {
    if (!actions.emplace(e.face_id, e.action).second)
      throw ValidationError("relabel diff lists face " + e.face_id.str() + " more than once");
  }

  std::map<FaceId, MaskLabel> present;
  for (const auto& f : d.frames)
    for (const auto& face : f.faces) present.emplace(face.id, face.label);

  std::string unknown;
  std::string no_ops;
  for (const auto& [id, action] : actions) {
    auto it = present.find(id);
    if (it == present.end()) {
      unknown += (unknown.empty() ? "" : ", ") + id.str();
    } else if ((action == RelabelAction::SetMask && it->second == MaskLabel::Mask) ||
               (action == RelabelAction::SetNoMask && it->second == MaskLabel::NoMask)) {
      no_ops += (no_ops.empty() ? "" : ", ") + id.str();
    }
  }
  if (!unknown.empty()) throw NotFoundError("relabel diff references unknown faces: " + unknown);
  if (!no_ops.empty())
    throw ValidationError("relabel diff entries do not change the label of: " + no_ops);

  Dataset out = d;
  for (auto& f : out.frames) {
    std::vector<GroundTruthFace> kept;
    kept.reserve(f.faces.size());
    for (auto& face : f.faces) {
      auto it = actions.find(face.id);
      if (it == actions.end()) {
        kept.push_back(std::move(face));
        continue;
      }
      switch (it->second) {
        case RelabelAction::SetMask: face.label = MaskLabel::Mask; break;
        case RelabelAction::SetNoMask: face.label = MaskLabel::NoMask; break;
        case RelabelAction::Remove: continue;
      }
      kept.push_back(std::move(face));
    }
    f.faces = std::move(kept);
  }
  return out;
}

// Minimal diff turning a into b. b must have the same frames and a subset of a's faces.
inline RelabelDiff diff_datasets(const Dataset& a, const Dataset& b) {
  if (a.frames.size() != b.frames.size())
    throw ValidationError("datasets have different frame counts");
  RelabelDiff diff;
  for (const auto& fa : a.frames) {
    const FrameAnnotation* fb = b.find(fa.frame_id);
    if (!fb) throw ValidationError("frame " + fa.frame_id + " missing from the second dataset");
    std::map<std::size_t, const GroundTruthFace*> in_b;
    for (const auto& face : fb->faces) in_b.emplace(face.id.index, &face);
    std::set<std::size_t> in_a;
    for (const auto& face : fa.faces) {
      in_a.insert(face.id.index);
      auto it = in_b.find(face.id.index);
      if (it == in_b.end()) {
        diff.entries.push_back({face.id, RelabelAction::Remove});
      } else if (it->second->label != face.label) {
        diff.entries.push_back({face.id, it->second->label == MaskLabel::Mask
                                             ? RelabelAction::SetMask
                                             : RelabelAction::SetNoMask});
      }
    }
    for (const auto& [idx, face] : in_b) {
      if (!in_a.contains(idx))
        throw ValidationError("face " + face->id.str() + " exists only in the second dataset");
    }
  }
  return diff;
}

inline constexpr std::string_view kRelabelHeader = "#maskpipe-relabel v1";

// Text form: header line, then one "frame_id<TAB>face_index<TAB>action" line per entry.
inline std::string serialize_relabel_diff(const RelabelDiff& diff) {
  std::string out(kRelabelHeader);
  out += '\n';
  for (const auto& e : diff.entries) {
    if (e.face_id.frame_id.find_first_of("\t\n") != std::string::npos)
      throw ValidationError("frame id '" + e.face_id.frame_id + "' contains a tab or newline");
    out += e.face_id.frame_id;
    out += '\t';
    out += std::to_string(e.face_id.index);
    out += '\t';
    out += to_string(e.action);
    out += '\n';
  }
  return out;
}

inline RelabelDiff parse_relabel_diff(std::string_view text) {
  RelabelDiff diff;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!saw_header) {
      if (line != kRelabelHeader) throw ParseError("missing '#maskpipe-relabel v1' header", line_no);
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string_view::npos || line.find('\t', t2 + 1) != std::string_view::npos)
      throw ParseError("expected three tab-separated fields", line_no);
    const auto index_text = line.substr(t1 + 1, t2 - t1 - 1);
    if (index_text.empty() || index_text.find_first_not_of("0123456789") != std::string_view::npos)
      throw ParseError("face index must be a non-negative integer", line_no);
    const auto action = parse_relabel_action(line.substr(t2 + 1));
    if (!action) throw ParseError("unknown action '" + std::string(line.substr(t2 + 1)) + "'", line_no);
    diff.entries.push_back(
        {{std::string(line.substr(0, t1)), std::stoull(std::string(index_text))}, *action});
  }
  if (!saw_header) throw ParseError("empty relabel diff (missing header)", 1);
  return diff;
}

inline nlohmann::json relabel_diff_to_json(const RelabelDiff& diff) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : diff.entries)
    entries.push_back({{"frame_id", e.face_id.frame_id},
                       {"face_index", e.face_id.index},
                       {"action", to_string(e.action)}});
  return {{"format", "maskpipe-relabel"}, {"version", 1}, {"entries", entries}};
}

inline RelabelDiff relabel_diff_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "maskpipe-relabel" || j.value("version", 0) != 1)
    throw ParseError("not a maskpipe-relabel v1 JSON document");
  RelabelDiff diff;
  for (const auto& e : j.at("entries")) {
    const auto action = parse_relabel_action(e.at("action").get<std::string>());
    if (!action) throw ParseError("unknown action " + e.at("action").dump());
    diff.entries.push_back(
        {{e.at("frame_id").get<std::string>(), e.at("face_index").get<std::size_t>()}, *action});
  }
  return diff;
}

// Reads either form; JSON is recognised by a leading '{'.
inline RelabelDiff load_relabel_diff(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return relabel_diff_from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what());
    }
  }
  return parse_relabel_diff(text);
}

}  // namespace maskpipe
