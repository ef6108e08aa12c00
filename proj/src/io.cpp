#include "segfuse/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "segfuse/errors.hpp"

namespace segfuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> encode_raw(int h, int w, int c, std::span<const double> values) {
  std::vector<std::uint8_t> out(kTensorMagic.begin(), kTensorMagic.end());
  out.reserve(kTensorHeaderBytes + values.size() * 4);
  put_u32(out, static_cast<std::uint32_t>(h));
  put_u32(out, static_cast<std::uint32_t>(w));
  put_u32(out, static_cast<std::uint32_t>(c));
  put_u32(out, 0);
  for (double v : values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

std::vector<double> decode_payload(std::span<const std::uint8_t> bytes, const TensorHeader& h) {
  const std::uint64_t n = static_cast<std::uint64_t>(h.height) * h.width * h.channels;
  const std::uint64_t expected = kTensorHeaderBytes + n * 4;
  if (bytes.size() != expected) {
    throw FormatError("tensor payload is " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(expected));
  }
  std::vector<double> values(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const float f = std::bit_cast<float>(get_u32(bytes, kTensorHeaderBytes + 4 * i));
    if (!std::isfinite(f)) throw FormatError("tensor value " + std::to_string(i) + " is not finite");
    values[i] = static_cast<double>(f);
  }
  return values;
}

// --- JSON helpers ----------------------------------------------------------

const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + "." + key + ": missing");
  return *it;
}

std::int64_t as_int(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw FormatError(where + ": expected an integer");
  return v.get<std::int64_t>();
}

double as_real(const json& v, const std::string& where) {
  if (!v.is_number()) throw FormatError(where + ": expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& where) {
  if (!v.is_string()) throw FormatError(where + ": expected a string");
  return v.get<std::string>();
}

const json& as_array(const json& v, const std::string& where) {
  if (!v.is_array()) throw FormatError(where + ": expected an array");
  return v;
}

int as_dim(const json& v, const std::string& where) {
  const auto d = as_int(v, where);
  if (d <= 0 || d > (1 << 24)) throw DataError(where + ": dimension must be positive");
  return static_cast<int>(d);
}

BBox parse_bbox(const json& v, const std::string& where) {
  const json& a = as_array(v, where);
  if (a.size() != 4) throw FormatError(where + ": expected [x0, y0, x1, y1]");
  BBox b;
  b.x0 = static_cast<int>(as_int(a[0], where + "[0]"));
  b.y0 = static_cast<int>(as_int(a[1], where + "[1]"));
  b.x1 = static_cast<int>(as_int(a[2], where + "[2]"));
  b.y1 = static_cast<int>(as_int(a[3], where + "[3]"));
  return b;
}

json bbox_json(const BBox& b) { return json::array({b.x0, b.y0, b.x1, b.y1}); }

std::array<int, 3> parse_shape(const json& v, const std::string& where) {
  const json& a = as_array(v, where);
  if (a.size() != 3) throw FormatError(where + ": expected [height, width, channels]");
  return {as_dim(a[0], where + "[0]"), as_dim(a[1], where + "[1]"), as_dim(a[2], where + "[2]")};
}

MaskInstance parse_instance(const json& j, const PredictionBundle& b, bool ground_truth,
                            std::int64_t fallback_id, const std::string& where) {
  MaskInstance inst;
  inst.id = j.contains("id") ? as_int(j["id"], where + ".id") : fallback_id;
  try {
    inst.component = parse_component(as_string(field(j, "component", where), where + ".component"));
  } catch (const DataError& e) {
    throw DataError(where + ".component: " + e.what());
  }
  if (j.contains("object_id") && !j["object_id"].is_null()) {
    inst.object_id = as_int(j["object_id"], where + ".object_id");
  }
  inst.bbox = parse_bbox(field(j, "bbox", where), where + ".bbox");
  const json& counts = as_array(field(j, "rle", where), where + ".rle");
  inst.mask.height = b.height;
  inst.mask.width = b.width;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto c = as_int(counts[i], where + ".rle[" + std::to_string(i) + "]");
    if (c < 0 || c > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError(where + ".rle[" + std::to_string(i) + "]: run length out of range");
    }
    inst.mask.counts.push_back(static_cast<std::uint32_t>(c));
  }
  if (ground_truth) {
    inst.model_id = "";
    inst.score = 1.0;
    inst.scale = 1.0;
  } else {
    inst.model_id = as_string(field(j, "model", where), where + ".model");
    inst.scale = as_real(field(j, "scale", where), where + ".scale");
    inst.score = as_real(field(j, "score", where), where + ".score");
    if (!std::binary_search(b.models.begin(), b.models.end(), inst.model_id)) {
      throw DataError(where + ".model: '" + inst.model_id + "' is not listed in models");
    }
    if (std::find(b.scales.begin(), b.scales.end(), inst.scale) == b.scales.end()) {
      throw DataError(where + ".scale: " + std::to_string(inst.scale) + " is not listed in scales");
    }
  }
  validate_instance(inst, b.height, b.width, where);
  return inst;
}

}  // namespace

// --- tensors -----------------------------------------------------------------

std::vector<std::uint8_t> encode_tensor(const LogitMap& map) {
  return encode_raw(map.height(), map.width(), map.channels(), map.data());
}

std::vector<std::uint8_t> encode_tensor(const AttentionMap& map) {
  return encode_raw(map.height(), map.width(), 1, map.data());
}

TensorHeader decode_tensor_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTensorHeaderBytes) {
    throw FormatError("tensor file truncated: " + std::to_string(bytes.size()) + " bytes");
  }
  if (!std::equal(kTensorMagic.begin(), kTensorMagic.end(), bytes.begin(),
                  [](char m, std::uint8_t b) { return static_cast<std::uint8_t>(m) == b; })) {
    throw FormatError("tensor file has bad magic");
  }
  TensorHeader h{get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  if (get_u32(bytes, 20) != 0) throw FormatError("tensor header reserved word is not zero");
  if (h.height == 0 || h.width == 0 || h.channels == 0 || h.height > (1u << 24) ||
      h.width > (1u << 24) || h.channels > (1u << 16)) {
    throw FormatError("tensor header has invalid dims");
  }
  return h;
}

LogitMap decode_logits(std::span<const std::uint8_t> bytes) {
  const TensorHeader h = decode_tensor_header(bytes);
  return LogitMap(static_cast<int>(h.height), static_cast<int>(h.width),
                  static_cast<int>(h.channels), decode_payload(bytes, h));
}

AttentionMap decode_attention(std::span<const std::uint8_t> bytes) {
  const TensorHeader h = decode_tensor_header(bytes);
  if (h.channels != 1) throw FormatError("attention tensor must have exactly one channel");
  auto values = decode_payload(bytes, h);
  for (double v : values) {
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("attention tensor value outside [0, 1]");
  }
  return AttentionMap(static_cast<int>(h.height), static_cast<int>(h.width), std::move(values));
}

void save_tensor(const fs::path& path, const LogitMap& map) { write_file(path, encode_tensor(map)); }
void save_tensor(const fs::path& path, const AttentionMap& map) {
  write_file(path, encode_tensor(map));
}

LogitMap load_logits(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_logits(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

AttentionMap load_attention(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return decode_attention(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// --- manifests ---------------------------------------------------------------

PredictionBundle bundle_from_json(const json& doc, const fs::path& base_dir) {
  const std::string root = "manifest";
  if (as_string(field(doc, "format", root), root + ".format") != kManifestFormat) {
    throw FormatError(root + ".format: expected '" + std::string(kManifestFormat) + "'");
  }
  if (as_int(field(doc, "version", root), root + ".version") != kManifestVersion) {
    throw FormatError(root + ".version: unsupported schema version");
  }

  PredictionBundle b;
  const json& image = field(doc, "image", root);
  b.image_id = as_string(field(image, "id", "image"), "image.id");
  b.height = as_dim(field(image, "height", "image"), "image.height");
  b.width = as_dim(field(image, "width", "image"), "image.width");
  if (doc.contains("classes")) b.classes = as_dim(doc["classes"], "classes");

  const json& models = as_array(field(doc, "models", root), "models");
  for (std::size_t i = 0; i < models.size(); ++i) {
    b.models.push_back(as_string(models[i], "models[" + std::to_string(i) + "]"));
  }
  std::sort(b.models.begin(), b.models.end());
  if (std::adjacent_find(b.models.begin(), b.models.end()) != b.models.end()) {
    throw DataError("models: duplicate model id");
  }

  const json& scales = as_array(field(doc, "scales", root), "scales");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    const std::string where = "scales[" + std::to_string(i) + "]";
    const double s = as_real(scales[i], where);
    if (!(s > 0.0) || !std::isfinite(s)) throw DataError(where + ": scale must be positive");
    if (!b.scales.empty() && !(s > b.scales.back())) {
      throw DataError(where + ": scales must be strictly increasing");
    }
    b.scales.push_back(s);
  }

  std::map<double, std::array<int, 2>> grid_of_scale;
  if (doc.contains("tensors")) {
    const json& tensors = as_array(doc["tensors"], "tensors");
    std::set<std::pair<ModelId, double>> seen;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      const std::string where = "tensors[" + std::to_string(i) + "]";
      const json& t = tensors[i];
      ScaleTensors st;
      st.model = as_string(field(t, "model", where), where + ".model");
      st.scale = as_real(field(t, "scale", where), where + ".scale");
      if (!std::binary_search(b.models.begin(), b.models.end(), st.model)) {
        throw DataError(where + ".model: '" + st.model + "' is not listed in models");
      }
      if (std::find(b.scales.begin(), b.scales.end(), st.scale) == b.scales.end()) {
        throw DataError(where + ".scale: not listed in scales");
      }
      if (!seen.insert({st.model, st.scale}).second) {
        throw DataError(where + ": duplicate (model, scale) entry");
      }
      const auto shape = parse_shape(field(t, "shape", where), where + ".shape");
      if (shape[2] != b.classes) {
        throw DataError(where + ".shape: " + std::to_string(shape[2]) + " channels, manifest has " +
                        std::to_string(b.classes) + " classes");
      }
      st.logits_path = as_string(field(t, "logits", where), where + ".logits");
      try {
        st.logits = load_logits(base_dir / st.logits_path);
      } catch (const Error& e) {
        throw DataError(where + ".logits: " + e.what());
      }
      if (st.logits.height() != shape[0] || st.logits.width() != shape[1] ||
          st.logits.channels() != shape[2]) {
        throw DataError(where + ".logits: file dims do not match shape");
      }
      const auto grid = grid_of_scale.try_emplace(st.scale, std::array<int, 2>{shape[0], shape[1]});
      if (grid.first->second != std::array<int, 2>{shape[0], shape[1]}) {
        throw DataError(where + ".shape: differs from other models at this scale");
      }
      if (t.contains("alpha") && !t["alpha"].is_null()) {
        st.alpha_path = as_string(t["alpha"], where + ".alpha");
        try {
          st.alpha = load_attention(base_dir / st.alpha_path);
        } catch (const Error& e) {
          throw DataError(where + ".alpha: " + e.what());
        }
        if (st.alpha->height() != shape[0] || st.alpha->width() != shape[1]) {
          throw DataError(where + ".alpha: dims do not match the logits");
        }
      }
      if (t.contains("locals")) {
        const json& locals = as_array(t["locals"], where + ".locals");
        std::set<ObjectId> objs;
        for (std::size_t k = 0; k < locals.size(); ++k) {
          const std::string lw = where + ".locals[" + std::to_string(k) + "]";
          LocalLogits ll;
          ll.object_id = as_int(field(locals[k], "object_id", lw), lw + ".object_id");
          if (!objs.insert(ll.object_id).second) throw DataError(lw + ": duplicate object_id");
          const auto lshape = parse_shape(field(locals[k], "shape", lw), lw + ".shape");
          ll.path = as_string(field(locals[k], "logits", lw), lw + ".logits");
          try {
            ll.logits = load_logits(base_dir / ll.path);
          } catch (const Error& e) {
            throw DataError(lw + ".logits: " + e.what());
          }
          if (ll.logits.height() != lshape[0] || ll.logits.width() != lshape[1] ||
              ll.logits.channels() != lshape[2] || lshape[2] != b.classes) {
            throw DataError(lw + ".logits: file dims do not match shape");
          }
          st.locals.push_back(std::move(ll));
        }
        std::sort(st.locals.begin(), st.locals.end(),
                  [](const LocalLogits& a, const LocalLogits& c) { return a.object_id < c.object_id; });
      }
      b.tensors.push_back(std::move(st));
    }
    std::sort(b.tensors.begin(), b.tensors.end(), [](const ScaleTensors& a, const ScaleTensors& c) {
      return std::tie(a.scale, a.model) < std::tie(c.scale, c.model);
    });
  }

  if (doc.contains("crops")) {
    const json& crops = as_array(doc["crops"], "crops");
    std::set<std::pair<double, ObjectId>> seen;
    for (std::size_t i = 0; i < crops.size(); ++i) {
      const std::string where = "crops[" + std::to_string(i) + "]";
      CropRecord c;
      c.scale = as_real(field(crops[i], "scale", where), where + ".scale");
      c.object_id = as_int(field(crops[i], "object_id", where), where + ".object_id");
      c.bbox = parse_bbox(field(crops[i], "bbox", where), where + ".bbox");
      const auto grid = grid_of_scale.find(c.scale);
      if (grid == grid_of_scale.end()) {
        throw DataError(where + ".scale: no tensors at this scale to crop from");
      }
      try {
        validate_bbox(c.bbox, grid->second[0], grid->second[1]);
      } catch (const ShapeError& e) {
        throw DataError(where + ".bbox: " + e.what());
      }
      if (!seen.insert({c.scale, c.object_id}).second) {
        throw DataError(where + ": duplicate (scale, object_id)");
      }
      b.crops.push_back(c);
    }
    std::sort(b.crops.begin(), b.crops.end(), [](const CropRecord& a, const CropRecord& c) {
      return std::tie(a.scale, a.object_id) < std::tie(c.scale, c.object_id);
    });
  }

  auto parse_list = [&](const char* key, bool gt, std::vector<MaskInstance>& out) {
    if (!doc.contains(key)) return;
    const json& arr = as_array(doc[key], key);
    std::set<std::int64_t> ids;
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const std::string where = std::string(key) + "[" + std::to_string(i) + "]";
      MaskInstance inst = parse_instance(arr[i], b, gt, static_cast<std::int64_t>(i), where);
      if (!ids.insert(inst.id).second) throw DataError(where + ".id: duplicate id");
      out.push_back(std::move(inst));
    }
  };
  parse_list("instances", false, b.instances);
  parse_list("ground_truth", true, b.ground_truth);
  return b;
}

PredictionBundle load_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  json doc;
  try {
    doc = json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what());
  }
  return bundle_from_json(doc, path.parent_path());
}

json instance_to_json(const MaskInstance& inst, bool ground_truth) {
  json j;
  j["id"] = inst.id;
  if (!ground_truth) {
    j["model"] = inst.model_id;
    j["scale"] = inst.scale;
    j["score"] = inst.score;
  }
  if (inst.object_id) j["object_id"] = *inst.object_id;
  j["component"] = std::string(component_name(inst.component));
  j["bbox"] = bbox_json(inst.bbox);
  j["rle"] = inst.mask.counts;
  return j;
}

json bundle_to_json(const PredictionBundle& b) {
  json doc;
  doc["format"] = kManifestFormat;
  doc["version"] = kManifestVersion;
  doc["image"] = {{"id", b.image_id}, {"height", b.height}, {"width", b.width}};
  doc["classes"] = b.classes;
  doc["models"] = b.models;
  doc["scales"] = b.scales;
  json tensors = json::array();
  for (const auto& t : b.tensors) {
    json e;
    e["model"] = t.model;
    e["scale"] = t.scale;
    e["shape"] = json::array({t.logits.height(), t.logits.width(), t.logits.channels()});
    e["logits"] = t.logits_path;
    if (t.alpha) e["alpha"] = t.alpha_path;
    if (!t.locals.empty()) {
      json locals = json::array();
      for (const auto& l : t.locals) {
        locals.push_back({{"object_id", l.object_id},
                          {"shape", json::array({l.logits.height(), l.logits.width(),
                                                 l.logits.channels()})},
                          {"logits", l.path}});
      }
      e["locals"] = std::move(locals);
    }
    tensors.push_back(std::move(e));
  }
  doc["tensors"] = std::move(tensors);
  json crops = json::array();
  for (const auto& c : b.crops) {
    crops.push_back({{"scale", c.scale}, {"object_id", c.object_id}, {"bbox", bbox_json(c.bbox)}});
  }
  doc["crops"] = std::move(crops);
  json instances = json::array();
  for (const auto& i : b.instances) instances.push_back(instance_to_json(i, false));
  doc["instances"] = std::move(instances);
  json gts = json::array();
  for (const auto& g : b.ground_truth) gts.push_back(instance_to_json(g, true));
  doc["ground_truth"] = std::move(gts);
  return doc;
}

void save_manifest(const PredictionBundle& bundle, const fs::path& path) {
  const fs::path base = path.parent_path();
  for (const auto& t : bundle.tensors) {
    save_tensor(base / t.logits_path, t.logits);
    if (t.alpha) save_tensor(base / t.alpha_path, *t.alpha);
    for (const auto& l : t.locals) save_tensor(base / l.path, l.logits);
  }
  write_json(path, bundle_to_json(bundle));
}

// --- overlays and files --------------------------------------------------------

std::vector<std::uint8_t> encode_overlay(const LabelGrid& labels) {
  const std::string header =
      "P6\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + labels.labels.size() * 3);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const auto l = labels.labels[i];
    if (l < 0 || l >= static_cast<std::int32_t>(kOverlayPalette.size())) {
      throw DataError("overlay: label " + std::to_string(l) + " at pixel " + std::to_string(i) +
                      " outside [0, 4]");
    }
    const auto& rgb = kOverlayPalette[static_cast<std::size_t>(l)];
    out.insert(out.end(), rgb.begin(), rgb.end());
  }
  return out;
}

void write_overlay(const LabelGrid& labels, const fs::path& path) {
  write_file(path, encode_overlay(labels));
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

void write_json(const fs::path& path, const json& doc) {
  const std::string text = doc.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace segfuse
