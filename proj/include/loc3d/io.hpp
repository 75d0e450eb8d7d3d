#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "loc3d/heatmap.hpp"
#include "loc3d/loss.hpp"
#include "loc3d/network.hpp"
#include "loc3d/optim.hpp"
#include "loc3d/phantom.hpp"
#include "loc3d/registration.hpp"
#include "loc3d/volume.hpp"

namespace loc3d {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace detail {

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot open for writing: " + path.string());
  f.write(text.data(), std::streamsize(text.size()));
  require(f.good(), "write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), "cannot open for reading: " + path.string());
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  require(!f.bad(), "read failed: " + path.string());
  return s;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(path), nullptr, true);
  return j;
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  // Sorted keys + fixed indentation keep byte-identical output for equal data.
  write_text_file(path, j.dump(2) + "\n");
}

// Shortest round-trip decimal for doubles in CSV.
inline std::string fmt_g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// "rvol" volume format: raw little-endian float32 payload (x-slowest index
// order) + a JSON sidecar at <payload>.json describing the geometry.
// ---------------------------------------------------------------------------

inline void write_rvol(const std::filesystem::path& payload_path, const Volume3D& v,
                       std::optional<bool> normalized = std::nullopt) {
  v.validate_geometry();
  require(v.all_finite(), "write_rvol: volume has non-finite voxels");
  nlohmann::json side;
  side["shape"] = {v.shape[0], v.shape[1], v.shape[2]};
  side["spacing_mm"] = {v.spacing_mm[0], v.spacing_mm[1], v.spacing_mm[2]};
  side["origin_mm"] = {v.origin_mm[0], v.origin_mm[1], v.origin_mm[2]};
  side["dtype"] = "f32le";
  side["index_order"] = "x-slowest";
  if (normalized.has_value()) side["normalized"] = *normalized;
  detail::write_json_file(payload_path.string() + ".json", side);

  std::ofstream f(payload_path, std::ios::binary);
  require(f.good(), "cannot open for writing: " + payload_path.string());
  f.write(reinterpret_cast<const char*>(v.data.data()),
          std::streamsize(v.data.size() * sizeof(float)));
  require(f.good(), "write failed: " + payload_path.string());
}

inline Volume3D read_rvol(const std::filesystem::path& payload_path,
                          bool* normalized_flag = nullptr) {
  const nlohmann::json side = detail::read_json_file(payload_path.string() + ".json");
  require(side.value("dtype", "") == "f32le", "read_rvol: unsupported dtype");
  require(side.value("index_order", "") == "x-slowest", "read_rvol: unsupported index order");
  Volume3D v;
  for (int a = 0; a < 3; ++a) {
    v.shape[a] = side.at("shape").at(std::size_t(a)).get<int>();
    v.spacing_mm[a] = side.at("spacing_mm").at(std::size_t(a)).get<double>();
    v.origin_mm[a] = side.at("origin_mm").at(std::size_t(a)).get<double>();
  }
  require(v.shape[0] > 0 && v.shape[1] > 0 && v.shape[2] > 0,
          "read_rvol: sidecar shape must be positive");
  require(v.spacing_mm[0] > 0 && v.spacing_mm[1] > 0 && v.spacing_mm[2] > 0,
          "read_rvol: sidecar spacing must be positive");
  if (normalized_flag != nullptr)
    *normalized_flag = side.contains("normalized") && side["normalized"].get<bool>();

  std::ifstream f(payload_path, std::ios::binary);
  require(f.good(), "cannot open for reading: " + payload_path.string());
  v.data.resize(std::size_t(v.voxels()));
  f.read(reinterpret_cast<char*>(v.data.data()), std::streamsize(v.data.size() * sizeof(float)));
  require(f.good() && f.gcount() == std::streamsize(v.data.size() * sizeof(float)),
          "read_rvol: payload shorter than the sidecar shape: " + payload_path.string());
  f.peek();
  require(f.eof(), "read_rvol: payload longer than the sidecar shape: " + payload_path.string());
  return v;
}

// ---------------------------------------------------------------------------
// Landmark CSV: header `case_id,landmark_id,frame,x,y,z`.
// ---------------------------------------------------------------------------

struct LandmarkRow {
  std::string case_id;
  Landmark lm;
};

inline void write_landmarks_csv(const std::filesystem::path& path,
                                const std::vector<LandmarkRow>& rows) {
  std::string out = "case_id,landmark_id,frame,x,y,z\n";
  for (const auto& r : rows) {
    require(r.case_id.find(',') == std::string::npos && r.lm.id.find(',') == std::string::npos,
            "write_landmarks_csv: ids must not contain commas");
    out += r.case_id + "," + r.lm.id + "," + frame_name(r.lm.frame) + "," +
           detail::fmt_g17(r.lm.coords[0]) + "," + detail::fmt_g17(r.lm.coords[1]) + "," +
           detail::fmt_g17(r.lm.coords[2]) + "\n";
  }
  detail::write_text_file(path, out);
}

inline std::vector<LandmarkRow> read_landmarks_csv(const std::filesystem::path& path) {
  std::istringstream in(detail::read_text_file(path));
  std::string line;
  require(bool(std::getline(in, line)), "read_landmarks_csv: empty file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "case_id,landmark_id,frame,x,y,z",
          "read_landmarks_csv: unexpected header: " + line);
  std::vector<LandmarkRow> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<std::string, 6> field;
    std::size_t start = 0;
    for (int i = 0; i < 6; ++i) {
      const std::size_t end = i < 5 ? line.find(',', start) : line.size();
      require(end != std::string::npos, "read_landmarks_csv: expected 6 fields: " + line);
      field[std::size_t(i)] = line.substr(start, end - start);
      start = end + 1;
    }
    LandmarkRow r;
    r.case_id = field[0];
    r.lm.id = field[1];
    r.lm.frame = frame_from_name(field[2]);
    for (int a = 0; a < 3; ++a) {
      std::size_t used = 0;
      r.lm.coords[std::size_t(a)] = std::stod(field[std::size_t(3 + a)], &used);
      require(used == field[std::size_t(3 + a)].size(),
              "read_landmarks_csv: bad number: " + field[std::size_t(3 + a)]);
    }
    require(finite3(r.lm.coords), "read_landmarks_csv: non-finite coordinates");
    rows.push_back(std::move(r));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Affine transform JSON: {A: 9 row-major numbers, t: 3 numbers, metric, value}.
// ---------------------------------------------------------------------------

struct TransformFile {
  AffineTransform transform;
  RegMetric metric = RegMetric::ncc;
  double value = 0.0;
};

inline void write_transform_json(const std::filesystem::path& path, const TransformFile& tf) {
  tf.transform.validate();
  nlohmann::json j;
  j["A"] = tf.transform.A.m;
  j["t"] = {tf.transform.t[0], tf.transform.t[1], tf.transform.t[2]};
  j["metric"] = reg_metric_name(tf.metric);
  j["value"] = tf.value;
  detail::write_json_file(path, j);
}

inline TransformFile read_transform_json(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json_file(path);
  TransformFile tf;
  for (int i = 0; i < 9; ++i) tf.transform.A.m[std::size_t(i)] = j.at("A").at(std::size_t(i));
  for (int i = 0; i < 3; ++i) tf.transform.t[std::size_t(i)] = j.at("t").at(std::size_t(i));
  tf.metric = reg_metric_from_name(j.at("metric").get<std::string>());
  tf.value = j.at("value").get<double>();
  tf.transform.validate();
  return tf;
}

// ---------------------------------------------------------------------------
// Checkpoint directory: manifest.json + one raw f32le blob per tensor.
// ---------------------------------------------------------------------------

struct Checkpoint {
  NetArchitecture arch;
  std::vector<Tensor<float>> params;
  std::vector<std::string> param_names;
  LossConfig loss;
  HeatmapConfig heatmap;
  AdamConfig adam;
  std::uint64_t seed = 0;
  int epoch = 0;
  double val_mre_mm = std::numeric_limits<double>::quiet_NaN();
  int roi_size_vox = 64;
  double roi_spacing_mm = 1.0;
};

namespace detail {

inline nlohmann::json arch_to_json(const NetArchitecture& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : arch.layers) {
    nlohmann::json jl;
    switch (l.kind) {
      case LayerSpec::Kind::conv: jl["kind"] = "conv"; break;
      case LayerSpec::Kind::pool: jl["kind"] = "pool"; break;
      case LayerSpec::Kind::upsample: jl["kind"] = "upsample"; break;
    }
    if (l.kind == LayerSpec::Kind::conv) {
      jl["in_ch"] = l.in_ch;
      jl["out_ch"] = l.out_ch;
      jl["kernel"] = l.kernel;
      jl["relu"] = l.relu;
    }
    layers.push_back(jl);
  }
  return layers;
}

inline NetArchitecture arch_from_json(const nlohmann::json& layers) {
  NetArchitecture arch;
  for (const auto& jl : layers) {
    LayerSpec l;
    const std::string kind = jl.at("kind").get<std::string>();
    if (kind == "conv") {
      l.kind = LayerSpec::Kind::conv;
      l.in_ch = jl.at("in_ch").get<int>();
      l.out_ch = jl.at("out_ch").get<int>();
      l.kernel = jl.at("kernel").get<int>();
      l.relu = jl.at("relu").get<bool>();
    } else if (kind == "pool") {
      l.kind = LayerSpec::Kind::pool;
    } else if (kind == "upsample") {
      l.kind = LayerSpec::Kind::upsample;
    } else {
      fail_invalid("checkpoint: unknown layer kind: " + kind);
    }
    arch.layers.push_back(l);
  }
  return arch;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  require(ck.params.size() == ck.param_names.size(), "save_checkpoint: names/params mismatch");
  std::filesystem::create_directories(dir);
  nlohmann::json man;
  man["architecture"] = detail::arch_to_json(ck.arch);
  man["loss"] = loss_variant_name(ck.loss.variant);
  man["alpha"] = ck.loss.alpha;
  man["heatmap"] = {{"sigma_mm", ck.heatmap.sigma_mm},
                    {"cutoff", ck.heatmap.cutoff},
                    {"peak", ck.heatmap.peak}};
  man["optimizer"] = {{"lr", ck.adam.lr},
                      {"weight_decay", ck.adam.weight_decay},
                      {"beta1", ck.adam.beta1},
                      {"beta2", ck.adam.beta2},
                      {"eps", ck.adam.eps}};
  man["seed"] = ck.seed;
  man["epoch"] = ck.epoch;
  if (std::isfinite(ck.val_mre_mm))
    man["val_mre_mm"] = ck.val_mre_mm;
  else
    man["val_mre_mm"] = nullptr;
  man["roi_size_vox"] = ck.roi_size_vox;
  man["roi_spacing_mm"] = ck.roi_spacing_mm;

  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& t = ck.params[i];
    const std::string file = ck.param_names[i] + ".f32";
    tensors.push_back({{"name", ck.param_names[i]},
                       {"shape", t.shape},
                       {"file", file}});
    std::ofstream f(dir / file, std::ios::binary);
    require(f.good(), "save_checkpoint: cannot write " + (dir / file).string());
    f.write(reinterpret_cast<const char*>(t.data.data()),
            std::streamsize(t.data.size() * sizeof(float)));
    require(f.good(), "save_checkpoint: write failed for " + file);
  }
  man["tensors"] = tensors;
  detail::write_json_file(dir / "manifest.json", man);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const nlohmann::json man = detail::read_json_file(dir / "manifest.json");
  Checkpoint ck;
  ck.arch = detail::arch_from_json(man.at("architecture"));
  ck.loss.variant = loss_variant_from_name(man.at("loss").get<std::string>());
  ck.loss.alpha = man.at("alpha").get<double>();
  ck.heatmap.sigma_mm = man.at("heatmap").at("sigma_mm").get<double>();
  ck.heatmap.cutoff = man.at("heatmap").at("cutoff").get<double>();
  ck.heatmap.peak = man.at("heatmap").at("peak").get<double>();
  ck.adam.lr = man.at("optimizer").at("lr").get<double>();
  ck.adam.weight_decay = man.at("optimizer").at("weight_decay").get<double>();
  ck.adam.beta1 = man.at("optimizer").at("beta1").get<double>();
  ck.adam.beta2 = man.at("optimizer").at("beta2").get<double>();
  ck.adam.eps = man.at("optimizer").at("eps").get<double>();
  ck.seed = man.at("seed").get<std::uint64_t>();
  ck.epoch = man.at("epoch").get<int>();
  ck.val_mre_mm = man.at("val_mre_mm").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                 : man.at("val_mre_mm").get<double>();
  ck.roi_size_vox = man.at("roi_size_vox").get<int>();
  ck.roi_spacing_mm = man.at("roi_spacing_mm").get<double>();

  for (const auto& jt : man.at("tensors")) {
    Shape5 sh{};
    for (int a = 0; a < 5; ++a) sh[std::size_t(a)] = jt.at("shape").at(std::size_t(a)).get<int>();
    Tensor<float> t = Tensor<float>::zeros(sh);
    const std::filesystem::path file = dir / jt.at("file").get<std::string>();
    std::ifstream f(file, std::ios::binary);
    require(f.good(), "load_checkpoint: cannot read " + file.string());
    f.read(reinterpret_cast<char*>(t.data.data()),
           std::streamsize(t.data.size() * sizeof(float)));
    require(f.good() && f.gcount() == std::streamsize(t.data.size() * sizeof(float)),
            "load_checkpoint: blob shorter than manifest shape: " + file.string());
    ck.params.push_back(std::move(t));
    ck.param_names.push_back(jt.at("name").get<std::string>());
  }
  require(!ck.params.empty(), "load_checkpoint: no tensors in manifest");
  return ck;
}

// ---------------------------------------------------------------------------
// Phantom dataset directory:
//   cases/<id>/volume.rvol(.json), cases/<id>/landmarks.csv, manifest.json.
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::json phantom_spec_to_json(const PhantomSpec& s) {
  nlohmann::json j;
  j["n_train"] = s.n_train;
  j["n_val"] = s.n_val;
  j["n_test"] = s.n_test;
  j["head_shape"] = s.head_shape;
  j["spacing_mm"] = s.spacing_mm;
  j["semiaxes_lo_mm"] = s.semiaxes_lo_mm;
  j["semiaxes_hi_mm"] = s.semiaxes_hi_mm;
  j["blob_rot_deg"] = s.blob_rot_deg;
  j["blob_contrast"] = s.blob_contrast;
  j["edge_softness"] = s.edge_softness;
  j["lateral_offset_lo_mm"] = s.lateral_offset_lo_mm;
  j["lateral_offset_hi_mm"] = s.lateral_offset_hi_mm;
  j["center_jitter_mm"] = s.center_jitter_mm;
  j["mirror_jitter_mm"] = s.mirror_jitter_mm;
  j["background_level"] = s.background_level;
  j["background_amp"] = s.background_amp;
  j["noise_bg"] = s.noise_bg;
  j["target_offset_mm"] = s.target_offset_mm;
  j["sigma_anat_mm"] = s.sigma_anat_mm;
  j["sigma_label_mm"] = s.sigma_label_mm;
  j["seed"] = s.seed;
  return j;
}

inline PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
  PhantomSpec s;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("n_train", s.n_train);
  opt("n_val", s.n_val);
  opt("n_test", s.n_test);
  opt("head_shape", s.head_shape);
  opt("spacing_mm", s.spacing_mm);
  opt("semiaxes_lo_mm", s.semiaxes_lo_mm);
  opt("semiaxes_hi_mm", s.semiaxes_hi_mm);
  opt("blob_rot_deg", s.blob_rot_deg);
  opt("blob_contrast", s.blob_contrast);
  opt("edge_softness", s.edge_softness);
  opt("lateral_offset_lo_mm", s.lateral_offset_lo_mm);
  opt("lateral_offset_hi_mm", s.lateral_offset_hi_mm);
  opt("center_jitter_mm", s.center_jitter_mm);
  opt("mirror_jitter_mm", s.mirror_jitter_mm);
  opt("background_level", s.background_level);
  opt("background_amp", s.background_amp);
  opt("noise_bg", s.noise_bg);
  opt("target_offset_mm", s.target_offset_mm);
  opt("sigma_anat_mm", s.sigma_anat_mm);
  opt("sigma_label_mm", s.sigma_label_mm);
  opt("seed", s.seed);
  s.validate();
  return s;
}

}  // namespace detail

inline PhantomSpec read_phantom_spec(const std::filesystem::path& path) {
  return detail::phantom_spec_from_json(detail::read_json_file(path));
}

struct DatasetManifest {
  PhantomSpec spec;
  std::vector<std::string> train_ids, val_ids, test_ids;

  std::vector<std::string> ids_of(const std::string& split) const {
    if (split == "train") return train_ids;
    if (split == "val") return val_ids;
    if (split == "test") return test_ids;
    fail_invalid("unknown split: " + split);
  }
};

// Generate the full dataset to disk, one case at a time (volumes are large;
// nothing is kept in memory). Returns the manifest that was written.
inline DatasetManifest generate_dataset(const PhantomSpec& spec,
                                        const std::filesystem::path& dir) {
  spec.validate();
  std::filesystem::create_directories(dir / "cases");
  DatasetManifest man;
  man.spec = spec;
  for (int i = 0; i < spec.n_cases(); ++i) {
    PhantomCase c = generate_case(spec, i, /*with_masks=*/false);
    const std::filesystem::path cdir = dir / "cases" / c.id;
    std::filesystem::create_directories(cdir);
    write_rvol(cdir / "volume.rvol", c.volume);
    write_landmarks_csv(cdir / "landmarks.csv",
                        {{c.id, c.truth_left},
                         {c.id, c.truth_right},
                         {c.id, c.pseudo_left},
                         {c.id, c.pseudo_right}});
    const std::string split = spec.split_of(i);
    if (split == "train")
      man.train_ids.push_back(c.id);
    else if (split == "val")
      man.val_ids.push_back(c.id);
    else
      man.test_ids.push_back(c.id);
  }
  nlohmann::json j;
  j["spec"] = detail::phantom_spec_to_json(spec);
  j["splits"] = {{"train", man.train_ids}, {"val", man.val_ids}, {"test", man.test_ids}};
  detail::write_json_file(dir / "manifest.json", j);
  return man;
}

inline DatasetManifest read_dataset_manifest(const std::filesystem::path& dir) {
  const nlohmann::json j = detail::read_json_file(dir / "manifest.json");
  DatasetManifest man;
  man.spec = detail::phantom_spec_from_json(j.at("spec"));
  man.train_ids = j.at("splits").at("train").get<std::vector<std::string>>();
  man.val_ids = j.at("splits").at("val").get<std::vector<std::string>>();
  man.test_ids = j.at("splits").at("test").get<std::vector<std::string>>();
  return man;
}

// A case as stored on disk: the volume plus its four landmark rows.
struct StoredCase {
  std::string id;
  Volume3D volume;
  Landmark truth_left, truth_right, pseudo_left, pseudo_right;  // world_mm
};

inline StoredCase load_case(const std::filesystem::path& dataset_dir, const std::string& id) {
  StoredCase c;
  c.id = id;
  const std::filesystem::path cdir = dataset_dir / "cases" / id;
  c.volume = read_rvol(cdir / "volume.rvol");
  bool seen_truth_l = false, seen_truth_r = false, seen_pseudo_l = false, seen_pseudo_r = false;
  for (const auto& row : read_landmarks_csv(cdir / "landmarks.csv")) {
    require(row.case_id == id, "load_case: landmark row belongs to " + row.case_id);
    require(row.lm.frame == Frame::world_mm, "load_case: landmarks must be world_mm");
    if (row.lm.id == "truth_left") c.truth_left = row.lm, seen_truth_l = true;
    if (row.lm.id == "truth_right") c.truth_right = row.lm, seen_truth_r = true;
    if (row.lm.id == "pseudo_left") c.pseudo_left = row.lm, seen_pseudo_l = true;
    if (row.lm.id == "pseudo_right") c.pseudo_right = row.lm, seen_pseudo_r = true;
  }
  require(seen_truth_l && seen_truth_r && seen_pseudo_l && seen_pseudo_r,
          "load_case: missing landmark rows for " + id);
  return c;
}

}  // namespace loc3d
