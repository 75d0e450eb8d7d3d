// On-disk formats: raw volumes, landmark CSVs, transforms, checkpoints,
// datasets. Everything must round-trip bit-exactly and reject corrupt input.

#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "loc3d/io.hpp"

using namespace loc3d;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("loc3d_io_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Volume3D random_volume(Index3 shape, std::uint64_t seed) {
  Volume3D v(shape, {0.5, 1.0, 2.0}, {-3.0, 4.5, 9.0});
  Rng rng(seed);
  for (auto& x : v.data) x = float(rng.uniform(-2.0, 2.0));
  return v;
}

}  // namespace

TEST_CASE("rvol volumes round trip bit-exactly with geometry", "[io]") {
  TempDir td;
  const Volume3D v = random_volume({7, 5, 9}, 3);
  const fs::path p = td.path / "vol.rvol";
  write_rvol(p, v, true);
  bool normalized = false;
  const Volume3D r = read_rvol(p, &normalized);
  REQUIRE(normalized);
  REQUIRE(r.shape == v.shape);
  for (int a = 0; a < 3; ++a) {
    REQUIRE(r.spacing_mm[a] == v.spacing_mm[a]);
    REQUIRE(r.origin_mm[a] == v.origin_mm[a]);
  }
  REQUIRE(std::equal(v.data.begin(), v.data.end(), r.data.begin()));
}

TEST_CASE("rvol rejects payloads that disagree with the sidecar", "[io]") {
  TempDir td;
  const Volume3D v = random_volume({4, 4, 4}, 5);
  const fs::path p = td.path / "vol.rvol";
  write_rvol(p, v);

  // truncate
  fs::resize_file(p, 4 * 4 * 4 * 4 - 8);
  REQUIRE_THROWS_AS(read_rvol(p), std::invalid_argument);

  // extend
  write_rvol(p, v);
  {
    std::ofstream f(p, std::ios::binary | std::ios::app);
    const float junk = 1.0f;
    f.write(reinterpret_cast<const char*>(&junk), sizeof junk);
  }
  REQUIRE_THROWS_AS(read_rvol(p), std::invalid_argument);

  // missing sidecar
  fs::remove(p.string() + ".json");
  REQUIRE_THROWS(read_rvol(p));
}

TEST_CASE("landmark csv round trips all frames and precision", "[io]") {
  TempDir td;
  const fs::path p = td.path / "lms.csv";
  const std::vector<LandmarkRow> rows{
      {"case_a", {"truth_left", Frame::world_mm, {1.25, -3.0625, 100.5}}},
      {"case_a", {"pseudo_left", Frame::world_mm, {0.1, 0.2, 0.3}}},
      {"case_b", {"p", Frame::voxel, {4, 5, 6}}},
      {"case_b", {"n", Frame::normalized, {-0.33333333333333331, 0.0, 1.0}}},
  };
  write_landmarks_csv(p, rows);
  const std::vector<LandmarkRow> r = read_landmarks_csv(p);
  REQUIRE(r.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    REQUIRE(r[i].case_id == rows[i].case_id);
    REQUIRE(r[i].lm.id == rows[i].lm.id);
    REQUIRE(r[i].lm.frame == rows[i].lm.frame);
    for (int a = 0; a < 3; ++a) REQUIRE(r[i].lm.coords[a] == rows[i].lm.coords[a]);
  }
}

TEST_CASE("landmark csv rejects malformed rows", "[io]") {
  TempDir td;
  const fs::path p = td.path / "bad.csv";
  detail::write_text_file(p, "case_id,landmark_id,frame,x,y,z\nc,l,world_mm,1,2\n");
  REQUIRE_THROWS_AS(read_landmarks_csv(p), std::invalid_argument);
  detail::write_text_file(p, "case_id,landmark_id,frame,x,y,z\nc,l,parsecs,1,2,3\n");
  REQUIRE_THROWS_AS(read_landmarks_csv(p), std::invalid_argument);
  detail::write_text_file(p, "case_id,landmark_id,frame,x,y,z\nc,l,world_mm,1,2,zebra\n");
  REQUIRE_THROWS_AS(read_landmarks_csv(p), std::invalid_argument);
  detail::write_text_file(p, "wrong,header\n");
  REQUIRE_THROWS_AS(read_landmarks_csv(p), std::invalid_argument);
}

TEST_CASE("transform json round trips", "[io]") {
  TempDir td;
  TransformFile tf;
  tf.transform.A = Mat3::euler_xyz(0.1, 0.2, 0.3);
  tf.transform.t = {1.5, -2.25, 3.0};
  tf.metric = RegMetric::mse;
  tf.value = -0.012345;
  const fs::path p = td.path / "t.json";
  write_transform_json(p, tf);
  const TransformFile r = read_transform_json(p);
  for (int i = 0; i < 9; ++i) REQUIRE(r.transform.A.m[i] == tf.transform.A.m[i]);
  for (int a = 0; a < 3; ++a) REQUIRE(r.transform.t[a] == tf.transform.t[a]);
  REQUIRE(r.metric == RegMetric::mse);
  REQUIRE(r.value == tf.value);
}

TEST_CASE("checkpoints round trip params bit-exactly", "[io]") {
  TempDir td;
  const NetArchitecture arch = NetArchitecture::default_localizer({4, 8, 8, 4});
  const LocalizerNet net = LocalizerNet::init(arch, 77);

  Checkpoint ck;
  ck.arch = arch;
  ck.params = net.params;
  ck.param_names = net.param_names;
  ck.loss.variant = LossVariant::dsnt;
  ck.loss.alpha = 2.5;
  ck.heatmap.sigma_mm = 2.0;
  ck.adam.lr = 3e-4;
  ck.seed = 123;
  ck.epoch = 17;
  ck.val_mre_mm = 1.875;
  ck.roi_size_vox = 24;
  ck.roi_spacing_mm = 0.5;
  save_checkpoint(td.path / "ck", ck);

  const Checkpoint r = load_checkpoint(td.path / "ck");
  REQUIRE(r.params.size() == ck.params.size());
  for (std::size_t i = 0; i < r.params.size(); ++i) {
    REQUIRE(r.param_names[i] == ck.param_names[i]);
    REQUIRE(r.params[i].shape == ck.params[i].shape);
    REQUIRE(std::equal(r.params[i].data.begin(), r.params[i].data.end(),
                       ck.params[i].data.begin()));
  }
  REQUIRE(r.loss.variant == LossVariant::dsnt);
  REQUIRE(r.loss.alpha == 2.5);
  REQUIRE(r.heatmap.sigma_mm == 2.0);
  REQUIRE(r.adam.lr == 3e-4);
  REQUIRE(r.seed == 123);
  REQUIRE(r.epoch == 17);
  REQUIRE(r.val_mre_mm == 1.875);
  REQUIRE(r.roi_size_vox == 24);
  REQUIRE(r.roi_spacing_mm == 0.5);

  // NaN val metric survives as null
  ck.val_mre_mm = std::numeric_limits<double>::quiet_NaN();
  save_checkpoint(td.path / "ck2", ck);
  REQUIRE(std::isnan(load_checkpoint(td.path / "ck2").val_mre_mm));

  // corrupting a blob is caught by the size check
  fs::resize_file(td.path / "ck" / (ck.param_names[0] + ".f32"), 4);
  REQUIRE_THROWS(load_checkpoint(td.path / "ck"));
}

TEST_CASE("phantom spec json round trips through the reader", "[io]") {
  TempDir td;
  PhantomSpec s;
  s.n_train = 12;
  s.n_val = 3;
  s.n_test = 4;
  s.head_shape = {96, 80, 72};
  s.sigma_label_mm = 0.75;
  s.seed = 99;
  detail::write_json_file(td.path / "spec.json", detail::phantom_spec_to_json(s));
  const PhantomSpec r = read_phantom_spec(td.path / "spec.json");
  REQUIRE(r.n_train == 12);
  REQUIRE(r.n_val == 3);
  REQUIRE(r.n_test == 4);
  REQUIRE(r.head_shape == Index3{96, 80, 72});
  REQUIRE(r.sigma_label_mm == 0.75);
  REQUIRE(r.seed == 99);

  // partial spec keeps defaults for the rest
  detail::write_text_file(td.path / "part.json", "{\n  \"n_train\": 5\n}\n");
  const PhantomSpec p = read_phantom_spec(td.path / "part.json");
  REQUIRE(p.n_train == 5);
  REQUIRE(p.n_val == PhantomSpec{}.n_val);
}

TEST_CASE("dataset generation writes a readable, exact store", "[io]") {
  TempDir td;
  PhantomSpec s;
  s.n_train = 2;
  s.n_val = 1;
  s.n_test = 1;
  s.head_shape = {96, 96, 96};
  s.semiaxes_lo_mm = {6.0, 5.0, 4.5};
  s.semiaxes_hi_mm = {8.0, 6.5, 5.5};
  s.lateral_offset_lo_mm = 14.0;
  s.lateral_offset_hi_mm = 18.0;
  s.center_jitter_mm = 4.0;
  s.seed = 21;
  const fs::path dir = td.path / "ds";
  const DatasetManifest man = generate_dataset(s, dir);
  REQUIRE(man.train_ids.size() == 2);
  REQUIRE(man.val_ids.size() == 1);
  REQUIRE(man.test_ids.size() == 1);

  const DatasetManifest r = read_dataset_manifest(dir);
  REQUIRE(r.train_ids == man.train_ids);
  REQUIRE(r.test_ids == man.test_ids);
  REQUIRE(r.spec.seed == 21);
  REQUIRE(r.ids_of("val") == man.val_ids);

  // stored case data equals in-memory regeneration
  const StoredCase sc = load_case(dir, man.train_ids[0]);
  const PhantomCase pc = generate_case(s, 0, false);
  REQUIRE(std::equal(sc.volume.data.begin(), sc.volume.data.end(), pc.volume.data.begin()));
  for (int a = 0; a < 3; ++a) {
    REQUIRE(sc.truth_left.coords[a] == pc.truth_left.coords[a]);
    REQUIRE(sc.pseudo_right.coords[a] == pc.pseudo_right.coords[a]);
  }
  REQUIRE(sc.truth_left.frame == Frame::world_mm);
}

TEST_CASE("json files are written deterministically with sorted keys", "[io]") {
  TempDir td;
  nlohmann::json a;
  a["zebra"] = 1;
  a["alpha"] = 2;
  a["mid"] = nlohmann::json{{"y", 1}, {"x", 2}};
  nlohmann::json b;
  b["mid"] = nlohmann::json{{"x", 2}, {"y", 1}};
  b["alpha"] = 2;
  b["zebra"] = 1;
  detail::write_json_file(td.path / "a.json", a);
  detail::write_json_file(td.path / "b.json", b);
  REQUIRE(detail::read_text_file(td.path / "a.json") ==
          detail::read_text_file(td.path / "b.json"));
  // trailing newline so the files behave in line-oriented tooling
  const std::string txt = detail::read_text_file(td.path / "a.json");
  REQUIRE(!txt.empty());
  REQUIRE(txt.back() == '\n');
}
