// Volume container, coordinate frames, resampling, cropping, mirroring.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "loc3d/volume.hpp"

using namespace loc3d;

namespace {

// f(x,y,z) = 2x + 3y + 5z + 1 is multilinear, so trilinear interpolation
// reproduces it exactly at any interior point.
Volume3D linear_field(Index3 shape, Vec3 spacing = {1, 1, 1}, Vec3 origin = {0, 0, 0}) {
  Volume3D v(shape, spacing, origin);
  for (int x = 0; x < shape[0]; ++x)
    for (int y = 0; y < shape[1]; ++y)
      for (int z = 0; z < shape[2]; ++z) v.at(x, y, z) = float(2 * x + 3 * y + 5 * z + 1);
  return v;
}

}  // namespace

TEST_CASE("normalized coordinates put corner voxel centers at -1 and +1", "[volume]") {
  const Index3 shape{5, 9, 3};
  for (int a = 0; a < 3; ++a) {
    Vec3 lo{0, 0, 0}, hi{0, 0, 0};
    hi[a] = double(shape[a] - 1);
    REQUIRE(voxel_to_normalized(lo, shape)[a] == Catch::Approx(-1.0).margin(1e-15));
    REQUIRE(voxel_to_normalized(hi, shape)[a] == Catch::Approx(1.0).margin(1e-15));
  }
  // odd axis: middle voxel sits at 0
  REQUIRE(voxel_to_normalized({2, 4, 1}, shape)[0] == Catch::Approx(0.0).margin(1e-15));
  REQUIRE(voxel_to_normalized({2, 4, 1}, shape)[1] == Catch::Approx(0.0).margin(1e-15));
  // uniform spacing between adjacent voxel centers: 2/(N-1)
  const double step = voxel_to_normalized({1, 0, 0}, shape)[0] - voxel_to_normalized({0, 0, 0}, shape)[0];
  REQUIRE(step == Catch::Approx(2.0 / 4.0).margin(1e-15));
}

TEST_CASE("voxel<->normalized<->world round trips", "[volume]") {
  const Index3 shape{7, 6, 5};
  Volume3D v(shape, {0.5, 1.0, 2.0}, {-3.0, 4.0, 10.0});
  const Vec3 p{1.25, 4.75, 0.5};
  const Vec3 n = voxel_to_normalized(p, shape);
  const Vec3 back = normalized_to_voxel(n, shape);
  const Vec3 w = voxel_to_world(p, v);
  const Vec3 back2 = world_to_voxel(w, v);
  for (int a = 0; a < 3; ++a) {
    REQUIRE(back[a] == Catch::Approx(p[a]).margin(1e-12));
    REQUIRE(back2[a] == Catch::Approx(p[a]).margin(1e-12));
  }
  // world oracle: origin + index * spacing
  REQUIRE(w[0] == Catch::Approx(-3.0 + 1.25 * 0.5).margin(1e-12));
  REQUIRE(w[1] == Catch::Approx(4.0 + 4.75 * 1.0).margin(1e-12));
  REQUIRE(w[2] == Catch::Approx(10.0 + 0.5 * 2.0).margin(1e-12));
}

TEST_CASE("convert_landmark chains frames consistently", "[volume]") {
  Volume3D v({9, 9, 9}, {2, 2, 2}, {1, 2, 3});
  Landmark l{"t", Frame::world_mm, {5.0, 8.0, 11.0}};
  const Landmark vx = convert_landmark(l, Frame::voxel, v);
  REQUIRE(vx.coords[0] == Catch::Approx(2.0).margin(1e-12));
  REQUIRE(vx.coords[1] == Catch::Approx(3.0).margin(1e-12));
  REQUIRE(vx.coords[2] == Catch::Approx(4.0).margin(1e-12));
  const Landmark nr = convert_landmark(vx, Frame::normalized, v);
  const Landmark back = convert_landmark(nr, Frame::world_mm, v);
  for (int a = 0; a < 3; ++a) REQUIRE(back.coords[a] == Catch::Approx(l.coords[a]).margin(1e-12));
  REQUIRE(back.id == "t");
}

TEST_CASE("trilinear sampling is exact on lattice points and linear fields", "[volume]") {
  const Volume3D v = linear_field({4, 5, 6});
  REQUIRE(trilinear_sample(v, {2, 3, 4}, Border::zero) == Catch::Approx(2 * 2 + 3 * 3 + 5 * 4 + 1));
  // frozen: f(1.25, 2.5, 0.75) = 2.5 + 7.5 + 3.75 + 1 = 14.75
  REQUIRE(trilinear_sample(v, {1.25, 2.5, 0.75}, Border::zero) == Catch::Approx(14.75).margin(1e-6));
  REQUIRE(trilinear_sample(v, {1.25, 2.5, 0.75}, Border::clamp) == Catch::Approx(14.75).margin(1e-6));
}

TEST_CASE("trilinear border handling: zero fades out, clamp extends edges", "[volume]") {
  Volume3D ones({3, 3, 3}, {1, 1, 1}, {0, 0, 0});
  std::fill(ones.data.begin(), ones.data.end(), 1.0f);
  // halfway outside the face: zero border mixes 1 and 0 equally
  REQUIRE(trilinear_sample(ones, {-0.5, 1, 1}, Border::zero) == Catch::Approx(0.5).margin(1e-6));
  REQUIRE(trilinear_sample(ones, {-0.5, 1, 1}, Border::clamp) == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(trilinear_sample(ones, {-5, 1, 1}, Border::zero) == Catch::Approx(0.0).margin(1e-6));
  REQUIRE(trilinear_sample(ones, {-5, 1, 1}, Border::clamp) == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("crop_roi origin convention and voxel copy", "[volume]") {
  const Volume3D v = linear_field({20, 20, 20});

  auto [roi8, box8] = crop_roi(v, {10, 10, 10}, {8, 8, 8});
  REQUIRE(box8.origin_voxel[0] == 6);  // 10 - (8+1)/2
  auto [roi7, box7] = crop_roi(v, {10, 10, 10}, {7, 7, 7});
  REQUIRE(box7.origin_voxel[0] == 6);  // 10 - (7+1)/2

  // copied voxels match the parent; world coordinates preserved
  for (int a = 0; a < 3; ++a) REQUIRE(roi8.shape[a] == 8);
  REQUIRE(roi8.at(0, 0, 0) == v.at(6, 6, 6));
  REQUIRE(roi8.at(7, 3, 2) == v.at(13, 9, 8));
  const Vec3 w_roi = voxel_to_world({1, 2, 3}, roi8);
  const Vec3 w_par = voxel_to_world({7, 8, 9}, v);
  for (int a = 0; a < 3; ++a) REQUIRE(w_roi[a] == Catch::Approx(w_par[a]).margin(1e-12));
}

TEST_CASE("crop_roi zero-pads outside the parent", "[volume]") {
  const Volume3D v = linear_field({6, 6, 6});
  auto [roi, box] = crop_roi(v, {0, 0, 0}, {6, 6, 6});
  REQUIRE(box.origin_voxel[0] == -3);
  REQUIRE(roi.at(0, 0, 0) == 0.0f);          // outside
  REQUIRE(roi.at(3, 3, 3) == v.at(0, 0, 0)); // parent origin
  REQUIRE(roi.at(5, 5, 5) == v.at(2, 2, 2));
}

TEST_CASE("flip_x is an involution and conjugates the argmax", "[volume]") {
  Volume3D v({6, 4, 4}, {1, 1, 1}, {0, 0, 0});
  Rng rng(99);
  for (auto& x : v.data) x = float(rng.uniform(0.0, 1.0));
  const Volume3D f = flip_x(v);
  const Volume3D ff = flip_x(f);
  REQUIRE(std::equal(v.data.begin(), v.data.end(), ff.data.begin()));

  // argmax conjugation
  auto argmax_of = [](const Volume3D& u) {
    Index3 best{0, 0, 0};
    float bv = u.data[0];
    for (int x = 0; x < u.shape[0]; ++x)
      for (int y = 0; y < u.shape[1]; ++y)
        for (int z = 0; z < u.shape[2]; ++z)
          if (u.at(x, y, z) > bv) bv = u.at(x, y, z), best = {x, y, z};
    return best;
  };
  const Index3 a = argmax_of(v), b = argmax_of(f);
  REQUIRE(b[0] == v.shape[0] - 1 - a[0]);
  REQUIRE(b[1] == a[1]);
  REQUIRE(b[2] == a[2]);

  const Landmark lm{"x", Frame::voxel, {2.25, 1.0, 3.0}};
  const Landmark fl = flip_landmark_x(lm, 6);
  REQUIRE(fl.coords[0] == Catch::Approx(2.75).margin(1e-12));
  const Landmark flfl = flip_landmark_x(fl, 6);
  REQUIRE(flfl.coords[0] == Catch::Approx(lm.coords[0]).margin(1e-12));
}

TEST_CASE("roi<->parent voxel maps round trip, including mirrored crops", "[volume]") {
  RoiBox box;
  box.origin_voxel = {5, -2, 7};
  box.size = {16, 16, 16};
  for (bool flipped : {false, true}) {
    box.flipped_x = flipped;
    const Vec3 roi_pt{3.5, 12.0, 0.25};
    const Vec3 parent = roi_to_parent_voxel(box, roi_pt);
    const Vec3 back = parent_to_roi_voxel(box, parent);
    for (int a = 0; a < 3; ++a) REQUIRE(back[a] == Catch::Approx(roi_pt[a]).margin(1e-12));
  }
  // unflipped oracle
  box.flipped_x = false;
  const Vec3 p = roi_to_parent_voxel(box, {1, 2, 3});
  REQUIRE(p[0] == 6.0);
  REQUIRE(p[1] == 0.0);
  REQUIRE(p[2] == 10.0);
  // flipped: roi x=1 refers to parent x = origin + (size-1) - 1 = 5 + 14 = 19
  box.flipped_x = true;
  REQUIRE(roi_to_parent_voxel(box, {1, 2, 3})[0] == 19.0);
}

TEST_CASE("resample_isotropic reproduces a linear field", "[volume]") {
  // anisotropic 2 mm slices in z
  const Volume3D v = linear_field({8, 8, 4}, {1, 1, 2}, {0, 0, 0});
  const Volume3D iso = resample_isotropic(v, 1.0);
  REQUIRE(iso.shape[0] == 8);
  REQUIRE(iso.shape[1] == 8);
  REQUIRE(iso.shape[2] == 8);
  REQUIRE(iso.spacing_mm[2] == Catch::Approx(1.0));
  // interior voxel (2,3,3): source position z = 3*1/2 = 1.5 -> f = 2*2+3*3+5*1.5+1 = 21.5
  REQUIRE(iso.at(2, 3, 3) == Catch::Approx(21.5).margin(1e-5));
  // world frame preserved: origin unchanged
  REQUIRE(iso.origin_mm[2] == Catch::Approx(0.0));
}

TEST_CASE("normalize_intensity maps min->0 max->1 and constants->0", "[volume]") {
  Volume3D v({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  v.data = {2, 4, 6, 8, 10, 4, 6, 12};
  const Volume3D n = normalize_intensity(v);
  REQUIRE(n.data[0] == Catch::Approx(0.0));
  REQUIRE(n.data[7] == Catch::Approx(1.0));
  REQUIRE(n.data[1] == Catch::Approx(0.2));  // (4-2)/10

  Volume3D c({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  std::fill(c.data.begin(), c.data.end(), 7.0f);
  const Volume3D nc = normalize_intensity(c);
  for (float x : nc.data) REQUIRE(x == 0.0f);
}

TEST_CASE("invalid geometry and frames are rejected", "[volume]") {
  Volume3D bad({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  bad.data.pop_back();
  REQUIRE_THROWS_AS(bad.validate_geometry(), std::invalid_argument);

  Landmark world{"w", Frame::world_mm, {1, 1, 1}};
  REQUIRE_THROWS_AS(flip_landmark_x(world, 5), std::invalid_argument);
}
