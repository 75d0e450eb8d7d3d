// Weighted-MSE heatmap loss, coordinate-regression loss, divergence term.
// Oracles frozen from independent computation.

#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "loc3d/loss.hpp"

using namespace loc3d;

namespace {

Heatmap3D dist_from(std::vector<float> vals, Index3 shape = {2, 2, 2}) {
  Heatmap3D h;
  h.volume = Volume3D(shape, {1, 1, 1}, {0, 0, 0});
  h.volume.data = std::move(vals);
  h.normalized = true;
  return h;
}

}  // namespace

TEST_CASE("wmse weights swap class frequencies and sum to 1", "[loss]") {
  // 17^3 Gaussian target: 203 positive voxels of 4913 (see heatmap suite)
  const Heatmap3D target =
      render_gaussian_target({8, 8, 8}, {17, 17, 17}, {1, 1, 1}, HeatmapConfig{});
  const WmseWeights w = wmse_weights(target);
  REQUIRE(w.n_p == 203);
  REQUIRE(w.n_z == 4913 - 203);
  REQUIRE(w.w_p == Catch::Approx(0.9586810502747812).margin(1e-12));
  REQUIRE(w.w_z == Catch::Approx(0.0413189497252188).margin(1e-12));
  REQUIRE(w.w_p + w.w_z == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(w.w_p > w.w_z);  // rare positives weighted up

  // weights depend on this target's own counts: different sigma, different w
  HeatmapConfig wide;
  wide.sigma_mm = 3.0;
  const WmseWeights w2 = wmse_weights(render_gaussian_target({8, 8, 8}, {17, 17, 17}, {1, 1, 1}, wide));
  REQUIRE(w2.n_p > w.n_p);
  REQUIRE(w2.w_p + w2.w_z == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("wmse loss: zero at the target, frozen value off it", "[loss]") {
  Heatmap3D target;
  target.volume = Volume3D({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  target.volume.data = {1, 0, 0, 0, 0, 0, 0, 0};
  target.normalized = false;
  const WmseWeights w = wmse_weights(target);
  REQUIRE(w.w_p == Catch::Approx(0.875).margin(1e-15));
  REQUIRE(w.w_z == Catch::Approx(0.125).margin(1e-15));

  REQUIRE(wmse_loss(target.volume, target, w) == 0.0);

  Volume3D pred = target.volume;
  pred.data[0] = 1.5f;   // +0.5 on the positive voxel
  pred.data[3] = 0.25f;  // +0.25 on a zero voxel
  // frozen: (0.875*0.25 + 0.125*0.0625) / 8
  REQUIRE(wmse_loss(pred, target, w) == Catch::Approx(0.0283203125).margin(1e-9));
}

TEST_CASE("wmse rejects degenerate targets", "[loss]") {
  Heatmap3D all_pos;
  all_pos.volume = Volume3D({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  std::fill(all_pos.volume.data.begin(), all_pos.volume.data.end(), 0.5f);
  REQUIRE_THROWS_AS(wmse_weights(all_pos), std::invalid_argument);
  Heatmap3D all_zero;
  all_zero.volume = Volume3D({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
  REQUIRE_THROWS_AS(wmse_weights(all_zero), std::invalid_argument);
}

TEST_CASE("coord_mse frozen oracle and frame checks", "[loss]") {
  const Landmark a{"p", Frame::normalized, {0.1, 0.2, 0.3}};
  const Landmark b{"t", Frame::normalized, {0.4, 0.6, 0.9}};
  REQUIRE(coord_mse(a, b) == Catch::Approx(0.2033333333333333).margin(1e-12));
  REQUIRE(coord_mse(a, a) == 0.0);
  const Landmark w{"w", Frame::world_mm, {1, 2, 3}};
  REQUIRE_THROWS_AS(coord_mse(a, w), std::invalid_argument);
}

TEST_CASE("JS divergence: identity, symmetry, frozen value, ln 2 bound", "[loss]") {
  const Heatmap3D P = dist_from({0.05f, 0.20f, 0.10f, 0.15f, 0.25f, 0.05f, 0.12f, 0.08f});
  const Heatmap3D Q = dist_from({0.30f, 0.05f, 0.05f, 0.10f, 0.10f, 0.25f, 0.05f, 0.10f});

  REQUIRE(js_divergence(P, P) == 0.0);
  REQUIRE(js_divergence(P, Q) == Catch::Approx(0.141360812).margin(1e-6));
  REQUIRE(js_divergence(P, Q) == Catch::Approx(js_divergence(Q, P)).margin(1e-12));

  // disjoint point masses attain the maximum ln 2
  const Heatmap3D d1 = dist_from({1, 0, 0, 0, 0, 0, 0, 0});
  const Heatmap3D d2 = dist_from({0, 0, 0, 0, 0, 0, 0, 1});
  REQUIRE(js_divergence(d1, d2) == Catch::Approx(std::log(2.0)).margin(1e-9));
  REQUIRE(js_divergence(d1, d1) == 0.0);
}

TEST_CASE("combined coordinate loss composes mse + alpha * divergence", "[loss]") {
  const Landmark p{"p", Frame::normalized, {0.1, 0.2, 0.3}};
  const Landmark t{"t", Frame::normalized, {0.4, 0.6, 0.9}};
  const Heatmap3D P = dist_from({0.05f, 0.20f, 0.10f, 0.15f, 0.25f, 0.05f, 0.12f, 0.08f});
  const Heatmap3D Q = dist_from({0.30f, 0.05f, 0.05f, 0.10f, 0.10f, 0.25f, 0.05f, 0.10f});

  LossConfig cfg;
  cfg.variant = LossVariant::dsnt;
  cfg.alpha = 1.0;
  REQUIRE(dsnt_loss(p, t, P, Q, cfg) ==
          Catch::Approx(0.2033333333 + 0.141360812).margin(1e-6));
  cfg.alpha = 2.5;
  REQUIRE(dsnt_loss(p, t, P, Q, cfg) ==
          Catch::Approx(0.2033333333 + 2.5 * 0.141360812).margin(1e-6));
  cfg.alpha = 0.0;  // divergence disabled entirely
  REQUIRE(dsnt_loss(p, t, P, Q, cfg) == Catch::Approx(0.2033333333).margin(1e-9));
}

TEST_CASE("renormalize_to_distribution preserves proportions", "[loss]") {
  const Heatmap3D target =
      render_gaussian_target({4, 4, 4}, {9, 9, 9}, {1, 1, 1}, HeatmapConfig{});
  const Heatmap3D d = renormalize_to_distribution(target);
  REQUIRE(d.normalized);
  REQUIRE(d.sum() == Catch::Approx(1.0).margin(1e-5));
  // ratios preserved: center voxel over its 1 mm neighbor
  const double r0 = double(target.volume.at(4, 4, 4)) / double(target.volume.at(5, 4, 4));
  const double r1 = double(d.volume.at(4, 4, 4)) / double(d.volume.at(5, 4, 4));
  REQUIRE(r1 == Catch::Approx(r0).margin(1e-5));
}

TEST_CASE("loss variant names round trip", "[loss]") {
  REQUIRE(loss_variant_from_name(loss_variant_name(LossVariant::hm_wmse)) == LossVariant::hm_wmse);
  REQUIRE(loss_variant_from_name(loss_variant_name(LossVariant::dsnt)) == LossVariant::dsnt);
  REQUIRE_THROWS_AS(loss_variant_from_name("nope"), std::invalid_argument);
}
