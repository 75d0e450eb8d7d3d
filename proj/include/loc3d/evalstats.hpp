#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "loc3d/volume.hpp"

namespace loc3d {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample convention (n-1); 0 when n < 2
};

// Mean and sample standard deviation (n-1 denominator).
inline MeanStd mean_std(const std::vector<double>& xs) {
  require(!xs.empty(), "mean_std: empty sample");
  double s = 0.0;
  for (double x : xs) {
    require(std::isfinite(x), "mean_std: non-finite value");
    s += x;
  }
  MeanStd out;
  out.mean = s / double(xs.size());
  if (xs.size() >= 2) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / double(xs.size() - 1));
  }
  return out;
}

// Reference human rater variability for this localization task (mm); rendered
// as context rows in the comparison tables, not recomputed here.
inline constexpr MeanStd kIntraRaterReference{2.04, 0.87};
inline constexpr MeanStd kInterRaterReference{2.42, 1.17};

inline constexpr std::array<double, 3> kSdrRadiiMm{2.0, 4.0, 6.0};

// Euclidean distances (mm) between matched prediction/truth pairs. Pairs must
// line up one-to-one: same id, both in world_mm.
inline std::vector<double> radial_errors(const std::vector<Landmark>& preds,
                                         const std::vector<Landmark>& truths) {
  require(preds.size() == truths.size(), "radial_errors: unmatched pair counts");
  std::vector<double> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i].frame == Frame::world_mm && truths[i].frame == Frame::world_mm,
            "radial_errors: landmarks must be in world_mm");
    require(preds[i].id == truths[i].id, "radial_errors: pair id mismatch: " + preds[i].id +
                                             " vs " + truths[i].id);
    require(finite3(preds[i].coords) && finite3(truths[i].coords),
            "radial_errors: non-finite coordinates");
    out.push_back(norm3(sub3(preds[i].coords, truths[i].coords)));
  }
  return out;
}

// Successful detection rate at one radius: 100 * |{e <= r}| / n (the boundary
// counts as success).
inline double sdr_at(const std::vector<double>& errors, double radius_mm) {
  require(!errors.empty(), "sdr: empty error list");
  require(radius_mm >= 0.0, "sdr: radius must be >= 0");
  std::int64_t hit = 0;
  for (double e : errors) {
    require(std::isfinite(e) && e >= 0.0, "sdr: errors must be finite and >= 0");
    if (e <= radius_mm) ++hit;
  }
  return 100.0 * double(hit) / double(errors.size());
}

// Rates for the standard radii triplet; non-decreasing in r by construction.
inline std::array<double, 3> sdr(const std::vector<double>& errors,
                                 const std::array<double, 3>& radii = kSdrRadiiMm) {
  return {sdr_at(errors, radii[0]), sdr_at(errors, radii[1]), sdr_at(errors, radii[2])};
}

inline MeanStd mre(const std::vector<double>& errors) {
  MeanStd m = mean_std(errors);
  require(m.mean >= 0.0, "mre: negative mean error");
  return m;
}

// Variability between two annotation sets of the same cases: MRE +- std of
// their pairwise radial distances.
inline MeanStd rater_variability(const std::vector<Landmark>& annotations_a,
                                 const std::vector<Landmark>& annotations_b) {
  return mre(radial_errors(annotations_a, annotations_b));
}

// ---------------------------------------------------------------------------
// Student-t two-sided p-value via the regularized incomplete beta function,
// evaluated with the Lentz continued fraction.
// ---------------------------------------------------------------------------

namespace detail {

inline double beta_contfrac(double a, double b, double x) {
  const double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-14) return h;
  }
  fail_runtime("regularized incomplete beta: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double a, double b, double x) {
  require(a > 0.0 && b > 0.0, "reg_inc_beta: a, b must be positive");
  require(x >= 0.0 && x <= 1.0, "reg_inc_beta: x must lie in [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  // Use the symmetry that converges fastest.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_contfrac(a, b, x) / a;
  return 1.0 - front * detail::beta_contfrac(b, a, 1.0 - x) / b;
}

inline double student_t_two_sided_p(double t, double df) {
  require(df > 0.0 && std::isfinite(t), "student_t_two_sided_p: invalid inputs");
  return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool degenerate = false;  // zero difference variance: t/p not defined
};

// Paired t-test on matched error samples: t = mean(d) / (sd(d)/sqrt(n)),
// df = n-1, two-sided p. Zero-variance differences are reported degenerate.
inline TTestResult paired_ttest(const std::vector<double>& errors_a,
                                const std::vector<double>& errors_b) {
  require(errors_a.size() == errors_b.size(), "paired_ttest: unequal sample sizes");
  require(errors_a.size() >= 2, "paired_ttest: need n >= 2 pairs");
  std::vector<double> d(errors_a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = errors_a[i] - errors_b[i];
  const MeanStd ms = mean_std(d);
  TTestResult r;
  r.df = double(d.size() - 1);
  if (ms.std <= 0.0) {
    r.degenerate = true;
    r.t = std::numeric_limits<double>::quiet_NaN();
    r.p = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = ms.mean / (ms.std / std::sqrt(double(d.size())));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

// ---------------------------------------------------------------------------
// Timing harness: sequential single-threaded wall-clock measurement.
// ---------------------------------------------------------------------------

inline double median_of(std::vector<double> xs) {
  require(!xs.empty(), "median_of: empty sample");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 == 1 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// Median wall-clock seconds per invocation of `fn` over `repeats` measured
// runs after one warm-up. Runs strictly sequentially on the calling thread.
inline double timing_harness(const std::function<void()>& fn, int repeats = 5) {
  require(repeats >= 5, "timing_harness: need at least 5 repeats");
  fn();  // warm-up, unmeasured
  std::vector<double> secs;
  secs.reserve(std::size_t(repeats));
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    secs.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  return median_of(secs);
}

// ---------------------------------------------------------------------------
// Per-method evaluation report.
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string method;        // "hm" | "dsnt" | "reg"
  double fraction = 1.0;     // training-fraction tag
  std::vector<std::string> ids;
  std::vector<double> errors_mm;
  MeanStd mre_mm;
  std::array<double, 3> sdr_pct{};
  std::vector<double> case_seconds;  // per-case inference seconds (not in deterministic output)
  double seconds_per_case = 0.0;

  void validate() const {
    require(ids.size() == errors_mm.size(), "EvalReport: ids/errors size mismatch");
    require(mre_mm.mean >= 0.0, "EvalReport: MRE must be >= 0");
    for (std::size_t k = 0; k < 3; ++k) {
      require(sdr_pct[k] >= 0.0 && sdr_pct[k] <= 100.0, "EvalReport: SDR out of [0,100]");
      if (k > 0) require(sdr_pct[k] >= sdr_pct[k - 1], "EvalReport: SDR must be non-decreasing");
    }
  }
};

inline EvalReport make_eval_report(std::string method, double fraction,
                                   std::vector<std::string> ids, std::vector<double> errors,
                                   std::vector<double> case_seconds) {
  EvalReport r;
  r.method = std::move(method);
  r.fraction = fraction;
  r.ids = std::move(ids);
  r.errors_mm = std::move(errors);
  r.mre_mm = mre(r.errors_mm);
  r.sdr_pct = sdr(r.errors_mm);
  r.case_seconds = std::move(case_seconds);
  if (!r.case_seconds.empty()) {
    double s = 0.0;
    for (double x : r.case_seconds) s += x;
    r.seconds_per_case = s / double(r.case_seconds.size());
  }
  r.validate();
  return r;
}

}  // namespace loc3d
