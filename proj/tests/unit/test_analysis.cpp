#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "ibpd/analysis.hpp"

using namespace ibpd;

namespace {

ModelConfig tiny(std::size_t D = 6, std::size_t T = 3, std::size_t K = 5) {
  ModelConfig c;
  c.input_dim = D;
  c.task_classes = T;
  c.ibp.K = K;
  c.ibp.alpha = 3.0;
  c.confounder_hidden = {8};
  c.task_hidden = {8, T};
  c.decoder_hidden = {8};
  return c;
}

Tensor random_matrix(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal();
  return Tensor::from({n, d}, v);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("probe: one-hot features of the target are perfectly decodable") {
  const std::size_t n = 300, C = 5;
  std::vector<int> y(n);
  std::vector<double> v(n * C, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>((i * 7) % C);
    v[i * C + y[i]] = 1.0;
  }
  CHECK(probe_accuracy(Tensor::from({n, C}, v), y, {}) == 1.0);
}

TEST_CASE("probe: pure noise features score near chance") {
  const std::size_t n = 3000;
  std::vector<int> y(n);
  Rng rng(4);
  for (auto& t : y) t = static_cast<int>(rng.index(10));
  const double acc = probe_accuracy(random_matrix(n, 8, 5), y, {});
  CHECK(std::abs(acc - 0.1) < 0.03);
}

TEST_CASE("probe: single-class targets and shape errors") {
  const Tensor x = random_matrix(20, 3, 1);
  CHECK_THROWS_AS(probe_accuracy(x, std::vector<int>(20, 4), {}), DomainError);
  CHECK_THROWS_AS(probe_accuracy(x, std::vector<int>(19, 0), {}), DimensionError);
  ProbeConfig bad;
  bad.fit_fraction = 1.0;
  CHECK_THROWS_AS(probe_accuracy(x, std::vector<int>(20, 0), bad), ConfigError);
}

TEST_CASE("probe: unseen evaluation classes count as errors") {
  const Tensor fit = Tensor::matrix({{0.0}, {1.0}, {0.0}, {1.0}});
  const Tensor eval = Tensor::matrix({{0.0}, {1.0}, {1.0}, {0.0}});
  // Targets are arbitrary integers; 9 never appears in the fit set.
  const double acc = probe_fit_eval(fit, {3, 8, 3, 8}, eval, {3, 8, 9, 9}, {});
  CHECK(acc == doctest::Approx(0.5));
}

TEST_CASE("probe: invariant to a joint row permutation of the fit set") {
  const std::size_t n = 200;
  const Tensor x = random_matrix(n, 4, 9);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x.at(i, 0) + 0.5 * x.at(i, 1) > 0 ? 1 : 0;
  const Tensor fit = Tensor::from({150, 4}, std::vector<double>(x.data().begin(), x.data().begin() + 600));
  const Tensor eval = Tensor::from({50, 4}, std::vector<double>(x.data().begin() + 600, x.data().end()));
  std::vector<int> fy(y.begin(), y.begin() + 150), ey(y.begin() + 150, y.end());
  const double a = probe_fit_eval(fit, fy, eval, ey, {});
  std::vector<double> pv;
  std::vector<int> py;
  for (std::size_t r = 150; r-- > 0;) {
    for (std::size_t c = 0; c < 4; ++c) pv.push_back(fit.at(r, c));
    py.push_back(fy[r]);
  }
  const double b = probe_fit_eval(Tensor::from({150, 4}, pv), py, eval, ey, {});
  CHECK(std::abs(a - b) <= 1.0 / 50 + 1e-12);
  CHECK(a > 0.9);
}

TEST_CASE("probe report over an untrained model has the expected shape") {
  const Model m(tiny(), 1);
  std::vector<LabeledExample> ex;
  Rng rng(2);
  for (int i = 0; i < 60; ++i) {
    LabeledExample e;
    e.task_label = i % 3;
    e.subject_id = i % 2;
    for (int d = 0; d < 6; ++d) e.x.push_back(rng.normal() + e.task_label);
    ex.push_back(e);
  }
  const Representations reps = extract_representations(m, ex, 3);
  CHECK(reps.y_t.shape() == Shape{60, 3});
  CHECK(reps.y_c.shape() == Shape{60, 5});
  REQUIRE(reps.Z.has_value());
  // The same seed gives the same draws.
  CHECK(max_abs_diff(extract_representations(m, ex, 3).y_c, reps.y_c) == 0.0);
  std::vector<int> t, c;
  for (const auto& e : ex) {
    t.push_back(e.task_label);
    c.push_back(e.subject_id);
  }
  const ProbeReport r = probe(reps, t, c, {});
  CHECK(r.classes[0] == 3);
  CHECK(r.classes[1] == 2);
  CHECK(r.chance[0] == doctest::Approx(1.0 / 3));
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      CHECK(r.at(a, b) >= 0.0);
      CHECK(r.at(a, b) <= 1.0);
    }
  }
  CHECK_THROWS_AS(extract_representations(Model([] {
                                            auto k = tiny();
                                            k.kind = ModelKind::classifier;
                                            return k;
                                          }(), 0),
                                          ex, 1),
                  ConfigError);
}

TEST_CASE("recon breakdown on stub reconstructions") {
  // Two examples of width 4; region = {0, 1}; example 1 is flagged.
  const Tensor x = Tensor::matrix({{1, 1, 0, 0}, {2, 2, 0, 0}});
  const Tensor r = Tensor::matrix({{0, 1, 0, 2}, {2, 0, 0, 0}});
  const std::vector<std::size_t> region{0, 1};
  const ReconBreakdown b = recon_breakdown(x, r, {false, true}, region);
  CHECK(b.whole == doctest::Approx((1.0 + 4.0 + 4.0) / 8.0));
  CHECK(*b.region_clean == doctest::Approx(1.0 / 2.0));
  CHECK(*b.region_artifact == doctest::Approx(4.0 / 2.0));
  CHECK(*b.region_all == doctest::Approx(5.0 / 4.0));
  CHECK(b.n_clean == 1);
  CHECK(b.n_artifact == 1);
  // Exact reconstruction scores zero everywhere.
  const ReconBreakdown z = recon_breakdown(x, x, {false, true}, region);
  CHECK(z.whole == 0.0);
  CHECK(*z.region_artifact == 0.0);
  // No region: only the whole-input score.
  CHECK_FALSE(recon_breakdown(x, r, {false, true}, {}).region_all.has_value());
  // All clean: no artifact score.
  CHECK_FALSE(recon_breakdown(x, r, {false, false}, region).region_artifact.has_value());
  const std::vector<std::size_t> far{9};
  CHECK_THROWS_AS(recon_breakdown(x, r, {false, true}, far), DimensionError);
}

TEST_CASE("recon MSE is convex along a blend of reconstructions") {
  const Tensor x = random_matrix(10, 6, 1);
  const Tensor r0 = random_matrix(10, 6, 2);
  const Tensor r1 = random_matrix(10, 6, 3);
  const std::vector<bool> flags(10, false);
  const double e0 = recon_breakdown(x, r0, flags, {}).whole;
  const double e1 = recon_breakdown(x, r1, flags, {}).whole;
  for (double t : {0.25, 0.5, 0.75}) {
    const Tensor mix = (1.0 - t) * r0 + t * r1;
    CHECK(recon_breakdown(x, mix, flags, {}).whole <= (1.0 - t) * e0 + t * e1 + 1e-12);
  }
}

TEST_CASE("active feature statistics") {
  const Tensor Z = Tensor::matrix({{1, 1, 0}, {1, 0, 0}, {0, 0, 0}, {1, 1, 1}, {1, 1, 0}});
  const ActiveFeatureStats s = active_feature_stats(Z, {false, false, false, true, true});
  CHECK(s.group[0].n == 3);
  CHECK(s.group[0].mean == doctest::Approx(1.0));
  CHECK(s.group[0].mode == 0);  // counts 2,1,0 tie; smallest wins
  CHECK(s.group[0].histogram == std::vector<std::size_t>{1, 1, 1, 0});
  CHECK(s.group[1].mean == doctest::Approx(2.5));
  CHECK(s.group[1].mode == 2);
  CHECK(s.overall.n == 5);
  CHECK(s.overall.mode == 2);
  CHECK_THROWS_AS(active_feature_stats(Tensor::matrix({{0.5}}), {false}), DomainError);
  CHECK_THROWS_AS(active_feature_stats(Z, {false}), DimensionError);
}

TEST_CASE("triggering units: planted unit is found and ranked first") {
  const std::size_t n = 400, K = 6;
  Rng rng(12);
  std::vector<double> z(n * K);
  std::vector<bool> flags(n);
  for (std::size_t i = 0; i < n; ++i) {
    flags[i] = i % 2 == 0;
    for (std::size_t k = 0; k < K; ++k) z[i * K + k] = rng.uniform() < 0.4 ? 1.0 : 0.0;
    z[i * K + 4] = flags[i] ? 1.0 : 0.0;                                  // perfect trigger
    z[i * K + 1] = flags[i] ? 0.0 : (rng.uniform() < 0.97 ? 1.0 : 0.0);  // inverse trigger
  }
  const TriggerUnitReport r = find_triggering_units(Tensor::from({n, K}, z), flags, 0.9);
  CHECK(r.ranking.front() == 4);
  CHECK(r.gap[4] == 1.0);
  CHECK(r.rate1[4] == 1.0);
  CHECK(r.rate0[4] == 0.0);
  REQUIRE(r.selected.size() == 2);
  CHECK(r.selected[0] == 4);
  CHECK(r.selected[1] == 1);
  CHECK(r.ranking.size() == K);
  const auto ops = neutralizing_ops(r);
  REQUIRE(ops.size() == 2);
  CHECK(ops[0].unit == 4);
  CHECK_FALSE(ops[0].on);
  CHECK(ops[1].unit == 1);
  CHECK(ops[1].on);
  const auto off = all_off_ops(3);
  CHECK(off.size() == 3);
  CHECK(std::none_of(off.begin(), off.end(), [](const UnitOp& o) { return o.on; }));
  CHECK_THROWS_AS(find_triggering_units(Tensor::from({n, K}, z), std::vector<bool>(n, false)), DomainError);
}

TEST_CASE("triggering units: ties rank by index") {
  const Tensor Z = Tensor::matrix({{1, 1, 0}, {0, 0, 0}});
  const TriggerUnitReport r = find_triggering_units(Z, {true, false}, 0.5);
  CHECK(r.ranking == std::vector<std::size_t>{0, 1, 2});
  CHECK(r.selected == std::vector<std::size_t>{0, 1});
}

TEST_CASE("ablation: empty ops reconstruct and all-off decodes a zero code") {
  const Model m(tiny(), 4);
  const Tensor x = random_matrix(7, 6, 8);
  const std::vector<int> labels{0, 1, 2, 0, 1, 2, 0};
  CHECK(max_abs_diff(ablate_generate(m, x, {}, 5, labels), reconstruct(m, x, 5, labels)) == 0.0);
  const Tensor off = ablate_generate(m, x, all_off_ops(5), 5, labels);
  const Tensor direct = m.decode(Tensor::zeros({7, 5}), one_hot(labels, 3));
  CHECK(max_abs_diff(off, direct) < 1e-15);
  CHECK_THROWS_AS(ablate_generate(m, x, {{5, false}}, 5, labels), DimensionError);
  auto cv = tiny();
  cv.kind = ModelKind::cvae;
  CHECK_THROWS_AS(ablate_generate(Model(cv, 0), x, {{0, false}}, 5, labels), ConfigError);
  CHECK_NOTHROW(reconstruct(Model(cv, 0), x, 5));
}

TEST_CASE("ablation: forcing a unit on matches decoding the edited code") {
  const Model m(tiny(), 4);
  const Tensor x = random_matrix(5, 6, 9);
  const std::vector<int> labels{2, 2, 1, 0, 1};
  const EncoderOutputs enc = m.encode(x);
  Rng rng(6);
  const LatentSample lat = m.sample_latent(enc, NoiseBundle::draw(rng, 5, 5), true);
  std::vector<double> z(lat.Z->data().begin(), lat.Z->data().end());
  for (std::size_t r = 0; r < 5; ++r) z[r * 5 + 2] = 1.0;
  const Tensor expect = m.decode(Tensor::from({5, 5}, z) * lat.A, one_hot(labels, 3));
  CHECK(max_abs_diff(ablate_generate(m, x, {{2, true}}, 6, labels), expect) < 1e-15);
}

TEST_CASE("swap: identical sources give the predicted-label reconstruction") {
  const Model m(tiny(), 2);
  const Tensor x = random_matrix(4, 6, 3);
  CHECK(max_abs_diff(swap_representations(m, x, x, 9), reconstruct(m, x, 9)) == 0.0);
  const Tensor grid = swap_grid(m, x, random_matrix(3, 6, 4), 9);
  CHECK(grid.shape() == Shape{12, 6});
  // Row s of the grid keeps style s; with two identical task sources both
  // columns of a row match.
  const Tensor same = swap_grid(m, x, Tensor::from({2, 6}, std::vector<double>(12, 0.3)), 9);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t d = 0; d < 6; ++d) CHECK(same.at(2 * s, d) == same.at(2 * s + 1, d));
  }
  CHECK_THROWS_AS(swap_representations(m, x, random_matrix(3, 6, 1), 1), DimensionError);
}

TEST_CASE("channel dominance and quantile") {
  std::vector<double> gray(kColorDigitDim, 0.0), red(kColorDigitDim, 0.0);
  for (std::size_t p = 0; p < kDigitPixels; p += 3) {
    for (std::size_t c = 0; c < 3; ++c) gray[c * kDigitPixels + p] = 0.8;
    red[p] = 0.8;
  }
  CHECK(channel_dominance(gray) == 0.0);
  const double expect = 0.8 * static_cast<double>((kDigitPixels + 2) / 3) / kDigitPixels;
  CHECK(channel_dominance(red) == doctest::Approx(expect).epsilon(1e-12));
  CHECK(dominant_channel(red) == 0);
  std::vector<double> blue(kColorDigitDim, 0.0);
  blue[2 * kDigitPixels + 5] = 1.0;
  CHECK(dominant_channel(blue) == 2);
  CHECK_THROWS_AS(channel_dominance(std::vector<double>(10)), DimensionError);

  CHECK(quantile({3, 1, 2}, 0.5) == 2.0);
  CHECK(quantile({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK(quantile({4}, 1.0) == 4.0);
  CHECK_THROWS_AS(quantile({}, 0.5), DimensionError);
  CHECK_THROWS_AS(quantile({1}, 1.5), DomainError);
}
