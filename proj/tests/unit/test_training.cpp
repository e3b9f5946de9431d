#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <cstring>
#include <numeric>
#include <sstream>

#include "ibpd/training.hpp"

using namespace ibpd;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ibpd_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ModelConfig small_config(std::size_t D, std::size_t T, ModelKind kind = ModelKind::cibp_vae) {
  ModelConfig c;
  c.kind = kind;
  c.input_dim = D;
  c.task_classes = T;
  c.ibp.K = 4;
  c.ibp.alpha = 2.0;
  c.confounder_hidden = {8};
  c.task_hidden = {8, T};
  c.decoder_hidden = {8};
  return c;
}

// Two Gaussian blobs at +-2 along every axis; separable by the sign of the sum.
std::vector<LabeledExample> blobs(std::size_t n, std::size_t D, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledExample e;
    e.task_label = static_cast<int>(i % 2);
    e.subject_id = static_cast<int>(i);
    for (std::size_t j = 0; j < D; ++j) e.x.push_back((e.task_label ? 2.0 : -2.0) + 0.5 * rng.normal());
    out.push_back(e);
  }
  return out;
}

SplitSet example_split(const std::vector<LabeledExample>& ex) {
  return split_by_subject(ex, {0.6, 0.2, 0.2}, 3, true);
}

std::vector<Parameter> scalar_param(double w) {
  return {{"w", Tensor::vector({w}, true)}};
}

}  // namespace

TEST_CASE("adam: constant gradient moves against its sign") {
  auto params = scalar_param(0.0);
  AdamState st;
  TrainConfig cfg;
  for (int i = 0; i < 10; ++i) {
    params[0].value.zero_grad();
    params[0].value.mutable_grad()[0] = 2.5;
    adam_step(params, st, cfg);
  }
  CHECK(params[0].value[0] < 0.0);
  CHECK(st.step == 10);
}

TEST_CASE("adam minimizes (w-3)^2 within 2000 steps") {
  auto params = scalar_param(0.0);
  AdamState st;
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  for (int i = 0; i < 2000; ++i) {
    params[0].value.zero_grad();
    const Tensor d = params[0].value - 3.0;
    sum(d * d).backward();
    adam_step(params, st, cfg);
  }
  CHECK(std::abs(params[0].value[0] - 3.0) < 1e-3);
}

TEST_CASE("adam: zero and missing gradients leave parameters unchanged") {
  auto params = scalar_param(1.25);
  AdamState st;
  TrainConfig cfg;
  adam_step(params, st, cfg);  // no gradient ever computed
  CHECK(params[0].value[0] == 1.25);
  params[0].value.zero_grad();
  adam_step(params, st, cfg);
  CHECK(params[0].value[0] == 1.25);
}

TEST_CASE("adam aborts on a non-finite gradient without touching parameters") {
  std::vector<Parameter> params{{"a", Tensor::vector({1.0}, true)}, {"decoder/out/bias", Tensor::vector({2.0}, true)}};
  params[0].value.mutable_grad()[0] = 0.5;
  params[1].value.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState st;
  try {
    adam_step(params, st, TrainConfig{});
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(std::string(e.what()).find("decoder/out/bias") != std::string::npos);
  }
  CHECK(params[0].value[0] == 1.0);
  CHECK(params[1].value[0] == 2.0);
}

TEST_CASE("clip_gradients scales to the max norm and reports the original") {
  std::vector<Parameter> params{{"a", Tensor::vector({0.0, 0.0}, true)}, {"b", Tensor::vector({0.0}, true)}};
  params[0].value.mutable_grad()[0] = 3.0;
  params[0].value.mutable_grad()[1] = 4.0;
  params[1].value.mutable_grad()[0] = 12.0;
  CHECK(clip_gradients(params, 6.5) == doctest::Approx(13.0).epsilon(1e-15));
  CHECK(params[0].value.grad()[0] == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(params[1].value.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
  CHECK(clip_gradients(params, 100.0) == doctest::Approx(6.5).epsilon(1e-14));
  CHECK(params[1].value.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("evaluate: perfect and uniform logit stubs, order invariance") {
  // A classifier whose trunk is the identity on one-hot inputs.
  const std::size_t T = 10;
  ModelConfig cfg = small_config(T, T, ModelKind::classifier);
  cfg.task_hidden = {T, T};
  Model perfect(cfg, 0);
  for (const char* name : {"task/layer0", "task/layer1", "task/logits"}) {
    Tensor& w = perfect.param(std::string(name) + "/weight");
    auto d = w.mutable_data();
    std::fill(d.begin(), d.end(), 0.0);
    for (std::size_t i = 0; i < T; ++i) d[i * T + i] = std::string(name) == "task/logits" ? 20.0 : 1.0;
    auto b = perfect.param(std::string(name) + "/bias").mutable_data();
    std::fill(b.begin(), b.end(), 0.0);
  }
  std::vector<LabeledExample> ex;
  for (int i = 0; i < 200; ++i) {
    LabeledExample e;
    e.task_label = i % 10;
    e.x.assign(T, 0.0);
    e.x[static_cast<std::size_t>(e.task_label)] = 1.0;
    ex.push_back(e);
  }
  CHECK(evaluate(perfect, ex, 1).accuracy == 1.0);

  Model uniform = perfect.clone();
  for (double& w : uniform.param("task/logits/weight").mutable_data()) w = 0.0;
  // Every argmax ties, resolving to class 0: one tenth of balanced labels.
  CHECK(evaluate(uniform, ex, 1).accuracy == doctest::Approx(0.1));

  Model random(small_config(T, T, ModelKind::classifier), 5);
  std::vector<LabeledExample> rev(ex.rbegin(), ex.rend());
  CHECK(evaluate(random, ex, 1).accuracy == evaluate(random, rev, 1).accuracy);
}

TEST_CASE("per-batch stick KL sums to the full-dataset term") {
  const auto ex = blobs(50, 3, 1);
  const Model m(small_config(3, 2), 2);
  Rng rng(3);
  double total = 0.0;
  const std::size_t sizes[] = {16, 16, 16, 2};
  std::size_t start = 0;
  for (std::size_t n : sizes) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    start += n;
    total += m.elbo(make_batch(ex, idx), NoiseBundle::draw(rng, n, 4), static_cast<double>(n) / 50.0).stick_kl;
  }
  const double full = sum(kl_kumaraswamy_beta(m.stick_posterior(), {2.0, 1.0})).item();
  CHECK(std::abs(total - full) < 1e-9);
}

TEST_CASE("train is deterministic and reaches high accuracy on separable data") {
  const auto ex = blobs(200, 4, 7);
  const SplitSet sp = example_split(ex);
  TrainConfig tc;
  tc.epochs = 50;
  tc.batch_size = 16;
  tc.learning_rate = 5e-3;
  tc.seed = 11;
  const Model init(small_config(4, 2), 12);
  const TrainResult a = train(init, sp, tc);
  const TrainResult b = train(init, sp, tc);
  std::ostringstream ca, cb;
  write_report_csv(ca, a.report);
  write_report_csv(cb, b.report);
  CHECK(ca.str() == cb.str());
  CHECK_FALSE(a.aborted);
  CHECK(a.report.epochs.size() == 50);
  CHECK(a.report.best_val_accuracy >= 0.99);
  // The initial model is not modified.
  CHECK(init.parameters()[0].value[0] == Model(small_config(4, 2), 12).parameters()[0].value[0]);
}

TEST_CASE("classifier baseline separates a linearly separable toy task") {
  const auto ex = blobs(200, 2, 9);
  SplitSet sp = example_split(ex);
  TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 20;
  tc.learning_rate = 1e-2;
  const TrainResult r = train(Model(small_config(2, 2, ModelKind::classifier), 1), sp, tc);
  CHECK(evaluate(r.model, sp.train, 0).accuracy == 1.0);
}

TEST_CASE("training loss falls from epoch 1 to epoch 10 on synthetic ECG in most seeds") {
  SynthEcgConfig dc;
  dc.n_subjects = 4;
  dc.beats_per_subject = 40;
  dc.n_leads = 2;
  dc.samples_per_lead = 30;
  dc.artifact_width = 4;
  dc.task_classes = 3;
  const auto ex = synth_ecg_generate(dc);
  const SplitSet sp = split_by_subject(ex, {0.5, 0.25, 0.25}, 1);
  int decreasing = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;
    tc.seed = s;
    const TrainResult r = train(Model(small_config(dc.input_dim(), 3), s), sp, tc);
    decreasing += r.report.epochs.back().loss < r.report.epochs.front().loss;
  }
  CHECK(decreasing >= 3);
}

TEST_CASE("a numeric blow-up aborts training with a diagnostic") {
  auto ex = blobs(40, 3, 4);
  for (auto& e : ex) {
    for (double& v : e.x) v *= 1e160;
  }
  TrainConfig tc;
  tc.epochs = 3;
  const TrainResult r = train(Model(small_config(3, 2), 0), example_split(ex), tc);
  CHECK(r.aborted);
  CHECK_FALSE(r.diagnostic.empty());
  CHECK(r.report.epochs.empty());
}

TEST_CASE("c-VAE report has zero stick and Bernoulli columns") {
  const auto ex = blobs(60, 3, 5);
  TrainConfig tc;
  tc.epochs = 2;
  const TrainResult r = train(Model(small_config(3, 2, ModelKind::cvae), 0), example_split(ex), tc);
  for (const auto& e : r.report.epochs) {
    CHECK(e.stick_kl == 0.0);
    CHECK(e.bernoulli_kl == 0.0);
  }
}

TEST_CASE("report CSV columns") {
  TrainReport rep;
  rep.epochs.push_back({});
  rep.epochs[0].epoch = 1;
  rep.epochs[0].loss = 0.1;
  std::ostringstream os;
  write_report_csv(os, rep);
  const std::string text = os.str();
  CHECK(text.rfind("epoch,loss,recon,stick_kl,bernoulli_kl,gaussian_kl,ce,val_accuracy,val_neg_elbo,"
                   "val_active_mean,temperature,clipped_steps\n", 0) == 0);
  CHECK(text.find("1,0.10000000000000001,") != std::string::npos);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const fs::path dir = temp_dir("ckpt");
  Model m(small_config(3, 2), 3);
  m.param("sticks/raw_a").mutable_data()[1] = 0.1 + 1e-17;
  save_checkpoint(m, dir / "a.ckpt");
  const Model back = load_checkpoint(dir / "a.ckpt");
  save_checkpoint(back, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
  REQUIRE(back.parameters().size() == m.parameters().size());
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    const auto& x = m.parameters()[i].value;
    const auto& y = back.parameters()[i].value;
    CHECK(x.shape() == y.shape());
    CHECK(std::memcmp(x.data().data(), y.data().data(), x.size() * sizeof(double)) == 0);
  }
  const auto ex = blobs(30, 3, 6);
  const EvalMetrics e1 = evaluate(m, ex, 9), e2 = evaluate(back, ex, 9);
  CHECK(e1.accuracy == e2.accuracy);
  CHECK(*e1.neg_elbo == *e2.neg_elbo);
  CHECK(*e1.active_mean == *e2.active_mean);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = temp_dir("ckpt_bad");
  save_checkpoint(Model(small_config(3, 2), 3), dir / "good.ckpt");
  const std::string bytes = slurp(dir / "good.ckpt");
  {
    std::ofstream os(dir / "short.ckpt", std::ios::binary);
    os << bytes.substr(0, bytes.size() - 9);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), FormatError);
  {
    std::string v = bytes;
    v[8] = 7;  // version
    std::ofstream os(dir / "version.ckpt", std::ios::binary);
    os << v;
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "version.ckpt"), FormatError);
  {
    std::string v = bytes;
    v[0] = 'X';
    std::ofstream os(dir / "magic.ckpt", std::ios::binary);
    os << v;
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), FormatError);
}

TEST_CASE("TrainConfig validation and JSON round trip") {
  TrainConfig c;
  c.zeta = 3.0;
  c.temperature = {1.0, 0.2};
  const nlohmann::json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(back.temperature.at(0, 5) == 1.0);
  CHECK(back.temperature.at(4, 5) == doctest::Approx(0.2));
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
