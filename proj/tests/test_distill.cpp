#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "testutil.hpp"
#include "trajphen/distill.hpp"
#include "trajphen/errors.hpp"
#include "trajphen/rng.hpp"

using namespace trajphen;
using trajphen::testutil::finite_diff_max_rel_err;

namespace {

Tensor unit_rows(int64_t n, int64_t d, Rng& rng) {
  Tensor t({n, d});
  for (int64_t i = 0; i < n; ++i) {
    double norm = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      double v = rng.normal();
      t.data()[i * d + j] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int64_t j = 0; j < d; ++j) t.data()[i * d + j] /= norm;
  }
  return t;
}

Tensor identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t.data()[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST_CASE("infonce closed form at perfect matched similarity") {
  // orthonormal rows: matched sims 1, mismatched 0
  Tensor z = identity(4);
  double loss = infonce_from_projections(z, z, 0.07).value();
  double expected = std::log(1.0 + 3.0 * std::exp(-1.0 / 0.07));
  CHECK(loss == doctest::Approx(expected).epsilon(1e-9));
  CHECK(loss == doctest::Approx(1.87e-6).epsilon(0.01));
}

TEST_CASE("infonce rejects undersized batches and zero norms") {
  Tensor one({1, 4}, 1.0);
  CHECK_THROWS_AS(infonce_from_projections(one, one, 0.07), std::invalid_argument);
  Tensor z = identity(3);
  Tensor zero = z.detach();
  zero.data()[0] = 0.0;  // first row all zeros now
  CHECK_THROWS_AS(infonce_from_projections(zero, z, 0.07), std::invalid_argument);
  CHECK_THROWS_AS(infonce_from_projections(z, z, -1.0), std::invalid_argument);
}

TEST_CASE("infonce is invariant to positive rescaling of either side") {
  Rng rng(5);
  Tensor zi = unit_rows(8, 6, rng);
  Tensor zt = unit_rows(8, 6, rng);
  double base = infonce_from_projections(zi, zt, 0.07).value();
  Tensor zi_scaled = mul_scalar(zi, 3.7);
  Tensor zt_scaled = mul_scalar(zt, 0.21);
  CHECK(std::fabs(infonce_from_projections(zi_scaled, zt, 0.07).value() - base) < 1e-10);
  CHECK(std::fabs(infonce_from_projections(zi, zt_scaled, 0.07).value() - base) < 1e-10);
}

TEST_CASE("infonce at random unit embeddings concentrates near ln N") {
  Rng rng(11);
  const int64_t n = 64, d = 4096;
  double mean = 0.0;
  const int batches = 100;
  for (int b = 0; b < batches; ++b) {
    Tensor zi = unit_rows(n, d, rng);
    Tensor zt = unit_rows(n, d, rng);
    mean += infonce_from_projections(zi, zt, 0.07).value();
  }
  mean /= batches;
  MESSAGE("mean infonce: ", mean, " ln N: ", std::log(64.0));
  CHECK(std::fabs(mean - std::log(64.0)) < 0.15);
}

TEST_CASE("symmetric infonce averages both anchor directions") {
  Rng rng(7);
  Tensor zi = unit_rows(6, 5, rng);
  Tensor zt = unit_rows(6, 5, rng);
  double one_way = infonce_from_projections(zi, zt, 0.1, false).value();
  double reverse = infonce_from_projections(zt, zi, 0.1, false).value();
  double sym = infonce_from_projections(zi, zt, 0.1, true).value();
  CHECK(sym == doctest::Approx(0.5 * (one_way + reverse)).epsilon(1e-12));
}

TEST_CASE("mse loss plug-in values") {
  Tensor a = Tensor::from_data({1, 2}, {1, 0});
  Tensor b = Tensor::from_data({1, 2}, {0, 1});
  CHECK(mse_from_projections(a, a).value() == 0.0);
  CHECK(mse_from_projections(a, b).value() == doctest::Approx(2.0));
  Tensor c = Tensor::from_data({2, 2}, {1, 0, 0, 0});
  Tensor d = Tensor::from_data({2, 2}, {0, 1, 2, 0});  // per-pair squared distances 2 and 4
  CHECK(mse_from_projections(c, d).value() == doctest::Approx(3.0));
  // non-negative on random input, zero iff equal
  Rng rng(3);
  Tensor x = unit_rows(5, 4, rng);
  Tensor y = unit_rows(5, 4, rng);
  CHECK(mse_from_projections(x, y).value() > 0.0);
}

TEST_CASE("distillation losses match finite differences through the heads") {
  Rng rng(9);
  ProjectionHeads heads(6, 5, 4, 8, 0.07, 21);
  Tensor e_idp = unit_rows(5, 6, rng);
  Tensor e_traj = unit_rows(5, 5, rng);
  auto inputs = heads.params().tensors();
  double err_nce = finite_diff_max_rel_err(
      [&] {
        return infonce_from_projections(heads.project_idp(e_idp), heads.project_traj(e_traj), 0.07);
      },
      inputs);
  CHECK(err_nce < 1e-4);
  double err_mse = finite_diff_max_rel_err(
      [&] {
        return mse_from_projections(heads.project_idp(e_idp), heads.project_traj(e_traj));
      },
      inputs);
  CHECK(err_mse < 1e-4);
  MESSAGE("nce err: ", err_nce, " mse err: ", err_mse);
}

namespace {

// toy shared-structure setup: a latent u drives both the teacher embedding
// and the student's input features
struct ToyDistill {
  std::vector<IdpRecord> records;
  EmbeddingMatrix teacher;
  IdpEncoderConfig enc_cfg;
};

ToyDistill make_toy(int n, uint64_t seed) {
  Rng rng(seed);
  ToyDistill toy;
  toy.enc_cfg.organ_dims = {4, 4};
  toy.enc_cfg.d = 16;
  toy.enc_cfg.d_e = 4;
  toy.enc_cfg.n_layers = 1;
  toy.enc_cfg.n_heads = 2;
  toy.enc_cfg.mlp_hidden = 24;
  const int k = 3, d_t = 8;
  std::vector<double> loading(static_cast<size_t>(d_t * k));
  for (double& v : loading) v = rng.normal();
  for (int i = 0; i < n; ++i) {
    std::vector<double> u(k);
    for (double& v : u) v = rng.normal();
    IdpRecord rec;
    rec.subject_id = i + 1;
    for (int o = 0; o < 2; ++o) {
      std::vector<double> x(4);
      for (int f = 0; f < 4; ++f) {
        x[static_cast<size_t>(f)] = u[static_cast<size_t>((f + o) % k)] + 0.1 * rng.normal();
      }
      rec.organs.push_back(std::move(x));
    }
    std::vector<double> emb(d_t);
    for (int r = 0; r < d_t; ++r) {
      double s = 0.0;
      for (int c = 0; c < k; ++c) s += loading[static_cast<size_t>(r * k + c)] * u[static_cast<size_t>(c)];
      emb[static_cast<size_t>(r)] = s + 0.05 * rng.normal();
    }
    toy.records.push_back(std::move(rec));
    toy.teacher.append(i + 1, emb);
  }
  return toy;
}

}  // namespace

TEST_CASE("zero-epoch distillation leaves parameters at initialization") {
  auto toy = make_toy(32, 3);
  IdpEncoder student(toy.enc_cfg, 41);
  ProjectionHeads heads(toy.enc_cfg.d, toy.teacher.dim, 8, 8, 0.07, 42);
  auto before = merged_registry({&student.params(), &heads.params()}).snapshot();
  DistillConfig cfg;
  cfg.epochs = 0;
  cfg.batch_size = 16;
  auto report = distill_pretrain(student, heads, toy.records, toy.teacher, cfg);
  auto after = merged_registry({&student.params(), &heads.params()}).snapshot();
  CHECK(before == after);
  CHECK(report.train_loss.empty());
}

TEST_CASE("distillation on shared structure drives the loss down") {
  auto toy = make_toy(256, 5);
  IdpEncoder student(toy.enc_cfg, 43);
  ProjectionHeads heads(toy.enc_cfg.d, toy.teacher.dim, 16, 16, 0.07, 44);
  DistillConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 64;
  cfg.lr = 3e-3;
  auto report = distill_pretrain(student, heads, toy.records, toy.teacher, cfg);
  REQUIRE(report.train_loss.size() == 30);
  MESSAGE("first ", report.train_loss.front(), " last ", report.train_loss.back());
  CHECK(report.train_loss.back() < report.train_loss.front());
  // well below the random-pairing plateau ln(batch)
  CHECK(report.train_loss.back() < 0.5 * std::log(64.0));
  CHECK(report.best_epoch >= 0);
}

TEST_CASE("mse objective also trains") {
  auto toy = make_toy(128, 7);
  IdpEncoder student(toy.enc_cfg, 45);
  ProjectionHeads heads(toy.enc_cfg.d, toy.teacher.dim, 8, 8, 0.07, 46);
  DistillConfig cfg;
  cfg.objective = "mse";
  cfg.epochs = 15;
  cfg.batch_size = 64;
  auto report = distill_pretrain(student, heads, toy.records, toy.teacher, cfg);
  CHECK(report.train_loss.back() < report.train_loss.front());
}

TEST_CASE("downstream subjects inside the distillation set are a hard error") {
  auto toy = make_toy(16, 9);
  IdpEncoder student(toy.enc_cfg, 47);
  ProjectionHeads heads(toy.enc_cfg.d, toy.teacher.dim, 8, 8, 0.07, 48);
  DistillConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(distill_pretrain(student, heads, toy.records, toy.teacher, cfg, {5}),
                  GuardViolation);
}

TEST_CASE("missing teacher embedding is an error") {
  auto toy = make_toy(8, 11);
  toy.records.push_back(toy.records.back());
  toy.records.back().subject_id = 999;
  IdpEncoder student(toy.enc_cfg, 49);
  ProjectionHeads heads(toy.enc_cfg.d, toy.teacher.dim, 8, 8, 0.07, 50);
  DistillConfig cfg;
  CHECK_THROWS_AS(distill_pretrain(student, heads, toy.records, toy.teacher, cfg),
                  std::invalid_argument);
}
