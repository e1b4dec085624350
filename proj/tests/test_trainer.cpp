#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"

#include "clipq/error.hpp"
#include "clipq/model.hpp"
#include "clipq/synthetic.hpp"
#include "clipq/trainer.hpp"

using namespace clipq;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

synthetic::ClusterData small_clusters(std::uint64_t seed) {
  synthetic::ClusterSpec spec;
  spec.clusters = 4;
  spec.dim = 16;
  spec.train_per_cluster = 32;
  spec.query_per_cluster = 4;
  spec.seed = seed;
  return synthetic::make_clusters(spec);
}

Hyperparams small_hyper() {
  Hyperparams h;
  h.num_books = 4;
  h.num_codewords = 16;
  h.batch_size = 16;
  h.eta = 4;
  h.max_epochs = 6;
  h.lr_codebook = 1e-2;
  h.lr_head = 1e-3;
  return h;
}

}  // namespace

TEST_CASE("hyperparameter validation") {
  Hyperparams h;
  CHECK_NOTHROW(h.validate());
  CHECK(h.negatives_per_query() == 254);
  CHECK(h.code_bits() == 32);
  CHECK(Hyperparams::books_for_bits(64, 256) == 8);
  CHECK(Hyperparams::books_for_bits(16, 256) == 2);
  CHECK(code_of([] { Hyperparams::books_for_bits(12, 256); }) ==
        ErrorCode::kInvalidArgument);

  h.eta = 253;
  CHECK_NOTHROW(h.validate());
  h.eta = 254;
  CHECK(code_of([&] { h.validate(); }) == ErrorCode::kInvalidArgument);
  h = Hyperparams{};
  h.num_codewords = 100;
  CHECK(code_of([&] { h.validate(); }) == ErrorCode::kInvalidArgument);
  h = Hyperparams{};
  h.alpha = 0;
  CHECK(code_of([&] { h.validate(); }) == ErrorCode::kInvalidArgument);
  h = Hyperparams{};
  h.proj_dim = 30;
  CHECK(code_of([&] { h.validate(); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("init_parameters is seeded, shaped and unit-norm") {
  Hyperparams h;
  h.num_books = 8;
  h.proj_dim = 768;
  const auto a = init_parameters(768, h);
  const auto b = init_parameters(768, h);
  CHECK(a == b);
  CHECK(a.codebooks.num_books() == 8);
  CHECK(a.codebooks.num_codewords() == 256);
  CHECK(a.codebooks.sub_dim() == 96);
  for (std::size_t m = 0; m < 8; ++m) {
    for (std::size_t i = 0; i < 256; ++i) {
      double sq = 0;
      for (double x : a.codebooks.codeword(m, i)) sq += x * x;
      CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
    }
  }
  // Empirical variance of the head weights tracks 2/(D_in + D).
  double sq = 0;
  for (double w : a.head.weights()) sq += w * w;
  CHECK(sq / a.head.weights().size() == doctest::Approx(2.0 / 1536).epsilon(0.05));

  h.seed = 1;
  CHECK(!(init_parameters(768, h) == a));
  h.proj_dim = 0;
  CHECK(code_of([&] { init_parameters(30, h); }) == ErrorCode::kDimensionMismatch);
}

TEST_CASE("forward normalizes the projection before quantizing") {
  const auto head = ProjectionHead::identity(4);
  Codebooks C(2, 2, 2, {1, 0, 0, 1, 1, 0, 0, 1});
  const std::vector<double> unit{0.5, 0.5, 0.5, 0.5};
  auto [z, soft] = forward(unit, head, C, 10.0);
  CHECK(z == unit);
  CHECK(soft.probs.size() == 4);

  std::mt19937_64 rng(2);
  Hyperparams h;
  h.num_books = 2;
  h.num_codewords = 4;
  const auto model = init_parameters(6, h);
  for (int i = 0; i < 20; ++i) {
    const auto raw = oracle::gaussian(6, rng);
    const auto zz = forward(raw, model.head, model.codebooks, 10.0).first;
    double sq = 0;
    for (double x : zz) sq += x * x;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
  }
  const std::vector<double> zero(4, 0.0);
  CHECK(code_of([&] { forward(zero, head, C, 10.0); }) == ErrorCode::kZeroNorm);
}

TEST_CASE("analytic gradients match central differences") {
  for (std::uint32_t eta : {0u, 3u}) {
    for (double beta : {0.0, 1e-2}) {
      for (double gamma : {0.0, 0.5}) {
        gradcheck::Config c;
        c.eta = eta;
        c.beta = beta;
        c.gamma = gamma;
        c.seed = eta * 7 + static_cast<std::uint64_t>(beta * 100) +
                 static_cast<std::uint64_t>(gamma * 10);
        const auto r = gradcheck::run(c);
        INFO("eta=" << eta << " beta=" << beta << " gamma=" << gamma);
        CHECK(r.head_error <= 1e-4);
        CHECK(r.codebook_error <= 1e-4);
      }
    }
  }
  gradcheck::Config with_bias;
  with_bias.bias = true;
  with_bias.eta = 2;
  with_bias.beta = 1e-3;
  const auto r = gradcheck::run(with_bias);
  CHECK(r.bias_error <= 1e-4);
  CHECK(r.worst() <= 1e-4);
}

TEST_CASE("with every weight off the gradient is the vanilla gradient") {
  Hyperparams h;
  h.num_books = 2;
  h.num_codewords = 4;
  h.batch_size = 4;
  h.eta = 0;
  h.beta = 0;
  h.gamma = 0;
  const auto model = init_parameters(6, h);
  std::mt19937_64 rng(3);
  RawBatch batch{8, 6, oracle::gaussian(48, rng)};
  const auto g = compute_gradients(batch, model.head, model.codebooks, h);

  // Vanilla loss as a function of the parameters, differentiated
  // numerically without touching the regularizers.
  auto m = model;
  auto vanilla = [&] {
    std::vector<double> recon;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      const auto s = forward(batch.row(r), m.head, m.codebooks, h.alpha).second;
      recon.insert(recon.end(), s.reconstruction.begin(), s.reconstruction.end());
    }
    return vanilla_loss(BatchViews(batch.rows, m.codebooks.dim(), recon), h.tau);
  };
  CHECK(oracle::max_relative_error(
            g.d_weights, oracle::central_differences(m.head.weights(), vanilla),
            gradcheck::kFloor) <= 1e-4);
  CHECK(oracle::max_relative_error(
            g.d_codebooks,
            oracle::central_differences(m.codebooks.weights(), vanilla),
            gradcheck::kFloor) <= 1e-4);
  CHECK(g.loss.total == g.loss.contrastive);
}

TEST_CASE("a codeword with no soft mass receives no gradient") {
  Hyperparams h;
  h.num_books = 1;
  h.num_codewords = 4;
  h.batch_size = 4;
  h.eta = 1;
  h.gamma = 0.0;
  h.proj_dim = 4;
  auto model = init_parameters(4, h);
  model.head = ProjectionHead::identity(4);
  // All inputs live in the positive orthant; codeword 3 points away.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> pos(0.1, 1.0);
  RawBatch batch{8, 4, std::vector<double>(32)};
  for (double& x : batch.data) x = pos(rng);
  for (double& w : model.codebooks.codeword(0, 3)) w = -10.0;

  const auto g = compute_gradients(batch, model.head, model.codebooks, h);
  const auto [z, soft] = forward(batch.row(0), model.head, model.codebooks, h.alpha);
  CHECK(soft.probs[3] < 1e-30);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(g.d_codebooks[3 * 4 + j]) < 1e-20);
  }
}

TEST_CASE("a small gradient step decreases the objective") {
  int decreased = 0;
  const int trials = 20;
  for (int seed = 0; seed < trials; ++seed) {
    Hyperparams h;
    h.num_books = 2;
    h.num_codewords = 8;
    h.batch_size = 6;
    h.eta = 2;
    h.beta = 1e-3;
    h.gamma = 1e-2;
    h.seed = static_cast<std::uint64_t>(seed);
    auto model = init_parameters(10, h);
    std::mt19937_64 rng(seed + 50);
    RawBatch batch{12, 10, oracle::gaussian(120, rng)};
    const auto g = compute_gradients(batch, model.head, model.codebooks, h);
    const double lr = 1e-4;
    for (std::size_t i = 0; i < g.d_weights.size(); ++i) {
      model.head.weights()[i] -= lr * g.d_weights[i];
    }
    for (std::size_t i = 0; i < g.d_codebooks.size(); ++i) {
      model.codebooks.weights()[i] -= lr * g.d_codebooks[i];
    }
    const auto after = evaluate_objective(batch, model.head, model.codebooks, h);
    decreased += after.total < g.loss.total ? 1 : 0;
  }
  CHECK(decreased == trials);
}

TEST_CASE("adam moves against the gradient") {
  Adam opt(2, 0.1);
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{2.0, -0.5};
  opt.step(p, g);
  // First bias-corrected Adam step has magnitude lr in every coordinate.
  CHECK(p[0] == doctest::Approx(0.9));
  CHECK(p[1] == doctest::Approx(-0.9));
}

TEST_CASE("fit lowers the loss and is deterministic") {
  const auto data = small_clusters(5);
  const auto h = small_hyper();
  std::ostringstream log;
  const auto a = fit(data.train, h, &log);
  const auto b = fit(data.train, h);
  REQUIRE(!a.report.history.empty());
  CHECK(a.report.history.size() <= h.max_epochs);
  CHECK(a.report.history.back().total < a.report.history.front().total);
  CHECK(a.model == b.model);
  REQUIRE(a.report.history.size() == b.report.history.size());
  for (std::size_t e = 0; e < a.report.history.size(); ++e) {
    CHECK(a.report.history[e].total == b.report.history[e].total);
  }
  double best = a.report.history.front().total;
  for (const auto& l : a.report.history) best = std::min(best, l.total);
  CHECK(a.report.history[a.report.best_epoch].total == best);
  CHECK(log.str().find("epoch 1/6") != std::string::npos);
}

TEST_CASE("fit edge cases") {
  const auto data = small_clusters(6);
  auto h = small_hyper();
  h.max_epochs = 0;
  const auto r = fit(data.train, h);
  CHECK(r.report.history.empty());
  CHECK(r.report.best_epoch == -1);
  CHECK(r.model == init_parameters(data.train.dim, h));

  h = small_hyper();
  h.batch_size = 1000;
  h.eta = 0;
  CHECK(code_of([&] { fit(data.train, h); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([&] { fit(FeatureSet{2, 16, 4, 0, {}, {}, {}}, small_hyper()); }) ==
        ErrorCode::kEmptyInput);
  CHECK(code_of([&] { fit(data.database, small_hyper()); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("early stopping halts a stalled run") {
  const auto data = small_clusters(7);
  auto h = small_hyper();
  h.max_epochs = 40;
  h.patience = 2;
  h.min_improvement = 1e9;  // nothing ever counts as progress
  const auto r = fit(data.train, h);
  CHECK(r.report.stopped_early);
  CHECK(r.report.history.size() == 3);  // first epoch always improves on +inf
}
