#include <catch_amalgamated.hpp>

#include <set>

#include "../support/oracles.hpp"

using namespace skna;
using namespace skna::nn;
using Catch::Matchers::WithinAbs;

namespace {

bool kind_is(const Error& e, ErrorKind k) { return e.kind() == k; }

}  // namespace

TEST_CASE("layer output shapes") {
  Rng rng(1);
  auto conv = make_layer<float>(LayerSpec::conv1d(1, 16), rng);
  CHECK(conv->output_shape({2, 1, 2048}) == Shape3{2, 16, 1024});
  auto deconv = make_layer<float>(LayerSpec::deconv1d(16, 1), rng);
  CHECK(deconv->output_shape({2, 16, 1024}) == Shape3{2, 1, 2048});
  auto bi = make_layer<float>(LayerSpec::bilstm(32, 32), rng);
  CHECK(bi->output_shape({1, 32, 10}) == Shape3{1, 64, 10});
  auto uni = make_layer<float>(LayerSpec::lstm(64, 32), rng);
  CHECK(uni->output_shape({1, 64, 10}) == Shape3{1, 32, 10});
  CHECK_THROWS_MATCHES(conv->forward(Tensor3<float>(1, 2, 64), Mode::eval), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return kind_is(e, ErrorKind::shape); }));

  // brute-force the conv length formula against sliding the kernel
  for (std::size_t L = 3; L < 40; ++L)
    for (std::size_t k = 1; k <= 3; ++k)
      for (std::size_t s = 1; s <= 2; ++s)
        for (std::size_t p = 0; p < k; ++p) {
          std::size_t count = 0;
          for (std::size_t start = 0; start + k <= L + 2 * p; start += s) ++count;
          REQUIRE(conv_out_len(L, k, s, p) == count);
        }
}

TEST_CASE("relu values") {
  Rng rng(1);
  auto r = make_layer<double>(LayerSpec::relu(), rng);
  Tensor3<double> x(1, 1, 2);
  x.data = {-1.5, 2.0};
  const auto y = r->forward(x, Mode::eval);
  CHECK(y.data[0] == 0.0);
  CHECK(y.data[1] == 2.0);
}

TEST_CASE("backward before forward is a state error") {
  Rng rng(1);
  auto conv = make_layer<double>(LayerSpec::conv1d(1, 2), rng);
  CHECK_THROWS_MATCHES(conv->backward(Tensor3<double>(1, 2, 4)), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return kind_is(e, ErrorKind::state); }));
  conv->forward(Tensor3<double>(1, 1, 8), Mode::eval);
  CHECK_THROWS_AS(conv->backward(Tensor3<double>(1, 2, 4)), Error);
}

TEST_CASE("gradients agree with central differences") {
  Rng rng(2024);
  for (auto kind : oracle::kGradKinds) {
    double worst = 0;
    for (int cfg = 0; cfg < 50; ++cfg) worst = std::max(worst, oracle::check_random_config(kind, rng).max_rel_error);
    INFO("kind " << to_string(kind) << " worst relative error " << worst);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("gradient accumulation is additive") {
  Rng rng(3);
  auto conv = make_layer<double>(LayerSpec::conv1d(2, 3), rng);
  const auto x = oracle::random_tensor({1, 2, 8}, rng);
  const auto y = conv->forward(x, Mode::train);
  const auto g = oracle::random_tensor(y.shape, rng);
  conv->zero_grad();
  conv->backward(g);
  const auto once = conv->parameters()[0]->grad;
  conv->backward(g);
  const auto twice = conv->parameters()[0]->grad;
  for (std::size_t i = 0; i < once.size(); ++i) CHECK_THAT(twice[i], WithinAbs(2 * once[i], 1e-12));
}

TEST_CASE("residual add duplicates the upstream gradient") {
  Rng rng(4);
  const auto g = oracle::random_tensor({2, 3, 5}, rng);
  const auto [a, b] = ResidualAdd<double>::backward(g);
  CHECK(a.data == g.data);
  CHECK(b.data == g.data);
}

TEST_CASE("mse loss and gradient") {
  Tensor3<double> p(1, 2, 3, 1.5), t(1, 2, 3, 1.5);
  CHECK(mse_loss(p, t) == 0.0);
  Tensor3<double> q(1, 2, 3, 3.5);
  CHECK(mse_loss(q, t) == 4.0);

  Rng rng(5);
  const auto a = oracle::random_tensor({3, 2, 17}, rng), b = oracle::random_tensor({3, 2, 17}, rng);
  double s = 0;
  for (std::size_t bb = 0; bb < 3; ++bb)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t tt = 0; tt < 17; ++tt) s += std::pow(a(bb, c, tt) - b(bb, c, tt), 2);
  CHECK_THAT(mse_loss(a, b), WithinAbs(s / 102.0, 1e-12));
  const auto g = mse_grad(a, b);
  for (std::size_t i = 0; i < g.numel(); ++i) CHECK_THAT(g.data[i], WithinAbs(2 * (a.data[i] - b.data[i]) / 102.0, 1e-15));
  CHECK_THROWS_AS(mse_loss(a, Tensor3<double>(1, 1, 1)), Error);
}

TEST_CASE("adam first step and zero gradient") {
  Parameter<double> p("w", {3});
  p.value = {1.0, -2.0, 0.5};
  Adam<double> adam({&p});
  p.grad = {5.0, -3.0, 1e-3};
  adam.step();
  const double lr = 1e-3, eps = 1e-8;
  // m_hat = g and v_hat = g^2 at t = 1
  CHECK_THAT(p.value[0], WithinAbs(1.0 - lr * 5.0 / (5.0 + eps), 1e-15));
  CHECK_THAT(p.value[1], WithinAbs(-2.0 + lr * 3.0 / (3.0 + eps), 1e-15));
  CHECK_THAT(p.value[2], WithinAbs(0.5 - lr * 1e-3 / (1e-3 + eps), 1e-15));
  CHECK(adam.step_count() == 1);

  const auto before = p.value;
  const auto m1 = adam.first_moment(0);
  p.grad = {0, 0, 0};
  Adam<double> fresh({&p});
  fresh.step();
  CHECK(p.value == before);  // no history, zero gradient
  adam.step();
  for (std::size_t i = 0; i < 3; ++i) CHECK_THAT(adam.first_moment(0)[i], WithinAbs(0.9 * m1[i], 1e-15));

  p.grad = {std::nan(""), 0, 0};
  const auto keep = p.value;
  CHECK_THROWS_MATCHES(adam.step(), Error,
                       Catch::Matchers::Predicate<Error>([](const Error& e) { return kind_is(e, ErrorKind::non_finite); }));
  CHECK(p.value == keep);
}

TEST_CASE("adam on a scalar quadratic matches a hand simulation") {
  Parameter<double> p("theta", {1});
  p.value = {1.0};
  Adam<double> adam({&p});
  double th = 1, m = 0, v = 0;
  double prev = 1.0;
  for (int t = 1; t <= 100; ++t) {
    p.grad = {2 * p.value[0]};
    adam.step();
    const double g = 2 * th;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    th -= 1e-3 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    REQUIRE_THAT(p.value[0], WithinAbs(th, 1e-12));
    if (t > 1) CHECK(std::abs(p.value[0]) < prev);
    prev = std::abs(p.value[0]);
  }
}

TEST_CASE("balanced sampler") {
  std::vector<int> labels(128);
  for (std::size_t i = 0; i < 128; ++i) labels[i] = i < 64 ? 0 : 1;
  BalancedBatchSampler s(labels, 32, 7);
  const auto ep = s.next_epoch();
  REQUIRE(ep.size() == 4);
  std::set<std::size_t> seen;
  for (const auto& b : ep) {
    REQUIRE(b.size() == 32);
    int ones = 0;
    for (auto i : b) {
      ones += labels[i];
      CHECK(seen.insert(i).second);
    }
    CHECK(ones == 16);
  }

  std::vector<int> uneven(134);
  for (std::size_t i = 0; i < 134; ++i) uneven[i] = i < 70 ? 0 : 1;
  BalancedBatchSampler u(uneven, 32, 7);
  const auto eu = u.next_epoch();
  CHECK(eu.size() == 4);
  std::size_t used = 0;
  for (const auto& b : eu) used += b.size();
  CHECK(134 - used == 6);

  BalancedBatchSampler a(labels, 32, 99), b(labels, 32, 99);
  CHECK(a.next_epoch() == b.next_epoch());
  CHECK(a.next_epoch() == b.next_epoch());

  std::vector<int> tiny = {0, 0, 0, 1};
  CHECK_THROWS_MATCHES(BalancedBatchSampler(tiny, 4, 1), Error, Catch::Matchers::Predicate<Error>([](const Error& e) {
                         return kind_is(e, ErrorKind::insufficient_class);
                       }));
  CHECK_THROWS_AS(BalancedBatchSampler(labels, 31, 1), Error);
}

TEST_CASE("batchnorm eval output does not depend on batch composition") {
  Rng rng(6);
  auto bn = make_layer<double>(LayerSpec::batchnorm1d(3), rng);
  for (int i = 0; i < 5; ++i) bn->forward(oracle::random_tensor({4, 3, 10}, rng), Mode::train);
  auto x1 = oracle::random_tensor({2, 3, 10}, rng);
  auto x2 = x1;
  for (std::size_t i = 30; i < 60; ++i) x2.data[i] = 100.0 + static_cast<double>(i);
  const auto y1 = bn->forward(x1, Mode::eval);
  const auto y2 = bn->forward(x2, Mode::eval);
  for (std::size_t i = 0; i < 30; ++i) CHECK(y1.data[i] == y2.data[i]);

  // affine per channel: y(a) - y(b) proportional to a - b
  Tensor3<double> z0(1, 3, 1, 0.0), z1(1, 3, 1, 1.0), z2(1, 3, 1, 2.0);
  const auto o0 = bn->forward(z0, Mode::eval), o1 = bn->forward(z1, Mode::eval), o2 = bn->forward(z2, Mode::eval);
  for (std::size_t c = 0; c < 3; ++c) CHECK_THAT(o2.data[c] - o1.data[c], WithinAbs(o1.data[c] - o0.data[c], 1e-12));
}

TEST_CASE("dropout semantics") {
  Rng rng(7);
  auto d = make_layer<double>(LayerSpec::dropout(0.3), rng);
  Tensor3<double> x(1, 1, 10000, 1.0);
  CHECK(d->forward(x, Mode::eval).data == x.data);
  const auto y = d->forward(x, Mode::train);
  double mean = 0;
  std::size_t zeros = 0;
  for (double v : y.data) {
    mean += v;
    zeros += v == 0.0;
  }
  mean /= 10000;
  CHECK_THAT(mean, WithinAbs(1.0, 0.02));
  CHECK_THAT(static_cast<double>(zeros) / 10000, WithinAbs(0.3, 0.02));
  CHECK_THROWS_AS(make_layer<double>(LayerSpec::dropout(1.0), rng), Error);
}

TEST_CASE("bidirectional LSTM is symmetric under time reversal") {
  Rng rng(8);
  auto a = make_layer<double>(LayerSpec::bilstm(3, 4), rng);
  auto b = make_layer<double>(LayerSpec::bilstm(3, 4), rng);
  auto pa = a->parameters(), pb = b->parameters();
  const std::size_t half = pa.size() / 2;
  for (std::size_t i = 0; i < pa.size(); ++i) pb[(i + half) % pa.size()]->value = pa[i]->value;

  const auto x = oracle::random_tensor({2, 3, 9}, rng);
  Tensor3<double> xr(x.shape);
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 9; ++t) xr(bb, c, t) = x(bb, c, 8 - t);
  const auto y = a->forward(x, Mode::eval);
  const auto yr = b->forward(xr, Mode::eval);
  for (std::size_t bb = 0; bb < 2; ++bb)
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t t = 0; t < 9; ++t) REQUIRE_THAT(yr(bb, (c + 4) % 8, 8 - t), WithinAbs(y(bb, c, t), 1e-12));
}

TEST_CASE("initialization is seed-deterministic and within bounds") {
  Rng r1(10), r2(10);
  auto a = make_layer<double>(LayerSpec::conv1d(4, 8), r1);
  auto b = make_layer<double>(LayerSpec::conv1d(4, 8), r2);
  CHECK(a->parameters()[0]->value == b->parameters()[0]->value);
  const double bound = std::sqrt(1.0 / 12.0);
  for (double v : a->parameters()[0]->value) CHECK(std::abs(v) <= bound);
}
