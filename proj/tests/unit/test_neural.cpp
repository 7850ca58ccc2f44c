#include <doctest.h>

#include <cmath>

#include "feudalgain/neural.hpp"

using namespace feudalgain;
using namespace feudalgain::nn;

namespace {

struct GradCase {
  NetworkSpec spec;
  NoiseMode mode;
  std::size_t batch;
};

// Loss = sum(out .* G) for a fixed random G, evaluated with a fixed noise draw.
double loss_of(const Network& net, const Matrix& x, const Matrix& g, NoiseMode mode, std::uint64_t noise_seed) {
  Rng noise(noise_seed);
  Tape tape;
  return net.forward(x, mode, &noise, tape).cwiseProduct(g).sum();
}

double gradient_rel_error(const GradCase& c, std::uint64_t seed) {
  Rng rng(seed);
  Network net(c.spec, rng);
  Matrix x(c.spec.input_dim, c.batch);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.0, 1.0);
  const std::uint64_t noise_seed = seed * 31 + 7;
  Rng noise(noise_seed);
  Tape tape;
  const Matrix out = net.forward(x, c.mode, &noise, tape);
  Matrix g(out.rows(), out.cols());
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform(-1.0, 1.0);
  net.zero_grad();
  net.backward(tape, g);

  double diff_sq = 0.0, norm_sq = 0.0;
  const double h = 1e-6;
  for (auto& p : net.parameters()) {
    for (Eigen::Index i = 0; i < p.value->size(); ++i) {
      double& w = p.value->data()[i];
      const double orig = w;
      w = orig + h;
      const double up = loss_of(net, x, g, c.mode, noise_seed);
      w = orig - h;
      const double down = loss_of(net, x, g, c.mode, noise_seed);
      w = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad->data()[i];
      diff_sq += (numeric - analytic) * (numeric - analytic);
      norm_sq += (std::abs(numeric) + std::abs(analytic)) * (std::abs(numeric) + std::abs(analytic));
    }
  }
  return std::sqrt(diff_sq) / std::max(1e-12, std::sqrt(norm_sq));
}

}  // namespace

TEST_CASE("finite-difference gradient checks for every layer and head type") {
  const Activation acts[] = {Activation::relu, Activation::tanh, Activation::identity};
  const Head heads[] = {Head::q_values, Head::dueling, Head::policy_logits_plus_q};
  int configs = 0;
  for (int noisy = 0; noisy < 2; ++noisy) {
    for (Activation a : acts) {
      for (Head h : heads) {
        GradCase c;
        c.spec.input_dim = 4 + static_cast<std::size_t>(configs % 3);
        c.spec.hidden = configs % 2 ? std::vector<std::size_t>{6, 5} : std::vector<std::size_t>{7};
        c.spec.outputs = 3 + static_cast<std::size_t>(configs % 2);
        c.spec.head = h;
        c.spec.noisy = noisy != 0;
        c.spec.activation = a;
        c.mode = noisy ? NoiseMode::sample : NoiseMode::mean;
        c.batch = 3;
        const double err = gradient_rel_error(c, 100 + static_cast<std::uint64_t>(configs));
        INFO("config " << configs << " noisy=" << noisy << " act=" << to_string(a) << " head=" << int(h));
        CHECK(err < 1e-4);
        ++configs;
      }
    }
  }
  CHECK(configs >= 18);
  // Noisy layers evaluated at their mean weights as well.
  for (int k = 0; k < 4; ++k) {
    GradCase c;
    c.spec = {5, {6}, 3, Head::dueling, true, Activation::tanh, 0.5};
    c.mode = NoiseMode::mean;
    c.batch = 2;
    CHECK(gradient_rel_error(c, 500 + static_cast<std::uint64_t>(k)) < 1e-4);
  }
}

TEST_CASE("dueling head is identifiable: advantages are mean-centred") {
  Vector adv(4);
  adv << 1.0, 2.0, -3.0, 4.0;
  const Vector q = dueling_combine(0.5, adv);
  CHECK(q.mean() == doctest::Approx(0.5));
  CHECK(q(1) - q(0) == doctest::Approx(1.0));
  // Shifting all advantages by a constant leaves Q unchanged.
  const Vector shifted = dueling_combine(0.5, (adv.array() + 10.0).matrix());
  CHECK((q - shifted).norm() < 1e-12);

  Rng rng(3);
  Network net({6, {8}, 4, Head::dueling, false, Activation::relu, 0.5}, rng);
  Matrix x = Matrix::Random(6, 5);
  const Matrix out = net.predict(x);
  CHECK(out.rows() == 4);
}

TEST_CASE("zero sigma makes sampled and mean passes identical") {
  Rng rng(5);
  Network net({5, {7, 4}, 3, Head::q_values, true, Activation::relu, 0.0}, rng);
  Matrix x = Matrix::Random(5, 3);
  Rng noise(9);
  const Matrix sampled = net.predict(x, NoiseMode::sample, &noise);
  const Matrix mean = net.predict(x, NoiseMode::mean);
  CHECK((sampled - mean).norm() < 1e-14);
}

TEST_CASE("noisy layers initialise sigma to sigma0 / sqrt(fan_in)") {
  Rng rng(1);
  NoisyLayer l(16, 3, Activation::identity, rng, 0.5);
  CHECK(l.weight_sigma()(0, 0) == doctest::Approx(0.5 / 4.0));
  CHECK(l.bias_sigma()(2, 0) == doctest::Approx(0.5 / 4.0));
  Matrix x = Matrix::Random(16, 2);
  Rng n1(4), n2(4), n3(5);
  CHECK((l.forward(x, NoiseMode::sample, &n1, nullptr) - l.forward(x, NoiseMode::sample, &n2, nullptr)).norm() ==
        0.0);
  CHECK((l.forward(x, NoiseMode::sample, &n1, nullptr) - l.forward(x, NoiseMode::sample, &n3, nullptr)).norm() >
        0.0);
  CHECK_THROWS(l.forward(x, NoiseMode::sample, nullptr, nullptr));
}

TEST_CASE("first Adam step moves each parameter by about lr") {
  Rng rng(8);
  Network net({3, {4}, 2, Head::q_values, false, Activation::tanh, 0.5}, rng);
  const auto before = net.to_json();
  Matrix x = Matrix::Random(3, 2);
  Tape tape;
  const Matrix out = net.forward(x, NoiseMode::mean, nullptr, tape);
  net.zero_grad();
  net.backward(tape, Matrix::Ones(out.rows(), out.cols()));
  AdamOptimizer opt({0.01, 0.9, 0.999, 1e-8, 0.0});
  std::vector<Matrix> old;
  for (auto& p : net.parameters()) old.push_back(*p.value);
  opt.step(net);
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (Eigen::Index i = 0; i < params[k].value->size(); ++i) {
      const double g = params[k].grad->data()[i];
      const double moved = params[k].value->data()[i] - old[k].data()[i];
      if (std::abs(g) > 1e-6) CHECK(moved == doctest::Approx(-0.01 * (g > 0 ? 1 : -1)).epsilon(1e-4));
    }
  }
  CHECK(opt.steps() == 1);
  CHECK(before != net.to_json());
}

TEST_CASE("Adam rejects non-finite gradients and clips the global norm") {
  Rng rng(2);
  Network net({2, {}, 1, Head::q_values, false, Activation::identity, 0.5}, rng);
  auto params = net.parameters();
  params[0].grad->setConstant(std::nan(""));
  AdamOptimizer opt;
  CHECK_THROWS_AS(opt.step(net), std::runtime_error);

  Network net2({2, {}, 1, Head::q_values, false, Activation::identity, 0.5}, rng);
  for (auto& p : net2.parameters()) p.grad->setConstant(1e6);
  AdamOptimizer clipped({0.1, 0.9, 0.999, 1e-8, 1.0});
  CHECK_NOTHROW(clipped.step(net2));
}

TEST_CASE("network serialisation round-trips") {
  Rng rng(12);
  for (bool noisy : {false, true}) {
    Network net({4, {5, 3}, 3, Head::policy_logits_plus_q, noisy, Activation::relu, 0.5}, rng);
    const Network back = Network::from_json(net.to_json());
    Matrix x = Matrix::Random(4, 3);
    CHECK((net.predict(x) - back.predict(x)).norm() == 0.0);
    CHECK(back.output_dim() == 6);
  }
  CHECK_THROWS(Network::from_json(nlohmann::json{{"bogus", 1}}));
}

TEST_CASE("input width is checked") {
  Rng rng(1);
  Network net({4, {3}, 2, Head::q_values, false, Activation::relu, 0.5}, rng);
  CHECK_THROWS(net.predict(Matrix::Zero(5, 1)));
}
