#include <catch2/catch_amalgamated.hpp>

#include "flowcast/optim.hpp"

using namespace flowcast;

TEST_CASE("zero gradient and zero decay leave parameters unchanged", "[optim]") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState state(cfg);
  std::vector<double> params = {1.0, -2.0, 0.5};
  const std::vector<double> grads = {0.0, 0.0, 0.0};
  adamw_step(state, params, grads);
  CHECK(params == std::vector<double>{1.0, -2.0, 0.5});
  CHECK(state.step == 1);
}

TEST_CASE("bias-corrected first step matches the hand value", "[optim]") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  OptimizerState state(cfg);
  std::vector<double> params = {1.0};
  const std::vector<double> grads = {1.0};
  adamw_step(state, params, grads);
  // m_hat = v_hat = 1 after bias correction, so theta = 1 - lr/(1 + eps).
  const double expected = 1.0 - 0.005 * (1.0 / (1.0 + 1e-8));
  CHECK(params[0] == Catch::Approx(expected).margin(1e-15));
  CHECK(params[0] == Catch::Approx(0.995).margin(1e-6));
}

TEST_CASE("decoupled decay shrinks parameters geometrically", "[optim]") {
  AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  OptimizerState state(cfg);
  std::vector<double> params = {2.0};
  const std::vector<double> grads = {0.0};
  adamw_step(state, params, grads);
  CHECK(params[0] == Catch::Approx(2.0 * (1.0 - cfg.lr * cfg.weight_decay)).margin(1e-15));
  adamw_step(state, params, grads);
  CHECK(params[0] ==
        Catch::Approx(2.0 * std::pow(1.0 - cfg.lr * cfg.weight_decay, 2)).margin(1e-15));
  CHECK(state.step == 2);
}

TEST_CASE("non-finite gradients name the offending index", "[optim]") {
  OptimizerState state;
  std::vector<double> params = {1.0, 2.0};
  const std::vector<double> grads = {0.0, std::numeric_limits<double>::quiet_NaN()};
  try {
    adamw_step(state, params, grads);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("state and gradient sizes must align", "[optim]") {
  OptimizerState state;
  std::vector<double> params = {1.0, 2.0};
  const std::vector<double> grads = {1.0};
  CHECK_THROWS_AS(adamw_step(state, params, grads), ShapeError);
}

TEST_CASE("adamw reduces a simple quadratic", "[optim]") {
  // f(theta) = theta^2 / 2, gradient theta.
  AdamWConfig cfg;
  cfg.lr = 0.05;
  cfg.weight_decay = 0.0;
  OptimizerState state(cfg);
  std::vector<double> params = {3.0};
  for (int i = 0; i < 400; ++i) {
    const std::vector<double> grads = {params[0]};
    adamw_step(state, params, grads);
  }
  CHECK(std::abs(params[0]) < 0.05);
}
