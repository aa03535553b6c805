#undef CHECK  // c10 logging defines its own
#include "doctest.h"

#include <fstream>

#include "hyperedit/evaluation.hpp"
#include "hyperedit/training.hpp"
#include "test_support.hpp"

using namespace hyperedit;
using hyperedit::testing::bit_equal;
using hyperedit::testing::tiny_config;
using hyperedit::testing::toy_generator;

namespace {

TrainingConfig small_training(int steps) {
  TrainingConfig c;
  c.steps = steps;
  c.feature_res = 8;
  c.render_steps = 12;
  c.views = 2;
  c.prompt_bank = {{"Face", "Fat face", Level::Shape},
                   {"Face", "Bearded face", Level::Attribute},
                   {"Photo", "Painting", Level::Style}};
  return c;
}

GeneratorParams frozen_tiny(uint64_t seed) {
  auto theta = init_generator(tiny_config(), seed);
  for (auto& t : theta.layers) t.requires_grad_(false);
  return theta;
}

std::map<std::string, torch::Tensor> snapshot(const HyperModule& h) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : h->named_parameters()) out[item.key()] = item.value().detach().clone();
  return out;
}

bool same_params(const HyperModule& h, const std::map<std::string, torch::Tensor>& snap) {
  for (const auto& item : h->named_parameters()) {
    if (!bit_equal(item.value(), snap.at(item.key()))) return false;
  }
  return true;
}

EvalConfig small_eval(int n) {
  EvalConfig c;
  c.n_identities = n;
  c.depth_res = 48;
  return c;
}

}  // namespace

TEST_CASE("a training step never touches the generator") {
  auto theta = frozen_tiny(1);
  auto before = theta.clone();
  auto hyper = make_hyper(theta, HyperConfig{});
  auto config = small_training(1);
  auto embedders = stub_embedders();
  torch::optim::Adam opt(hyper->parameters(), torch::optim::AdamOptions(1e-2));
  auto r = train_step(hyper, opt, theta, config, embedders, 0);
  CHECK(r.applied);
  for (size_t j = 0; j < theta.layers.size(); ++j) {
    CHECK(bit_equal(theta.layers[j], before.layers[j]));
    CHECK_FALSE(theta.layers[j].grad().defined());
  }
  for (const auto& [k, v] : before.frozen) CHECK(bit_equal(theta.frozen_at(k), v));
}

TEST_CASE("lr = 0 and steps = 0 leave the hyper-module unchanged") {
  auto theta = frozen_tiny(2);
  auto embedders = stub_embedders();
  auto hyper = make_hyper(theta, HyperConfig{});
  auto snap = snapshot(hyper);

  auto config = small_training(2);
  config.lr = 0.0;
  auto r = train(hyper, theta, config, embedders);
  CHECK(same_params(hyper, snap));
  CHECK(r.history.size() == 2);

  auto dir = std::filesystem::temp_directory_path() / "hyperedit_zero_steps";
  std::filesystem::remove_all(dir);
  config.steps = 0;
  config.lr = 1e-3;
  auto z = train(hyper, theta, config, embedders, {dir});
  CHECK(same_params(hyper, snap));
  CHECK(z.history.empty());
  std::ifstream csv(dir / "loss_history.csv");
  std::string header, extra;
  std::getline(csv, header);
  CHECK(header == "step,dir,id,region,total");
  CHECK_FALSE(std::getline(csv, extra));
  CHECK(std::filesystem::exists(dir / "hyper_0.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("seeded training is deterministic and records one row per step") {
  auto theta = frozen_tiny(3);
  auto embedders = stub_embedders();
  auto config = small_training(3);
  auto a = make_hyper(theta, HyperConfig{});
  auto b = make_hyper(theta, HyperConfig{});
  auto ra = train(a, theta, config, embedders);
  auto rb = train(b, theta, config, embedders);
  REQUIRE(ra.history.size() == 3);
  for (size_t i = 0; i < 3; ++i) CHECK(ra.history[i].total == rb.history[i].total);
  CHECK(same_params(b, snapshot(a)));
}

TEST_CASE("step loss parts combine into the total") {
  auto theta = frozen_tiny(4);
  auto embedders = stub_embedders();
  auto config = small_training(1);
  auto hyper = make_hyper(theta, HyperConfig{});
  hyperedit::testing::randomize_outputs(hyper, 1, 0.05);
  auto loss = compute_step_loss(hyper, theta, config, embedders, 0);
  const auto& p = loss.parts;
  // float32 training graph
  CHECK(p.total == doctest::Approx(p.dir + 0.3 * p.id + 0.5 * p.region).epsilon(1e-6));
  CHECK(loss.prompts.size() == 3);
}

TEST_CASE("training config validation") {
  auto config = small_training(1);
  config.lambda.dir = -1.0;
  CHECK_THROWS_AS(config.validate(), InvalidInput);
  config = small_training(1);
  config.prompt_bank.clear();
  CHECK_THROWS_AS(config.validate(), InvalidInput);
  config = small_training(1);
  config.id_yaws = {0.0};
  CHECK_THROWS_AS(config.validate(), InvalidInput);
}

TEST_CASE("depth consistency: identical poses give zero") {
  const auto& theta = toy_generator();
  auto config = small_eval(3);
  config.side_yaw_override = 0.0;
  for (const auto& s : depth_consistency(theta, config)) {
    CHECK_FALSE(s.skipped);
    CHECK(s.value == 0.0);
  }
}

TEST_CASE("depth consistency: twenty identities, no skips, deterministic") {
  const auto& theta = toy_generator();
  auto config = small_eval(20);
  auto a = depth_consistency(theta, config);
  auto b = depth_consistency(theta, config);
  REQUIRE(a.size() == 20);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK_FALSE(a[i].skipped);
    CHECK(a[i].value >= 0.0);
    CHECK(a[i].value == b[i].value);
    CHECK(a[i].yaws == b[i].yaws);
  }
}

TEST_CASE("id consistency: identical poses give one, values bounded, edited-vs-base mode") {
  const auto& theta = toy_generator();
  StubIdentityEmbedder id;
  auto config = small_eval(4);
  config.side_yaw_override = 0.3;
  for (const auto& s : id_consistency(theta, id, config)) {
    CHECK(s.value == doctest::Approx(1.0).epsilon(1e-6));
  }
  config.side_yaw_override.reset();
  for (const auto& s : id_consistency(theta, id, config)) {
    CHECK(s.value >= -1.0);
    CHECK(s.value <= 1.0);
  }
  config.id_against_base = true;
  auto bumped = theta.clone();
  bumped.layers[7] = bumped.layers[7] * 1.2;
  auto scores = id_consistency(bumped, id, config, &theta);
  REQUIRE(scores.size() == 4);
  for (const auto& s : scores) CHECK(s.value < 1.0);
  CHECK_THROWS_AS(id_consistency(bumped, id, config), InvalidInput);
}

TEST_CASE("eval config validation") {
  EvalConfig c;
  c.side_yaw_min = 0.6;
  c.side_yaw_max = 0.5;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = {};
  c.n_identities = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
}
