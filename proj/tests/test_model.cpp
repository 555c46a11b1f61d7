#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "slca/errors.hpp"
#include "slca/lora.hpp"
#include "slca/model.hpp"
#include "slca/rng.hpp"
#include "slca/sgd.hpp"
#include "slca/tensor.hpp"

using namespace slca;

namespace {

Tensor random_inputs(RngState& rng, std::size_t n, std::size_t d) {
  std::vector<double> v(n * d);
  fill_normal(rng, v.data(), v.size());
  return Tensor({n, d}, std::move(v));
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

std::string temp_path(const char* stem) {
  return std::string("/tmp/slca_test_") + stem;
}

}  // namespace

// ---------------------------------------------------------------------------
// Construction and forward
// ---------------------------------------------------------------------------

TEST_CASE("build_model lays out blocks from the width list") {
  RngState rng{1, 0};
  Model m = build_model({8, 16, 4}, Activation::kGelu, rng);
  REQUIRE(m.blocks().size() == 2);
  CHECK(m.input_dim() == 8);
  CHECK(m.feature_dim() == 4);
  CHECK(m.blocks()[0].linear.weight.rows() == 16);
  CHECK(m.blocks()[0].linear.weight.cols() == 8);
  CHECK(m.blocks()[0].apply_activation);
  CHECK_FALSE(m.blocks()[1].apply_activation);  // last block: norm only
  CHECK_FALSE(m.has_head());

  for (const auto& b : m.blocks()) {
    for (double v : b.linear.bias.values()) CHECK(v == 0.0);
    for (double v : b.norm.gamma.values()) CHECK(v == 1.0);
    for (double v : b.norm.beta.values()) CHECK(v == 0.0);
  }

  CHECK_THROWS_AS(build_model({8}, Activation::kGelu, rng),
                  ContractViolation);
  CHECK_THROWS_AS(build_model({8, 0, 4}, Activation::kGelu, rng),
                  ContractViolation);
}

TEST_CASE("forward_features is deterministic and shaped [n x feature]") {
  RngState rng{2, 0};
  Model m = build_model({6, 12, 5}, Activation::kGelu, rng);
  Tensor x = random_inputs(rng, 7, 6);
  NoGradGuard guard;
  Tensor f1 = m.forward_features(x);
  Tensor f2 = m.forward_features(x);
  CHECK(f1.rows() == 7);
  CHECK(f1.cols() == 5);
  CHECK(f1.values() == f2.values());
}

TEST_CASE("forward_logits needs a head") {
  RngState rng{3, 0};
  Model m = build_model({4, 6, 3}, Activation::kGelu, rng);
  Tensor x = random_inputs(rng, 2, 4);
  CHECK_THROWS_AS(m.forward_logits(x), ContractViolation);
  extend_head(m, {0, 1}, 1, rng);
  NoGradGuard guard;
  Tensor l = m.forward_logits(x);
  CHECK(l.rows() == 2);
  CHECK(l.cols() == 2);
}

// ---------------------------------------------------------------------------
// Head growth
// ---------------------------------------------------------------------------

TEST_CASE("extend_head appends rows and preserves old ones bit for bit") {
  RngState rng{4, 0};
  Model m = build_model({4, 6, 3}, Activation::kGelu, rng);
  extend_head(m, {5, 9}, 1, rng);
  REQUIRE(m.head().width() == 2);
  CHECK(m.head().class_ids == std::vector<int>{5, 9});
  CHECK(m.head().task_of_row == std::vector<int>{1, 1});
  for (double v : m.head().bias.values()) CHECK(v == 0.0);

  std::vector<double> before = m.head().weight.values();
  extend_head(m, {2}, 2, rng);
  REQUIRE(m.head().width() == 3);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(m.head().weight.values()[i] == before[i]);
  CHECK(m.head().task_of_row == std::vector<int>{1, 1, 2});
  CHECK(m.head().has_class(2));
  CHECK(m.head().row_of(9) == 1);
  CHECK_FALSE(m.head().has_class(7));
}

TEST_CASE("new head rows are small but not zero") {
  RngState rng{5, 0};
  Model m = build_model({4, 6, 16}, Activation::kGelu, rng);
  std::vector<int> many;
  for (int c = 0; c < 64; ++c) many.push_back(c);
  extend_head(m, many, 1, rng);
  double sq = 0.0;
  for (double v : m.head().weight.values()) sq += v * v;
  double std_est = std::sqrt(sq / double(m.head().weight.numel()));
  CHECK(std_est > 0.005);
  CHECK(std_est < 0.02);  // drawn at scale 0.01
}

TEST_CASE("extend_head rejects duplicates and stale task ids") {
  RngState rng{6, 0};
  Model m = build_model({4, 6, 3}, Activation::kGelu, rng);
  extend_head(m, {0, 1}, 1, rng);
  CHECK_THROWS_AS(extend_head(m, {1}, 2, rng), ContractViolation);
  CHECK_THROWS_AS(extend_head(m, {2, 2}, 2, rng), ContractViolation);
  CHECK_THROWS_AS(extend_head(m, {3}, 1, rng), ContractViolation);
  CHECK_THROWS_AS(extend_head(m, {3}, 0, rng), ContractViolation);
}

TEST_CASE("extend_head_domain re-registers the same class set") {
  RngState rng{7, 0};
  Model m = build_model({4, 6, 3}, Activation::kGelu, rng);
  extend_head(m, {0, 1}, 1, rng);
  extend_head_domain(m, {0, 1}, 2, rng);
  REQUIRE(m.head().width() == 4);
  CHECK(m.head().class_ids == std::vector<int>{0, 1, 0, 1});
  CHECK(m.head().task_of_row == std::vector<int>{1, 1, 2, 2});
  CHECK(m.head().row_of(0) == 0);  // first carrier wins

  CHECK_THROWS_AS(extend_head_domain(m, {0, 2}, 3, rng), ContractViolation);
  CHECK_THROWS_AS(extend_head_domain(m, {0}, 3, rng), ContractViolation);
}

// ---------------------------------------------------------------------------
// Parameter groups
// ---------------------------------------------------------------------------

TEST_CASE("group modes carve up the parameters at the published rates") {
  RngState rng{8, 0};
  Rates rates;

  auto fresh = [&rng]() {
    Model m = build_model({4, 6, 3}, Activation::kGelu, rng);
    extend_head(m, {0, 1}, 1, rng);
    return m;
  };

  {
    Model m = fresh();
    auto g = make_groups(m, {GroupSpec::Kind::kSeqFt, ""}, rates);
    REQUIRE(g.size() == 1);
    CHECK(g[0].lr == rates.seqft);
    CHECK(g[0].members.size() == m.named_params().size());
  }
  {
    Model m = fresh();
    auto g = make_groups(m, {GroupSpec::Kind::kSlowLearner, ""}, rates);
    REQUIRE(g.size() == 2);
    CHECK(g[0].name == "backbone");
    CHECK(g[0].lr == rates.backbone);
    CHECK(g[1].name == "head");
    CHECK(g[1].lr == rates.head);
    CHECK(g[1].members.size() == 2);  // weight and bias
  }
  {
    Model m = fresh();
    auto g = make_groups(m, {GroupSpec::Kind::kFixedBackbone, ""}, rates);
    REQUIRE(g.size() == 2);
    CHECK(g[0].lr == 0.0);
    CHECK(g[1].lr == rates.head);
  }
  {
    Model m = fresh();
    CHECK_THROWS_AS(make_groups(m, {GroupSpec::Kind::kHybrid, ""}, rates),
                    ContractViolation);  // no adapter attached
    RngState arng{9, 0};
    attach_lora(m, {}, 2, arng);
    auto g = make_groups(m, {GroupSpec::Kind::kHybrid, ""}, rates);
    bool saw_adapter = false;
    for (const auto& grp : g) {
      if (grp.name == "adapter+bias+norm") {
        saw_adapter = true;
        CHECK(grp.lr == rates.hybrid);
      }
      if (grp.name == "frozen") CHECK(grp.lr == 0.0);
    }
    CHECK(saw_adapter);
  }
  {
    Model m = fresh();
    auto g = make_groups(m, {GroupSpec::Kind::kSubset, "attn"}, rates);
    // Even-indexed linear layers train, the rest is frozen.
    bool has_live = false, has_frozen = false;
    for (const auto& grp : g) {
      if (grp.lr > 0.0 && grp.name != "head") has_live = true;
      if (grp.lr == 0.0) has_frozen = true;
    }
    CHECK(has_live);
    CHECK(has_frozen);
    CHECK_THROWS_AS(make_groups(m, {GroupSpec::Kind::kSubset, "conv"}, rates),
                    ContractViolation);
  }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

TEST_CASE("sgd momentum follows the hand-computed trajectory") {
  Tensor p({1}, {1.0}, true);
  ParamGroup g{"g", 0.1, {p}};
  SgdOptimizer opt({g}, SgdConfig{0.9, 0.0});

  p.mutable_grad()[0] = 1.0;
  opt.step();  // v = 1, p = 1 - 0.1
  CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-15));

  opt.zero_grad();
  p.mutable_grad()[0] = 1.0;
  opt.step();  // v = 0.9 + 1 = 1.9, p = 0.9 - 0.19
  CHECK(p.values()[0] == doctest::Approx(0.71).epsilon(1e-15));
}

TEST_CASE("weight decay enters the velocity, not the parameter directly") {
  Tensor p({1}, {2.0}, true);
  ParamGroup g{"g", 0.1, {p}};
  SgdOptimizer opt({g}, SgdConfig{0.9, 0.5});
  p.mutable_grad()[0] = 0.0;
  opt.step();  // v = 0 + (0 + 0.5 * 2) = 1, p = 2 - 0.1
  CHECK(p.values()[0] == doctest::Approx(1.9).epsilon(1e-15));
  opt.zero_grad();
  opt.step();  // v = 0.9 + 0.95 = 1.85, p = 1.9 - 0.185
  CHECK(p.values()[0] == doctest::Approx(1.715).epsilon(1e-12));
}

TEST_CASE("a zero learning rate freezes the group bit-exactly") {
  Tensor p({2}, {1.0, -2.0}, true);
  ParamGroup g{"frozen", 0.0, {p}};
  SgdOptimizer opt({g}, SgdConfig{0.9, 0.1});
  p.mutable_grad()[0] = 5.0;
  p.mutable_grad()[1] = -3.0;
  opt.step();
  opt.step();
  CHECK(p.values()[0] == 1.0);
  CHECK(p.values()[1] == -2.0);
}

TEST_CASE("group_grad_norm is the euclidean norm over members") {
  Tensor a({2}, {0.0, 0.0}, true);
  Tensor b({1}, {0.0}, true);
  a.mutable_grad()[0] = 3.0;
  a.mutable_grad()[1] = 0.0;
  b.mutable_grad()[0] = 4.0;
  ParamGroup g{"g", 0.1, {a, b}};
  CHECK(group_grad_norm(g) == doctest::Approx(5.0).epsilon(1e-15));
}

// ---------------------------------------------------------------------------
// Cloning and checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("clone is a deep copy with identical behavior") {
  RngState rng{10, 0};
  Model m = build_model({5, 8, 4}, Activation::kGelu, rng);
  extend_head(m, {0, 1, 2}, 1, rng);
  Model c = m.clone();

  Tensor x = random_inputs(rng, 3, 5);
  NoGradGuard guard;
  CHECK(m.forward_logits(x).values() == c.forward_logits(x).values());

  // Mutating the clone leaves the original alone.
  c.blocks()[0].linear.weight.mutable_values()[0] += 1.0;
  CHECK(m.forward_logits(x).values() != c.forward_logits(x).values());
}

TEST_CASE("checkpoint round trip is bit-exact, adapters included") {
  RngState rng{11, 0};
  Model m = build_model({5, 8, 4}, Activation::kRelu, rng);
  extend_head(m, {3, 7}, 1, rng);
  extend_head(m, {1}, 2, rng);
  RngState arng{12, 0};
  attach_lora(m, {0}, 2, arng);
  make_groups(m, {GroupSpec::Kind::kHybrid, ""}, Rates{});

  const std::string path = temp_path("model.ckpt");
  save_checkpoint(m, path);
  Model r = load_checkpoint(path);

  CHECK(r.activation() == m.activation());
  CHECK(r.head().class_ids == m.head().class_ids);
  CHECK(r.head().task_of_row == m.head().task_of_row);

  auto mp = m.named_params();
  auto rp = r.named_params();
  REQUIRE(mp.size() == rp.size());
  for (std::size_t i = 0; i < mp.size(); ++i) {
    CHECK(mp[i].first == rp[i].first);
    CHECK(same_values(mp[i].second, rp[i].second));
  }

  REQUIRE(r.blocks()[0].adapter.has_value());
  CHECK(same_values(r.blocks()[0].adapter->a, m.blocks()[0].adapter->a));
  CHECK(same_values(r.blocks()[0].adapter->b, m.blocks()[0].adapter->b));

  REQUIRE(r.groups().size() == m.groups().size());
  for (std::size_t i = 0; i < m.groups().size(); ++i) {
    CHECK(r.groups()[i].name == m.groups()[i].name);
    CHECK(r.groups()[i].lr == m.groups()[i].lr);
  }

  Tensor x = random_inputs(rng, 4, 5);
  NoGradGuard guard;
  CHECK(m.forward_logits(x).values() == r.forward_logits(x).values());
  std::remove(path.c_str());
}

TEST_CASE("loading a missing checkpoint fails cleanly") {
  CHECK_THROWS(load_checkpoint("/tmp/slca_test_does_not_exist.ckpt"));
}
