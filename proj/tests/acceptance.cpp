// Release gate. Each numbered check prints one [PASS]/[FAIL] line with its
// measured margin and the process exits nonzero if any line fails. Every
// tolerance and time budget is pinned as a named constant next to the check
// it gates; nothing here adapts to the observed values.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fd_check.hpp"
#include "slca/config.hpp"
#include "slca/data.hpp"
#include "slca/engine.hpp"
#include "slca/errors.hpp"
#include "slca/evalmetrics.hpp"
#include "slca/linalg.hpp"
#include "slca/lora.hpp"
#include "slca/losses.hpp"
#include "slca/model.hpp"
#include "slca/rng.hpp"
#include "slca/sgd.hpp"
#include "slca/stats.hpp"
#include "slca/tensor.hpp"

using namespace slca;

namespace {

// --- pinned tolerances and budgets -----------------------------------------

constexpr double kFdTol = 1e-5;          // max relative error vs central FD
constexpr int kFdInstances = 20;         // random instances per op or loss
constexpr double kFdBudgetSec = 120.0;

constexpr double kAbsorbTol = 1e-10;     // folded vs adapted logits
constexpr int kAbsorbBatches = 100;
constexpr double kOrthoTol = 1e-8;       // A A^T vs identity at init

constexpr double kScaleInvTol = 1e-12;   // normalized CE under logit scaling
constexpr std::size_t kArgmaxRows = 10000;
constexpr double kWorkedTol = 1e-9;

constexpr double kScheduleTol = 1e-12;   // mean-scaling closed form

constexpr std::size_t kSampleDraws = 100000;
constexpr double kSampleMeanTol = 0.02;  // per coordinate
constexpr double kSampleCovTol = 0.05;   // per entry
constexpr double kSampleBudgetSec = 30.0;

constexpr double kTrendBudgetSec = 600.0;
constexpr double kSlOverSeqftPts = 10.0;   // rate decoupling vs uniform rate
constexpr double kCaOverSlPts = 5.0;       // alignment gain on hard stream
constexpr double kSceSlackPts = 1.0;       // symmetric loss must not degrade
constexpr double kHybridParityPts = 3.0;   // adapters vs full fine-tuning
constexpr double kDiagParityPts = 2.0;     // diagonal vs full covariance

constexpr double kCkaSelfTol = 1e-10;
constexpr double kCkaInvTol = 1e-8;

// --- reporting --------------------------------------------------------------

int g_failures = 0;

std::string strf(const char* fmt, ...) {
  char buf[512];
  va_list args;
  va_start(args, fmt);
  std::vsnprintf(buf, sizeof(buf), fmt, args);
  va_end(args);
  return buf;
}

void gate(int number, const std::string& name,
          const std::function<std::pair<bool, std::string>()>& check) {
  bool ok = false;
  std::string detail;
  try {
    std::tie(ok, detail) = check();
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  std::printf("[%s] criterion %2d: %s (%s)\n", ok ? "PASS" : "FAIL", number,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

// --- shared helpers ---------------------------------------------------------

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor random_tensor(RngState& rng, std::vector<std::size_t> shape,
                     double scale = 1.0) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  fill_normal(rng, v.data(), n);
  for (double& x : v) x *= scale;
  return Tensor(std::move(shape), std::move(v));
}

// Keeps relu probes away from the kink so the central step stays one-sided.
Tensor random_away_from_zero(RngState& rng, std::vector<std::size_t> shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (double& x : t.mutable_values())
    if (std::abs(x) < 0.1) x = (x < 0.0 ? x - 0.1 : x + 0.1);
  return t;
}

std::vector<std::size_t> random_labels(RngState& rng, std::size_t n,
                                       std::size_t classes) {
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = uniform_below(rng, classes);
  return labels;
}

// Weighted sum against a fixed tensor, so upstream gradients are non-uniform.
Tensor weighted(const Tensor& t, const Tensor& w) { return sum(mul(t, w)); }

// --- criterion 1: gradient oracle -------------------------------------------

struct OracleSuite {
  const char* name;
  std::function<fdcheck::FdResult(RngState&)> instance;
};

std::vector<OracleSuite> oracle_suites() {
  using fdcheck::fd_check;
  std::vector<OracleSuite> suites;

  suites.push_back({"add/sub/mul", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 4});
    fdcheck::FdResult worst;
    auto probe = [&](auto op) {
      auto res = fd_check(
          [&](const std::vector<Tensor>& p) { return weighted(op(p[0], p[1]), w); },
          {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})});
      worst.max_rel_err = std::max(worst.max_rel_err, res.max_rel_err);
      worst.checked += res.checked;
    };
    probe([](const Tensor& a, const Tensor& b) { return add(a, b); });
    probe([](const Tensor& a, const Tensor& b) { return sub(a, b); });
    probe([](const Tensor& a, const Tensor& b) { return mul(a, b); });
    return worst;
  }});

  suites.push_back({"scalar chain", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 4});
    return fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(add_scalar(mul_scalar(neg(p[0]), 1.7), 0.3), w);
        },
        {random_tensor(rng, {3, 4})});
  }});

  suites.push_back({"relu", [](RngState& rng) {
    Tensor w = random_tensor(rng, {4, 3});
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(relu(p[0]), w); },
        {random_away_from_zero(rng, {4, 3})});
  }});

  suites.push_back({"gelu", [](RngState& rng) {
    Tensor w = random_tensor(rng, {4, 3});
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(gelu(p[0]), w); },
        {random_tensor(rng, {4, 3})});
  }});

  suites.push_back({"log", [](RngState& rng) {
    Tensor w = random_tensor(rng, {4, 3});
    Tensor pos = random_tensor(rng, {4, 3});
    for (double& v : pos.mutable_values()) v = std::abs(v) + 0.5;
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(log(p[0]), w); },
        {pos});
  }});

  suites.push_back({"matmul", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 5});
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(matmul(p[0], p[1]), w); },
        {random_tensor(rng, {3, 4}), random_tensor(rng, {4, 5})});
  }});

  suites.push_back({"transpose", [](RngState& rng) {
    Tensor w = random_tensor(rng, {4, 3});
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(transpose(p[0]), w); },
        {random_tensor(rng, {3, 4})});
  }});

  suites.push_back({"linear", [](RngState& rng) {
    Tensor w = random_tensor(rng, {2, 5});
    return fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(linear(p[0], p[1], p[2]), w);
        },
        {random_tensor(rng, {2, 3}), random_tensor(rng, {5, 3}),
         random_tensor(rng, {5})});
  }});

  suites.push_back({"layer_norm", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 6});
    return fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(layer_norm(p[0], p[1], p[2]), w);
        },
        {random_tensor(rng, {3, 6}), random_tensor(rng, {6}),
         random_tensor(rng, {6})});
  }});

  suites.push_back({"softmax_rows", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 4});
    return fd_check(
        [&](const std::vector<Tensor>& p) { return weighted(softmax_rows(p[0]), w); },
        {random_tensor(rng, {3, 4})});
  }});

  suites.push_back({"log_softmax_rows", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 4});
    return fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(log_softmax_rows(p[0]), w);
        },
        {random_tensor(rng, {3, 4})});
  }});

  suites.push_back({"logit_normalize", [](RngState& rng) {
    Tensor w = random_tensor(rng, {3, 4});
    return fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(logit_normalize(p[0], 0.1), w);
        },
        {random_away_from_zero(rng, {3, 4})});
  }});

  suites.push_back({"reductions", [](RngState& rng) {
    fdcheck::FdResult worst;
    auto merge = [&](fdcheck::FdResult r) {
      worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
      worst.checked += r.checked;
    };
    merge(fd_check([](const std::vector<Tensor>& p) { return sum(p[0]); },
                   {random_tensor(rng, {3, 4})}));
    merge(fd_check([](const std::vector<Tensor>& p) { return mean(p[0]); },
                   {random_tensor(rng, {3, 4})}));
    merge(fd_check([](const std::vector<Tensor>& p) { return l2_norm(p[0]); },
                   {random_away_from_zero(rng, {3, 4})}));
    return worst;
  }});

  suites.push_back({"slice/concat", [](RngState& rng) {
    Tensor w2 = random_tensor(rng, {2, 4});
    fdcheck::FdResult worst;
    auto merge = [&](fdcheck::FdResult r) {
      worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
      worst.checked += r.checked;
    };
    merge(fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(slice_rows(p[0], 1, 2), w2);
        },
        {random_tensor(rng, {4, 4})}));
    Tensor w3 = random_tensor(rng, {4, 2});
    merge(fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(slice_cols(p[0], 1, 2), w3);
        },
        {random_tensor(rng, {4, 4})}));
    Tensor w4 = random_tensor(rng, {5, 3});
    merge(fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(concat_rows({p[0], p[1]}), w4);
        },
        {random_tensor(rng, {2, 3}), random_tensor(rng, {3, 3})}));
    Tensor w5 = random_tensor(rng, {3, 5});
    merge(fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(concat_cols({p[0], p[1]}), w5);
        },
        {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 3})}));
    return worst;
  }});

  suites.push_back({"gather/select", [](RngState& rng) {
    Tensor w = random_tensor(rng, {4, 3});
    fdcheck::FdResult worst;
    // Duplicate row indices: the backward must accumulate, not overwrite.
    auto g = fd_check(
        [&](const std::vector<Tensor>& p) {
          return weighted(gather_rows(p[0], {1, 0, 1, 2}), w);
        },
        {random_tensor(rng, {3, 3})});
    worst = g;
    auto s = fd_check(
        [&](const std::vector<Tensor>& p) {
          return sum(select_per_row(p[0], {1, 0, 2}));
        },
        {random_tensor(rng, {3, 3})});
    worst.max_rel_err = std::max(worst.max_rel_err, s.max_rel_err);
    worst.checked += s.checked;
    return worst;
  }});

  suites.push_back({"ce", [](RngState& rng) {
    auto labels = random_labels(rng, 5, 4);
    return fd_check(
        [labels](const std::vector<Tensor>& p) { return ce(p[0], labels); },
        {random_tensor(rng, {5, 4})});
  }});

  suites.push_back({"logit_norm_ce", [](RngState& rng) {
    auto labels = random_labels(rng, 5, 4);
    return fd_check(
        [labels](const std::vector<Tensor>& p) {
          return logit_norm_ce(p[0], labels, 0.1);
        },
        {random_away_from_zero(rng, {5, 4})});
  }});

  suites.push_back({"sce", [](RngState& rng) {
    auto labels = random_labels(rng, 5, 4);
    return fd_check(
        [labels](const std::vector<Tensor>& p) {
          return sce(p[0], labels, SceConfig{});
        },
        {random_tensor(rng, {5, 4})});
  }});

  // Two-block forward to logits, trained objective on top: the composition
  // must differentiate as cleanly as the pieces.
  suites.push_back({"block chain", [](RngState& rng) {
    auto labels = random_labels(rng, 4, 5);
    return fd_check(
        [labels](const std::vector<Tensor>& p) {
          Tensor h = gelu(layer_norm(linear(p[0], p[1], p[2]), p[3], p[4]));
          Tensor logits = linear(h, p[5], p[6]);
          return sce(logits, labels, SceConfig{});
        },
        {random_tensor(rng, {4, 6}), random_tensor(rng, {8, 6}, 0.5),
         random_tensor(rng, {8}, 0.1), random_tensor(rng, {8}, 0.5),
         random_tensor(rng, {8}, 0.1), random_tensor(rng, {5, 8}, 0.5),
         random_tensor(rng, {5}, 0.1)});
  }});

  return suites;
}

std::pair<bool, std::string> criterion_gradient_oracle() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t elements = 0;
  std::string offender;
  const auto suites = oracle_suites();
  for (std::size_t si = 0; si < suites.size(); ++si) {
    RngState rng{1000 + si, 0};
    for (int inst = 0; inst < kFdInstances; ++inst) {
      const auto res = suites[si].instance(rng);
      elements += res.checked;
      if (res.max_rel_err > worst) {
        worst = res.max_rel_err;
        offender = suites[si].name;
      }
    }
  }
  const double dt = seconds_since(t0);
  const bool ok = worst < kFdTol && dt < kFdBudgetSec;
  return {ok, strf("%zu suites x %d instances, %zu elements, max rel err "
                   "%.2e at %s vs tol %.0e, %.1f s vs budget %.0f s",
                   suites.size(), kFdInstances, elements, worst,
                   offender.c_str(), kFdTol, dt, kFdBudgetSec)};
}

// --- criterion 2: adapter identity and absorption ----------------------------

std::pair<bool, std::string> criterion_adapter_algebra() {
  RngState rng{2025, 0};
  Model m = build_model({6, 12, 8}, Activation::kGelu, rng);
  extend_head(m, {0, 1, 2, 3}, 1, rng);

  // Identity at init: B = 0, so attaching and then re-seeding A from the
  // base weights must leave every logit bit-for-bit unchanged.
  std::vector<Tensor> batches;
  for (int i = 0; i < 10; ++i) batches.push_back(random_tensor(rng, {7, 6}));
  std::vector<std::vector<double>> before;
  {
    NoGradGuard guard;
    for (const Tensor& x : batches) before.push_back(m.forward_logits(x).values());
  }
  RngState arng{2026, 0};
  attach_lora(m, {}, 4, arng);
  svd_init(m);
  bool identity = true;
  {
    NoGradGuard guard;
    for (std::size_t i = 0; i < batches.size(); ++i)
      if (m.forward_logits(batches[i]).values() != before[i]) identity = false;
  }

  // Orthonormal rows at init, per adapter.
  double ortho_err = 0.0;
  for (const Block& block : m.blocks()) {
    const Tensor& a = block.adapter->a;
    const std::size_t k = block.adapter->rank;
    NoGradGuard guard;
    Tensor gram = matmul(a, transpose(a));
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        ortho_err = std::max(
            ortho_err, std::abs(gram.at(i, j) - (i == j ? 1.0 : 0.0)));
  }

  // A few optimizer steps on the adapter group so B leaves zero, then the
  // folded weights must reproduce the adapted logits.
  {
    auto groups = make_groups(m, {GroupSpec::Kind::kHybrid, ""}, Rates{});
    SgdOptimizer opt(groups, SgdConfig{0.9, 0.0});
    for (int step = 0; step < 5; ++step) {
      Tensor x = random_tensor(rng, {8, 6});
      Tensor loss = ce(m.forward_logits(x), random_labels(rng, 8, 4));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  Model folded = m.clone();
  absorb_all(folded);
  double absorb_err = 0.0;
  {
    NoGradGuard guard;
    for (int i = 0; i < kAbsorbBatches; ++i) {
      Tensor x = random_tensor(rng, {6, 6});
      const auto adapted = m.forward_logits(x).values();
      const auto merged = folded.forward_logits(x).values();
      for (std::size_t j = 0; j < adapted.size(); ++j)
        absorb_err = std::max(absorb_err, std::abs(adapted[j] - merged[j]));
    }
  }

  const bool ok = identity && ortho_err < kOrthoTol && absorb_err < kAbsorbTol;
  return {ok, strf("init identity %s, |A A^T - I| %.2e vs %.0e, fold error "
                   "%.2e vs %.0e over %d batches",
                   identity ? "bitwise" : "BROKEN", ortho_err, kOrthoTol,
                   absorb_err, kAbsorbTol, kAbsorbBatches)};
}

// --- criterion 3: normalized-loss properties ---------------------------------

std::pair<bool, std::string> criterion_normalized_loss() {
  RngState rng{3001, 0};

  double scale_err = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    Tensor logits = random_away_from_zero(rng, {8, 5});
    const auto labels = random_labels(rng, 8, 5);
    const double base = logit_norm_ce(logits, labels, 0.1).item();
    for (double c : {0.25, 3.0, 1000.0}) {
      Tensor scaled = mul_scalar(logits, c);
      scale_err = std::max(
          scale_err, std::abs(logit_norm_ce(scaled, labels, 0.1).item() - base));
    }
  }

  std::size_t argmax_hits = 0;
  {
    NoGradGuard guard;
    Tensor rows = random_tensor(rng, {kArgmaxRows, 7});
    Tensor normed = logit_normalize(rows, 0.1);
    for (std::size_t r = 0; r < kArgmaxRows; ++r) {
      std::size_t raw = 0, post = 0;
      for (std::size_t c = 1; c < 7; ++c) {
        if (rows.at(r, c) > rows.at(r, raw)) raw = c;
        if (normed.at(r, c) > normed.at(r, post)) post = c;
      }
      argmax_hits += raw == post;
    }
  }

  // Logits (3, 4) at tau = 0.1 normalize to (6, 8); the larger class then
  // costs log(1 + exp(-2)).
  const double worked =
      logit_norm_ce(Tensor::matrix(1, 2, {3.0, 4.0}), {1}, 0.1).item();
  const double worked_err = std::abs(worked - std::log(1.0 + std::exp(-2.0)));

  const bool ok = scale_err < kScaleInvTol && argmax_hits == kArgmaxRows &&
                  worked_err < kWorkedTol;
  return {ok, strf("scale drift %.2e vs %.0e, argmax preserved %zu/%zu, "
                   "worked value off by %.2e vs %.0e",
                   scale_err, kScaleInvTol, argmax_hits, kArgmaxRows,
                   worked_err, kWorkedTol)};
}

// --- criterion 4: mean-scaling schedule --------------------------------------

std::pair<bool, std::string> criterion_mean_schedule() {
  bool newest_exact = true;
  double closed_form_err = 0.0;
  for (int total = 1; total <= 50; ++total) {
    if (mean_scale(total, total, 0.02) != 1.0) newest_exact = false;
    const double expected = 1.0 / (1.0 + 0.02 * (total - 1));
    closed_form_err = std::max(
        closed_form_err, std::abs(mean_scale(1, total, 0.02) - expected));
  }
  const bool ok = newest_exact && closed_form_err < kScheduleTol;
  return {ok, strf("newest-task scale %s 1.0, oldest-task drift %.2e vs %.0e "
                   "over 50 horizons",
                   newest_exact ? "exactly" : "NOT", closed_form_err,
                   kScheduleTol)};
}

// --- criterion 5: sampling fidelity ------------------------------------------

std::pair<bool, std::string> criterion_sampling_fidelity() {
  const auto t0 = Clock::now();

  StatsStore store;
  store.variant = CovVariant::kFull;
  ClassStats cs;
  cs.class_id = 3;
  cs.task_id = 1;
  cs.count = 100;
  cs.mean = Tensor({3}, {0.5, -1.0, 2.0});
  cs.cov = Tensor::matrix(3, 3, {1.0, 0.3, 0.1,
                                 0.3, 1.0, 0.2,
                                 0.1, 0.2, 1.0});
  store.entries.push_back(std::move(cs));

  const auto path =
      std::filesystem::temp_directory_path() / "slca_accept_stats.bin";
  save_stats(store, path.string());
  const StatsStore loaded = load_stats(path.string());
  std::filesystem::remove(path);
  const ClassStats& entry = loaded.find(3);

  RngState rng{5005, 0};
  NoGradGuard guard;
  Tensor draws =
      sample_mvn(entry.mean, entry.cov, CovKind::kFull, kSampleDraws, rng);

  double mu_hat[3] = {0, 0, 0};
  for (std::size_t r = 0; r < kSampleDraws; ++r)
    for (std::size_t c = 0; c < 3; ++c) mu_hat[c] += draws.at(r, c);
  for (double& m : mu_hat) m /= static_cast<double>(kSampleDraws);

  double mean_err = 0.0;
  for (std::size_t c = 0; c < 3; ++c)
    mean_err = std::max(mean_err, std::abs(mu_hat[c] - entry.mean.values()[c]));

  double cov_err = 0.0;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < kSampleDraws; ++r)
        s += (draws.at(r, i) - mu_hat[i]) * (draws.at(r, j) - mu_hat[j]);
      s /= static_cast<double>(kSampleDraws);
      cov_err = std::max(cov_err, std::abs(s - entry.cov.at(i, j)));
    }

  const double dt = seconds_since(t0);
  const bool ok =
      mean_err < kSampleMeanTol && cov_err < kSampleCovTol && dt < kSampleBudgetSec;
  return {ok, strf("%zu draws through a save/load round trip: mean off %.4f "
                   "vs %.2f, cov off %.4f vs %.2f, %.1f s vs %.0f s",
                   kSampleDraws, mean_err, kSampleMeanTol, cov_err,
                   kSampleCovTol, dt, kSampleBudgetSec)};
}

// --- criteria 6-9, 11: benchmark runs ----------------------------------------

// Two frozen streams drive every benchmark check. Stream A is easy enough
// for alignment to saturate and exists to expose the uniform-rate collapse;
// stream B overlaps classes hard enough that the continual head degrades
// and alignment has real work to do.
ExperimentConfig trend_config(char stream, const std::string& mode) {
  ExperimentConfig cfg;
  cfg.output_dir = "unused";
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.mode = mode;
  cfg.stream.classes = 20;
  cfg.stream.input_dim = 24;
  cfg.stream.tasks = 10;
  cfg.stream.separation = stream == 'A' ? 3.0 : 1.5;
  cfg.stream.train_per_class = 50;
  cfg.stream.test_per_class = 50;
  cfg.stream.stream_seed = stream == 'A' ? 7 : 11;
  cfg.pretrain.enabled = true;
  cfg.pretrain.classes = 50;
  cfg.pretrain.train_per_class = 200;
  cfg.pretrain.separation = 3.0;
  cfg.pretrain.mean_shift = stream == 'A' ? 0.0 : 1.0;
  cfg.pretrain.epochs = 50;
  cfg.pretrain.data_seed = 99;
  cfg.layers = {24, 48, 32};
  cfg.optim.epochs = 20;
  cfg.optim.batch_size = 16;
  cfg.optim.weight_decay = 0.03;
  return cfg;
}

const TaskStream& trend_stream(char which) {
  static std::map<char, TaskStream> cache;
  auto it = cache.find(which);
  if (it == cache.end())
    it = cache.emplace(which, build_stream(trend_config(which, "sl"))).first;
  return it->second;
}

struct TrendSet {
  std::vector<RunOutcome> runs;       // seed order 1..5
  std::vector<double> last;           // final-stage seen accuracy
  std::vector<double> raw_final;      // same through the continual head
  std::string error;                  // first failed seed, if any
};

const TrendSet& trend_runs(char stream, const std::string& mode,
                           CovVariant cov, LoraInit init) {
  static std::map<std::string, TrendSet> cache;
  const std::string key =
      strf("%c|%s|%d|%d", stream, mode.c_str(), static_cast<int>(cov),
           static_cast<int>(init));
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  ExperimentConfig cfg = trend_config(stream, mode);
  cfg.covariance = cov;
  cfg.lora_init = init;
  const ModeSpec spec = config_mode(cfg);
  const TaskStream& tasks = trend_stream(stream);

  TrendSet set;
  for (const std::uint64_t seed : cfg.seeds) {
    RunOutcome out = run_sequence(to_run_config(cfg, seed, ""), spec, tasks);
    if (!out.report.error.empty() && set.error.empty())
      set.error = strf("seed %llu: %s",
                       static_cast<unsigned long long>(seed),
                       out.report.error.c_str());
    set.last.push_back(out.report.last_acc);
    set.raw_final.push_back(out.report.stage_raw_acc.empty()
                                ? 0.0
                                : out.report.stage_raw_acc.back());
    set.runs.push_back(std::move(out));
  }
  return cache.emplace(key, std::move(set)).first->second;
}

const TrendSet& trend_default(char stream, const std::string& mode) {
  return trend_runs(stream, mode, CovVariant::kFull, LoraInit::kSvd);
}

std::pair<bool, std::string> criterion_trend_reproduction() {
  const auto t0 = Clock::now();
  const TrendSet& a_seqft = trend_default('A', "seqft");
  const TrendSet& a_sl = trend_default('A', "sl");
  const TrendSet& b_sl = trend_default('B', "sl");
  const TrendSet& b_ca = trend_default('B', "sl+ca+ln");
  const TrendSet& b_sce = trend_default('B', "sl+sce+ca+ln");
  const double dt = seconds_since(t0);

  for (const TrendSet* s : {&a_seqft, &a_sl, &b_sl, &b_ca, &b_sce})
    if (!s->error.empty()) return {false, "run failed: " + s->error};

  // Differences of per-mode medians, in accuracy points.
  const double sl_gap = 100.0 * (median(a_sl.last) - median(a_seqft.last));
  const double ca_gap = 100.0 * (median(b_ca.last) - median(b_sl.last));
  const double sce_gap = 100.0 * (median(b_sce.last) - median(b_ca.last));

  const bool ok = sl_gap >= kSlOverSeqftPts && ca_gap >= kCaOverSlPts &&
                  sce_gap >= -kSceSlackPts && dt < kTrendBudgetSec;
  return {ok, strf("decoupled-rate gain %+.1f pts vs >= %.0f, alignment gain "
                   "%+.1f pts vs >= %.0f, symmetric-loss shift %+.1f pts vs "
                   ">= -%.0f, 25 runs in %.0f s vs %.0f s",
                   sl_gap, kSlOverSeqftPts, ca_gap, kCaOverSlPts, sce_gap,
                   kSceSlackPts, dt, kTrendBudgetSec)};
}

std::pair<bool, std::string> criterion_alignment_purity() {
  std::size_t runs = 0, intact = 0, aligned_stages = 0;
  for (const char* key : {"A|seqft", "A|sl", "B|sl", "B|sl+ca+ln",
                          "B|sl+sce+ca+ln"}) {
    const char stream = key[0];
    const std::string mode = key + 2;
    const TrendSet& set = trend_default(stream, mode);
    for (const RunOutcome& out : set.runs) {
      ++runs;
      intact += out.report.backbone_intact_through_alignment;
      if (mode.find("ca") != std::string::npos)
        aligned_stages += out.report.stages_completed;
    }
  }
  // The purity flag only means something if alignment actually ran.
  const bool ok = runs == 25 && intact == runs && aligned_stages == 100;
  return {ok, strf("backbone bytes intact on %zu/%zu runs, %zu aligned stages "
                   "exercised",
                   intact, runs, aligned_stages)};
}

std::pair<bool, std::string> criterion_hybrid_parity() {
  const TrendSet& full = trend_default('A', "sl+sce+ca+ln");
  const TrendSet& svd =
      trend_runs('A', "hybrid+sce+ca+ln", CovVariant::kFull, LoraInit::kSvd);
  const TrendSet& rand =
      trend_runs('A', "hybrid+sce+ca+ln", CovVariant::kFull, LoraInit::kRandom);
  for (const TrendSet* s : {&full, &svd, &rand})
    if (!s->error.empty()) return {false, "run failed: " + s->error};

  const double parity = 100.0 * (median(svd.last) - median(full.last));
  const double init_edge = 100.0 * (median(svd.last) - median(rand.last));
  const bool ok = std::abs(parity) <= kHybridParityPts && init_edge >= 0.0;
  return {ok, strf("adapter run %+.1f pts vs full within %.0f, seeded init "
                   "%+.1f pts vs random init (needs >= 0)",
                   parity, kHybridParityPts, init_edge)};
}

std::pair<bool, std::string> criterion_diag_covariance() {
  const TrendSet& full = trend_default('A', "sl+sce+ca+ln");
  const TrendSet& diag =
      trend_runs('A', "sl+sce+ca+ln", CovVariant::kDiag, LoraInit::kSvd);
  for (const TrendSet* s : {&full, &diag})
    if (!s->error.empty()) return {false, "run failed: " + s->error};

  const double gap = 100.0 * (median(diag.last) - median(full.last));
  const bool ok = std::abs(gap) <= kDiagParityPts;
  return {ok, strf("diagonal covariance %+.1f pts vs full within %.0f", gap,
                   kDiagParityPts)};
}

// --- criterion 10: metric arithmetic and representation similarity -----------

std::pair<bool, std::string> criterion_metric_arithmetic() {
  bool finalize_exact = true;
  {
    RunReport r;
    r.stage_seen_acc = {0.9, 0.8};
    finalize_report(r);
    finalize_exact &= r.last_acc == 0.8 && r.inc_acc == (0.9 + 0.8) / 2.0;
  }
  {
    RunReport r;
    r.stage_seen_acc = {0.6};
    finalize_report(r);
    finalize_exact &= r.last_acc == 0.6 && r.inc_acc == 0.6;
  }
  {
    RunReport r;
    r.stage_seen_acc = {1.0, 0.5, 0.25};
    finalize_report(r);
    finalize_exact &=
        r.last_acc == 0.25 && r.inc_acc == (1.0 + 0.5 + 0.25) / 3.0;
  }

  RngState rng{10010, 0};
  NoGradGuard guard;
  Tensor x = random_tensor(rng, {50, 8});
  Tensor y = random_tensor(rng, {50, 8});

  const double self_err = std::abs(cka(x, x) - 1.0);
  const double sym_err = std::abs(cka(x, y) - cka(y, x));

  // Orthogonal map: a product of Givens rotations applied to the identity.
  std::vector<double> q(8 * 8, 0.0);
  for (std::size_t i = 0; i < 8; ++i) q[i * 8 + i] = 1.0;
  Tensor rot({8, 8}, std::move(q));
  for (std::size_t i = 0; i + 1 < 8; ++i) {
    const double theta = uniform(rng, 0.0, 6.28);
    std::vector<double> g(8 * 8, 0.0);
    for (std::size_t d = 0; d < 8; ++d) g[d * 8 + d] = 1.0;
    g[i * 8 + i] = std::cos(theta);
    g[i * 8 + (i + 1)] = -std::sin(theta);
    g[(i + 1) * 8 + i] = std::sin(theta);
    g[(i + 1) * 8 + (i + 1)] = std::cos(theta);
    rot = matmul(rot, Tensor({8, 8}, std::move(g)));
  }
  Tensor xr = matmul(x, rot);
  const double rot_self_err = std::abs(cka(x, xr) - 1.0);
  const double rot_pair_err = std::abs(cka(xr, y) - cka(x, y));
  const double scale_err = std::abs(cka(mul_scalar(x, 17.0), y) - cka(x, y));

  const bool ok = finalize_exact && self_err < kCkaSelfTol &&
                  sym_err < kCkaSelfTol && rot_self_err < kCkaInvTol &&
                  rot_pair_err < kCkaInvTol && scale_err < kCkaInvTol;
  return {ok, strf("final/incremental accuracy %s, similarity: self off "
                   "%.1e, asymmetry %.1e, rotation drift %.1e/%.1e, scale "
                   "drift %.1e",
                   finalize_exact ? "exact" : "WRONG", self_err, sym_err,
                   rot_self_err, rot_pair_err, scale_err)};
}

// --- criterion 11: probe-gap direction ---------------------------------------

Dataset concat_split(const std::vector<Task>& tasks, bool train) {
  Dataset out;
  std::vector<Tensor> inputs;
  for (const Task& t : tasks) {
    const Dataset& d = train ? t.train : t.test;
    inputs.push_back(d.inputs);
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
  }
  out.inputs = concat_rows(inputs);
  return out;
}

std::pair<bool, std::string> criterion_probe_gap() {
  const TrendSet& set = trend_default('B', "sl+sce+ca+ln");
  if (!set.error.empty()) return {false, "run failed: " + set.error};

  const Dataset train = concat_split(trend_stream('B').tasks, true);
  const Dataset test = concat_split(trend_stream('B').tasks, false);

  std::vector<double> probe;
  for (std::size_t i = 0; i < set.runs.size(); ++i) {
    RngState rng{set.runs[i].report.seed, 0};
    probe.push_back(
        linear_probe(set.runs[i].model, train, test, ProbeConfig{}, rng));
  }
  const double probe_med = median(probe);
  const double head_med = median(set.raw_final);
  const bool ok = probe_med >= head_med;
  return {ok, strf("frozen-feature probe %.3f vs continual head %.3f "
                   "(probe must not trail)",
                   probe_med, head_med)};
}

}  // namespace

int main() {
  std::printf("release gate: 11 checks\n");
  gate(1, "gradient oracle", criterion_gradient_oracle);
  gate(2, "adapter identity and absorption", criterion_adapter_algebra);
  gate(3, "normalized-loss properties", criterion_normalized_loss);
  gate(4, "mean-scaling schedule", criterion_mean_schedule);
  gate(5, "sampling fidelity", criterion_sampling_fidelity);
  gate(6, "trend reproduction", criterion_trend_reproduction);
  gate(7, "alignment leaves the backbone untouched", criterion_alignment_purity);
  gate(8, "hybrid parity", criterion_hybrid_parity);
  gate(9, "diagonal-covariance bound", criterion_diag_covariance);
  gate(10, "metric arithmetic", criterion_metric_arithmetic);
  gate(11, "probe-gap direction", criterion_probe_gap);

  if (g_failures) {
    std::printf("release gate: %d check(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("release gate: all checks passed\n");
  return 0;
}
