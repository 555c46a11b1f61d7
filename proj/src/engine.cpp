#include "slca/engine.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <map>
#include <utility>

#include "slca/errors.hpp"
#include "slca/hash.hpp"
#include "slca/linalg.hpp"
#include "slca/sgd.hpp"

namespace slca {

namespace {

std::vector<std::size_t> index_range(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return idx;
}

std::vector<std::size_t> batch_slice(const std::vector<std::size_t>& order,
                                     std::size_t start, std::size_t take) {
  return {order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(start + take)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

std::vector<double> pretrain_backbone(Model& model, const Dataset& set,
                                      const PretrainConfig& cfg,
                                      RngState& rng) {
  if (set.empty())
    throw ContractViolation("pretrain_backbone: empty warm-up set");
  if (model.has_head())
    throw ContractViolation("pretrain_backbone: model already carries a head");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw ContractViolation("pretrain_backbone: zero epochs or batch size");

  extend_head(model, set.class_list(), 1, rng);
  Head& head = model.head();
  std::vector<std::size_t> labels(set.size());
  for (std::size_t i = 0; i < set.size(); ++i)
    labels[i] = head.row_of(set.labels[i]);

  std::vector<Tensor> params = model.backbone_params();
  params.push_back(head.weight);
  params.push_back(head.bias);
  SgdOptimizer opt({ParamGroup{"pretrain", cfg.lr, std::move(params)}},
                   SgdConfig{cfg.momentum, 0.0});

  std::vector<double> epoch_loss;
  std::vector<std::size_t> order = index_range(set.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(rng, order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - start);
      const auto idx = batch_slice(order, start, take);
      std::vector<std::size_t> y(take);
      for (std::size_t i = 0; i < take; ++i) y[i] = labels[idx[i]];
      Tensor loss = ce(model.forward_logits(gather_rows(set.inputs, idx)), y);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.values()[0] * static_cast<double>(take);
    }
    epoch_loss.push_back(loss_sum / static_cast<double>(set.size()));
  }

  model.drop_head();
  model.set_groups({});
  return epoch_loss;
}

// ---------------------------------------------------------------------------
// Per-task training
// ---------------------------------------------------------------------------

TaskTrainLog train_task(Model& model, const Task& task,
                        const std::vector<ParamGroup>& groups,
                        LossKind loss_kind, const SceConfig& sce_cfg,
                        const TrainConfig& cfg, RngState& rng) {
  if (task.train.empty())
    throw ContractViolation("train_task: task " +
                            std::to_string(task.task_id) +
                            " has no training data");
  if (cfg.epochs == 0 || cfg.batch_size == 0)
    throw ContractViolation("train_task: zero epochs or batch size");
  if (groups.empty()) throw ContractViolation("train_task: no groups");

  Head& head = model.head();
  std::size_t offset = head.width(), count = 0;
  for (std::size_t r = 0; r < head.width(); ++r) {
    if (head.task_of_row[r] != task.task_id) continue;
    if (count == 0) offset = r;
    // extend_head appends, so one task's rows are contiguous.
    else if (r != offset + count)
      throw ContractViolation("train_task: head block for task " +
                              std::to_string(task.task_id) +
                              " is not contiguous");
    ++count;
  }
  if (count == 0)
    throw ContractViolation("train_task: head carries no block for task " +
                            std::to_string(task.task_id));

  std::map<int, std::size_t> local;
  for (std::size_t j = 0; j < count; ++j)
    local[head.class_ids[offset + j]] = j;
  std::vector<std::size_t> labels(task.train.size());
  for (std::size_t i = 0; i < task.train.size(); ++i) {
    const auto it = local.find(task.train.labels[i]);
    if (it == local.end())
      throw ContractViolation("train_task: label " +
                              std::to_string(task.train.labels[i]) +
                              " is outside task " +
                              std::to_string(task.task_id) + "'s block");
    labels[i] = it->second;
  }

  SgdOptimizer opt(groups, SgdConfig{cfg.momentum, cfg.weight_decay});
  const std::size_t dim = head.dim;

  TaskTrainLog log;
  for (const ParamGroup& g : groups) log.group_names.push_back(g.name);

  std::vector<std::size_t> order = index_range(task.train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(rng, order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - start);
      const auto idx = batch_slice(order, start, take);
      std::vector<std::size_t> y(take);
      for (std::size_t i = 0; i < take; ++i) y[i] = labels[idx[i]];

      Tensor block = slice_cols(
          model.forward_logits(gather_rows(task.train.inputs, idx)), offset,
          count);
      Tensor loss = loss_kind == LossKind::kSce ? sce(block, y, sce_cfg)
                                                : ce(block, y);
      opt.zero_grad();
      backward(loss);
      // Rows of other tasks already receive zero gradient through the
      // column slice; zero them outright so no optimizer state can touch
      // old classes even if the loss wiring changes.
      if (head.weight.requires_grad()) {
        auto& wg = head.weight.mutable_grad();
        for (std::size_t r = 0; r < head.width(); ++r) {
          if (r >= offset && r < offset + count) continue;
          std::fill(wg.begin() + static_cast<std::ptrdiff_t>(r * dim),
                    wg.begin() + static_cast<std::ptrdiff_t>((r + 1) * dim),
                    0.0);
        }
      }
      if (head.bias.requires_grad()) {
        auto& bg = head.bias.mutable_grad();
        for (std::size_t r = 0; r < head.width(); ++r)
          if (r < offset || r >= offset + count) bg[r] = 0.0;
      }
      opt.step();
      loss_sum += loss.values()[0] * static_cast<double>(take);
    }
    log.epoch_loss.push_back(loss_sum /
                             static_cast<double>(task.train.size()));
    std::vector<double> norms;
    for (const ParamGroup& g : groups) norms.push_back(group_grad_norm(g));
    log.epoch_group_grad_norm.push_back(std::move(norms));
  }
  return log;
}

// ---------------------------------------------------------------------------
// Classifier alignment
// ---------------------------------------------------------------------------

AlignOutcome align_classifier(const Model& model, const StatsStore& store,
                              const AlignConfig& cfg, RngState rng) {
  if (store.entries.empty())
    throw ContractViolation("align_classifier: no statistics collected");
  if (!model.has_head())
    throw ContractViolation("align_classifier: model has no head");
  if (cfg.samples_per_class == 0 || cfg.epochs == 0 || cfg.batch_size == 0)
    throw ContractViolation("align_classifier: zero samples, epochs, or "
                            "batch size");
  const Head& own = model.head();
  for (const ClassStats& e : store.entries)
    if (!own.has_class(e.class_id))
      throw ContractViolation("align_classifier: head misses class " +
                              std::to_string(e.class_id));

  const int current = store.max_task();
  const auto scaled = scale_means(store, current, cfg.eta);
  std::map<int, Tensor> scaled_mean;
  for (const auto& [cls, mu] : scaled) scaled_mean.emplace(cls, mu);

  const std::size_t d = own.dim;
  const std::size_t per = cfg.samples_per_class;
  const std::size_t n = store.entries.size() * per;
  std::vector<double> feat(n * d);
  std::vector<std::size_t> labels(n);
  std::size_t row = 0;
  for (const ClassStats& e : store.entries) {
    Tensor draws;
    try {
      switch (store.variant) {
        case CovVariant::kFull:
          draws = sample_mvn(scaled_mean.at(e.class_id), e.cov,
                             CovKind::kFull, per, rng);
          break;
        case CovVariant::kDiag:
          draws = sample_mvn(scaled_mean.at(e.class_id), e.cov,
                             CovKind::kDiag, per, rng);
          break;
        case CovVariant::kShared:
          draws = sample_mvn(scaled_mean.at(e.class_id), store.shared_cov,
                             CovKind::kShared, per, rng);
          break;
      }
    } catch (const NumericalFailure& ex) {
      throw NumericalFailure("align_classifier: sampling class " +
                             std::to_string(e.class_id) + " failed: " +
                             ex.what());
    }
    std::memcpy(feat.data() + row * d, draws.values().data(),
                per * d * sizeof(double));
    const std::size_t col = own.row_of(e.class_id);
    for (std::size_t i = 0; i < per; ++i) labels[row + i] = col;
    row += per;
  }
  Tensor features({n, d}, std::move(feat), false);

  AlignOutcome out;
  out.head = own.clone();
  SgdOptimizer opt(
      {ParamGroup{"align", cfg.lr, {out.head.weight, out.head.bias}}},
      SgdConfig{cfg.momentum, 0.0});

  std::vector<std::size_t> order = index_range(n);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(rng, order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - start);
      const auto idx = batch_slice(order, start, take);
      std::vector<std::size_t> y(take);
      for (std::size_t i = 0; i < take; ++i) y[i] = labels[idx[i]];
      Tensor logits =
          linear(gather_rows(features, idx), out.head.weight, out.head.bias);
      Tensor loss = cfg.logit_norm ? logit_norm_ce(logits, y, cfg.tau)
                                   : ce(logits, y);
      opt.zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.values()[0] * static_cast<double>(take);
    }
    out.epoch_loss.push_back(loss_sum / static_cast<double>(n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mode strings
// ---------------------------------------------------------------------------

ModeSpec parse_mode(const std::string& text) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t plus = text.find('+', pos);
    const std::size_t end = plus == std::string::npos ? text.size() : plus;
    tokens.push_back(text.substr(pos, end - pos));
    if (plus == std::string::npos) break;
    pos = plus + 1;
  }
  for (const std::string& t : tokens)
    if (t.empty())
      throw ContractViolation("mode '" + text + "': empty token");

  ModeSpec spec;
  spec.text = text;
  const std::string& base = tokens.front();
  if (base == "seqft") {
    spec.group.kind = GroupSpec::Kind::kSeqFt;
  } else if (base == "sl") {
    spec.group.kind = GroupSpec::Kind::kSlowLearner;
  } else if (base == "fixed-backbone") {
    spec.group.kind = GroupSpec::Kind::kFixedBackbone;
  } else if (base == "hybrid") {
    spec.group.kind = GroupSpec::Kind::kHybrid;
    spec.lora_init = LoraInit::kSvd;
  } else if (base == "hybrid-noinit") {
    spec.group.kind = GroupSpec::Kind::kHybrid;
    spec.lora_init = LoraInit::kRandom;
  } else if (base.rfind("subset:", 0) == 0) {
    const std::string name = base.substr(7);
    if (name != "attn" && name != "mlp" && name != "norm" && name != "bias")
      throw ContractViolation("mode '" + text + "': unknown subset '" + name +
                              "'");
    spec.group.kind = GroupSpec::Kind::kSubset;
    spec.group.subset = name;
  } else {
    throw ContractViolation("mode '" + text + "': unknown base '" + base +
                            "'");
  }

  bool saw_sce = false, saw_ca = false, saw_ln = false;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    bool* flag = t == "sce" ? &saw_sce
               : t == "ca"  ? &saw_ca
               : t == "ln"  ? &saw_ln
                            : nullptr;
    if (flag == nullptr)
      throw ContractViolation("mode '" + text + "': unknown token '" + t +
                              "'");
    if (*flag)
      throw ContractViolation("mode '" + text + "': repeated token '" + t +
                              "'");
    *flag = true;
  }
  if (saw_ln && !saw_ca)
    throw ContractViolation("mode '" + text + "': 'ln' requires 'ca'");
  spec.loss = saw_sce ? LossKind::kSce : LossKind::kCe;
  spec.align = saw_ln   ? AlignKind::kLogitNorm
             : saw_ca   ? AlignKind::kPlainCe
                        : AlignKind::kNone;
  return spec;
}

// ---------------------------------------------------------------------------
// Full runs
// ---------------------------------------------------------------------------

std::uint64_t backbone_bytes_hash(const Model& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Tensor& t : model.backbone_params())
    h = fnv1a64(t.values().data(), t.values().size() * sizeof(double), h);
  return h;
}

RunOutcome run_sequence(const RunConfig& cfg, const ModeSpec& mode,
                        const TaskStream& stream) {
  if (stream.tasks.empty())
    throw ContractViolation("run_sequence: empty task stream");
  const bool domain = stream.scenario == Scenario::kDomainIncremental;
  const bool aligning = mode.align != AlignKind::kNone;
  if (domain && aligning)
    throw ContractViolation(
        "run_sequence: alignment needs per-class heads; domain-incremental "
        "streams evaluate the raw head");
  if (cfg.pretrain_enabled && !stream.has_pretrain())
    throw ContractViolation("run_sequence: pretraining enabled but the "
                            "stream carries no warm-up data");

  RunOutcome out;
  RunReport& report = out.report;
  report.mode = mode.text;
  report.scenario = domain ? "domain-incremental" : "class-incremental";
  report.seed = cfg.seed;
  report.config_fingerprint = cfg.config_fingerprint;
  report.total_tasks = stream.tasks.size();

  // Every phase owns a split of the master stream, drawn in a fixed order
  // so that toggling one phase never shifts another's randomness.
  RngState master{cfg.seed, 0};
  RngState rng_build = split(master);
  RngState rng_pretrain = split(master);
  RngState rng_adapter = split(master);

  out.model = build_model(cfg.model_dims, cfg.activation, rng_build);
  Model& model = out.model;
  if (cfg.pretrain_enabled)
    pretrain_backbone(model, stream.pretrain, cfg.pretrain, rng_pretrain);
  if (mode.group.kind == GroupSpec::Kind::kHybrid) {
    attach_lora(model, {}, cfg.lora_rank, rng_adapter);
    if (mode.lora_init == LoraInit::kSvd) svd_init(model);
  }

  out.store.variant = cfg.cov_variant;
  out.store.gamma = cfg.shared_gamma;
  AlignConfig acfg = cfg.align;
  acfg.logit_norm = mode.align == AlignKind::kLogitNorm;

  if (!cfg.checkpoint_dir.empty())
    std::filesystem::create_directories(cfg.checkpoint_dir);

  try {
    for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
      const Task& task = stream.tasks[t];
      RngState rng_task = split(master);
      if (!domain || t == 0)
        extend_head(model, task.class_ids, task.task_id, rng_task);
      else
        extend_head_domain(model, task.class_ids, task.task_id, rng_task);

      const auto groups = make_groups(model, mode.group, cfg.rates);
      TaskTrainLog log = train_task(model, task, groups, mode.loss, cfg.sce,
                                    cfg.train, rng_task);
      report.task_epoch_loss.push_back(std::move(log.epoch_loss));
      if (aligning) collect_stats(model, task, out.store);

      RngState rng_eval = split(master);
      Head aligned;
      if (aligning) {
        const std::uint64_t before = backbone_bytes_hash(model);
        aligned = align_classifier(model, out.store, acfg, rng_eval).head;
        if (backbone_bytes_hash(model) != before)
          report.backbone_intact_through_alignment = false;
      }
      const Head& eval_head = aligning ? aligned : model.head();

      if (!domain) {
        const SeenEval seen =
            seen_accuracy(model, eval_head, stream.tasks, t + 1);
        report.stage_seen_acc.push_back(seen.overall);
        report.acc_matrix.push_back(seen.per_task);
        report.stage_raw_acc.push_back(
            aligning ? seen_accuracy(model, model.head(), stream.tasks, t + 1)
                           .overall
                     : seen.overall);
      } else {
        std::vector<double> per_task;
        std::vector<Tensor> inputs;
        Dataset seen_union;
        for (std::size_t j = 0; j <= t; ++j) {
          const Dataset& test = stream.tasks[j].test;
          per_task.push_back(domain_eval(model, eval_head, test));
          inputs.push_back(test.inputs);
          seen_union.labels.insert(seen_union.labels.end(),
                                   test.labels.begin(), test.labels.end());
        }
        seen_union.inputs = concat_rows(inputs);
        const double overall = domain_eval(model, eval_head, seen_union);
        report.acc_matrix.push_back(std::move(per_task));
        report.stage_seen_acc.push_back(overall);
        report.stage_raw_acc.push_back(overall);
      }

      if (!cfg.checkpoint_dir.empty()) {
        const std::string stem =
            cfg.checkpoint_dir + "/stage_" + std::to_string(task.task_id);
        save_checkpoint(model, stem + ".ckpt");
        if (aligning) save_stats(out.store, stem + ".stats");
      }
    }
  } catch (const std::exception& e) {
    report.error = e.what();
  }
  if (!report.stage_seen_acc.empty()) finalize_report(report);
  return out;
}

}  // namespace slca
