#include "slca/config.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "slca/errors.hpp"
#include "slca/hash.hpp"
#include "slca/report.hpp"

namespace slca {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& where, const std::string& what) {
  throw ParseError(where + ": " + what);
}

void expect_object(const json& j, const std::string& where) {
  if (!j.is_object()) bad(where, "expected an object");
}

void expect_keys(const json& j, const std::set<std::string>& allowed,
                 const std::string& where) {
  for (const auto& item : j.items())
    if (allowed.find(item.key()) == allowed.end())
      bad(where, "unknown key '" + item.key() + "'");
}

double get_num(const json& j, const char* key, double fallback,
               const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) bad(where + "." + key, "expected a number");
  return j.at(key).get<double>();
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback,
                      const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    bad(where + "." + key, "expected a nonnegative integer");
  return v.get<std::size_t>();
}

std::uint64_t get_seed(const json& j, const char* key, std::uint64_t fallback,
                       const std::string& where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    bad(where + "." + key, "expected a nonnegative integer");
  return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const char* key, bool fallback,
              const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) bad(where + "." + key, "expected a boolean");
  return j.at(key).get<bool>();
}

std::string get_str(const json& j, const char* key,
                    const std::string& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) bad(where + "." + key, "expected a string");
  return j.at(key).get<std::string>();
}

void require_positive(double v, const std::string& where) {
  if (!(v > 0.0)) bad(where, "must be positive");
}

void require_nonneg(double v, const std::string& where) {
  if (v < 0.0) bad(where, "must be nonnegative");
}

void require_count(std::size_t v, const std::string& where) {
  if (v == 0) bad(where, "must be positive");
}

void require_unit(double v, const std::string& where) {
  if (v < 0.0 || v >= 1.0) bad(where, "must lie in [0, 1)");
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  expect_object(j, "config");
  expect_keys(j,
              {"output_dir", "seeds", "mode", "scenario", "stream",
               "pretrain", "model", "optim", "rates", "loss", "align", "lora",
               "stats", "save_checkpoints"},
              "config");

  ExperimentConfig cfg;
  cfg.output_dir = get_str(j, "output_dir", "", "config");
  if (cfg.output_dir.empty()) bad("config.output_dir", "required");

  if (j.contains("seeds")) {
    if (!j.at("seeds").is_array() || j.at("seeds").empty())
      bad("config.seeds", "expected a non-empty array");
    cfg.seeds.clear();
    for (const json& s : j.at("seeds")) {
      if (!s.is_number_integer() || s.get<std::int64_t>() < 0)
        bad("config.seeds", "expected nonnegative integers");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
    std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
    if (uniq.size() != cfg.seeds.size())
      bad("config.seeds", "duplicate seed");
  }

  cfg.mode = get_str(j, "mode", cfg.mode, "config");
  ModeSpec parsed;
  try {
    parsed = parse_mode(cfg.mode);
  } catch (const ContractViolation& e) {
    bad("config.mode", e.what());
  }
  if (cfg.mode.rfind("hybrid-noinit", 0) == 0)
    bad("config.mode",
        "'hybrid-noinit' is an engine-level alias; set lora.init to "
        "\"random\" instead");

  const std::string scen =
      get_str(j, "scenario", "class-incremental", "config");
  if (scen == "class-incremental")
    cfg.scenario = Scenario::kClassIncremental;
  else if (scen == "domain-incremental")
    cfg.scenario = Scenario::kDomainIncremental;
  else
    bad("config.scenario",
        "expected \"class-incremental\" or \"domain-incremental\"");

  if (j.contains("stream")) {
    const json& s = j.at("stream");
    expect_object(s, "config.stream");
    expect_keys(s,
                {"kind", "classes", "input_dim", "tasks", "clusters_per_class",
                 "separation", "mean_shift", "train_per_class",
                 "test_per_class", "domains", "domain_shift", "stream_seed",
                 "manifest"},
                "config.stream");
    const std::string kind = get_str(s, "kind", "synthetic", "config.stream");
    if (kind == "synthetic")
      cfg.stream.kind = StreamSpec::Kind::kSynthetic;
    else if (kind == "manifest")
      cfg.stream.kind = StreamSpec::Kind::kManifest;
    else
      bad("config.stream.kind", "expected \"synthetic\" or \"manifest\"");
    cfg.stream.classes = get_count(s, "classes", cfg.stream.classes, "config.stream");
    cfg.stream.input_dim =
        get_count(s, "input_dim", cfg.stream.input_dim, "config.stream");
    cfg.stream.tasks = get_count(s, "tasks", cfg.stream.tasks, "config.stream");
    cfg.stream.clusters_per_class = get_count(
        s, "clusters_per_class", cfg.stream.clusters_per_class, "config.stream");
    cfg.stream.separation =
        get_num(s, "separation", cfg.stream.separation, "config.stream");
    cfg.stream.mean_shift =
        get_num(s, "mean_shift", cfg.stream.mean_shift, "config.stream");
    cfg.stream.train_per_class =
        get_count(s, "train_per_class", cfg.stream.train_per_class, "config.stream");
    cfg.stream.test_per_class =
        get_count(s, "test_per_class", cfg.stream.test_per_class, "config.stream");
    cfg.stream.domains = get_count(s, "domains", cfg.stream.domains, "config.stream");
    cfg.stream.domain_shift =
        get_num(s, "domain_shift", cfg.stream.domain_shift, "config.stream");
    cfg.stream.stream_seed =
        get_seed(s, "stream_seed", cfg.stream.stream_seed, "config.stream");
    cfg.stream.manifest = get_str(s, "manifest", "", "config.stream");
  }
  if (cfg.stream.kind == StreamSpec::Kind::kManifest) {
    if (cfg.stream.manifest.empty()) bad("config.stream.manifest", "required");
  } else {
    require_count(cfg.stream.classes, "stream.classes");
    require_count(cfg.stream.input_dim, "stream.input_dim");
    require_count(cfg.stream.tasks, "stream.tasks");
    require_count(cfg.stream.clusters_per_class, "stream.clusters_per_class");
    require_nonneg(cfg.stream.separation, "stream.separation");
    require_count(cfg.stream.train_per_class, "stream.train_per_class");
    require_count(cfg.stream.test_per_class, "stream.test_per_class");
    require_count(cfg.stream.domains, "stream.domains");
    require_nonneg(cfg.stream.domain_shift, "stream.domain_shift");
    if (cfg.scenario == Scenario::kClassIncremental) {
      if (cfg.stream.tasks > cfg.stream.classes)
        bad("config.stream.tasks", "more tasks than classes");
    }
  }

  if (j.contains("pretrain")) {
    const json& p = j.at("pretrain");
    expect_object(p, "config.pretrain");
    expect_keys(p,
                {"enabled", "classes", "train_per_class", "separation",
                 "mean_shift", "data_seed", "epochs", "lr", "batch_size",
                 "momentum"},
                "config.pretrain");
    cfg.pretrain.enabled =
        get_bool(p, "enabled", cfg.pretrain.enabled, "config.pretrain");
    cfg.pretrain.classes =
        get_count(p, "classes", cfg.pretrain.classes, "config.pretrain");
    cfg.pretrain.train_per_class = get_count(
        p, "train_per_class", cfg.pretrain.train_per_class, "config.pretrain");
    cfg.pretrain.separation =
        get_num(p, "separation", cfg.pretrain.separation, "config.pretrain");
    cfg.pretrain.mean_shift =
        get_num(p, "mean_shift", cfg.pretrain.mean_shift, "config.pretrain");
    cfg.pretrain.data_seed =
        get_seed(p, "data_seed", cfg.pretrain.data_seed, "config.pretrain");
    cfg.pretrain.epochs =
        get_count(p, "epochs", cfg.pretrain.epochs, "config.pretrain");
    cfg.pretrain.lr = get_num(p, "lr", cfg.pretrain.lr, "config.pretrain");
    cfg.pretrain.batch_size =
        get_count(p, "batch_size", cfg.pretrain.batch_size, "config.pretrain");
    cfg.pretrain.momentum =
        get_num(p, "momentum", cfg.pretrain.momentum, "config.pretrain");
  }
  if (cfg.pretrain.enabled) {
    require_count(cfg.pretrain.classes, "pretrain.classes");
    require_count(cfg.pretrain.train_per_class, "pretrain.train_per_class");
    require_nonneg(cfg.pretrain.separation, "pretrain.separation");
    require_count(cfg.pretrain.epochs, "pretrain.epochs");
    require_positive(cfg.pretrain.lr, "pretrain.lr");
    require_count(cfg.pretrain.batch_size, "pretrain.batch_size");
    require_unit(cfg.pretrain.momentum, "pretrain.momentum");
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    expect_object(m, "config.model");
    expect_keys(m, {"layers", "activation"}, "config.model");
    if (m.contains("layers")) {
      if (!m.at("layers").is_array() || m.at("layers").size() < 2)
        bad("config.model.layers", "expected at least two widths");
      cfg.layers.clear();
      for (const json& w : m.at("layers")) {
        if (!w.is_number_integer() || w.get<std::int64_t>() <= 0)
          bad("config.model.layers", "expected positive integers");
        cfg.layers.push_back(w.get<std::size_t>());
      }
    }
    const std::string act = get_str(m, "activation", "gelu", "config.model");
    if (act == "gelu")
      cfg.activation = Activation::kGelu;
    else if (act == "relu")
      cfg.activation = Activation::kRelu;
    else
      bad("config.model.activation", "expected \"gelu\" or \"relu\"");
  }
  if (cfg.stream.kind == StreamSpec::Kind::kSynthetic &&
      cfg.layers.front() != cfg.stream.input_dim)
    bad("config.model.layers", "first width " + std::to_string(cfg.layers.front()) +
                            " does not match stream.input_dim " +
                            std::to_string(cfg.stream.input_dim));

  if (j.contains("optim")) {
    const json& o = j.at("optim");
    expect_object(o, "config.optim");
    expect_keys(o, {"epochs", "batch_size", "momentum", "weight_decay"},
                "config.optim");
    cfg.optim.epochs = get_count(o, "epochs", cfg.optim.epochs, "config.optim");
    cfg.optim.batch_size =
        get_count(o, "batch_size", cfg.optim.batch_size, "config.optim");
    cfg.optim.momentum = get_num(o, "momentum", cfg.optim.momentum, "config.optim");
    cfg.optim.weight_decay =
        get_num(o, "weight_decay", cfg.optim.weight_decay, "config.optim");
  }
  require_count(cfg.optim.epochs, "optim.epochs");
  require_count(cfg.optim.batch_size, "optim.batch_size");
  require_unit(cfg.optim.momentum, "optim.momentum");
  require_nonneg(cfg.optim.weight_decay, "optim.weight_decay");

  if (j.contains("rates")) {
    const json& r = j.at("rates");
    expect_object(r, "config.rates");
    expect_keys(r, {"backbone", "hybrid", "head", "seqft"}, "config.rates");
    cfg.rates.backbone = get_num(r, "backbone", cfg.rates.backbone, "config.rates");
    cfg.rates.hybrid = get_num(r, "hybrid", cfg.rates.hybrid, "config.rates");
    cfg.rates.head = get_num(r, "head", cfg.rates.head, "config.rates");
    cfg.rates.seqft = get_num(r, "seqft", cfg.rates.seqft, "config.rates");
  }
  require_nonneg(cfg.rates.backbone, "rates.backbone");
  require_nonneg(cfg.rates.hybrid, "rates.hybrid");
  require_nonneg(cfg.rates.head, "rates.head");
  require_nonneg(cfg.rates.seqft, "rates.seqft");

  if (j.contains("loss")) {
    const json& l = j.at("loss");
    expect_object(l, "config.loss");
    expect_keys(l, {"alpha", "beta", "log_zero_clip"}, "config.loss");
    cfg.loss.alpha = get_num(l, "alpha", cfg.loss.alpha, "config.loss");
    cfg.loss.beta = get_num(l, "beta", cfg.loss.beta, "config.loss");
    cfg.loss.log_zero_clip =
        get_num(l, "log_zero_clip", cfg.loss.log_zero_clip, "config.loss");
  }
  require_nonneg(cfg.loss.alpha, "loss.alpha");
  require_nonneg(cfg.loss.beta, "loss.beta");
  require_positive(cfg.loss.log_zero_clip, "loss.log_zero_clip");

  if (j.contains("align")) {
    const json& a = j.at("align");
    expect_object(a, "config.align");
    expect_keys(a,
                {"samples_per_class", "tau", "eta", "epochs", "lr",
                 "batch_size", "momentum"},
                "config.align");
    cfg.align.samples_per_class = get_count(
        a, "samples_per_class", cfg.align.samples_per_class, "config.align");
    cfg.align.tau = get_num(a, "tau", cfg.align.tau, "config.align");
    cfg.align.eta = get_num(a, "eta", cfg.align.eta, "config.align");
    cfg.align.epochs = get_count(a, "epochs", cfg.align.epochs, "config.align");
    cfg.align.lr = get_num(a, "lr", cfg.align.lr, "config.align");
    cfg.align.batch_size =
        get_count(a, "batch_size", cfg.align.batch_size, "config.align");
    cfg.align.momentum = get_num(a, "momentum", cfg.align.momentum, "config.align");
  }
  require_count(cfg.align.samples_per_class, "align.samples_per_class");
  require_positive(cfg.align.tau, "align.tau");
  require_nonneg(cfg.align.eta, "align.eta");
  require_count(cfg.align.epochs, "align.epochs");
  require_positive(cfg.align.lr, "align.lr");
  require_count(cfg.align.batch_size, "align.batch_size");
  require_unit(cfg.align.momentum, "align.momentum");

  if (j.contains("lora")) {
    const json& l = j.at("lora");
    expect_object(l, "config.lora");
    expect_keys(l, {"rank", "init"}, "config.lora");
    cfg.lora_rank = get_count(l, "rank", cfg.lora_rank, "config.lora");
    const std::string init = get_str(l, "init", "svd", "config.lora");
    if (init == "svd")
      cfg.lora_init = LoraInit::kSvd;
    else if (init == "random")
      cfg.lora_init = LoraInit::kRandom;
    else
      bad("config.lora.init", "expected \"svd\" or \"random\"");
  }
  require_count(cfg.lora_rank, "lora.rank");

  if (j.contains("stats")) {
    const json& s = j.at("stats");
    expect_object(s, "config.stats");
    expect_keys(s, {"covariance", "gamma"}, "config.stats");
    const std::string cov = get_str(s, "covariance", "full", "config.stats");
    if (cov == "full")
      cfg.covariance = CovVariant::kFull;
    else if (cov == "diag")
      cfg.covariance = CovVariant::kDiag;
    else if (cov == "shared")
      cfg.covariance = CovVariant::kShared;
    else
      bad("config.stats.covariance", "expected \"full\", \"diag\" or \"shared\"");
    cfg.stats_gamma = get_num(s, "gamma", cfg.stats_gamma, "config.stats");
  }
  if (cfg.stats_gamma < 0.0 || cfg.stats_gamma > 1.0)
    bad("config.stats.gamma", "must lie in [0, 1]");

  cfg.save_checkpoints =
      get_bool(j, "save_checkpoints", cfg.save_checkpoints, "config");

  if (cfg.scenario == Scenario::kDomainIncremental &&
      parsed.align != AlignKind::kNone)
    bad("config.mode", "alignment modes need class-incremental streams");

  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  return parse_config_json(read_text_file(path));
}

std::string canonical_config_json(const ExperimentConfig& cfg) {
  json j;  // objects serialize with sorted keys, so the dump is canonical
  j["output_dir"] = cfg.output_dir;
  j["seeds"] = cfg.seeds;
  j["mode"] = cfg.mode;
  j["scenario"] = cfg.scenario == Scenario::kClassIncremental
                      ? "class-incremental"
                      : "domain-incremental";
  json s;
  s["kind"] =
      cfg.stream.kind == StreamSpec::Kind::kSynthetic ? "synthetic"
                                                      : "manifest";
  s["classes"] = cfg.stream.classes;
  s["input_dim"] = cfg.stream.input_dim;
  s["tasks"] = cfg.stream.tasks;
  s["clusters_per_class"] = cfg.stream.clusters_per_class;
  s["separation"] = cfg.stream.separation;
  s["mean_shift"] = cfg.stream.mean_shift;
  s["train_per_class"] = cfg.stream.train_per_class;
  s["test_per_class"] = cfg.stream.test_per_class;
  s["domains"] = cfg.stream.domains;
  s["domain_shift"] = cfg.stream.domain_shift;
  s["stream_seed"] = cfg.stream.stream_seed;
  s["manifest"] = cfg.stream.manifest;
  j["stream"] = s;
  json p;
  p["enabled"] = cfg.pretrain.enabled;
  p["classes"] = cfg.pretrain.classes;
  p["train_per_class"] = cfg.pretrain.train_per_class;
  p["separation"] = cfg.pretrain.separation;
  p["mean_shift"] = cfg.pretrain.mean_shift;
  p["data_seed"] = cfg.pretrain.data_seed;
  p["epochs"] = cfg.pretrain.epochs;
  p["lr"] = cfg.pretrain.lr;
  p["batch_size"] = cfg.pretrain.batch_size;
  p["momentum"] = cfg.pretrain.momentum;
  j["pretrain"] = p;
  json m;
  m["layers"] = cfg.layers;
  m["activation"] = cfg.activation == Activation::kGelu ? "gelu" : "relu";
  j["model"] = m;
  json o;
  o["epochs"] = cfg.optim.epochs;
  o["batch_size"] = cfg.optim.batch_size;
  o["momentum"] = cfg.optim.momentum;
  o["weight_decay"] = cfg.optim.weight_decay;
  j["optim"] = o;
  json r;
  r["backbone"] = cfg.rates.backbone;
  r["hybrid"] = cfg.rates.hybrid;
  r["head"] = cfg.rates.head;
  r["seqft"] = cfg.rates.seqft;
  j["rates"] = r;
  json l;
  l["alpha"] = cfg.loss.alpha;
  l["beta"] = cfg.loss.beta;
  l["log_zero_clip"] = cfg.loss.log_zero_clip;
  j["loss"] = l;
  json a;
  a["samples_per_class"] = cfg.align.samples_per_class;
  a["tau"] = cfg.align.tau;
  a["eta"] = cfg.align.eta;
  a["epochs"] = cfg.align.epochs;
  a["lr"] = cfg.align.lr;
  a["batch_size"] = cfg.align.batch_size;
  a["momentum"] = cfg.align.momentum;
  j["align"] = a;
  json lo;
  lo["rank"] = cfg.lora_rank;
  lo["init"] = cfg.lora_init == LoraInit::kSvd ? "svd" : "random";
  j["lora"] = lo;
  json st;
  st["covariance"] = cfg.covariance == CovVariant::kFull   ? "full"
                     : cfg.covariance == CovVariant::kDiag ? "diag"
                                                           : "shared";
  st["gamma"] = cfg.stats_gamma;
  j["stats"] = st;
  j["save_checkpoints"] = cfg.save_checkpoints;
  return j.dump();
}

std::string config_fingerprint(const ExperimentConfig& cfg,
                               std::uint64_t seed) {
  const std::string canon = canonical_config_json(cfg);
  const std::uint64_t config_hash = fnv1a64(canon);
  const std::uint64_t run_hash =
      fnv1a64(canon + "#" + std::to_string(seed));
  return hex64(config_hash) + "-" + hex64(run_hash);
}

TaskStream build_stream(const ExperimentConfig& cfg) {
  TaskStream stream;
  if (cfg.stream.kind == StreamSpec::Kind::kManifest) {
    stream = load_manifest(cfg.stream.manifest);
    if (stream.scenario != cfg.scenario)
      throw ContractViolation(
          "build_stream: manifest scenario disagrees with config.scenario");
  } else {
    SyntheticSpec spec;
    spec.classes = cfg.stream.classes;
    spec.input_dim = cfg.stream.input_dim;
    spec.clusters_per_class = cfg.stream.clusters_per_class;
    spec.separation = cfg.stream.separation;
    spec.mean_shift = cfg.stream.mean_shift;
    spec.train_per_class = cfg.stream.train_per_class;
    spec.test_per_class = cfg.stream.test_per_class;
    RngState rng{cfg.stream.stream_seed, 0};
    if (cfg.scenario == Scenario::kClassIncremental) {
      const DatasetPair pair = make_synthetic(spec, rng);
      stream = split_class_incremental(pair, cfg.stream.tasks, rng);
    } else {
      const DatasetPair pair = make_synthetic_domains(
          spec, cfg.stream.domains, cfg.stream.domain_shift, rng);
      stream = split_domain_incremental(pair);
    }
    if (cfg.pretrain.enabled) {
      SyntheticSpec warm;
      warm.classes = cfg.pretrain.classes;
      warm.input_dim = cfg.stream.input_dim;
      warm.clusters_per_class = cfg.stream.clusters_per_class;
      warm.separation = cfg.pretrain.separation;
      warm.mean_shift = cfg.pretrain.mean_shift;
      warm.train_per_class = cfg.pretrain.train_per_class;
      warm.test_per_class = 1;  // warm-up keeps no test split
      warm.first_class_id = static_cast<int>(cfg.stream.classes);
      RngState warm_rng{cfg.pretrain.data_seed, 0};
      stream.pretrain = make_synthetic(warm, warm_rng).train;
    }
  }
  if (cfg.pretrain.enabled && !stream.has_pretrain())
    throw ContractViolation(
        "build_stream: pretraining enabled but the stream carries no "
        "warm-up data");
  if (!stream.tasks.empty() &&
      stream.tasks.front().train.dim() != cfg.layers.front())
    throw ContractViolation(
        "build_stream: stream feature width " +
        std::to_string(stream.tasks.front().train.dim()) +
        " does not match the first model layer " +
        std::to_string(cfg.layers.front()));
  return stream;
}

ModeSpec config_mode(const ExperimentConfig& cfg) {
  ModeSpec spec = parse_mode(cfg.mode);
  if (spec.group.kind == GroupSpec::Kind::kHybrid)
    spec.lora_init = cfg.lora_init;
  return spec;
}

RunConfig to_run_config(const ExperimentConfig& cfg, std::uint64_t seed,
                        const std::string& checkpoint_dir) {
  RunConfig rc;
  rc.model_dims = cfg.layers;
  rc.activation = cfg.activation;
  rc.rates = cfg.rates;
  rc.train = cfg.optim;
  rc.pretrain_enabled = cfg.pretrain.enabled;
  rc.pretrain.epochs = cfg.pretrain.epochs;
  rc.pretrain.lr = cfg.pretrain.lr;
  rc.pretrain.batch_size = cfg.pretrain.batch_size;
  rc.pretrain.momentum = cfg.pretrain.momentum;
  rc.align = cfg.align;
  rc.sce = cfg.loss;
  rc.cov_variant = cfg.covariance;
  rc.shared_gamma = cfg.stats_gamma;
  rc.lora_rank = cfg.lora_rank;
  rc.seed = seed;
  rc.config_fingerprint = config_fingerprint(cfg, seed);
  rc.checkpoint_dir = checkpoint_dir;
  return rc;
}

}  // namespace slca
