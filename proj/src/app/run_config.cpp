#include "app/run_config.hpp"

#include <fstream>
#include <set>

#include "common/error.hpp"

namespace ufo {

namespace {

// Reads fields of one JSON object, rejecting keys that were never asked for.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type: " + j_.at(key).dump());
    }
  }

  const nlohmann::json* sub(const char* key, bool required) {
    known_.insert(key);
    if (!j_.contains(key)) {
      if (required) throw ConfigError("missing section " + path_ + "." + key);
      return nullptr;
    }
    return &j_.at(key);
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!known_.contains(key)) throw ConfigError("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> known_;
};

ModelConfig parse_model(const nlohmann::json& j, const std::string& path) {
  ModelConfig m;
  Section s(j, path);
  if (const auto* e = s.sub("encoder", false)) {
    Section es(*e, path + ".encoder");
    es.get("in_channels", m.encoder.in_channels);
    es.get("stage_channels", m.encoder.stage_channels);
    es.get("convs_per_stage", m.encoder.convs_per_stage);
    es.finish();
  }
  if (const auto* t = s.sub("transformer", false)) {
    Section ts(*t, path + ".transformer");
    ts.get("num_blocks", m.transformer.num_blocks);
    ts.get("num_heads", m.transformer.num_heads);
    ts.get("model_dim", m.transformer.model_dim);
    ts.get("mlp_hidden", m.transformer.mlp_hidden);
    ts.get("applied_stages", m.transformer.applied_stages);
    ts.get("mlp_first", m.transformer.mlp_first);
    ts.finish();
  }
  if (const auto* i = s.sub("intra_mlp", false)) {
    Section is(*i, path + ".intra_mlp");
    is.get("k", m.intra.k);
    is.get("edge_concat", m.intra.edge_concat);
    is.finish();
  }
  if (const auto* c = s.sub("semantic", false)) {
    Section cs(*c, path + ".semantic");
    cs.get("embed_dim", m.semantic.embed_dim);
    cs.get("num_classes", m.semantic.num_classes);
    cs.finish();
  }
  if (const auto* d = s.sub("decoder", false)) {
    Section ds(*d, path + ".decoder");
    ds.get("modulated_stages", m.decoder.modulated_stages);
    ds.finish();
  }
  s.get("init_seed", m.init_seed);
  s.finish();
  return m;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"encoder",
           {{"in_channels", m.encoder.in_channels},
            {"stage_channels", m.encoder.stage_channels},
            {"convs_per_stage", m.encoder.convs_per_stage}}},
          {"transformer",
           {{"num_blocks", m.transformer.num_blocks},
            {"num_heads", m.transformer.num_heads},
            {"model_dim", m.transformer.model_dim},
            {"mlp_hidden", m.transformer.mlp_hidden},
            {"applied_stages", m.transformer.applied_stages},
            {"mlp_first", m.transformer.mlp_first}}},
          {"intra_mlp", {{"k", m.intra.k}, {"edge_concat", m.intra.edge_concat}}},
          {"semantic", {{"embed_dim", m.semantic.embed_dim}, {"num_classes", m.semantic.num_classes}}},
          {"decoder", {{"modulated_stages", m.decoder.modulated_stages}}},
          {"init_seed", m.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m = parse_model(j, "model");
  m.validate();
  return m;
}

ModelConfig RunConfig::effective_model() const {
  ModelConfig m = model;
  m.decoder.alpha_on = ablation.alpha_on;
  m.decoder.beta_on = ablation.beta_on;
  m.transformer_on = ablation.transformer_on;
  return m;
}

void RunConfig::validate() const {
  effective_model().validate();
  if (!(train.lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
  if (train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (train.batch_groups < 1) throw ConfigError("train.batch_groups must be >= 1");
  if (train.halve_every < 1) throw ConfigError("train.halve_every must be >= 1");
  if (train.checkpoint_interval < 0) throw ConfigError("train.checkpoint_interval must be >= 0");
  if (train.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (!(data.train_fraction >= 0.0 && data.train_fraction <= 1.0)) {
    throw ConfigError("data.train_fraction must be in [0, 1]");
  }
  if (gradcheck.height % 16 != 0 || gradcheck.width % 16 != 0 || gradcheck.height < 16 || gradcheck.width < 16) {
    throw ConfigError("gradcheck.height and gradcheck.width must be positive multiples of 16");
  }
  if (gradcheck.group_size < 1 || gradcheck.batch_groups < 1) {
    throw ConfigError("gradcheck.group_size and gradcheck.batch_groups must be >= 1");
  }
  if (!(gradcheck.eps > 0.0) || !(gradcheck.tol > 0.0)) throw ConfigError("gradcheck.eps and tol must be > 0");
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model_config_to_json(model)},
          {"train",
           {{"lr", train.lr},
            {"steps", train.steps},
            {"batch_groups", train.batch_groups},
            {"halve_every", train.halve_every},
            {"seed", train.seed},
            {"freeze_classifier", train.freeze_classifier},
            {"checkpoint_interval", train.checkpoint_interval},
            {"wbce_swap_gamma", train.wbce_swap_gamma},
            {"hflip", train.hflip},
            {"log_every", train.log_every}}},
          {"data", {{"path", data.path}, {"train_fraction", data.train_fraction}, {"split_seed", data.split_seed}}},
          {"ablation",
           {{"alpha_on", ablation.alpha_on},
            {"beta_on", ablation.beta_on},
            {"transformer_on", ablation.transformer_on}}},
          {"gradcheck",
           {{"height", gradcheck.height},
            {"width", gradcheck.width},
            {"group_size", gradcheck.group_size},
            {"batch_groups", gradcheck.batch_groups},
            {"eps", gradcheck.eps},
            {"tol", gradcheck.tol},
            {"seed", gradcheck.seed}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "config");
  c.model = parse_model(*root.sub("model", true), "model");

  Section t(*root.sub("train", true), "train");
  t.get("lr", c.train.lr);
  t.get("steps", c.train.steps);
  t.get("batch_groups", c.train.batch_groups);
  t.get("halve_every", c.train.halve_every);
  t.get("seed", c.train.seed);
  t.get("freeze_classifier", c.train.freeze_classifier);
  t.get("checkpoint_interval", c.train.checkpoint_interval);
  t.get("wbce_swap_gamma", c.train.wbce_swap_gamma);
  t.get("hflip", c.train.hflip);
  t.get("log_every", c.train.log_every);
  t.finish();

  Section d(*root.sub("data", true), "data");
  d.get("path", c.data.path);
  d.get("train_fraction", c.data.train_fraction);
  d.get("split_seed", c.data.split_seed);
  d.finish();

  Section a(*root.sub("ablation", true), "ablation");
  a.get("alpha_on", c.ablation.alpha_on);
  a.get("beta_on", c.ablation.beta_on);
  a.get("transformer_on", c.ablation.transformer_on);
  a.finish();

  if (const auto* g = root.sub("gradcheck", false)) {
    Section gs(*g, "gradcheck");
    gs.get("height", c.gradcheck.height);
    gs.get("width", c.gradcheck.width);
    gs.get("group_size", c.gradcheck.group_size);
    gs.get("batch_groups", c.gradcheck.batch_groups);
    gs.get("eps", c.gradcheck.eps);
    gs.get("tol", c.gradcheck.tol);
    gs.get("seed", c.gradcheck.seed);
    gs.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace ufo
