#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "app/checkpoint.hpp"
#include "app/evaluate.hpp"
#include "app/run_config.hpp"
#include "app/trainer.hpp"
#include "data/netpbm.hpp"
#include "data/synth.hpp"
#include "support.hpp"

namespace ufo {
namespace {

namespace fs = std::filesystem;
using test::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json tiny_json() {
  return nlohmann::json::parse(R"({
    "model": {
      "encoder": {"stage_channels": [4, 4, 8, 8]},
      "transformer": {"num_blocks": 1, "num_heads": 2, "model_dim": 8, "mlp_hidden": 8},
      "intra_mlp": {"k": 2},
      "semantic": {"embed_dim": 8, "num_classes": 3}
    },
    "train": {"lr": 1e-3, "steps": 4, "batch_groups": 2, "seed": 5},
    "data": {"train_fraction": 0.75},
    "ablation": {}
  })");
}

struct TinyData {
  TempDir dir{"app"};
  DatasetManifest manifest;
  TinyData(bool aux = false) {
    SynthConfig s;
    s.height = s.width = 32;
    s.min_radius = 4;
    s.max_radius = 7;
    s.classes = {"disk", "square", "cross"};
    s.group_size = 2;
    s.groups_per_class = 2;
    s.aux = aux;
    manifest = synthesize(s, dir.path() / "data");
  }
  fs::path data() const { return dir.path() / "data"; }
};

bool same_params(const UfoNet<float>& a, const UfoNet<float>& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    auto x = a.params().tensors()[i].data(), y = b.params().tensors()[i].data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------- config

TEST(RunConfig, RoundTripAndToggles) {
  auto cfg = RunConfig::from_json(tiny_json());
  EXPECT_EQ(cfg.model.encoder.stage_channels, (std::array<int, 4>{4, 4, 8, 8}));
  EXPECT_EQ(cfg.train.steps, 4);
  EXPECT_EQ(RunConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
  auto j = tiny_json();
  j["ablation"] = {{"alpha_on", false}, {"transformer_on", false}};
  auto m = RunConfig::from_json(j).effective_model();
  EXPECT_FALSE(m.decoder.alpha_on);
  EXPECT_TRUE(m.decoder.beta_on);
  EXPECT_FALSE(m.transformer_on);
}

TEST(RunConfig, Rejections) {
  auto expect_config_error = [](nlohmann::json j, const std::string& needle) {
    try {
      RunConfig::from_json(j);
      ADD_FAILURE() << "accepted: " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  auto j = tiny_json();
  j["extra"] = 1;
  expect_config_error(j, "extra");
  j = tiny_json();
  j["train"]["learning_rate"] = 1;
  expect_config_error(j, "learning_rate");
  j = tiny_json();
  j["model"]["encoder"]["chanels"] = 1;
  expect_config_error(j, "chanels");
  j = tiny_json();
  j.erase("ablation");
  expect_config_error(j, "ablation");
  j = tiny_json();
  j["train"]["lr"] = -1;
  expect_config_error(j, "lr");
  j = tiny_json();
  j["train"]["steps"] = "many";
  expect_config_error(j, "steps");
  j = tiny_json();
  j["data"]["train_fraction"] = 1.5;
  expect_config_error(j, "train_fraction");
}

// ---------------------------------------------------------------- checkpoint

TEST(Checkpoint, BitwiseRoundTrip) {
  TempDir dir("ckpt");
  auto m = RunConfig::from_json(tiny_json()).effective_model();
  UfoNet<float> a(m);
  for (auto& t : a.params().tensors()) {
    // Values that do not survive a decimal round trip.
    for (auto& v : t.data()) v = std::nextafter(v, 1.0f) / 3.0f;
  }
  save_model(dir.path() / "a.ckpt", a);
  m.init_seed = 99;
  UfoNet<float> b(m);
  EXPECT_FALSE(same_params(a, b));
  load_model(dir.path() / "a.ckpt", b);
  EXPECT_TRUE(same_params(a, b));
  save_model(dir.path() / "b.ckpt", b);
  EXPECT_EQ(slurp(dir.path() / "a.ckpt"), slurp(dir.path() / "b.ckpt"));
}

TEST(Checkpoint, RecordFormat) {
  TempDir dir("ckpt");
  CheckpointRecord r;
  r.name = "x";
  r.dims = {2};
  r.f32 = {1.5f, -2.0f};
  CheckpointRecord d;
  d.name = "__train__/step";
  d.dtype = DType::kF64;
  d.dims = {1};
  d.f64 = {7.0};
  write_checkpoint(dir.path() / "r.ckpt", {r, d});
  const std::string bytes = slurp(dir.path() / "r.ckpt");
  EXPECT_EQ(bytes.substr(0, 8), "UFOCKPT1");
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x02\0\0\0", 4));
  EXPECT_EQ(bytes.substr(12, 5), std::string("\x01\0\0\0x", 5));
  EXPECT_EQ(bytes[17], 0);  // f32 tag
  EXPECT_EQ(bytes.size(), 8 + 4 + (4 + 1 + 1 + 4 + 4 + 8) + (4 + 14 + 1 + 4 + 4 + 8));
  auto back = read_checkpoint(dir.path() / "r.ckpt");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].f32, r.f32);
  EXPECT_EQ(back[1].f64, d.f64);
}

TEST(Checkpoint, CorruptFilesRejected) {
  TempDir dir("ckpt");
  CheckpointRecord r;
  r.name = "x";
  r.dims = {1};
  r.f32 = {1.0f};
  write_checkpoint(dir.path() / "r.ckpt", {r});
  std::string bytes = slurp(dir.path() / "r.ckpt");
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream(dir.path() / name, std::ios::binary) << content;
    return dir.path() / name;
  };
  std::string bad_tag = bytes;
  bad_tag[17] = 7;
  EXPECT_THROW(read_checkpoint(write("tag.ckpt", bad_tag)), DataError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(read_checkpoint(write("magic.ckpt", bad_magic)), DataError);
  EXPECT_THROW(read_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 2))), IoError);
  EXPECT_THROW(read_checkpoint(dir.path() / "missing.ckpt"), IoError);
}

TEST(Checkpoint, ShapeMismatchNamesTensor) {
  TempDir dir("ckpt");
  auto m = RunConfig::from_json(tiny_json()).effective_model();
  UfoNet<float> a(m);
  save_model(dir.path() / "a.ckpt", a);
  m.semantic.num_classes = 4;
  UfoNet<float> b(m);
  try {
    load_model(dir.path() / "a.ckpt", b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("semantic.fc"), std::string::npos) << e.what();
  }
}

// ---------------------------------------------------------------- training

TEST(Training, LearningRateSchedule) {
  TrainConfig t;
  t.lr = 1e-3;
  t.halve_every = 10;
  EXPECT_EQ(scheduled_lr(t, 0), 1e-3);
  EXPECT_EQ(scheduled_lr(t, 9), 1e-3);
  EXPECT_EQ(scheduled_lr(t, 10), 5e-4);
  EXPECT_EQ(scheduled_lr(t, 35), 1.25e-4);
}

TEST(Training, ZeroLearningRateKeepsInitBitwise) {
  TinyData data;
  auto j = tiny_json();
  j["train"]["lr"] = 0.0;
  j["train"]["steps"] = 1;
  auto cfg = RunConfig::from_json(j);
  TempDir out("train");
  auto r = train(cfg, {data.data(), out.path(), {}, {}, {}});
  UfoNet<float> init(cfg.effective_model()), trained(cfg.effective_model());
  for (auto& t : trained.params().tensors())
    for (auto& v : t.data()) v = 0;
  load_model(r.checkpoint, trained);
  EXPECT_TRUE(same_params(init, trained));
  EXPECT_EQ(r.final_step, 1);
}

TEST(Training, LogFormatAndSplit) {
  TinyData data;
  auto cfg = RunConfig::from_json(tiny_json());
  TempDir out("train");
  auto r = train(cfg, {data.data(), out.path(), {}, {}, {}});
  EXPECT_EQ(r.split.train.size() + r.split.val.size(), 6u);
  std::ifstream log(out.path() / "train_log.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(log, line)) {
    auto e = nlohmann::json::parse(line);
    ++n;
    EXPECT_EQ(e["step"], n);
    for (const char* k : {"cls", "wbce", "iou", "total", "lr"}) EXPECT_TRUE(e[k].is_number()) << k;
    EXPECT_NEAR(e["total"].get<double>(),
                e["cls"].get<double>() + e["wbce"].get<double>() + e["iou"].get<double>(), 1e-6);
  }
  EXPECT_EQ(n, 4);
}

TEST(Training, ResumeMatchesStraightRunBitwise) {
  TinyData data;
  auto j = tiny_json();
  j["train"]["steps"] = 6;
  j["train"]["halve_every"] = 3;
  j["train"]["hflip"] = true;
  auto cfg = RunConfig::from_json(j);
  TempDir straight("train"), split("train");
  auto a = train(cfg, {data.data(), straight.path(), {}, {}, {}});
  auto first = train(cfg, {data.data(), split.path(), {}, 4, {}});
  EXPECT_EQ(first.final_step, 4);
  auto b = train(cfg, {data.data(), split.path(), first.checkpoint, {}, {}});
  EXPECT_EQ(b.final_step, 6);
  EXPECT_EQ(slurp(a.checkpoint), slurp(b.checkpoint));
  ASSERT_EQ(b.history.size(), 2u);
  EXPECT_EQ(b.history[1].loss.total, a.history[5].loss.total);

  TempDir again("train");
  auto c = train(cfg, {data.data(), again.path(), {}, {}, {}});
  EXPECT_EQ(slurp(a.checkpoint), slurp(c.checkpoint));
}

TEST(Training, FrozenClassifierReceivesNoUpdates) {
  TinyData data;
  auto j = tiny_json();
  j["train"]["freeze_classifier"] = true;
  j["train"]["lr"] = 1e-2;
  auto cfg = RunConfig::from_json(j);
  TempDir out("train");
  auto r = train(cfg, {data.data(), out.path(), {}, {}, {}});
  for (const auto& h : r.history) EXPECT_EQ(h.loss.cls, 0.0);
  UfoNet<float> init(cfg.effective_model()), trained(cfg.effective_model());
  load_model(r.checkpoint, trained);
  const auto frozen = init.classifier_parameter_names();
  ASSERT_FALSE(frozen.empty());
  std::size_t changed = 0;
  for (std::size_t i = 0; i < init.params().size(); ++i) {
    const auto& name = init.params().names()[i];
    auto x = init.params().tensors()[i].data(), y = trained.params().tensors()[i].data();
    const bool same = std::equal(x.begin(), x.end(), y.begin());
    if (std::find(frozen.begin(), frozen.end(), name) != frozen.end()) {
      EXPECT_TRUE(same) << name;
    } else {
      changed += !same;
    }
  }
  EXPECT_GT(changed, 0u);
}

TEST(Training, DatasetLossAveragesPerGroupLosses) {
  TinyData data;
  auto cfg = RunConfig::from_json(tiny_json());
  UfoNet<float> net(cfg.effective_model());
  double sum = 0;
  for (int64_t g : {1, 4}) {
    UfoNet<float> scratch(cfg.effective_model());
    TrainingState state;
    state.trainable = trainable_parameters(scratch, false);
    auto log = train_step(scratch, state, load_batch(data.data(), data.manifest, {g}), cfg.train);
    auto one = dataset_loss(net, data.data(), data.manifest, {g}, cfg.train);
    EXPECT_FLOAT_EQ(one.total, log.loss.total);
    EXPECT_FLOAT_EQ(one.total, one.cls + one.wbce + one.iou);
    sum += one.total;
  }
  EXPECT_NEAR(dataset_loss(net, data.data(), data.manifest, {1, 4}, cfg.train).total, sum / 2, 1e-6);
}

TEST(Training, NonFiniteLossAbortsWithStep) {
  TinyData data;
  auto j = tiny_json();
  j["train"]["lr"] = 3e38;
  j["train"]["steps"] = 20;
  auto cfg = RunConfig::from_json(j);
  TempDir out("train");
  try {
    train(cfg, {data.data(), out.path(), {}, {}, {}});
    FAIL();
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("at step"), std::string::npos) << msg;
    EXPECT_NE(msg.find("total="), std::string::npos) << msg;
  }
}

TEST(Training, TooManyDatasetClassesRejected) {
  TinyData data;
  auto j = tiny_json();
  j["model"]["semantic"]["num_classes"] = 2;
  TempDir out("train");
  EXPECT_THROW(train(RunConfig::from_json(j), {data.data(), out.path(), {}, {}, {}}), ConfigError);
}

// ---------------------------------------------------------------- eval / infer

TEST(Evaluate, OracleIsPerfectAndReportWritten) {
  TinyData data;
  auto cfg = RunConfig::from_json(tiny_json());
  auto ids = split_ids(cfg, data.manifest, EvalSplit::kAll);
  EXPECT_EQ(ids.size(), 6u);
  auto r = evaluate_oracle(data.data(), data.manifest, ids);
  EXPECT_EQ(r.mean.precision, 1.0);
  EXPECT_EQ(r.mean.jaccard, 1.0);
  EXPECT_EQ(r.mean.mae, 0.0);
  EXPECT_EQ(r.mean.f_beta, 1.0);
  TempDir out("eval");
  write_report(r, out.path());
  auto j = nlohmann::json::parse(slurp(out.path() / "report.json"));
  EXPECT_EQ(j["num_images"], 12);
  EXPECT_EQ(slurp(out.path() / "curves.csv").substr(0, 27), "threshold,precision,recall,");
  EXPECT_THROW(parse_eval_split("test"), UsageError);
}

TEST(Evaluate, ModelReportInRange) {
  TinyData data;
  auto cfg = RunConfig::from_json(tiny_json());
  UfoNet<float> net(cfg.effective_model());
  auto val = split_ids(cfg, data.manifest, EvalSplit::kVal);
  auto r = evaluate_groups(net, data.data(), data.manifest, val);
  EXPECT_EQ(r.per_image.size(), val.size() * 2);
  for (double v : {r.mean.precision, r.mean.jaccard, r.mean.mae, r.mean.f_beta}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Infer, SingleImageGroupAndAux) {
  TinyData data(true);
  auto cfg = RunConfig::from_json(tiny_json());
  UfoNet<float> net(cfg.effective_model());
  TempDir in("infer"), aux("infer"), out("infer"), out_aux("infer");
  fs::copy_file(data.data() / data.manifest.group(0).images[0], in.path() / "only.ppm");
  Image8 white{32, 32, 3, std::vector<uint8_t>(32 * 32 * 3, 255)};
  write_ppm(aux.path() / "only.ppm", white);
  auto written = infer_group(net, in.path(), out.path());
  ASSERT_EQ(written.size(), 1u);
  auto mask = read_netpbm(out.path() / "only.pgm");
  EXPECT_EQ(mask.width, 32);
  EXPECT_EQ(mask.height, 32);
  EXPECT_EQ(mask.channels, 1);
  auto with_aux = infer_group(net, in.path(), out_aux.path(), aux.path());
  ASSERT_EQ(with_aux.size(), 1u);
  EXPECT_EQ(read_netpbm(with_aux[0]).pixels.size(), 32u * 32u);
  EXPECT_THROW(infer_group(net, in.path(), out_aux.path(), out.path()), IoError);
}

}  // namespace
}  // namespace ufo
