#include "app/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "common/error.hpp"

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace ufo {

namespace {

uint64_t mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t step_seed(uint64_t seed, int64_t step, uint64_t stream) {
  return mix(mix(seed) ^ mix(static_cast<uint64_t>(step) * 2 + stream));
}

std::string breakdown_str(const LossBreakdown& b) {
  std::ostringstream os;
  os << "cls=" << b.cls << " wbce=" << b.wbce << " iou=" << b.iou << " total=" << b.total;
  return os.str();
}

// Flush-to-zero / denormals-are-zero for the duration of training. Late in
// training many activations and moments decay into the subnormal range, which
// is an order of magnitude slower on x86.
class DenormalGuard {
 public:
  DenormalGuard() {
#if defined(__SSE__)
    saved_ = _mm_getcsr();
    _mm_setcsr(saved_ | 0x8040);
#endif
  }
  ~DenormalGuard() {
#if defined(__SSE__)
    _mm_setcsr(saved_);
#endif
  }
  DenormalGuard(const DenormalGuard&) = delete;
  DenormalGuard& operator=(const DenormalGuard&) = delete;

 private:
  unsigned saved_ = 0;
};

}  // namespace

double scheduled_lr(const TrainConfig& cfg, int64_t step) {
  return cfg.lr * std::pow(0.5, static_cast<double>(step / cfg.halve_every));
}

std::vector<int64_t> batch_group_ids(const std::vector<int64_t>& train_ids, int batch_groups, uint64_t seed,
                                     int64_t step) {
  std::vector<int64_t> ids = train_ids;
  std::mt19937_64 rng(step_seed(seed, step, 0));
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng() % i)]);
  ids.resize(std::min(ids.size(), static_cast<std::size_t>(batch_groups)));
  return ids;
}

bool batch_hflip(uint64_t seed, int64_t step) { return (step_seed(seed, step, 1) & 1u) != 0; }

std::vector<std::string> trainable_parameters(const UfoNet<float>& net, bool freeze_classifier) {
  const auto frozen = freeze_classifier ? net.classifier_parameter_names() : std::vector<std::string>{};
  std::vector<std::string> names;
  for (const auto& n : net.params().names()) {
    if (std::find(frozen.begin(), frozen.end(), n) == frozen.end()) names.push_back(n);
  }
  return names;
}

StepLog train_step(UfoNet<float>& net, TrainingState& state, const GroupBatch& batch, const TrainConfig& cfg) {
  const double lr = scheduled_lr(cfg, state.step);
  net.params().zero_grad();
  Tape<float> tape;
  auto out = net.forward(tape, batch.images, batch.group_size);

  Tensor<float> cls;
  if (!cfg.freeze_classifier) {
    std::vector<int64_t> labels;
    for (auto l : batch.labels)
      for (int n = 0; n < batch.group_size; ++n) labels.push_back(l);
    cls = loss_cls(tape, out.logits, labels);
  }
  WbceOptions wopts;
  wopts.swap_gamma = cfg.wbce_swap_gamma;
  auto wbce = loss_wbce(tape, out.probs, batch.masks, wopts);
  auto iou = loss_iou(tape, out.probs, batch.masks);
  auto total = total_loss(tape, cls, wbce, iou);

  StepLog log;
  log.step = state.step + 1;
  log.loss = total.breakdown;
  log.lr = lr;
  if (!std::isfinite(total.breakdown.total)) return log;

  tape.backward(total.total);
  std::vector<Tensor<float>> params;
  for (const auto& n : state.trainable) params.push_back(net.params().get(n));
  state.adam.lr = lr;
  adam_step(std::span<Tensor<float>>(params), state.adam);
  state.step += 1;
  return log;
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  DenormalGuard denormals;
  const DatasetManifest manifest = load_manifest(opts.data_root);
  if (static_cast<int>(manifest.classes.size()) > cfg.model.semantic.num_classes) {
    throw ConfigError("dataset has " + std::to_string(manifest.classes.size()) +
                      " classes but model.semantic.num_classes is " +
                      std::to_string(cfg.model.semantic.num_classes));
  }
  TrainResult result;
  result.split = split_groups(manifest, cfg.data.train_fraction, cfg.data.split_seed);
  if (result.split.train.empty()) throw ConfigError("training split is empty; raise data.train_fraction");

  UfoNet<float> net(cfg.effective_model());
  TrainingState state;
  state.trainable = trainable_parameters(net, cfg.train.freeze_classifier);
  if (opts.resume) load_model(*opts.resume, net, &state);

  std::error_code ec;
  std::filesystem::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create " + opts.out_dir.string() + ": " + ec.message());
  const auto log_path = opts.out_dir / "train_log.jsonl";
  std::ofstream log(log_path, opts.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path.string());

  GroupCache cache(opts.data_root, manifest, false);
  const int64_t end = std::min(cfg.train.steps, opts.stop_at.value_or(cfg.train.steps));
  std::optional<LossBreakdown> last_finite;
  while (state.step < end) {
    const int64_t s = state.step;
    const auto ids = batch_group_ids(result.split.train, cfg.train.batch_groups, cfg.train.seed, s);
    const bool flip = cfg.train.hflip && batch_hflip(cfg.train.seed, s);
    GroupBatch batch = cache.batch(ids, flip);
    const StepLog entry = train_step(net, state, batch, cfg.train);
    if (!std::isfinite(entry.loss.total)) {
      throw NumericError("non-finite loss at step " + std::to_string(entry.step) + "; last finite breakdown: " +
                         (last_finite ? breakdown_str(*last_finite) : std::string("none")));
    }
    last_finite = entry.loss;
    result.history.push_back(entry);
    if (entry.step % cfg.train.log_every == 0 || entry.step == end) {
      const nlohmann::json line = {{"step", entry.step},     {"cls", entry.loss.cls},
                                   {"wbce", entry.loss.wbce}, {"iou", entry.loss.iou},
                                   {"total", entry.loss.total}, {"lr", entry.lr}};
      log << line.dump() << '\n';
      log.flush();
    }
    if (opts.on_step) opts.on_step(entry);
    if (cfg.train.checkpoint_interval > 0 && entry.step % cfg.train.checkpoint_interval == 0) {
      save_model(opts.out_dir / ("model_step_" + std::to_string(entry.step) + ".ckpt"), net, &state);
    }
  }
  result.final_step = state.step;
  result.checkpoint = opts.out_dir / "model.ckpt";
  save_model(result.checkpoint, net, &state);
  return result;
}

LossBreakdown dataset_loss(const UfoNet<float>& net, const std::filesystem::path& data_root,
                           const DatasetManifest& manifest, const std::vector<int64_t>& ids, const TrainConfig& cfg) {
  if (ids.empty()) throw UsageError("dataset_loss needs at least one group");
  LossBreakdown sum;
  for (const auto id : ids) {
    const auto b = load_batch(data_root, manifest, {id});
    Tape<float> off(false);
    const auto out = net.forward(off, b.images, b.group_size);
    Tensor<float> cls;
    if (!cfg.freeze_classifier) cls = loss_cls(off, out.logits, std::vector<int64_t>(b.group_size, b.labels[0]));
    WbceOptions wopts;
    wopts.swap_gamma = cfg.wbce_swap_gamma;
    const auto total = total_loss(off, cls, loss_wbce(off, out.probs, b.masks, wopts), loss_iou(off, out.probs, b.masks));
    sum.cls += total.breakdown.cls;
    sum.wbce += total.breakdown.wbce;
    sum.iou += total.breakdown.iou;
    sum.total += total.breakdown.total;
  }
  const double n = static_cast<double>(ids.size());
  return {sum.cls / n, sum.wbce / n, sum.iou / n, sum.total / n};
}

}  // namespace ufo
