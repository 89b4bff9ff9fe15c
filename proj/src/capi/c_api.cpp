#include "ufo/ufo.h"

#include <array>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include "app/checkpoint.hpp"
#include "app/evaluate.hpp"
#include "app/gradcheck_suite.hpp"
#include "app/run_config.hpp"
#include "app/trainer.hpp"
#include "common/error.hpp"
#include "data/synth.hpp"
#include "tensor/ops.hpp"

struct ufo_session {
  ufo::RunConfig config;
  std::unique_ptr<ufo::UfoNet<float>> net;
};

namespace {

thread_local std::string g_last_error;

constexpr std::array<const char*, 17> kFaultableOps = {
    "add",     "sub",  "mul",   "matmul",  "linear",  "conv2d",  "relu",           "sigmoid",           "log",
    "scale", "softmax", "reduce", "reshape", "permute", "gather_lastdim", "upsample_bilinear", "layer_norm"};

ufo_status to_status(ufo::ErrorCode code) {
  switch (code) {
    case ufo::ErrorCode::kShape: return UFO_ERR_SHAPE;
    case ufo::ErrorCode::kConfig: return UFO_ERR_CONFIG;
    case ufo::ErrorCode::kDomain: return UFO_ERR_DOMAIN;
    case ufo::ErrorCode::kIndex: return UFO_ERR_INDEX;
    case ufo::ErrorCode::kUsage: return UFO_ERR_USAGE;
    case ufo::ErrorCode::kIo: return UFO_ERR_IO;
    case ufo::ErrorCode::kData: return UFO_ERR_DATA;
    case ufo::ErrorCode::kManifest: return UFO_ERR_MANIFEST;
    case ufo::ErrorCode::kGeneration: return UFO_ERR_GENERATION;
    case ufo::ErrorCode::kNumeric: return UFO_ERR_NUMERIC;
    default: return UFO_ERR_INTERNAL;
  }
}

template <typename F>
ufo_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return UFO_OK;
  } catch (const ufo::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return UFO_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return UFO_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw ufo::UsageError(std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::filesystem::path data_root(const ufo_session* s, const char* data_dir) {
  if (data_dir != nullptr) return data_dir;
  if (s->config.data.path.empty()) throw ufo::UsageError("no data directory given and data.path is empty");
  return s->config.data.path;
}

}  // namespace

extern "C" {

const char* ufo_last_error(void) { return g_last_error.c_str(); }

const char* ufo_status_name(ufo_status status) {
  switch (status) {
    case UFO_OK: return "ok";
    case UFO_ERR_SHAPE: return "shape error";
    case UFO_ERR_CONFIG: return "config error";
    case UFO_ERR_DOMAIN: return "domain error";
    case UFO_ERR_INDEX: return "index error";
    case UFO_ERR_USAGE: return "usage error";
    case UFO_ERR_IO: return "I/O error";
    case UFO_ERR_DATA: return "data error";
    case UFO_ERR_MANIFEST: return "manifest error";
    case UFO_ERR_GENERATION: return "generation error";
    case UFO_ERR_NUMERIC: return "numeric error";
    case UFO_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

ufo_status ufo_synth(const char* config_path, const char* out_dir, const uint64_t* seed) {
  return guarded([&] {
    require(config_path, "config_path");
    require(out_dir, "out_dir");
    std::ifstream in(config_path);
    if (!in) throw ufo::IoError(std::string("cannot open config ") + config_path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ufo::ConfigError(std::string(config_path) + ": " + e.what());
    }
    auto cfg = ufo::SynthConfig::from_json(j);
    if (seed != nullptr) cfg.seed = *seed;
    ufo::synthesize(cfg, out_dir);
  });
}

ufo_status ufo_session_create(const char* config_path, ufo_session** out) {
  return guarded([&] {
    require(config_path, "config_path");
    require(out, "out");
    auto s = std::make_unique<ufo_session>();
    s->config = ufo::RunConfig::load(config_path);
    s->net = std::make_unique<ufo::UfoNet<float>>(s->config.effective_model());
    *out = s.release();
  });
}

void ufo_session_destroy(ufo_session* session) { delete session; }

ufo_status ufo_session_load(ufo_session* session, const char* checkpoint_path) {
  return guarded([&] {
    require(session, "session");
    require(checkpoint_path, "checkpoint_path");
    ufo::load_model(checkpoint_path, *session->net);
  });
}

ufo_status ufo_session_save(ufo_session* session, const char* checkpoint_path) {
  return guarded([&] {
    require(session, "session");
    require(checkpoint_path, "checkpoint_path");
    ufo::save_model(checkpoint_path, *session->net);
  });
}

ufo_status ufo_session_train(ufo_session* session, const char* data_dir, const char* out_dir,
                             const char* resume_checkpoint, const uint64_t* seed, ufo_train_summary* summary) {
  return guarded([&] {
    require(session, "session");
    require(out_dir, "out_dir");
    ufo::RunConfig cfg = session->config;
    if (seed != nullptr) cfg.train.seed = *seed;
    ufo::TrainOptions opts;
    opts.data_root = data_root(session, data_dir);
    opts.out_dir = out_dir;
    if (resume_checkpoint != nullptr) opts.resume = resume_checkpoint;
    const auto result = ufo::train(cfg, opts);
    ufo::load_model(result.checkpoint, *session->net);
    if (summary != nullptr) {
      *summary = {};
      summary->steps = result.final_step;
      if (!result.history.empty()) {
        const auto& last = result.history.back();
        summary->cls = last.loss.cls;
        summary->wbce = last.loss.wbce;
        summary->iou = last.loss.iou;
        summary->total = last.loss.total;
        summary->lr = last.lr;
      }
    }
  });
}

ufo_status ufo_session_eval(ufo_session* session, const char* data_dir, const char* split, int oracle,
                            const char* out_dir, ufo_metrics* metrics) {
  return guarded([&] {
    require(session, "session");
    const auto root = data_root(session, data_dir);
    const auto manifest = ufo::load_manifest(root);
    const auto ids = ufo::split_ids(session->config, manifest, ufo::parse_eval_split(split ? split : "val"));
    if (ids.empty()) throw ufo::UsageError("the selected split contains no groups");
    const auto report = oracle ? ufo::evaluate_oracle(root, manifest, ids)
                               : ufo::evaluate_groups(*session->net, root, manifest, ids);
    if (out_dir != nullptr) ufo::write_report(report, out_dir);
    if (metrics != nullptr) {
      metrics->num_images = static_cast<int64_t>(report.per_image.size());
      metrics->precision = report.mean.precision;
      metrics->jaccard = report.mean.jaccard;
      metrics->mae = report.mean.mae;
      metrics->f_beta = report.mean.f_beta;
      metrics->max_f = report.max_f;
    }
  });
}

ufo_status ufo_session_infer(ufo_session* session, const char* group_dir, const char* out_dir, const char* aux_dir,
                             int64_t* num_written) {
  return guarded([&] {
    require(session, "session");
    require(group_dir, "group_dir");
    require(out_dir, "out_dir");
    std::optional<std::filesystem::path> aux;
    if (aux_dir != nullptr) aux = aux_dir;
    const auto written = ufo::infer_group(*session->net, group_dir, out_dir, aux);
    if (num_written != nullptr) *num_written = static_cast<int64_t>(written.size());
  });
}

ufo_status ufo_gradcheck(const char* config_path, int* passed, char** report, char** report_json) {
  return guarded([&] {
    require(config_path, "config_path");
    require(passed, "passed");
    const auto cfg = ufo::RunConfig::load(config_path);
    const auto r = ufo::run_gradcheck_suite(cfg);
    *passed = r.passed ? 1 : 0;
    if (report != nullptr) *report = dup_string(r.text());
    if (report_json != nullptr) *report_json = dup_string(r.to_json().dump(2));
  });
}

void ufo_free_string(char* s) { std::free(s); }

ufo_status ufo_inject_fault(const char* op) {
  return guarded([&] {
    require(op, "op");
    for (const char* known : kFaultableOps) {
      if (std::strcmp(known, op) == 0) {
        ufo::testing::inject_backward_fault(op);
        return;
      }
    }
    throw ufo::UsageError(std::string("unknown op '") + op + "' for fault injection");
  });
}

void ufo_clear_faults(void) { ufo::testing::clear_backward_faults(); }

}  // extern "C"
