// Command-line front end over the C API.
#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ufo/ufo.h"

namespace {

int fail(const char* cmd, ufo_status st) {
  std::fprintf(stderr, "ufo %s: %s\n", cmd, ufo_last_error());
  return static_cast<int>(st);
}

const char* opt_cstr(const std::optional<std::string>& s) { return s ? s->c_str() : nullptr; }

struct Session {
  ufo_session* s = nullptr;
  ~Session() { ufo_session_destroy(s); }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group co-segmentation: synthesize data, train, evaluate, infer, gradient-check"};
  app.require_subcommand(1);

  std::string config;
  std::optional<std::string> checkpoint, data, out, aux;
  std::optional<uint64_t> seed;
  std::string split = "val";
  bool oracle = false;
  std::vector<std::string> faults;

  auto common = [&](CLI::App* sub, bool need_out) {
    sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
    auto* o = sub->add_option("--out", out, "output directory");
    if (need_out) o->required();
  };

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  common(synth, true);
  synth->add_option("--seed", seed, "override the generator seed");

  auto* train = app.add_subcommand("train", "train a model; writes model.ckpt and train_log.jsonl");
  common(train, true);
  train->add_option("--data", data, "dataset root (default: data.path)");
  train->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  train->add_option("--seed", seed, "override train.seed");

  auto* eval = app.add_subcommand("eval", "score a checkpoint; writes report.json and curves.csv");
  common(eval, false);
  eval->add_option("--checkpoint", checkpoint, "model checkpoint");
  eval->add_option("--data", data, "dataset root (default: data.path)");
  eval->add_option("--split", split, "train, val or all")->check(CLI::IsMember({"train", "val", "all"}));
  eval->add_flag("--oracle", oracle, "score ground truth against itself");

  auto* infer = app.add_subcommand("infer", "segment one image group (a directory of .ppm files)");
  common(infer, true);
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--data", data, "group directory")->required();
  infer->add_option("--aux", aux, "directory of auxiliary images with matching names");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite (double precision)");
  common(gradcheck, false);
  gradcheck->add_option("--inject-fault", faults, "test hook: flip the backward sign of an op");

  CLI11_PARSE(app, argc, argv);
  ufo_status st = UFO_OK;

  if (synth->parsed()) {
    const uint64_t s = seed.value_or(0);
    if ((st = ufo_synth(config.c_str(), out->c_str(), seed ? &s : nullptr)) != UFO_OK) return fail("synth", st);
    std::printf("wrote dataset to %s\n", out->c_str());
    return 0;
  }

  if (gradcheck->parsed()) {
    for (const auto& f : faults)
      if ((st = ufo_inject_fault(f.c_str())) != UFO_OK) return fail("gradcheck", st);
    int passed = 0;
    char* text = nullptr;
    char* json = nullptr;
    if ((st = ufo_gradcheck(config.c_str(), &passed, &text, &json)) != UFO_OK) return fail("gradcheck", st);
    std::fputs(text, stdout);
    if (out) {
      if (FILE* f = std::fopen(out->c_str(), "w")) {
        std::fputs(json, f);
        std::fclose(f);
      } else {
        std::fprintf(stderr, "ufo gradcheck: cannot write %s\n", out->c_str());
        passed = 0;
      }
    }
    ufo_free_string(text);
    ufo_free_string(json);
    return passed ? 0 : 1;
  }

  Session session;
  const char* cmd = train->parsed() ? "train" : eval->parsed() ? "eval" : "infer";
  if ((st = ufo_session_create(config.c_str(), &session.s)) != UFO_OK) return fail(cmd, st);

  if (train->parsed()) {
    const uint64_t s = seed.value_or(0);
    ufo_train_summary sum{};
    st = ufo_session_train(session.s, opt_cstr(data), out->c_str(), opt_cstr(checkpoint), seed ? &s : nullptr, &sum);
    if (st != UFO_OK) return fail(cmd, st);
    std::printf("step %lld: cls=%.6f wbce=%.6f iou=%.6f total=%.6f lr=%g\n", static_cast<long long>(sum.steps),
                sum.cls, sum.wbce, sum.iou, sum.total, sum.lr);
    return 0;
  }

  if (eval->parsed()) {
    if (!oracle && !checkpoint) {
      std::fprintf(stderr, "ufo eval: --checkpoint is required unless --oracle is given\n");
      return static_cast<int>(UFO_ERR_USAGE);
    }
    if (checkpoint && (st = ufo_session_load(session.s, checkpoint->c_str())) != UFO_OK) return fail(cmd, st);
    ufo_metrics m{};
    if ((st = ufo_session_eval(session.s, opt_cstr(data), split.c_str(), oracle ? 1 : 0, opt_cstr(out), &m)) !=
        UFO_OK) {
      return fail(cmd, st);
    }
    std::printf("images=%lld precision=%.4f jaccard=%.4f mae=%.4f f_beta=%.4f max_f=%.4f\n",
                static_cast<long long>(m.num_images), m.precision, m.jaccard, m.mae, m.f_beta, m.max_f);
    return 0;
  }

  if ((st = ufo_session_load(session.s, checkpoint->c_str())) != UFO_OK) return fail(cmd, st);
  int64_t written = 0;
  if ((st = ufo_session_infer(session.s, data->c_str(), out->c_str(), opt_cstr(aux), &written)) != UFO_OK) {
    return fail(cmd, st);
  }
  std::printf("wrote %lld mask(s) to %s\n", static_cast<long long>(written), out->c_str());
  return 0;
}
