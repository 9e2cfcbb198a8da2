// dpointnet command-line driver. Talks to the library only through dpn.h.
//
// Settings resolve as: preset defaults, then the --config file, then flags.
// Exit codes: 0 ok, 2 usage, 3 validation, 4 check failure, 5 runtime fault.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dpn/dpn.h"

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kCheckFailed = 4, kRuntime = 5 };

struct Options {
  std::string preset;
  std::string config;
  std::string out_dir = "out";
  std::optional<unsigned long long> seed;
  std::string scheme;
  std::optional<std::size_t> layers;
  std::optional<double> radius_m;
  std::optional<std::size_t> k;
  std::optional<std::size_t> seeds;
  std::string aux_heads;
  std::optional<std::size_t> epochs;
  bool synthetic = false;
  std::string scenes_dir;
  std::string axis;
  std::size_t gen_scenes = 10;
  std::string fault;
};

struct ConfigDeleter {
  void operator()(dpn_config* c) const { dpn_config_free(c); }
};
using ConfigPtr = std::unique_ptr<dpn_config, ConfigDeleter>;

class Failure {
 public:
  Failure(int code, std::string message) : code(code), message(std::move(message)) {}
  int code;
  std::string message;
};

// Errors while assembling the configuration.
int setup_exit(dpn_status s) {
  switch (s) {
    case DPN_ERR_VALIDATION: return kValidation;
    case DPN_ERR_FORMAT:
    case DPN_ERR_IO:
    case DPN_ERR_INVALID_ARGUMENT: return kUsage;
    default: return kRuntime;
  }
}

// Errors while a subcommand runs.
int run_exit(dpn_status s) {
  switch (s) {
    case DPN_OK: return kOk;
    case DPN_ERR_VALIDATION: return kValidation;
    case DPN_ERR_CHECK_FAILED: return kCheckFailed;
    default: return kRuntime;
  }
}

void setup(dpn_status s, const std::string& context) {
  if (s != DPN_OK) throw Failure(setup_exit(s), context + ": " + dpn_last_error());
}

void set_key(dpn_config* cfg, const char* key, const std::string& json_value) {
  setup(dpn_config_set(cfg, key, json_value.c_str()), std::string("--") + key);
}

std::string quoted(const std::string& s) { return "\"" + s + "\""; }

ConfigPtr resolve_config(const Options& o) {
  dpn_config* raw = nullptr;
  setup(dpn_config_create(o.preset.empty() ? nullptr : o.preset.c_str(), &raw), "--preset");
  ConfigPtr cfg(raw);
  if (!o.config.empty()) setup(dpn_config_load(cfg.get(), o.config.c_str()), o.config);
  if (o.seed) set_key(cfg.get(), "rng_seed", std::to_string(*o.seed));
  if (!o.scheme.empty()) set_key(cfg.get(), "scheme", quoted(o.scheme));
  if (o.k) set_key(cfg.get(), "k_neighbors", std::to_string(*o.k));
  if (o.layers) set_key(cfg.get(), "num_fa_layers", std::to_string(*o.layers));
  if (o.radius_m) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *o.radius_m);
    set_key(cfg.get(), "radius_m", buf);
  }
  if (o.seeds) set_key(cfg.get(), "num_seeds", std::to_string(*o.seeds));
  if (!o.aux_heads.empty()) set_key(cfg.get(), "aux_heads", o.aux_heads == "on" ? "true" : "false");
  if (o.epochs) set_key(cfg.get(), "epochs", std::to_string(*o.epochs));
  setup(dpn_config_validate(cfg.get()), "invalid settings");
  return cfg;
}

int finish(dpn_status s, char* json, bool print_json = true) {
  if (json) {
    if (print_json) std::printf("%s\n", json);
    dpn_string_free(json);
  }
  if (s != DPN_OK) std::fprintf(stderr, "error: %s\n", dpn_last_error());
  return run_exit(s);
}

int cmd_check(const Options& o) {
  ConfigPtr cfg = resolve_config(o);
  char* json = nullptr;
  const dpn_status s = dpn_run_check(cfg.get(), o.out_dir.c_str(), &json);
  if (json) {
    const auto summary = nlohmann::json::parse(json, nullptr, false);
    if (summary.is_object() && summary.contains("text"))
      std::printf("%s", summary["text"].get<std::string>().c_str());
    std::printf("report: %s/check.json\n", o.out_dir.c_str());
  }
  return finish(s, json, false);
}

int cmd_train(const Options& o) {
  if (o.synthetic && !o.scenes_dir.empty())
    throw Failure(kUsage, "--synthetic and --scenes-dir are mutually exclusive");
  ConfigPtr cfg = resolve_config(o);
  char* json = nullptr;
  const char* scenes = o.scenes_dir.empty() ? nullptr : o.scenes_dir.c_str();
  const dpn_status s = dpn_run_train(cfg.get(), scenes, o.out_dir.c_str(), &json);
  return finish(s, json);
}

int cmd_bench(const Options& o) {
  ConfigPtr cfg = resolve_config(o);
  char* json = nullptr;
  const dpn_status s = dpn_run_bench(cfg.get(), o.out_dir.c_str(), &json);
  return finish(s, json);
}

int cmd_sweep(const Options& o) {
  ConfigPtr cfg = resolve_config(o);
  char* json = nullptr;
  const dpn_status s = dpn_run_sweep(cfg.get(), o.axis.c_str(), o.out_dir.c_str(), &json);
  return finish(s, json);
}

int cmd_gen(const Options& o) {
  ConfigPtr cfg = resolve_config(o);
  char* json = nullptr;
  const dpn_status s = dpn_run_gen(cfg.get(), o.gen_scenes, o.out_dir.c_str(), &json);
  return finish(s, json);
}

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--preset", o.preset, "Base settings: desk (default) or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--config", o.config, "JSON config applied over the preset");
  sub->add_option("--seed", o.seed, "Root RNG seed");
  sub->add_option("--out-dir", o.out_dir, "Output directory")->capture_default_str();
  sub->add_option("--scheme", o.scheme, "Fusion scheme")
      ->check(CLI::IsMember({"append", "coordconcat", "featconcat"}));
  sub->add_option("--layers", o.layers, "Number of FA layers");
  sub->add_option("--radius-m", o.radius_m, "Ball-query radius in metres");
  sub->add_option("--k", o.k, "Neighbors per seed");
  sub->add_option("--seeds", o.seeds, "Number of FPS seeds");
  sub->add_option("--aux-heads", o.aux_heads, "Auxiliary heads during training")
      ->check(CLI::IsMember({"on", "off"}));
  sub->add_option("--epochs", o.epochs, "Training epochs");
  sub->add_option("--inject-fault", o.fault)->group("")->check(CLI::IsMember({"drop-fusion"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dpointnet: density-oriented point-cloud operator toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dpn_version()));
  Options o;

  auto* check = app.add_subcommand("check", "Run oracle, gradient and invariant suites");
  auto* train = app.add_subcommand("train", "Train the detector on synthetic or generated scenes");
  auto* bench = app.add_subcommand("bench", "Time single sampling against the per-level baseline");
  auto* sweep = app.add_subcommand("sweep", "Ablation sweep over one axis");
  auto* gen = app.add_subcommand("gen", "Write synthetic scenes");
  for (CLI::App* sub : {check, train, bench, sweep, gen}) add_common(sub, o);
  train->add_flag("--synthetic", o.synthetic, "Generate training scenes (default)");
  train->add_option("--scenes-dir", o.scenes_dir, "Directory of scene JSON files from gen");
  sweep->add_option("--axis", o.axis, "Sweep axis")
      ->required()
      ->check(CLI::IsMember({"scheme", "head_layer", "radius", "k"}));
  gen->add_option("--scenes", o.gen_scenes, "Number of scenes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  dpn_set_fault_injection(o.fault == "drop-fusion" ? 1 : 0);
  try {
    if (*check) return cmd_check(o);
    if (*train) return cmd_train(o);
    if (*bench) return cmd_bench(o);
    if (*sweep) return cmd_sweep(o);
    if (*gen) return cmd_gen(o);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  }
  return kUsage;
}
