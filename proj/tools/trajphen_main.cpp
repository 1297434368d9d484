#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "trajphen/errors.hpp"
#include "trajphen/io.hpp"
#include "trajphen/pipeline.hpp"

using namespace trajphen;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config_path, "JSON run configuration file");
  sub->add_option("--out", flags.out, "run directory (overrides config)");
  sub->add_option("--seed", flags.seed, "global seed (overrides config)")
      ->each([&flags](const std::string&) { flags.seed_set = true; });
  sub->add_option("--set", flags.overrides,
                  "dot-path config override, e.g. --set cohort.n_pretrain=2000")
      ->take_all();
}

RunConfig load_config(const CommonFlags& flags) {
  nlohmann::json j = nlohmann::json::object();
  if (!flags.config_path.empty()) {
    if (!file_exists(flags.config_path)) {
      throw ConfigError("config file '" + flags.config_path + "' does not exist");
    }
    try {
      j = read_json_file(flags.config_path);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + flags.config_path + "': " + e.what());
    }
  }
  for (const std::string& o : flags.overrides) apply_override(j, o);
  RunConfig cfg = RunConfig::from_json(j);
  if (!flags.out.empty()) cfg.out = flags.out;
  if (flags.seed_set) cfg.seed = flags.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trajphen: trajectory-aware distillation pipeline over synthetic cohorts"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string selected_stage;

  const std::vector<std::string> stages = {"gen-data", "pretrain-traj", "embed",   "distill",
                                           "finetune", "evaluate",      "geometry"};
  for (const std::string& stage : stages) {
    CLI::App* sub = app.add_subcommand(stage, "run the " + stage + " stage");
    add_common(sub, flags);
    sub->callback([&selected_stage, stage] { selected_stage = stage; });
  }
  {
    CLI::App* sub = app.add_subcommand("all", "run every stage in order");
    add_common(sub, flags);
    std::shared_ptr<std::string> only = std::make_shared<std::string>();
    sub->add_option("--stage", *only, "restrict to a single stage");
    sub->callback([&selected_stage, only] {
      selected_stage = only->empty() ? "all" : *only;
    });
  }

  std::string cmp_a, cmp_b, cmp_out;
  {
    CLI::App* sub = app.add_subcommand("compare", "per-disease delta report between two metrics files");
    sub->add_option("metrics_a", cmp_a, "baseline metrics.json")->required();
    sub->add_option("metrics_b", cmp_b, "candidate metrics.json")->required();
    sub->add_option("--out", cmp_out, "write the report here as JSON");
    sub->callback([&selected_stage] { selected_stage = "compare"; });
  }
  {
    CLI::App* sub = app.add_subcommand("init-config", "print the default configuration as JSON");
    sub->callback([&selected_stage] { selected_stage = "init-config"; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (selected_stage == "init-config") {
      RunConfig cfg;
      cfg.variants = RunConfig::default_variants();
      std::cout << cfg.to_json().dump(2) << std::endl;
      return 0;
    }
    if (selected_stage == "compare") {
      nlohmann::json report = compare_runs(cmp_a, cmp_b);
      std::cout << report.dump(2) << std::endl;
      if (!cmp_out.empty()) write_json_file(cmp_out, report);
      return 0;
    }
    RunConfig cfg = load_config(flags);
    RunLock lock(cfg.out);
    run_stage(cfg, selected_stage);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const GuardViolation& e) {
    std::cerr << "guard violation: " << e.what() << std::endl;
    return 3;
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << std::endl;
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
