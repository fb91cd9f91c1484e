#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "qmix/experiments.hpp"

namespace {

int fail(const std::exception& e) {
  std::cerr << "qmix: " << e.what() << "\n";
  return qmix::exit_code(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qmix: quantum ergodicity and mixing experiments on Schreier graphs"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed = -1;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run a scenario config and write its output directory");
  run->add_option("config", config_path, "Config JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Replace the seed list by a single seed")->check(CLI::NonNegativeNumber);
  run->add_option("--out", out_dir, "Override output_dir");
  run->add_option("--threads", threads, "Worker threads for independent instances")->check(CLI::PositiveNumber);

  auto* list = app.add_subcommand("list-scenarios", "List canned scenarios");
  bool show_presets = false;
  list->add_flag("--presets", show_presets, "Print each preset config");

  auto* validate = app.add_subcommand("validate", "Check a config against the schema");
  validate->add_option("config", config_path, "Config JSON")->required();

  std::string preset_name;
  auto* preset = app.add_subcommand("preset", "Print the preset config of a scenario");
  preset->add_option("scenario", preset_name, "Scenario name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*list) {
      for (const auto& s : qmix::scenarios()) {
        std::cout << s.name << "\t" << s.summary << "\n";
        if (show_presets) std::cout << s.preset.dump(2) << "\n";
      }
      return 0;
    }
    if (*preset) {
      std::cout << qmix::scenario_info(preset_name).preset.dump(2) << "\n";
      return 0;
    }
    auto cfg = qmix::load_config(config_path);
    if (*validate) {
      std::cout << "ok: " << cfg.scenario << "\n";
      return 0;
    }
    if (seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed)};
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    if (threads > 0) cfg.threads = threads;
    const auto res = qmix::run_experiment(cfg);
    std::cout << cfg.scenario << ": " << res.rows.size() << " rows, " << res.cms.size() << " CMS checks ("
              << res.summary["cms_vacuous"].get<int>() << " vacuous), " << res.audits.size() << " audits, "
              << res.seconds << " s -> " << cfg.output_dir << "\n";
    return 0;
  } catch (const std::exception& e) {
    return fail(e);
  }
}
