#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "temploc/commands.hpp"
#include "temploc/parallel.hpp"

int main(int argc, char** argv) {
  using namespace temploc;
  CLI::App app{"temploc: temporal LiDAR relocalization toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, mode_name;
  std::uint64_t seed = 0;
  std::size_t threads = std::max(1u, std::thread::hardware_concurrency());
  auto add_common = [&](CLI::App* sub, bool with_mode) {
    sub->add_option("--config", config_path, "configuration file (JSON)");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--out", out, "output file (simulate) or directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    if (with_mode)
      sub->add_option("--mode", mode_name, "measurement_only | measurement_conf | full")
          ->check(CLI::IsMember({"measurement_only", "measurement_conf", "full"}));
  };

  auto* sim = app.add_subcommand("simulate", "write a simulated sequence file");
  add_common(sim, false);

  std::string sequence;
  auto* run = app.add_subcommand("run", "relocalize every frame of a sequence");
  add_common(run, true);
  run->add_option("sequence", sequence, "sequence file")->required();

  std::string ablate_sequence;
  auto* ablate = app.add_subcommand("ablate", "compare the three modes on one sequence");
  add_common(ablate, false);
  ablate->add_option("sequence", ablate_sequence, "sequence file (simulated from the config if omitted)");

  std::string table_a, table_b;
  auto* eval = app.add_subcommand("eval", "summarize or compare trajectory tables");
  eval->add_option("table_a", table_a, "trajectory table")->required();
  eval->add_option("table_b", table_b, "second trajectory table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kUsage;
  }

  set_worker_threads(threads);
  cli::Options opt;
  auto fill = [&](CLI::App* sub) {
    if (sub->count("--config")) opt.config_path = config_path;
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out = out;
    if (sub->get_option_no_throw("--mode") && sub->count("--mode")) opt.mode = parse_mode(mode_name);
  };

  if (sim->parsed()) {
    fill(sim);
    return cli::cmd_simulate(opt);
  }
  if (run->parsed()) {
    fill(run);
    return cli::cmd_run(opt, sequence);
  }
  if (ablate->parsed()) {
    fill(ablate);
    return cli::cmd_ablate(opt, ablate->count("sequence") ? std::optional<std::string>(ablate_sequence) : std::nullopt);
  }
  return cli::cmd_eval(table_a, eval->count("table_b") ? std::optional<std::string>(table_b) : std::nullopt);
}
