#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "gridshift/cli.hpp"

int main(int argc, char** argv) {
  namespace cli = gridshift::cli;
  CLI::App app{"Structural emergency control for lossless power grids"};
  app.require_subcommand(1);
  std::string scenario, plan, out;

  auto* certify = app.add_subcommand("certify", "certify the fault-cleared state against the operating point");
  auto* plan_cmd = app.add_subcommand("plan", "design a remedial control plan");
  auto* simulate = app.add_subcommand("simulate", "simulate the scenario, optionally under a plan");
  auto* report = app.add_subcommand("report", "summarize the artifacts found in a run directory");
  for (auto* c : {certify, plan_cmd, simulate}) {
    c->add_option("--scenario", scenario, "scenario file")->required();
    c->add_option("--out", out, "output directory (default: stdout)");
  }
  simulate->add_option("--plan", plan, "plan file from `plan`");
  report->add_option("--out", out, "run directory to summarize")->required();
  report->add_option("--scenario", scenario, "ignored; accepted for a uniform command line");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::error;
  }

  const char* env = std::getenv("GRIDSHIFT_TOL_OVERRIDES");
  const std::string overrides = env ? env : "";
  const std::optional<std::filesystem::path> out_dir =
      out.empty() ? std::nullopt : std::optional<std::filesystem::path>(out);
  cli::Streams io{std::cout, std::cerr};
  try {
    if (report->parsed()) return cli::cmd_report(out, io);
    const auto s = cli::load(scenario, overrides);
    if (certify->parsed()) return cli::cmd_certify(s, out_dir, io);
    if (plan_cmd->parsed()) return cli::cmd_plan(s, out_dir, io);
    return cli::cmd_simulate(s, plan.empty() ? std::nullopt : std::optional<std::string>(plan), out_dir, io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::error;
  }
}
