#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "quad/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Planning and tracking pipeline for agile quadruped maneuvers"};
  app.require_subcommand(1);

  std::string scenario, out_dir = "run", run_dir, mode = "mpc";
  int iters = 0;

  auto* plan = app.add_subcommand("plan", "alternating trajectory optimization");
  plan->add_option("--scenario", scenario, "scenario file")->required();
  plan->add_option("--iters", iters, "alternating iterations (0: scenario default)");
  plan->add_option("--out", out_dir, "output directory");

  auto* track = app.add_subcommand("track", "closed-loop tracking of a plan");
  track->add_option("--scenario", scenario, "scenario file")->required();
  track->add_option("--mode", mode, "controller: mpc or pd");
  track->add_option("--out", out_dir, "run directory holding the plan artifacts");

  auto* report = app.add_subcommand("report", "residual tables and plot data");
  report->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) {
      quad::cmd_plan(scenario, iters, out_dir);
      std::printf("plan artifacts written to %s\n", out_dir.c_str());
    } else if (track->parsed()) {
      quad::cmd_track(scenario, mode, out_dir);
      std::printf("closed-loop log written to %s\n", out_dir.c_str());
    } else if (report->parsed()) {
      quad::cmd_report(run_dir);
      std::printf("report written to %s/report\n", run_dir.c_str());
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg) {
      if (c == '"') c = '\'';
    }
    std::fprintf(stderr, "{\"error\": \"%s\"}\n", msg.c_str());
    return 1;
  }
  return 0;
}
