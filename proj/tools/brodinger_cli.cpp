#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "brodinger/experiment.hpp"

using namespace brodinger;

int main(int argc, char** argv) {
  CLI::App app{"Entropic incompressible transport on the flat torus: solve, pressure, envelope."};
  app.require_subcommand(1, 1);
  std::string config_path, output;
  std::vector<std::string> overrides;
  bool plot = false;
  for (const char* name : {"solve", "pressure", "envelope", "all"}) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " pipeline");
    sub->add_option("-c,--config", config_path, "key = value configuration file")->required();
    sub->add_option("-o,--output", output, "output directory (overrides the config)");
    sub->add_option("-s,--set", overrides, "extra key=value settings applied after the file");
    sub->add_flag("--plot", plot, "write SVG plots");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(experiment::ExitCode::config_error);
  }
  const std::string command = app.get_subcommands().front()->get_name();

  experiment::ExperimentConfig cfg;
  try {
    std::ifstream f(config_path);
    if (!f) throw ConfigError("config: cannot read " + config_path);
    std::stringstream text;
    text << f.rdbuf() << "\n";
    for (const auto& o : overrides) text << o << "\n";
    if (!output.empty()) text << "output = " << output << "\n";
    if (plot) text << "plot = true\n";
    cfg = experiment::parse_config(text);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(experiment::ExitCode::config_error);
  }

  const auto r = experiment::run(cfg, command);
  if (r.code == experiment::ExitCode::success) {
    std::cout << command << ": ok, " << r.artifacts.size() << " artifacts in " << cfg.output << "\n";
  } else {
    std::cerr << command << ": " << r.message << " (exit " << static_cast<int>(r.code) << ")\n";
  }
  return static_cast<int>(r.code);
}
