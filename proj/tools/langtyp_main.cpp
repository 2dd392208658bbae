#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "langtyp/error.hpp"
#include "langtyp/pipeline.hpp"
#include "langtyp/util.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Typology prediction from multilingual translation models"};
  std::string config_path, stage_flag, stage_arg;
  std::optional<long long> seed;

  std::string stages = "all";
  for (const auto& s : langtyp::stage_names()) stages += "|" + s;
  app.add_option("STAGE", stage_arg, "Stage to run: " + stages);
  app.add_option("--config", config_path, "Pipeline config file (key=value)")->required();
  app.add_option("--seed", seed, "Override the config seed");
  app.add_option("--stage", stage_flag, "Stage to run (same as the positional argument)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (!stage_arg.empty() && !stage_flag.empty() && stage_arg != stage_flag)
      throw langtyp::ValidationError("conflicting stages '" + stage_arg + "' and '" + stage_flag + "'");
    std::string stage = !stage_flag.empty() ? stage_flag : !stage_arg.empty() ? stage_arg : "all";
    langtyp::PipelineConfig config = langtyp::load_pipeline_config(config_path);
    if (seed) {
      if (*seed < 0) throw langtyp::ValidationError("--seed must be non-negative");
      config.values["seed"] = std::to_string(*seed);
    }
    langtyp::Pipeline pipeline(std::move(config));
    for (const auto& o : pipeline.run(stage)) std::cout << o.stage << (o.skipped ? " skipped" : " done") << '\n';
    return 0;
  } catch (const langtyp::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const langtyp::RuntimeFailure& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}
