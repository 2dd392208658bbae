#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "langtyp/models.hpp"
#include "langtyp/predict.hpp"
#include "langtyp/typology.hpp"

namespace langtyp {

inline constexpr const char* kToolVersion = "1.0.0";

// Flat key=value configuration. `values` holds the effective settings
// (input plus defaults); paths are kept as written and resolved against
// the config file's directory.
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::map<std::string, std::string> values;

  const std::string& get(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;
  long long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  std::uint64_t seed() const;
  TrainConfig train() const;
  KnnConfig knn() const;
  std::vector<EvalMethod> methods() const;
};

// Keys with their default values; an empty default marks a required key.
const std::map<std::string, std::string>& config_defaults();

PipelineConfig parse_pipeline_config(std::string_view text, const std::string& source_name,
                                     const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
std::string effective_config(const PipelineConfig& config);

// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // inputs unchanged since the last run
};

// Runs stages against one work directory, holding a lock file for the
// duration. Each stage records its input hashes and outputs in
// <work>/<stage>/MANIFEST and is skipped when nothing changed.
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig config);

  // "all" runs every stage in order; synth is included only when
  // synth_langs is non-zero.
  std::vector<StageOutcome> run(const std::string& stage);

  const PipelineConfig& config() const { return config_; }
  std::filesystem::path work_dir() const;

 private:
  StageOutcome run_stage(const std::string& stage);

  PipelineConfig config_;
};

}  // namespace langtyp
