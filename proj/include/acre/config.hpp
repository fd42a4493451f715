#pragma once
// key=value run configuration files. Unknown keys are hard errors; all
// violations are collected and reported at once.

#include <string>
#include <vector>

#include "acre/model.hpp"
#include "acre/train.hpp"

namespace acre::config {

struct RunConfig {
  std::string dataset_dir;        // required for train/grid-search
  model::ModelConfig model;
  train::TrainConfig train;
  eval::EvalOptions eval;

  std::string to_text() const;    // reproducible key=value dump
};

// Parses `path` into `base` (later keys win). Lines are `key = value`,
// blank lines and #-comments allowed. Throws std::invalid_argument listing
// every unknown key / bad value with its line number.
RunConfig parse_file(const std::string& path, RunConfig base = {});

// Applies one `key=value` override (e.g. from a CLI flag).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value,
                    std::vector<std::string>& errors);

}  // namespace acre::config
