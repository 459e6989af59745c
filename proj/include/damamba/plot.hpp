// Copyright 2026 DA-Mamba Contributors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

namespace damamba {

struct EntropySeries {
  int stage = 0;
  std::vector<double> steps;
  std::vector<double> values;  // h_t_ts + h_t_st per step
};

/// Parses an entropy.csv written by run_training into one series per stage.
std::vector<EntropySeries> read_entropy_csv(const std::string& path);

/// Renders the per-stage distillation entropy over training steps to a PNG
/// with one labeled line per stage.
void plot_entropy(const std::vector<EntropySeries>& series,
                  const std::string& out_png, int width = 900,
                  int height = 600);

}  // namespace damamba
