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

#include <json.hpp>
#include <map>
#include <string>

#include "damamba/tensor.hpp"

namespace damamba {

/// Binary archive: a JSON header (metadata, rng streams, tensor directory)
/// followed by raw little-endian double data. Written via temp-file rename.
struct Checkpoint {
  int64_t step = 0;
  nlohmann::json meta;
  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> rng_states;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace damamba
