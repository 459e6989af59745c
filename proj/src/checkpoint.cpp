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

#include "damamba/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace damamba {
namespace {

constexpr char kMagic[8] = {'D', 'M', 'C', 'K', '0', '0', '0', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["step"] = ck.step;
  header["meta"] = ck.meta;
  header["rng"] = ck.rng_states;

  nlohmann::json dir = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, tensor] : ck.tensors) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["offset"] = offset;
    dir.push_back(entry);
    offset += tensor.numel();
  }
  header["tensors"] = dir;

  const std::string blob = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out.write(kMagic, sizeof(kMagic));
    const uint64_t header_len = blob.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    for (const auto& [name, tensor] : ck.tensors) {
      (void)name;
      out.write(reinterpret_cast<const char*>(tensor.data()),
                static_cast<std::streamsize>(tensor.numel() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("rename failed: " + path);
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw std::runtime_error("bad checkpoint magic: " + path);
  }
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string blob(header_len, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  const nlohmann::json header = nlohmann::json::parse(blob);

  Checkpoint ck;
  ck.step = header.at("step").get<int64_t>();
  ck.meta = header.at("meta");
  ck.rng_states =
      header.at("rng").get<std::map<std::string, std::string>>();
  for (const auto& entry : header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    Tensor t = Tensor::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("truncated tensor " + name);
    ck.tensors.emplace(name, std::move(t));
  }
  return ck;
}

}  // namespace damamba
