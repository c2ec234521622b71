/*
 * Copyright (c) 2026, The mgbert Authors.  All rights reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "mgbert/config.hpp"
#include "mgbert/model.hpp"
#include "mgbert/tensor.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mgbert
{

/// Self-describing tensor container shared by checkpoints, optimizer state and
/// adapter files.
///
/// Layout (little-endian):
///   "MGBTNSR1"                      8-byte magic
///   u64 n, n bytes                  metadata as `key = value` lines
///   u64 count                       number of tensors
///   per tensor: u32 len, name bytes, u32 ndim (=2), u64 rows, u64 cols,
///               rows*cols IEEE-754 binary32 values
struct TensorContainer
{
    KeyValueFile metadata;
    std::vector<std::pair<std::string, Matrix<float>>> tensors;

    Matrix<float> const* find(std::string const& name) const;
    Matrix<float> const& at(std::string const& name) const;
    std::string meta(std::string const& key) const;
    std::optional<std::string> meta_opt(std::string const& key) const;
};

std::string encode_container(TensorContainer const& c);
TensorContainer decode_container(std::string const& bytes);
void save_container(std::string const& path, TensorContainer const& c);
TensorContainer load_container(std::string const& path);

/// Adds params under `prefix` and the arch config as `arch.*` metadata.
void put_model(TensorContainer& c, ArchConfig const& cfg, ModelParams<float> const& params, std::string const& prefix = "");
ArchConfig get_arch(TensorContainer const& c);
ModelParams<float> get_model(TensorContainer const& c, ArchConfig const& cfg, std::string const& prefix = "");

void write_file_bytes(std::string const& path, std::string const& bytes);
std::string read_file_bytes(std::string const& path);

} // namespace mgbert
