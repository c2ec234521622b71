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

#include <stdexcept>
#include <string>

namespace mgbert
{

// The CLI maps each family onto a stable exit code:
// ConfigError -> 1, DataError / ProvenanceError -> 2, NumericError -> 3.

class ConfigError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

class RangeError : public std::out_of_range
{
public:
    using std::out_of_range::out_of_range;
};

/// Sequence longer than the model's configured maximum.
class LengthError : public std::length_error
{
public:
    using std::length_error::length_error;
};

class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Resume refused: checkpoint and dataset disagree about what was consumed.
class ProvenanceError : public DataError
{
public:
    using DataError::DataError;
};

/// Non-finite gradients, losses, or parameters.
class NumericError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

} // namespace mgbert
