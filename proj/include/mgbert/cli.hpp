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

#include <iosfwd>
#include <string>
#include <vector>

namespace mgbert
{

/// Exit codes of the command-line tool.
enum ExitCode : int
{
    kExitOk = 0,
    kExitUsage = 1,
    kExitData = 2,
    kExitNumeric = 3
};

std::vector<std::string> subcommand_names();

/// Parses argv (argv[0] is the program name) and runs one subcommand.
int dispatch(std::vector<std::string> const& argv, std::ostream& out, std::ostream& err);

} // namespace mgbert
