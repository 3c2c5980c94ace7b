/*
 * Copyright 2026 The vflhssl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#ifndef VFLHSSL_CLI_H_
#define VFLHSSL_CLI_H_

#include <iosfwd>
#include <string>
#include <vector>

namespace vflhssl {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

// Entry point of the `vflhssl` tool:
//   vflhssl gen-data|pretrain|finetune|attack|report --config <path>
//           [--preset <name>] [--seed N] [--out dir] [--sweep k=v,...]
//           [--deterministic] [--resume] [--stop-after N]
// Progress goes to `log`; errors are printed there as well.
int RunCli(const std::vector<std::string>& args, std::ostream& log);
int RunCli(int argc, char** argv);

}  // namespace vflhssl

#endif  // VFLHSSL_CLI_H_
