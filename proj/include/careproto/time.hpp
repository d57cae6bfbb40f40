// Copyright 2026 The careproto Authors.
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

#include <chrono>
#include <functional>
#include <string>
#include <string_view>

namespace careproto {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;
using Clock = std::function<Timestamp()>;

// RFC 3339, always emitted in UTC with millisecond precision:
// "2026-10-14T08:30:00.000Z".
std::string format_rfc3339(Timestamp t);

// Accepts "Z" or a numeric "+hh:mm" offset and optional fractional seconds.
// Throws Error(kParse) on anything else.
Timestamp parse_rfc3339(std::string_view text);

Clock system_clock();

// Deterministic clock for tests and replays: returns start, start+step, ...
Clock stepping_clock(Timestamp start,
                     std::chrono::milliseconds step = std::chrono::seconds(1));

}  // namespace careproto
