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

#include "doctest.h"

#include "careproto/error.hpp"
#include "careproto/time.hpp"

using namespace careproto;
using namespace std::chrono;

TEST_SUITE("time") {

TEST_CASE("rfc3339 round trip in UTC") {
  Timestamp t = sys_days{year{2026} / 10 / 14} + hours{8} + minutes{30} + milliseconds{250};
  CHECK(format_rfc3339(t) == "2026-10-14T08:30:00.250Z");
  CHECK(parse_rfc3339(format_rfc3339(t)) == t);
}

TEST_CASE("offsets normalize to UTC") {
  CHECK(parse_rfc3339("2026-10-14T10:30:00+02:00") == parse_rfc3339("2026-10-14T08:30:00Z"));
  CHECK(parse_rfc3339("2026-10-14T03:00:00-05:30") == parse_rfc3339("2026-10-14T08:30:00Z"));
}

TEST_CASE("malformed timestamps are parse errors") {
  for (const char* bad : {"2026-10-14", "2026-13-01T00:00:00Z", "2026-10-14T08:30:00",
                          "2026-10-14T08:30:00Zjunk", "yesterday"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(parse_rfc3339(bad), Error);
  }
}

TEST_CASE("stepping clock advances by its step") {
  Timestamp t0 = sys_days{year{2026} / 1 / 1};
  Clock clock = stepping_clock(t0, seconds{2});
  CHECK(clock() == t0);
  CHECK(clock() == t0 + seconds{2});
}

}
