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

#include "careproto/time.hpp"

#include <cctype>
#include <cstdio>
#include <memory>

#include "careproto/error.hpp"

namespace careproto {
namespace {

using namespace std::chrono;

int read_digits(std::string_view text, size_t& pos, size_t count) {
  if (pos + count > text.size()) fail(ErrorCode::kParse, "truncated timestamp");
  int value = 0;
  for (size_t i = 0; i < count; ++i) {
    char c = text[pos + i];
    if (!std::isdigit(static_cast<unsigned char>(c)))
      fail(ErrorCode::kParse, "bad timestamp digit in '" + std::string(text) + "'");
    value = value * 10 + (c - '0');
  }
  pos += count;
  return value;
}

void expect_char(std::string_view text, size_t& pos, char want) {
  if (pos >= text.size() ||
      std::toupper(static_cast<unsigned char>(text[pos])) != want)
    fail(ErrorCode::kParse, "malformed timestamp '" + std::string(text) + "'");
  ++pos;
}

}  // namespace

std::string format_rfc3339(Timestamp t) {
  auto day = floor<days>(t);
  year_month_day ymd{day};
  auto tod = t - day;
  auto h = duration_cast<hours>(tod);
  auto m = duration_cast<minutes>(tod - h);
  auto s = duration_cast<seconds>(tod - h - m);
  auto ms = duration_cast<milliseconds>(tod - h - m - s);
  char buf[40];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d.%03dZ",
                static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                static_cast<int>(m.count()), static_cast<int>(s.count()),
                static_cast<int>(ms.count()));
  return buf;
}

Timestamp parse_rfc3339(std::string_view text) {
  size_t pos = 0;
  int y = read_digits(text, pos, 4);
  expect_char(text, pos, '-');
  int mo = read_digits(text, pos, 2);
  expect_char(text, pos, '-');
  int d = read_digits(text, pos, 2);
  expect_char(text, pos, 'T');
  int hh = read_digits(text, pos, 2);
  expect_char(text, pos, ':');
  int mm = read_digits(text, pos, 2);
  expect_char(text, pos, ':');
  int ss = read_digits(text, pos, 2);

  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60)
    fail(ErrorCode::kParse, "timestamp out of range '" + std::string(text) + "'");

  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int scale = 100;
    size_t start = pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
      millis += (text[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
    if (pos == start) fail(ErrorCode::kParse, "empty fraction in timestamp");
  }

  minutes offset{0};
  if (pos >= text.size()) fail(ErrorCode::kParse, "timestamp lacks zone designator");
  char zone = text[pos];
  if (zone == 'Z' || zone == 'z') {
    ++pos;
  } else if (zone == '+' || zone == '-') {
    ++pos;
    int oh = read_digits(text, pos, 2);
    expect_char(text, pos, ':');
    int om = read_digits(text, pos, 2);
    offset = minutes{oh * 60 + om};
    if (zone == '-') offset = -offset;
  } else {
    fail(ErrorCode::kParse, "bad zone designator in '" + std::string(text) + "'");
  }
  if (pos != text.size())
    fail(ErrorCode::kParse, "trailing characters in timestamp '" + std::string(text) + "'");

  Timestamp local = sys_days{ymd} + hours{hh} + minutes{mm} + seconds{std::min(ss, 59)} +
                    milliseconds{millis};
  return local - offset;
}

Clock system_clock() {
  return [] { return floor<milliseconds>(std::chrono::system_clock::now()); };
}

Clock stepping_clock(Timestamp start, milliseconds step) {
  auto next = std::make_shared<Timestamp>(start);
  return [next, step] {
    Timestamp now = *next;
    *next += step;
    return now;
  };
}

}  // namespace careproto
