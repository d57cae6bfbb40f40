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

#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "careproto/domain.hpp"
#include "careproto/protocol.hpp"

namespace careproto {

struct VersionInfo {
  int version = 0;
  TreeSource source;
  bool active = false;
};

// Append-only store of protocol tree versions with one active version per
// disease. The first version stored for a disease becomes active; later
// versions wait for an explicit activate(). Stored trees never change.
//
// Readers share a lock and always receive copies; put_version and activate
// are serialized. With a directory attached, each version is written as
// <dir>/<disease>/v<N>.json (a plain tree document) and <dir>/index.json
// records versions, provenance and the active pointer.
class ProtocolRepository {
 public:
  explicit ProtocolRepository(TestRegistry tests,
                              std::optional<std::filesystem::path> dir = std::nullopt);

  ProtocolRepository(const ProtocolRepository&) = delete;
  ProtocolRepository& operator=(const ProtocolRepository&) = delete;

  // Throws Error(kInvalidArgument) carrying the violations when the tree is
  // invalid. Returns the assigned version number.
  int put_version(ProtocolTree tree);
  void activate(const std::string& disease_id, int version);

  ProtocolTree get_active(const std::string& disease_id) const;
  ProtocolTree get_version(const std::string& disease_id, int version) const;
  std::optional<ProtocolTree> find_active(const std::string& disease_id) const;
  std::vector<VersionInfo> versions(const std::string& disease_id) const;
  int active_version(const std::string& disease_id) const;
  bool has_version(const std::string& disease_id, int version) const;
  std::vector<std::string> diseases() const;
  bool empty() const;

  const TestRegistry& tests() const { return tests_; }

 private:
  struct History {
    std::vector<ProtocolTree> versions;  // versions[i].version == i + 1
    int active = 0;
  };

  const History& history(const std::string& disease_id) const;
  void load();
  void persist_index() const;

  TestRegistry tests_;
  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, History> diseases_;
};

// Filesystem-safe rendering of an identifier ("a/b" -> "a%2Fb").
std::string path_component(const std::string& id);

// Writes via a temporary file and rename so readers never see partial data.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace careproto
