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

#include "careproto/repository.hpp"

#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>

#include "careproto/error.hpp"

namespace careproto {

namespace fs = std::filesystem;

std::string path_component(const std::string& id) {
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '_' || c == '-') {
      out += static_cast<char>(c);
    } else {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    }
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kInvalidArgument, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) fail(ErrorCode::kInvalidArgument, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ProtocolRepository::ProtocolRepository(TestRegistry tests, std::optional<fs::path> dir)
    : tests_(std::move(tests)), dir_(std::move(dir)) {
  if (dir_) load();
}

const ProtocolRepository::History& ProtocolRepository::history(const std::string& disease_id) const {
  auto it = diseases_.find(disease_id);
  if (it == diseases_.end()) fail(ErrorCode::kNotFound, "unknown disease '" + disease_id + "'");
  return it->second;
}

int ProtocolRepository::put_version(ProtocolTree tree) {
  auto violations = validate_tree(tree, tests_);
  if (!violations.empty()) {
    std::vector<std::string> details;
    for (const auto& v : violations) details.push_back(v.to_string());
    throw Error(ErrorCode::kInvalidArgument, "invalid tree for '" + tree.disease_id + "'",
                std::move(details));
  }
  std::unique_lock lock(mu_);
  History& h = diseases_[tree.disease_id];
  tree.version = static_cast<int>(h.versions.size()) + 1;
  if (dir_) {
    write_file_atomic(*dir_ / path_component(tree.disease_id) /
                          ("v" + std::to_string(tree.version) + ".json"),
                      serialize_tree(tree));
  }
  h.versions.push_back(tree);
  if (h.active == 0) h.active = tree.version;
  if (dir_) persist_index();
  return tree.version;
}

void ProtocolRepository::activate(const std::string& disease_id, int version) {
  std::unique_lock lock(mu_);
  auto it = diseases_.find(disease_id);
  if (it == diseases_.end()) fail(ErrorCode::kNotFound, "unknown disease '" + disease_id + "'");
  if (version < 1 || version > static_cast<int>(it->second.versions.size()))
    fail(ErrorCode::kNotFound,
         "unknown version " + std::to_string(version) + " of '" + disease_id + "'");
  it->second.active = version;
  if (dir_) persist_index();
}

ProtocolTree ProtocolRepository::get_active(const std::string& disease_id) const {
  std::shared_lock lock(mu_);
  const History& h = history(disease_id);
  return h.versions.at(static_cast<size_t>(h.active - 1));
}

std::optional<ProtocolTree> ProtocolRepository::find_active(const std::string& disease_id) const {
  std::shared_lock lock(mu_);
  auto it = diseases_.find(disease_id);
  if (it == diseases_.end()) return std::nullopt;
  return it->second.versions.at(static_cast<size_t>(it->second.active - 1));
}

ProtocolTree ProtocolRepository::get_version(const std::string& disease_id, int version) const {
  std::shared_lock lock(mu_);
  const History& h = history(disease_id);
  if (version < 1 || version > static_cast<int>(h.versions.size()))
    fail(ErrorCode::kNotFound,
         "unknown version " + std::to_string(version) + " of '" + disease_id + "'");
  return h.versions[static_cast<size_t>(version - 1)];
}

bool ProtocolRepository::has_version(const std::string& disease_id, int version) const {
  std::shared_lock lock(mu_);
  auto it = diseases_.find(disease_id);
  return it != diseases_.end() && version >= 1 &&
         version <= static_cast<int>(it->second.versions.size());
}

std::vector<VersionInfo> ProtocolRepository::versions(const std::string& disease_id) const {
  std::shared_lock lock(mu_);
  const History& h = history(disease_id);
  std::vector<VersionInfo> out;
  for (const auto& t : h.versions) out.push_back({t.version, t.source, t.version == h.active});
  return out;
}

int ProtocolRepository::active_version(const std::string& disease_id) const {
  std::shared_lock lock(mu_);
  return history(disease_id).active;
}

std::vector<std::string> ProtocolRepository::diseases() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, _] : diseases_) out.push_back(id);
  return out;
}

bool ProtocolRepository::empty() const {
  std::shared_lock lock(mu_);
  return diseases_.empty();
}

void ProtocolRepository::persist_index() const {
  json diseases = json::object();
  for (const auto& [id, h] : diseases_) {
    json versions = json::array();
    for (const auto& t : h.versions)
      versions.push_back({{"version", t.version},
                          {"source", t.source},
                          {"file", path_component(id) + "/v" + std::to_string(t.version) + ".json"}});
    diseases[id] = {{"active", h.active}, {"versions", std::move(versions)}};
  }
  json index{{"format_version", 1}, {"diseases", std::move(diseases)}};
  write_file_atomic(*dir_ / "index.json", index.dump(2));
}

void ProtocolRepository::load() {
  fs::path index_path = *dir_ / "index.json";
  if (!fs::exists(index_path)) return;
  json index = json::parse(read_file(index_path));
  for (const auto& [id, entry] : index.at("diseases").items()) {
    History h;
    for (const auto& v : entry.at("versions")) {
      ProtocolTree tree = parse_tree(read_file(*dir_ / v.at("file").get<std::string>()));
      tree.version = v.at("version").get<int>();
      tree.source = v.at("source").get<TreeSource>();
      if (tree.disease_id != id || tree.version != static_cast<int>(h.versions.size()) + 1)
        fail(ErrorCode::kParse, "repository index is inconsistent for '" + id + "'");
      h.versions.push_back(std::move(tree));
    }
    h.active = entry.at("active").get<int>();
    if (h.active < 1 || h.active > static_cast<int>(h.versions.size()))
      fail(ErrorCode::kParse, "repository index has no valid active version for '" + id + "'");
    diseases_[id] = std::move(h);
  }
}

}  // namespace careproto
