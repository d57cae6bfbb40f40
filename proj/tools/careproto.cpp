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

// careproto command line: data generation, training, serving, scripted
// sessions and tree validation.

#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "careproto/error.hpp"
#include "careproto/protocol.hpp"
#include "careproto/repository.hpp"
#include "careproto/service.hpp"
#include "careproto/synthetic.hpp"

using namespace careproto;
namespace fs = std::filesystem;

namespace {

struct ServiceFlags {
  std::string config_path;
  std::string data_dir;
  std::string listen;
};

void add_service_flags(CLI::App* cmd, ServiceFlags& f) {
  cmd->add_option("--config", f.config_path, "service config file (flat JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--data-dir", f.data_dir, "state directory");
}

ServiceConfig resolve_config(const ServiceFlags& f) {
  ServiceConfig c = f.config_path.empty() ? ServiceConfig{} : load_service_config(f.config_path);
  apply_env_overrides(c);
  if (!f.data_dir.empty()) c.data_dir = f.data_dir;
  if (!f.listen.empty()) c.listen_address = f.listen;
  return c;
}

Response call(Service& s, const std::string& method, const std::string& path, const json& body) {
  Request r;
  r.method = method;
  r.path = path;
  r.body = body.dump();
  return s.handle(r);
}

Response expect_ok(Response r, const std::string& what) {
  if (r.status >= 300) {
    std::string msg = what + " failed (" + std::to_string(r.status) + "): " + r.body.value("error", "");
    throw std::runtime_error(msg);
  }
  return r;
}

int run_generate(const ServiceFlags& flags, const std::string& name, const std::string& gen_config,
                 int records, double noise, std::uint64_t seed, double missing, bool no_fixtures) {
  GeneratorConfig g;
  if (!gen_config.empty()) {
    g = json::parse(read_file(gen_config)).get<GeneratorConfig>();
  } else {
    g = demo_generator_config(records, noise, seed);
    g.missing_rate = missing;
  }
  auto config = resolve_config(flags);
  fs::create_directories(config.data_dir);
  write_generated_data(config.data_dir, g, name, !no_fixtures);
  std::cout << "wrote " << g.n_records << " records to " << (config.data_dir / "datasets" / name).string()
            << ".*\n";
  return 0;
}

int run_train(const ServiceFlags& flags, const std::string& dataset, bool incremental) {
  Service svc(resolve_config(flags));
  auto r = expect_ok(call(svc, "POST", "/admin/train", {{"dataset_ref", dataset}, {"incremental", incremental}}),
                     "training");
  std::cout << r.body.at("model").dump(2) << "\n";
  return 0;
}

int run_serve(const ServiceFlags& flags) {
  auto config = resolve_config(flags);
  auto [host, port] = parse_listen_address(config.listen_address);

  // Signals are taken synchronously by a dedicated thread; block them before
  // any other thread starts so they inherit the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  Service svc(config);
  HttpServer server(svc);
  if (port == 0) {
    port = server.bind_any(host);
    if (port < 0) throw std::runtime_error("cannot bind " + host);
  }
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  std::cerr << "listening on " << host << ":" << port << std::endl;
  bool ok = config.listen_address.ends_with(":0") ? server.listen_after_bind() : server.listen(host, port);
  if (!ok) {
    std::cerr << "cannot listen on " << host << ":" << port << "\n";
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  return ok ? 0 : 1;
}

// Script: {"record": {...}, "theta"?: x, "observations"?: [{"name", "value"}],
// "answers"?: {name: value}}. Scripted observations go in order; afterwards
// each recommendation is answered from "answers" until none is left or the
// next one has no answer.
int run_session(const ServiceFlags& flags, const std::string& script_path) {
  json script = json::parse(read_file(script_path));
  Service svc(resolve_config(flags));
  json start{{"record", script.at("record")}};
  if (script.contains("theta")) start["theta"] = script["theta"];
  auto r = expect_ok(call(svc, "POST", "/sessions", start), "session start");
  const std::string id = r.body.at("session_id");
  json last = r.body;
  auto submit = [&](const std::string& name, const json& value) {
    last = expect_ok(call(svc, "POST", "/sessions/" + id + "/observations", {{"name", name}, {"value", value}}),
                     "observation '" + name + "'")
               .body;
  };
  for (const auto& o : script.value("observations", json::array())) submit(o.at("name"), o.at("value"));
  const json answers = script.value("answers", json::object());
  json unanswered = json::array();
  while (!last.at("recommendations").empty()) {
    std::string name = last["recommendations"][0]["test"]["produces"];
    if (!answers.contains(name)) {
      for (const auto& rec : last["recommendations"]) unanswered.push_back(rec["test"]["produces"]);
      break;
    }
    submit(name, answers[name]);
  }
  auto summary = expect_ok(call(svc, "GET", "/sessions/" + id + "/summary", json::object()), "summary");
  std::cout << json{{"session_id", id}, {"summary", summary.body}, {"unanswered", unanswered}}.dump(2) << "\n";
  return 0;
}

int run_validate(const std::string& file, const std::string& tests_path) {
  ProtocolTree tree;
  try {
    tree = parse_tree(read_file(file));
  } catch (const Error& e) {
    std::cout << file << ": " << e.what() << "\n";
    return 2;
  }
  TestRegistry tests;
  if (!tests_path.empty()) tests = TestRegistry(json::parse(read_file(tests_path)).get<std::vector<TestDefinition>>());
  std::vector<Violation> violations;
  for (auto& v : validate_tree(tree, tests)) {
    // Without a catalog only the structure can be judged.
    bool catalog_rule = v.rule == "unknown test" || v.rule == "test/observation mismatch" ||
                        v.rule == "predicate kind mismatch" || v.rule == "unknown category";
    if (tests_path.empty() && catalog_rule) continue;
    violations.push_back(std::move(v));
  }
  for (const auto& v : violations) std::cout << file << ": " << v.to_string() << "\n";
  if (!violations.empty()) return 1;
  std::cout << file << ": ok (" << tree.disease_id << ", " << tree.nodes.size() << " nodes, depth "
            << tree_depth(tree) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"careproto: contextual care protocol engine"};
  app.require_subcommand(1);

  ServiceFlags flags;

  std::string name = "demo", gen_config;
  int records = 2000;
  double noise = 1.0, missing = 0.3;
  std::uint64_t seed = 2026;
  bool no_fixtures = false;
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset (and demo tests/trees)");
  add_service_flags(gen, flags);
  gen->add_option("--name", name, "dataset_ref to write");
  gen->add_option("--generator", gen_config, "generator config JSON")->check(CLI::ExistingFile);
  gen->add_option("--records", records)->check(CLI::PositiveNumber);
  gen->add_option("--noise", noise)->check(CLI::NonNegativeNumber);
  gen->add_option("--seed", seed);
  gen->add_option("--missing-rate", missing)->check(CLI::Range(0.0, 0.99));
  gen->add_flag("--no-fixtures", no_fixtures, "skip tests.json and seed_trees/");

  std::string dataset;
  bool incremental = false;
  auto* train = app.add_subcommand("train", "train the classifier on a dataset under data_dir/datasets");
  add_service_flags(train, flags);
  train->add_option("--dataset", dataset)->required();
  train->add_flag("--incremental", incremental, "continue from the serving model at the reduced rate");

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  add_service_flags(serve, flags);
  serve->add_option("--listen", flags.listen, "host:port (port 0 picks one)");

  std::string script;
  auto* session = app.add_subcommand("session", "session utilities");
  session->require_subcommand(1);
  auto* run = session->add_subcommand("run", "replay a scripted session non-interactively");
  add_service_flags(run, flags);
  run->add_option("--script", script)->required()->check(CLI::ExistingFile);

  std::string tree_file, tests_file;
  auto* validate = app.add_subcommand("validate-tree", "parse and validate a tree document");
  validate->add_option("file", tree_file)->required()->check(CLI::ExistingFile);
  validate->add_option("--tests", tests_file, "test catalog to check references against")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return run_generate(flags, name, gen_config, records, noise, seed, missing, no_fixtures);
    if (*train) return run_train(flags, dataset, incremental);
    if (*serve) return run_serve(flags);
    if (*run) return run_session(flags, script);
    if (*validate) return run_validate(tree_file, tests_file);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& d : e.details()) std::cerr << "  " << d << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
