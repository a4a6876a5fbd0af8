// Copyright 2026 The qreform Authors.
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

// Exercises libqreform through its C header only.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "qreform/qreform.h"
#include "tiny_config.hpp"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  qr_string_free(s);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Tmp {
  fs::path dir;
  explicit Tmp(const std::string& name) : dir(fs::temp_directory_path() / ("qreform-capi-" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Tmp() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

qr_config* tiny() {
  qr_config* c = nullptr;
  REQUIRE(qr_config_parse(tiny_config_json(), &c) == QR_OK);
  return c;
}

}  // namespace

TEST_CASE("version and errors") {
  CHECK(std::string(qr_version()).size() > 0);
  qr_config* c = nullptr;
  CHECK(qr_config_default("huge", &c) == QR_ERR_CONFIG);
  CHECK(c == nullptr);
  CHECK(std::string(qr_last_error()).find("huge") != std::string::npos);
  CHECK(qr_config_parse("{\"bogus\": 1}", &c) == QR_ERR_CONFIG);
  CHECK(qr_config_parse("{", &c) == QR_ERR_CONFIG);
  CHECK(qr_config_load("/nonexistent.json", &c) == QR_ERR_CONFIG);
  CHECK(qr_config_default(nullptr, nullptr) == QR_ERR_CONFIG);
  qr_string_free(nullptr);
  qr_config_free(nullptr);
  qr_experiment_free(nullptr);
}

TEST_CASE("config handles") {
  qr_config* c = nullptr;
  REQUIRE(qr_config_default(nullptr, &c) == QR_OK);
  char* json = nullptr;
  REQUIRE(qr_config_to_json(c, &json) == QR_OK);
  auto j = nlohmann::json::parse(take(json));
  CHECK(j["preset"] == "desk");
  CHECK(qr_config_set_seed(c, 42) == QR_OK);
  CHECK(qr_config_set_threads(c, 3) == QR_OK);
  CHECK(qr_config_set_threads(c, 0) == QR_ERR_CONFIG);
  CHECK(qr_config_set_arms(c, "BM25,RL-N-Sub") == QR_OK);
  CHECK(qr_config_set_arms(c, "BM25,Nope") == QR_ERR_CONFIG);
  REQUIRE(qr_config_to_json(c, &json) == QR_OK);
  j = nlohmann::json::parse(take(json));
  CHECK(j["seeds"] == nlohmann::json::array({42}));
  CHECK(j["threads"] == 3);
  CHECK(j["arms"] == nlohmann::json::array({"BM25", "RL-N-Sub"}));
  qr_config_free(c);

  REQUIRE(qr_config_default("full", &c) == QR_OK);
  REQUIRE(qr_config_to_json(c, &json) == QR_OK);
  CHECK(nlohmann::json::parse(take(json))["n_agents"] == 10);
  qr_config_free(c);
}

TEST_CASE("experiment workflow") {
  Tmp tmp("flow");
  qr_config* c = tiny();
  qr_experiment* e = nullptr;
  REQUIRE(qr_experiment_create(c, 3, &e) == QR_OK);

  char* stats = nullptr;
  REQUIRE(qr_experiment_stats(e, &stats) == QR_OK);
  const auto s = nlohmann::json::parse(take(stats));
  CHECK(s["documents"] == 48);

  REQUIRE(qr_experiment_run(e, "BM25", (tmp / "run").c_str()) == QR_OK);
  CHECK(fs::exists(tmp / "run/results.tsv"));
  CHECK(qr_experiment_run(e, "Nope", (tmp / "bad").c_str()) == QR_ERR_CONFIG);

  REQUIRE(qr_experiment_train_agents(e, "RL-N-Sub", (tmp / "agents").c_str()) == QR_OK);
  int bins = 0;
  for (const auto& f : fs::directory_iterator(tmp / "agents")) bins += f.path().extension() == ".bin";
  CHECK(bins == 2);

  // A fresh experiment reuses the saved agents.
  qr_experiment* e2 = nullptr;
  REQUIRE(qr_experiment_create(c, 3, &e2) == QR_OK);
  REQUIRE(qr_experiment_load_agents(e2, (tmp / "agents").c_str()) == QR_OK);
  REQUIRE(qr_experiment_log(e, "RL-N-Sub", "train", (tmp / "train.jsonl").c_str()) == QR_OK);
  REQUIRE(qr_experiment_log(e2, "RL-N-Sub", "train", (tmp / "train2.jsonl").c_str()) == QR_OK);
  CHECK(slurp(tmp / "train.jsonl") == slurp(tmp / "train2.jsonl"));
  CHECK(qr_experiment_log(e, "RL-N-Sub", "holdout", (tmp / "x.jsonl").c_str()) == QR_ERR_CONFIG);

  char* loss = nullptr;
  REQUIRE(qr_experiment_train_aggregator(e, (tmp / "train.jsonl").c_str(), (tmp / "agg.bin").c_str(),
                                         &loss) == QR_OK);
  CHECK(nlohmann::json::parse(take(loss)).size() == 1);
  REQUIRE(qr_experiment_log(e, "RL-N-Sub", "test", (tmp / "test.jsonl").c_str()) == QR_OK);
  REQUIRE(qr_experiment_evaluate(e, (tmp / "test.jsonl").c_str(), (tmp / "agg.bin").c_str(),
                                 "product", (tmp / "eval").c_str()) == QR_OK);
  const auto m = nlohmann::json::parse(slurp(tmp / "eval/metrics.json"));
  CHECK(m["queries"] == 8);
  CHECK(m["macro"]["oracle"].get<double>() >= m["macro"]["recall"].get<double>());
  CHECK(qr_experiment_evaluate(e, (tmp / "test.jsonl").c_str(), (tmp / "agg.bin").c_str(), "sum",
                               (tmp / "eval2").c_str()) == QR_ERR_CONFIG);
  CHECK(qr_experiment_evaluate(e, (tmp / "none.jsonl").c_str(), (tmp / "agg.bin").c_str(),
                               "product", (tmp / "eval3").c_str()) == QR_ERR_DATA);

  // The run file scores the same through the standalone evaluator.
  REQUIRE(qr_synth(c, 3, (tmp / "data").c_str()) == QR_OK);
  REQUIRE(qr_trec_eval((tmp / "data/qrels.tsv").c_str(), (tmp / "eval/run.tsv").c_str(), "10", 0,
                       (tmp / "trec").c_str()) == QR_OK);
  const auto t = nlohmann::json::parse(slurp(tmp / "trec/metrics.json"));
  CHECK(t["num_queries"] == 8);
  CHECK(t["macro"]["R@10"].get<double>() == doctest::Approx(m["macro"]["recall"].get<double>()));

  REQUIRE(qr_experiment_rm3_trace(e, "Q0000", 5, (tmp / "rm3.tsv").c_str()) == QR_OK);
  CHECK(slurp(tmp / "rm3.tsv").rfind("term\tprobability\n", 0) == 0);
  CHECK(qr_experiment_rm3_trace(e, "no-such-query", 5, (tmp / "rm3b.tsv").c_str()) == QR_ERR_DATA);
  REQUIRE(qr_experiment_write_partition(e, "random", (tmp / "part.tsv").c_str()) == QR_OK);
  CHECK(qr_experiment_write_partition(e, "spectral", (tmp / "p2.tsv").c_str()) == QR_ERR_CONFIG);

  qr_experiment_free(e2);
  qr_experiment_free(e);
  qr_config_free(c);
}

TEST_CASE("external data directory") {
  Tmp tmp("data");
  qr_config* c = tiny();
  REQUIRE(qr_synth(c, 5, tmp.dir.c_str()) == QR_OK);
  REQUIRE(qr_config_set_data_dir(c, tmp.dir.c_str()) == QR_OK);
  qr_experiment* e = nullptr;
  REQUIRE(qr_experiment_create(c, 5, &e) == QR_OK);
  qr_experiment_free(e);
  REQUIRE(qr_config_set_data_dir(c, (tmp / "missing").c_str()) == QR_OK);
  CHECK(qr_experiment_create(c, 5, &e) == QR_ERR_DATA);
  qr_config_free(c);
}
