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

// qreform command line. Exit codes: 0 success, 2 configuration error,
// 3 data error, 4 numeric failure, 1 anything else.

#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>

#include "CLI11.hpp"
#include "qreform/qreform.h"

namespace {

struct Globals {
  std::string config;
  std::string preset = "desk";
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = "out";
  std::size_t threads = 0;
  std::string data_dir;
};

class Failure {
 public:
  explicit Failure(qr_status s) : status(s) {}
  qr_status status;
};

void check(qr_status s) {
  if (s != QR_OK) throw Failure(s);
}

struct Config {
  qr_config* p = nullptr;
  ~Config() { qr_config_free(p); }
};

struct Exp {
  qr_experiment* p = nullptr;
  ~Exp() { qr_experiment_free(p); }
};

void print_owned(char* s) {
  std::fputs(s, stdout);
  qr_string_free(s);
}

void load(const Globals& g, Config& c) {
  if (g.config.empty()) {
    check(qr_config_default(g.preset.c_str(), &c.p));
  } else {
    check(qr_config_load(g.config.c_str(), &c.p));
  }
  if (g.seed_set) check(qr_config_set_seed(c.p, g.seed));
  if (g.threads > 0) check(qr_config_set_threads(c.p, g.threads));
  if (!g.data_dir.empty()) check(qr_config_set_data_dir(c.p, g.data_dir.c_str()));
}

void open_experiment(const Globals& g, Config& c, Exp& e) {
  load(g, c);
  check(qr_experiment_create(c.p, g.seed, &e.p));
}

std::string join(const std::string& dir, const std::string& name) {
  return dir.empty() ? name : dir + "/" + name;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent query reformulation experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Preset used without --config")
      ->check(CLI::IsMember({"desk", "full"}));
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) {
        g.seed = s;
        g.seed_set = true;
      }, "Data and training seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::Range(1, 1024));
  app.add_option("--data", g.data_dir,
                 "Directory with corpus.jsonl, train/dev/test.tsv and qrels.tsv");

  std::function<void()> action;

  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus, queries and qrels");
  synth->callback([&] {
    action = [&] {
      Config c;
      load(g, c);
      check(qr_synth(c.p, g.seed, g.out.c_str()));
    };
  });

  auto* index = app.add_subcommand("index", "Build the index and print its statistics");
  index->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      char* stats = nullptr;
      check(qr_experiment_stats(e.p, &stats));
      print_owned(stats);
    };
  });

  std::string method, trace_qid;
  std::size_t trace_limit = 50;
  auto* baseline = app.add_subcommand("baseline", "Run BM25, PRF or RM3 with dev grid search");
  baseline->add_option("--method", method, "bm25, prf or rm3")
      ->required()
      ->check(CLI::IsMember({"bm25", "prf", "rm3"}, CLI::ignore_case));
  baseline->add_option("--trace", trace_qid, "Also dump the RM3 term distribution of this query");
  baseline->add_option("--trace-limit", trace_limit, "Terms in the trace");
  baseline->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      std::string arm = method;
      for (auto& ch : arm) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
      if (arm == "BM25" || arm == "PRF" || arm == "RM3") {
        check(qr_experiment_run(e.p, arm.c_str(), g.out.c_str()));
      }
      if (!trace_qid.empty()) {
        check(qr_experiment_rm3_trace(e.p, trace_qid.c_str(), trace_limit,
                                      join(g.out, "rm3-trace-" + trace_qid + ".tsv").c_str()));
      }
    };
  });

  std::string arm = "RL-N-Sub";
  auto* train_agents = app.add_subcommand("train-agents", "Train and save the agents of an arm");
  train_agents->add_option("--arm", arm, "Arm whose agents are trained");
  train_agents->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      check(qr_experiment_train_agents(e.p, arm.c_str(), g.out.c_str()));
    };
  });

  std::string split = "test", agents_dir;
  auto* log_results = app.add_subcommand("log-results", "Write an arm's reformulation log");
  log_results->add_option("--arm", arm, "Arm to log");
  log_results->add_option("--split", split, "train, dev or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  log_results->add_option("--agents", agents_dir, "Load saved agents instead of training")
      ->check(CLI::ExistingDirectory);
  log_results->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      if (!agents_dir.empty()) check(qr_experiment_load_agents(e.p, agents_dir.c_str()));
      check(qr_experiment_log(e.p, arm.c_str(), split.c_str(),
                              join(g.out, "log." + split + ".jsonl").c_str()));
    };
  });

  std::string log_path, model_path;
  auto* train_agg = app.add_subcommand("train-aggregator", "Train the aggregator on a log");
  train_agg->add_option("--log", log_path, "Training log (JSON lines)")
      ->required()
      ->check(CLI::ExistingFile);
  train_agg->add_option("--model", model_path, "Model file (default <out>/aggregator.bin)");
  train_agg->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      const std::string model = model_path.empty() ? join(g.out, "aggregator.bin") : model_path;
      char* loss = nullptr;
      check(qr_experiment_train_aggregator(e.p, log_path.c_str(), model.c_str(), &loss));
      print_owned(loss);
    };
  });

  std::string variant = "product", run_path, qrels_path, recall_ks = "10";
  auto* evaluate =
      app.add_subcommand("evaluate", "Score a log with a trained aggregator, or a run file");
  evaluate->add_option("--log", log_path, "Aggregate this log")->check(CLI::ExistingFile);
  evaluate->add_option("--model", model_path, "Aggregator model")->check(CLI::ExistingFile);
  evaluate->add_option("--variant", variant, "Scoring rule")
      ->check(CLI::IsMember(
          {"product", "rank_only", "relevance_only", "count_rank", "concat_features"}));
  evaluate->add_option("--run", run_path, "Run file: qid doc_id rank score")
      ->check(CLI::ExistingFile);
  evaluate->add_option("--qrels", qrels_path, "Qrels file: qid doc_id")->check(CLI::ExistingFile);
  evaluate->add_option("--k", recall_ks, "Recall cutoffs, comma separated");
  bool complete = false;
  evaluate->add_flag("-c,--complete", complete, "Score queries missing from the run as 0");
  evaluate->callback([&] {
    if (!run_path.empty() || !qrels_path.empty()) {
      if (run_path.empty() || qrels_path.empty()) {
        throw CLI::ValidationError("--run and --qrels go together");
      }
      action = [&] {
        check(qr_trec_eval(qrels_path.c_str(), run_path.c_str(), recall_ks.c_str(),
                           complete ? 1 : 0, g.out.c_str()));
      };
      return;
    }
    if (log_path.empty() || model_path.empty()) {
      throw CLI::ValidationError("either --log and --model or --run and --qrels are required");
    }
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      check(qr_experiment_evaluate(e.p, log_path.c_str(), model_path.c_str(), variant.c_str(),
                                   g.out.c_str()));
    };
  });

  auto* sweep = app.add_subcommand("sweep-agents", "Score against the number of sub-agents");
  sweep->add_option("--arm", arm, "RL-N-Sub or RL-N-Sub-Pretrained");
  sweep->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      check(qr_experiment_run(e.p, arm.c_str(), g.out.c_str()));
    };
  });

  auto* diversity = app.add_subcommand("diversity", "Diversity of RL-N-Full and RL-N-Sub");
  diversity->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      check(qr_experiment_run(e.p, "RL-N-Full,RL-N-Sub", g.out.c_str()));
    };
  });

  std::size_t n_seeds = 10;
  auto* stability = app.add_subcommand("stability", "Score variance across training seeds");
  stability->add_option("--n-seeds", n_seeds, "Training seeds")->check(CLI::Range(2, 1000));
  stability->callback([&] {
    action = [&] {
      Config c;
      load(g, c);
      check(qr_stability(c.p, n_seeds, g.out.c_str()));
    };
  });

  auto* part = app.add_subcommand("partition-eval", "Compare partitioning strategies");
  part->callback([&] {
    action = [&] {
      Config c;
      Exp e;
      open_experiment(g, c, e);
      check(qr_experiment_partition_study(e.p, g.out.c_str()));
      for (const char* s : {"random", "kmeans-Q", "kmeans-A", "kmeans-QA"}) {
        check(qr_experiment_write_partition(e.p, s,
                                            join(g.out, std::string("partition-") + s + ".tsv")
                                                .c_str()));
      }
    };
  });

  std::string arms;
  auto* run = app.add_subcommand("run", "Every configured seed and arm plus summary.tsv");
  run->add_option("--arms", arms, "Comma-separated arms overriding the configuration");
  run->callback([&] {
    action = [&] {
      Config c;
      load(g, c);
      if (!arms.empty()) check(qr_config_set_arms(c.p, arms.c_str()));
      check(qr_run_all(c.p, g.out.c_str()));
    };
  });

  auto* show = app.add_subcommand("config", "Print the effective configuration");
  show->callback([&] {
    action = [&] {
      Config c;
      load(g, c);
      char* json = nullptr;
      check(qr_config_to_json(c.p, &json));
      print_owned(json);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : QR_ERR_CONFIG;
  }
  try {
    action();
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", qr_last_error());
    return static_cast<int>(f.status);
  }
  return 0;
}
