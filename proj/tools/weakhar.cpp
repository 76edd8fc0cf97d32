#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "weakhar/pipeline.hpp"
#include "weakhar/synth.hpp"

namespace {

using namespace weakhar;

// Writes a synthetic dataset plus a config that points at it.
void write_synthetic(const std::string& suite, const fs::path& out, std::uint64_t seed) {
  std::vector<synth::Participant> participants;
  RunConfig c;
  if (suite == "embeddings") {
    synth::EmbeddingSuiteSpec s;
    s.seed = seed;
    participants = synth::embedding_suite(s);
  } else if (suite == "overlap") {
    participants = synth::embedding_suite(synth::overlap_heavy_spec(seed));
    c.gmm.components = 20;
    c.sweep_clusters = {10, 20, 40};
    c.sweep_thresholds = {kNoThreshold, 6.0, 4.0};
    c.relative_thresholds = true;
  } else if (suite == "sensor") {
    participants = synth::sensor_suite(synth::default_sensor_spec(seed));
    c.gmm.components = 20;
    c.sweep_clusters = {10, 20, 40};
  } else {
    throw ConfigError("unknown suite '" + suite + "' (embeddings, overlap, sensor)");
  }
  synth::write_dataset(out, participants);
  c.data_root = ".";
  io::write_file(out / "weakhar.ini", print_config(c));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakhar: cluster-based weak labelling for activity recognition"};
  app.require_subcommand(0, 1);
  std::string config_path = "weakhar.ini";
  std::string seed_list;
  int jobs = 0;
  bool print = false;
  app.add_option("--config", config_path, "INI config file")->capture_default_str();
  app.add_option("--seed-list", seed_list, "comma-separated seeds, overrides [run] seeds");
  app.add_option("--jobs", jobs, "worker threads, overrides [run] jobs")->check(CLI::PositiveNumber);
  app.add_flag("--print-config", print, "print the resolved config and exit");

  auto* cluster = app.add_subcommand("cluster", "fit a GMM per participant and seed");
  auto* annotate = app.add_subcommand("annotate", "label one centroid clip per cluster and propagate");
  std::string mode = "oracle";
  std::optional<int> port;
  std::string assets;
  annotate->add_option("--mode", mode, "oracle or serve")->check(CLI::IsMember({"oracle", "serve"}))->capture_default_str();
  annotate->add_option("--port", port, "HTTP port for serve mode (0 picks one)");
  annotate->add_option("--assets", assets, "directory served under /assets");
  auto* train = app.add_subcommand("train", "train the classifier scenarios with leave-one-participant-out");
  auto* report = app.add_subcommand("report", "labelling accuracy, cluster and threshold sweeps");
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset and config");
  std::string suite = "embeddings", synth_out;
  std::uint64_t synth_seed = 1;
  synth_cmd->add_option("--suite", suite, "embeddings, overlap or sensor")->capture_default_str();
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  if (app.get_subcommands().empty() && !print) {
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*synth_cmd) {
      write_synthetic(suite, synth_out, synth_seed);
      std::cout << "wrote " << (fs::path(synth_out) / "weakhar.ini").string() << '\n';
      return 0;
    }
    auto c = load_config(config_path);
    if (!seed_list.empty()) c.seeds = parse_seed_list(seed_list);
    if (jobs > 0) c.jobs = jobs;
    if (port) c.port = *port;
    if (!assets.empty()) c.assets = fs::absolute(assets);
    validate(c);
    if (print) {
      std::cout << print_config(c);
      return 0;
    }
    const auto log = stderr_logger();
    if (*cluster) cmd_cluster(c, log);
    if (*annotate) cmd_annotate(c, parse_annotate_mode(mode), log);
    if (*train) cmd_train(c, log);
    if (*report) {
      cmd_report(c, log);
      std::cout << io::read_file(stage_dir(c, "report") / "summary.txt");
    }
  } catch (const ConfigError& e) {
    std::cerr << "weakhar: config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "weakhar: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
