#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "itrolab/checkpoint.hpp"
#include "itrolab/config.hpp"
#include "itrolab/harness.hpp"

namespace {

itrolab::PolicyShape shape_of(const itrolab::RunConfig& cfg) {
  return itrolab::PolicyShape{cfg.arch, cfg.task, cfg.context_window};
}

int cmd_train(const std::string& config_path) {
  const itrolab::RunConfig cfg = itrolab::load_config(config_path);
  return itrolab::run(cfg, std::cerr);
}

int cmd_eval(const std::string& checkpoint_path, const std::string& config_path) {
  const itrolab::RunConfig cfg = itrolab::load_config(config_path);
  const itrolab::Policy policy = itrolab::load_checkpoint(checkpoint_path, shape_of(cfg));
  std::cout << itrolab::eval_summary_json(itrolab::evaluate_policy(policy, cfg)) << '\n';
  return 0;
}

int cmd_oracle_check(const std::string& config_path) {
  const itrolab::RunConfig cfg = itrolab::load_config(config_path);
  bool all_pass = true;
  for (const itrolab::IdentityResult& r : itrolab::oracle_check(cfg)) {
    std::cout << itrolab::identity_json(r) << '\n';
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

int cmd_inspect(const std::string& checkpoint_path, std::uint64_t query_seed, double w_max) {
  const itrolab::Policy policy = itrolab::load_checkpoint(checkpoint_path);
  for (const std::string& line : itrolab::inspect_records(policy, query_seed, w_max)) std::cout << line << '\n';
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& grid) {
  const itrolab::RunConfig cfg = itrolab::load_config(config_path);
  const std::vector<int> values = itrolab::parse_grid(grid);
  int status = 0;
  for (const itrolab::SweepPoint& p : itrolab::sweep(cfg, values, std::cerr)) {
    std::cout << itrolab::sweep_point_json(p) << '\n';
    if (p.exit_status != 0) status = p.exit_status;
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"itrolab: self-rewarded rationale optimization on enumerable toy tasks"};
  app.set_version_flag("--version", itrolab::version_string());
  app.require_subcommand(1);

  std::string config_path;
  std::string checkpoint_path;
  std::uint64_t query_seed = 0;
  double w_max = 200.0;
  std::string grid = "n=1,2,5,10,20,40";

  auto* train = app.add_subcommand("train", "train a policy and write metrics and checkpoints");
  train->add_option("--config", config_path, "run config")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the config's eval set");
  eval->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

  auto* oracle = app.add_subcommand("oracle-check", "verify estimator identities against exact enumeration");
  oracle->add_option("--config", config_path)->required()->check(CLI::ExistingFile);

  auto* inspect = app.add_subcommand("inspect", "per-token correction factors of a greedy rationale");
  inspect->add_option("--checkpoint", checkpoint_path)->required()->check(CLI::ExistingFile);
  inspect->add_option("--query-seed", query_seed)->required();
  inspect->add_option("--clip-max", w_max, "correction-factor clip")->check(CLI::PositiveNumber);

  auto* sweep = app.add_subcommand("sweep", "ITRO runs over a grid of candidate counts");
  sweep->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  sweep->add_option("--grid", grid, "n=1,2,5,...");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(config_path);
    if (*eval) return cmd_eval(checkpoint_path, config_path);
    if (*oracle) return cmd_oracle_check(config_path);
    if (*inspect) return cmd_inspect(checkpoint_path, query_seed, w_max);
    if (*sweep) return cmd_sweep(config_path, grid);
  } catch (const itrolab::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 64;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
