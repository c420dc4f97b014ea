// Command-line front end: gen | run | conditions | variance.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "vrtdc/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::size_t threads = 0;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output directory (overrides output_dir)");
  cmd->add_option("--threads", c.threads, "Worker threads for repetitions")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", c.seed, "Base seed (overrides seed)");
}

vrtdc::ExperimentConfig load(const Common& c) {
  auto cfg = vrtdc::parse_config(c.config);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.threads) cfg.threads = c.threads;
  if (c.seed) cfg.seed = *c.seed;
  vrtdc::validate_config(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variance-reduced off-policy TD experiments"};
  app.require_subcommand(1);
  Common c;
  auto* gen = app.add_subcommand("gen", "Write the configured instance to <out>/model.json");
  auto* run = app.add_subcommand("run", "Run all algorithms and write traces, envelopes, manifest");
  auto* cond = app.add_subcommand("conditions", "Evaluate step-size feasibility conditions");
  auto* var = app.add_subcommand("variance", "Monte-Carlo update variance of TDC vs VRTDC");
  for (auto* cmd : {gen, run, cond, var}) add_common(cmd, c);
  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = load(c);
    if (gen->parsed()) {
      const auto path = vrtdc::cmd_gen(cfg);
      const auto hash = vrtdc::instance_hash(vrtdc::load_instance(path));
      std::cout << path.string() << " " << vrtdc::hex64(hash) << "\n";
    } else if (run->parsed()) {
      const auto sum = vrtdc::cmd_run(cfg);
      std::size_t failed = 0;
      for (const auto& r : sum.reps)
        for (const auto& e : r.errors) failed += !e.empty();
      std::cout << "wrote " << sum.manifest.string() << " (" << sum.reps.size() << " reps, " << failed
                << " failed runs)\n";
    } else if (cond->parsed()) {
      const auto sum = vrtdc::cmd_conditions(cfg);
      for (const auto& o : sum.outcomes) {
        std::cout << vrtdc::to_string(o.setting) << " [" << o.mode << "]";
        if (o.epsilon) std::cout << " eps=" << vrtdc::format_double(*o.epsilon);
        if (!o.found) std::cout << " no feasible eps on the grid; last candidate:";
        std::cout << " overall=" << (o.report.overall ? "pass" : "fail") << "\n";
        for (const auto& k : o.report.conditions)
          std::cout << "  " << k.id << " " << vrtdc::format_double(k.lhs) << " " << vrtdc::to_string(k.rel) << " "
                    << vrtdc::format_double(k.rhs) << " " << (k.pass ? "pass" : "FAIL") << "\n";
      }
      std::cout << "wrote " << sum.path.string() << "\n";
    } else if (var->parsed()) {
      const auto sum = vrtdc::cmd_variance(cfg);
      std::cout << "wrote variance curves for " << sum.labels[0] << " and " << sum.labels[1] << "\n";
    }
  } catch (const vrtdc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
