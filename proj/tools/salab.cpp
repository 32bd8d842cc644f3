#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "salab/experiments.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 1, kAssumption = 2, kAcceptance = 3 };

void write_summary(const salab::ExperimentConfig& cfg, const salab::RunResult& r) {
  nlohmann::ordered_json j;
  j["experiment"] = r.experiment;
  j["config_hash"] = r.config_hash;
  j["violations"] = r.violations;
  j["wall_seconds"] = r.wall_seconds;
  for (const auto& [k, v] : r.summary) j["summary"][k] = v;
  j["files"] = r.files;
  std::string path = (std::filesystem::path(cfg.output_dir) / "summary.json").string();
  std::ofstream f(path);
  if (!f) throw salab::IoError("cannot write " + path);
  f << j.dump(2) << '\n';
}

int cmd_run(const std::string& path, bool quiet) {
  auto cfg = salab::load_config(path);
  auto r = salab::run_experiment(cfg);
  write_summary(cfg, r);
  if (!quiet) {
    std::printf("%s  config %s  %.2fs\n", r.experiment.c_str(), r.config_hash.c_str(), r.wall_seconds);
    for (const auto& [k, v] : r.summary) std::printf("  %-24s %.6g\n", k.c_str(), v);
    for (const auto& f : r.files) std::printf("  wrote %s\n", f.c_str());
  }
  if (r.violations > 0) {
    std::fprintf(stderr, "acceptance violated: %ld breach(es)\n", r.violations);
    return kAcceptance;
  }
  return kOk;
}

int cmd_validate(const std::string& path) {
  auto cfg = salab::load_config(path);
  std::printf("ok: %s (config %s)\n", cfg.experiment.c_str(), cfg.hash.c_str());
  return kOk;
}

struct GenArgs {
  std::uint64_t seed = 1;
  int states = 5, actions = 3, branching = 3;
  double gamma = 0.9;
  std::string out;
};

int cmd_mdp_gen(const GenArgs& a) {
  if (a.branching < 1 || a.branching > a.states) throw salab::ConfigError("--branching must lie in [1, --states]");
  auto m = salab::random_mdp(a.seed, a.states, a.actions, a.branching, a.gamma);
  salab::save_mdp(a.out, m);
  std::printf("wrote %s (%d states, %d actions)\n", a.out.c_str(), a.states, a.actions);
  return kOk;
}

struct BoundArgs {
  std::string family;
  std::string mdp_file;
  GenArgs gen;
  int n = 2;
  double lambda = 0.5;
  double c_bar = 1.0, rho_bar = 1.0;
  std::optional<double> alpha;
  long horizon = 100000;
  long mixing_horizon = 200;
};

int cmd_bounds(const BoundArgs& a) {
  salab::Problem p;
  p.mdp = a.mdp_file.empty() ? salab::random_mdp(a.gen.seed, a.gen.states, a.gen.actions, a.gen.branching, a.gen.gamma)
                             : salab::load_mdp(a.mdp_file);
  p.family = salab::parse_family(a.family);
  p.target = p.behavior = salab::uniform_policy(p.mdp.num_states(), p.mdp.num_actions());
  p.n = a.n;
  p.lambda = a.lambda;
  p.c_bar = a.c_bar;
  p.rho_bar = a.rho_bar;
  salab::Vector x0 = salab::Vector::Zero(p.dimension());
  auto fit = salab::problem_mixing(p, a.mixing_horizon);
  auto fb = salab::problem_bound(p, x0, fit.model());
  double alpha = a.alpha ? *a.alpha : fb.max_stepsize();
  auto t = fb.terms(alpha);
  std::printf("family %s  beta %.6g  C %.4g  sigma %.4g\n", salab::family_name(p.family), t.beta, fit.C, fit.sigma);
  std::printf("alpha %.6g  threshold %.6g  admissible %s  first k %ld\n", alpha, t.threshold,
              fb.admissible(alpha) ? "yes" : "no", fb.start(alpha));
  if (!fb.admissible(alpha)) throw salab::StepsizeError("alpha is above the admissible threshold; bounds do not apply");
  std::printf("%12s %14s %14s %14s\n", "k", "bias", "variance", "total");
  std::vector<long> ks;
  for (long k = fb.start(alpha); k <= a.horizon; k = k < 1 ? 1 : k * 2) ks.push_back(k);
  if (ks.empty() || ks.back() != a.horizon) ks.push_back(std::max(a.horizon, fb.start(alpha)));
  for (long k : ks) {
    auto v = fb.at(alpha, k);
    std::printf("%12ld %14.6g %14.6g %14.6g\n", k, v.bias, v.variance, v.total);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Markovian stochastic approximation lab"};
  app.require_subcommand(1);

  std::string cfg_path;
  bool quiet = false;
  auto* run = app.add_subcommand("run", "run the experiment described by a config file");
  run->add_option("config", cfg_path, "config file")->required();
  run->add_flag("-q,--quiet", quiet, "print nothing on success");

  auto* validate = app.add_subcommand("validate", "parse and check a config file");
  validate->add_option("config", cfg_path, "config file")->required();

  GenArgs gen;
  auto* mdp = app.add_subcommand("mdp", "MDP utilities");
  mdp->require_subcommand(1);
  auto* gen_cmd = mdp->add_subcommand("gen", "write a seeded random MDP");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--states", gen.states)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--actions", gen.actions)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--branching", gen.branching)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--gamma", gen.gamma)->check(CLI::Range(0.0, 1.0));
  gen_cmd->add_option("-o,--output", gen.out, "output path")->required();

  BoundArgs ba;
  auto* bounds = app.add_subcommand("bounds", "print the constant-stepsize bound table of a family");
  bounds->add_option("family", ba.family, "q_learning | v_trace | nstep_td | td_lambda")
      ->required()
      ->check(CLI::IsMember({"q_learning", "v_trace", "nstep_td", "td_lambda"}));
  bounds->add_option("--mdp", ba.mdp_file, "MDP file (default: random MDP from --seed etc.)");
  bounds->add_option("--seed", ba.gen.seed);
  bounds->add_option("--states", ba.gen.states)->check(CLI::PositiveNumber);
  bounds->add_option("--actions", ba.gen.actions)->check(CLI::PositiveNumber);
  bounds->add_option("--branching", ba.gen.branching)->check(CLI::PositiveNumber);
  bounds->add_option("--gamma", ba.gen.gamma)->check(CLI::Range(0.0, 1.0));
  bounds->add_option("--n", ba.n)->check(CLI::PositiveNumber);
  bounds->add_option("--lambda", ba.lambda);
  bounds->add_option("--c-bar", ba.c_bar);
  bounds->add_option("--rho-bar", ba.rho_bar);
  bounds->add_option("--alpha", ba.alpha, "stepsize (default: largest admissible)");
  bounds->add_option("--horizon", ba.horizon)->check(CLI::PositiveNumber);
  bounds->add_option("--mixing-horizon", ba.mixing_horizon)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(cfg_path, quiet);
    if (*validate) return cmd_validate(cfg_path);
    if (*gen_cmd) return cmd_mdp_gen(gen);
    if (*bounds) return cmd_bounds(ba);
  } catch (const salab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const salab::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kConfig;
  } catch (const salab::AssumptionViolation& e) {
    std::fprintf(stderr, "assumption violated: %s\n", e.what());
    return kAssumption;
  } catch (const salab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kAssumption;
  }
  return kOk;
}
