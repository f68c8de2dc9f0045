// looptune: tune saturated PID loops by differentiating through the
// simulation, and check the output-feedback / disturbance-feedback
// equivalences numerically.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>

#include "looptune/experiment.hpp"
#include "looptune/looptune.hpp"

namespace {

using namespace looptune;

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint32_t> seed;
  std::optional<std::size_t> epochs;
  std::string out_dir;
};

std::string resolve_out_dir(const CommonOptions& opt, const ExperimentConfig& cfg) {
  return opt.out_dir.empty() ? cfg.out_dir : opt.out_dir;
}

std::string join(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

void print_eval_row(const char* name, const EvalStats& train, const EvalStats& test) {
  std::printf("%-18s %10.1f +- %-10.1f %10.1f +- %-10.1f\n", name, train.mean,
              train.stddev, test.mean, test.stddev);
}

int cmd_tune(const CommonOptions& opt, const std::string& controller) {
  const ExperimentConfig cfg = load_config(opt.config_path);
  const ExperimentSetup setup = make_setup(cfg, opt.seed, opt.epochs);
  const std::string out = resolve_out_dir(opt, cfg);

  std::printf("tuning static gains: %zu epochs, %zu training references\n",
              setup.gain_hyper.epochs, setup.refs.train.size());
  const StaticGainSpec spec = StaticGainSpec::from(setup.initial_gains);
  const TuneReport rep =
      tune(setup.plant, spec, setup.refs.train, setup.limits, setup.rollout,
           setup.gain_hyper);
  write_learning_curve(rep.epoch_mean_cost, join(out, "learning_curve_static.csv"));
  save_static_params(join(out, "tuned_static.params"), spec,
                     std::span<const double>(rep.final_params));
  std::printf("train cost %.4f -> %.4f\n", rep.epoch_mean_cost.front(),
              rep.final_train_cost);
  std::printf("wrote %s and %s\n", join(out, "learning_curve_static.csv").c_str(),
              join(out, "tuned_static.params").c_str());

  if (controller == "dynamic") {
    const PidGains<double> tuned =
        spec.gains_from(std::span<const double>(rep.final_params));
    const GainNetworkSpec net_spec{tuned, setup.hidden};
    std::printf("tuning dynamic gains: %zu epochs, %zu network weights\n",
                setup.network_hyper.epochs, net_spec.dim());
    const TuneReport net_rep = tune(setup.plant, net_spec, setup.refs.train,
                                    setup.limits, setup.rollout, setup.network_hyper);
    write_learning_curve(net_rep.epoch_mean_cost,
                         join(out, "learning_curve_dynamic.csv"));
    save_network_params(join(out, "tuned_dynamic.params"), net_spec,
                        std::span<const double>(net_rep.final_params));
    std::printf("train cost %.4f -> %.4f\n", net_rep.epoch_mean_cost.front(),
                net_rep.final_train_cost);
    std::printf("wrote %s and %s\n",
                join(out, "learning_curve_dynamic.csv").c_str(),
                join(out, "tuned_dynamic.params").c_str());
  }
  return 0;
}

int cmd_evaluate(const CommonOptions& opt) {
  const ExperimentConfig cfg = load_config(opt.config_path);
  const ExperimentSetup setup = make_setup(cfg, opt.seed, opt.epochs);
  const std::string out = resolve_out_dir(opt, cfg);

  std::printf("comparing four controllers on %zu train / %zu test references\n",
              setup.refs.train.size(), setup.refs.test.size());
  const FourWayComparison cmp = run_four_way(setup);

  std::printf("%-18s %14s %14s\n", "controller", "train cost", "test cost");
  for (int i = 0; i < 4; ++i) {
    print_eval_row(FourWayComparison::names[i], cmp.train[i], cmp.test[i]);
  }
  std::printf("tuned gains: k_p=%.4f k_i=%.4f k_d=%.4f b=%.4f\n", cmp.tuned_gains.k_p,
              cmp.tuned_gains.k_i, cmp.tuned_gains.k_d, cmp.tuned_gains.b);

  std::string csv = "controller,train_mean,train_std,test_mean,test_std\n";
  for (int i = 0; i < 4; ++i) {
    csv += FourWayComparison::names[i];
    csv += ',';
    csv += format_number(cmp.train[i].mean);
    csv += ',';
    csv += format_number(cmp.train[i].stddev);
    csv += ',';
    csv += format_number(cmp.test[i].mean);
    csv += ',';
    csv += format_number(cmp.test[i].stddev);
    csv += '\n';
  }
  write_file_atomic(join(out, "evaluation.csv"), csv);
  save_static_params(join(out, "tuned_static.params"), cmp.static_spec,
                     std::span<const double>(cmp.static_report.final_params));
  save_network_params(join(out, "tuned_dynamic.params"), cmp.network_spec,
                      std::span<const double>(cmp.network_params));
  std::printf("wrote %s\n", join(out, "evaluation.csv").c_str());
  return 0;
}

int cmd_simulate(const CommonOptions& opt, const std::string& controller,
                 const std::string& gains_arg, const std::string& params_path,
                 std::size_t ref_index, std::optional<double> amplitude) {
  const ExperimentConfig cfg = load_config(opt.config_path);
  const ExperimentSetup setup = make_setup(cfg, opt.seed, opt.epochs);
  const std::string out = resolve_out_dir(opt, cfg);

  ReferenceSignal ref;
  if (amplitude) {
    ref.kind = RefKind::step;
    ref.samples.assign(cfg.horizon, *amplitude);
  } else {
    ref = setup.refs.test[ref_index % setup.refs.test.size()];
  }

  RolloutResult<double> res;
  std::string label = controller;
  if (controller == "initial") {
    PidGains<double> g = setup.initial_gains;
    g.b = 0.0;
    res = rollout<double>(setup.plant, StaticPid<double>{g}, ref, setup.rollout,
                          setup.limits, setup.weights);
  } else if (controller == "backcalc") {
    res = rollout<double>(setup.plant, StaticPid<double>{setup.initial_gains}, ref,
                          setup.rollout, setup.limits, setup.weights);
  } else if (controller == "optimized") {
    const std::string path =
        !params_path.empty()
            ? params_path
            : (gains_arg != "default" && !gains_arg.empty()
                   ? gains_arg
                   : join(out, "tuned_static.params"));
    const PidGains<double> g = load_static_params(path);
    res = rollout<double>(setup.plant, StaticPid<double>{g}, ref, setup.rollout,
                          setup.limits, setup.weights);
  } else {  // dynamic
    const std::string path =
        !params_path.empty() ? params_path : join(out, "tuned_dynamic.params");
    const LoadedNetwork net = load_network_params(path);
    const auto ctrl =
        net.spec.instantiate<double>(std::span<const double>(net.params));
    res = rollout<double>(setup.plant, ctrl, ref, setup.rollout, setup.limits,
                          setup.weights);
  }

  const std::string path = join(out, "trajectory_" + label + ".csv");
  write_csv(res, ref, path);
  std::printf("cost %.6f over %zu steps, %ld saturated\n", res.cost, res.y.size(),
              static_cast<long>(
                  std::count(res.saturated.begin(), res.saturated.end(), 1)));
  std::printf("wrote %s\n", path.c_str());
  return 0;
}

int cmd_verify() {
  const auto checks = run_verification_suite();
  bool all_pass = true;
  std::printf("%-64s %12s %10s  %s\n", "check", "deviation", "bound", "status");
  for (const auto& c : checks) {
    std::printf("%-64s %12.3e %10.0e  %s\n", c.name.c_str(), c.deviation, c.bound,
                c.pass ? "ok" : "FAIL");
    all_pass = all_pass && c.pass;
  }
  std::printf("%zu checks, %s\n", checks.size(), all_pass ? "all ok" : "FAILURES");
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PID tuning for saturated linear plants by differentiating "
               "through the closed-loop simulation"};
  app.require_subcommand(1);

  CommonOptions opt;
  std::string controller = "backcalc";
  std::string gains_arg;
  std::string params_path;
  std::size_t ref_index = 0;
  std::optional<double> amplitude;

  const auto add_common = [&](CLI::App* sub, bool config_required = true) {
    auto* c = sub->add_option("--config", opt.config_path, "experiment config file");
    if (config_required) c->required();
    sub->add_option("--seed", opt.seed, "override the reference seed");
    sub->add_option("--epochs", opt.epochs, "override the tuning epoch count");
    sub->add_option("--out", opt.out_dir, "output directory (default from config)");
  };

  auto* sim = app.add_subcommand("simulate", "one closed-loop rollout, written as CSV");
  add_common(sim);
  sim->add_option("--controller", controller,
                  "initial|backcalc|optimized|dynamic")
      ->check(CLI::IsMember({"initial", "backcalc", "optimized", "dynamic"}));
  sim->add_option("--gains", gains_arg,
                  "'default' for the config gains, or a tuned gain file");
  sim->add_option("--params", params_path, "tuned parameter file to load");
  sim->add_option("--ref-index", ref_index, "which test reference to track");
  sim->add_option("--amplitude", amplitude, "track a constant step instead");

  auto* tune_cmd = app.add_subcommand("tune", "episodic gradient-descent tuning");
  add_common(tune_cmd);
  tune_cmd->add_option("--controller", controller, "optimized|dynamic")
      ->check(CLI::IsMember({"optimized", "dynamic"}));

  auto* eval = app.add_subcommand("evaluate", "four-controller comparison table");
  add_common(eval);

  app.add_subcommand("verify", "run the equivalence and property suite");

  argv = app.ensure_utf8(argv);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand("simulate")) {
      if (!gains_arg.empty() && gains_arg != "default" && controller == "backcalc") {
        controller = "optimized";
      }
      return cmd_simulate(opt, controller, gains_arg, params_path, ref_index,
                          amplitude);
    }
    if (app.got_subcommand("tune")) {
      return cmd_tune(opt, controller == "dynamic" ? "dynamic" : "optimized");
    }
    if (app.got_subcommand("evaluate")) return cmd_evaluate(opt);
    if (app.got_subcommand("verify")) return cmd_verify();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  } catch (const looptune::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
