// Command-line front end: `gen` writes a synthetic dataset, `train` fits a
// model, `eval` scores a checkpoint, `inspect` prints sample diagnostics.
// Exit code 0 on success; any failure prints one `error: ...` line.
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evs/harness.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required) {
  cmd->add_option("--config", args.config_path, "configuration file (key=value lines)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", args.sets, "override one configuration key, as key=value (repeatable)");
  args.seed_opt = cmd->add_option("--seed", args.seed, "override the configuration seed");
  CLI::Option* out = cmd->add_option("--out", args.out_dir, "output directory");
  if (out_required) out->required();
}

evs::Config resolve_config(const CommonArgs& args) {
  evs::Config cfg;
  if (!args.config_path.empty()) cfg = evs::load_config(args.config_path);
  for (const std::string& assignment : args.sets) evs::config_set(cfg, assignment);
  if (args.seed_opt->count() > 0) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-stream action recognition pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, inspect_args;
  std::string train_data, eval_data, eval_ckpt, inspect_sample;

  CLI::App* gen = app.add_subcommand("gen", "write a synthetic event dataset");
  add_common(gen, gen_args, true);

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, train_args, true);
  train->add_option("--data", train_data, "dataset directory (from gen)")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_args, false);
  eval->add_option("--data", eval_data, "dataset directory (from gen)")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file (from train)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* inspect = app.add_subcommand("inspect", "print diagnostics for one sample");
  add_common(inspect, inspect_args, false);
  inspect->add_option("sample", inspect_sample, "event stream file")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
    if (app.got_subcommand(gen)) {
      evs::cmd_gen(resolve_config(gen_args), gen_args.out_dir);
      std::cout << "dataset=" << gen_args.out_dir << "\n";
    } else if (app.got_subcommand(train)) {
      const evs::TrainOutcome out =
          evs::cmd_train<float>(resolve_config(train_args), train_data, train_args.out_dir,
                                &std::cout);
      std::cout << "best_epoch=" << out.best_epoch << "\n";
      std::cout << "best_top1=" << evs::detail::fixed6(out.best_top1) << "\n";
      std::cout << "wall_seconds=" << evs::detail::fixed6(out.wall_seconds) << "\n";
      std::cout << "checkpoint=" << train_args.out_dir << "/best.ckpt\n";
    } else if (app.got_subcommand(eval)) {
      evs::cmd_eval<float>(resolve_config(eval_args), eval_ckpt, eval_data, eval_args.out_dir,
                           std::cout);
    } else if (app.got_subcommand(inspect)) {
      evs::cmd_inspect(resolve_config(inspect_args), inspect_sample, inspect_args.out_dir,
                       std::cout);
    }
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
