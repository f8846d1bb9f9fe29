#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gcap/commands.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> k;
  std::optional<std::string> elimination;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> warmup;
};

void add_overrides(CLI::App* cmd, Overrides& o, bool training) {
  cmd->add_option("--config", o.config, "JSON run config (desk preset when omitted)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed");
  if (!training) return;
  cmd->add_option("--k", o.k, "number of attention branches");
  cmd->add_option("--elimination", o.elimination, "region proposal elimination")->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--epochs", o.epochs, "total training epochs, warm-up included");
  cmd->add_option("--warmup", o.warmup, "single-branch warm-up epochs");
}

gcap::RunConfig resolve(const Overrides& o) {
  gcap::RunConfig c = o.config.empty() ? gcap::RunConfig::desk() : gcap::load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (o.k) c.model.branches = *o.k;
  if (o.elimination) {
    c.model.elimination = *o.elimination == "on";
    c.ablation.elimination = {c.model.elimination};
  }
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.warmup) c.train.warmup_epochs = *o.warmup;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gcap: grounded captioning with distributed attention"};
  app.require_subcommand(1);

  Overrides make_o, train_o, ablate_o;
  std::string data_dir, out, split = "test", checkpoint, predictions;
  std::optional<std::size_t> gen_k;
  bool dump_attention = false;

  auto* make_data = app.add_subcommand("make-data", "generate the synthetic dataset");
  add_overrides(make_data, make_o, false);
  make_data->add_option("--out", out, "output directory (config data_dir by default)");

  auto* train = app.add_subcommand("train", "train a model and write checkpoint.gcap and loss.csv");
  add_overrides(train, train_o, true);
  train->add_option("--data", data_dir, "dataset directory (config data_dir by default)");
  train->add_option("--out", out, "output directory (config out_dir by default)");

  auto* generate = app.add_subcommand("generate", "decode grounded captions for a split");
  generate->add_option("--checkpoint", checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  generate->add_option("--data", data_dir, "dataset directory")->required();
  generate->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  generate->add_option("--out", out, "prediction file (JSON lines)")->required();
  generate->add_option("--k", gen_k, "decode with fewer branches than trained");
  generate->add_flag("--dump-attention", dump_attention, "include per-branch attention for every noun");

  auto* eval = app.add_subcommand("eval", "score predictions against a split");
  eval->add_option("--predictions", predictions, "prediction file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", out, "report path prefix; writes PREFIX.json and PREFIX.csv")->required();

  auto* ablate = app.add_subcommand("ablate", "train and evaluate every (K, elimination) cell");
  add_overrides(ablate, ablate_o, true);
  ablate->add_option("--data", data_dir, "dataset directory (config data_dir by default)");
  ablate->add_option("--out", out, "output directory (config out_dir by default)");

  CLI11_PARSE(app, argc, argv);

  try {
    const std::size_t threads = gcap::thread_cap(std::getenv("GCAP_THREADS"));
    if (*make_data) {
      const auto cfg = resolve(make_o);
      gcap::cmd_make_data(cfg, out.empty() ? cfg.data_dir : out, std::cout);
    } else if (*train) {
      const auto cfg = resolve(train_o);
      gcap::cmd_train(cfg, data_dir.empty() ? cfg.data_dir : data_dir, out.empty() ? cfg.out_dir : out, std::cout);
    } else if (*generate) {
      gcap::GenerateOptions opt;
      opt.branches = gen_k.value_or(0);
      opt.dump_attention = dump_attention;
      opt.threads = threads;
      gcap::cmd_generate(checkpoint, gcap::split_path(data_dir, split), gcap::vocab_path(data_dir), out, opt, std::cout);
    } else if (*eval) {
      gcap::cmd_eval(predictions, gcap::split_path(data_dir, split), gcap::vocab_path(data_dir), out, std::cout);
    } else if (*ablate) {
      const auto cfg = resolve(ablate_o);
      gcap::cmd_ablate(cfg, data_dir.empty() ? cfg.data_dir : data_dir, out.empty() ? cfg.out_dir : out, threads,
                       std::cout);
    }
  } catch (const gcap::ConfigError& e) {
    std::cerr << "gcap: config error: " << e.what() << "\n";
    return 2;
  } catch (const gcap::ValidationError& e) {
    std::cerr << "gcap: invalid input: " << e.what() << "\n";
    return 2;
  } catch (const gcap::ShapeError& e) {
    std::cerr << "gcap: shape error: " << e.what() << "\n";
    return 2;
  } catch (const gcap::FormatError& e) {
    std::cerr << "gcap: format error: " << e.what() << "\n";
    return 3;
  } catch (const gcap::IoError& e) {
    std::cerr << "gcap: i/o error: " << e.what() << "\n";
    return 3;
  } catch (const gcap::NumericError& e) {
    std::cerr << "gcap: numeric error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
