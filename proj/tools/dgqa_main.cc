// Command-line entry point: dgqa <command> [options].
#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "dgqa/errors.h"
#include "dgqa/harness.h"
#include "dgqa/references.h"

namespace {

using namespace dgqa;

std::set<int> parse_levels(const std::string& text) {
  std::set<int> out;
  const auto range = text.find("..");
  if (range != std::string::npos) {
    const int lo = std::stoi(text.substr(0, range));
    const int hi = std::stoi(text.substr(range + 2));
    for (int l = lo; l <= hi; ++l) out.insert(l);
  } else {
    size_t pos = 0;
    while (pos < text.size()) {
      size_t comma = text.find(',', pos);
      if (comma == std::string::npos) comma = text.size();
      out.insert(std::stoi(text.substr(pos, comma - pos)));
      pos = comma + 1;
    }
  }
  if (out.empty()) throw ValidationError("empty level set '" + text + "'");
  for (int l : out) {
    if (l < 1 || l > 5) throw ValidationError("levels must lie in 1..5");
  }
  return out;
}

struct CommonFlags {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
  auto* opt = cmd->add_option("--config", flags.config, "experiment config (JSON) or run.json");
  if (config_required) opt->required();
  cmd->add_option("--seed", flags.seed, "override the base seed");
  cmd->add_option("--out", flags.out, "override the run directory");
}

ExperimentConfig resolve_config(const CommonFlags& flags) {
  ExperimentConfig config;
  try {
    config = load_config(flags.config);
  } catch (const std::exception& e) {
    throw StageError("config", e.what());
  }
  if (flags.seed) config.seed = *flags.seed;
  if (!flags.out.empty()) config.output_dir = flags.out;
  return config;
}

template <typename Fn>
void run_stage(const CommonFlags& flags, const std::string& command, Fn&& fn) {
  RunContext ctx(resolve_config(flags), command);
  RunLock lock(ctx.dir());
  ctx.write_run_record();
  fn(ctx);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distortion-guided source-domain selection for blind image quality assessment"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::string refs_dir;
  int family = 0;
  std::string levels = "1..5";
  int ref_count = 30;
  int ref_size = 128;

  auto* synth = app.add_subcommand("synth", "synthesize source domains and the target");
  add_common(synth, flags, false);
  synth->add_option("--refs", refs_dir, "reference PNG directory (single-family mode)");
  synth->add_option("--family", family, "distortion family id (single-family mode)");
  synth->add_option("--levels", levels, "severity levels, e.g. 1..5 or 1,3,5");

  auto* make_refs = app.add_subcommand("make-refs", "write procedural reference images");
  make_refs->add_option("--count", ref_count, "number of images");
  make_refs->add_option("--size", ref_size, "side length in pixels");
  make_refs->add_option("--seed", flags.seed, "seed");
  make_refs->add_option("--out", flags.out, "output directory")->required();

  auto* train_domain = app.add_subcommand("train-domain", "train the domain classifier");
  add_common(train_domain, flags, true);
  auto* select = app.add_subcommand("select", "select similar source domains");
  add_common(select, flags, true);
  auto* train_iqa = app.add_subcommand("train-iqa", "train selected and baseline regressors");
  add_common(train_iqa, flags, true);
  auto* evaluate = app.add_subcommand("evaluate", "score regressors on the labeled target");
  add_common(evaluate, flags, true);
  auto* pipeline = app.add_subcommand("pipeline", "run every stage end to end");
  add_common(pipeline, flags, true);
  auto* gds = app.add_subcommand("gds", "greedy supervised domain selection");
  add_common(gds, flags, true);
  auto* report = app.add_subcommand("report", "write report.md and report.json");
  add_common(report, flags, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      if (!refs_dir.empty()) {
        if (family == 0 || flags.out.empty()) {
          throw ValidationError("single-family synth needs --refs, --family and --out");
        }
        cmd_synth_family(refs_dir, registry_default().lookup(DomainId{family}).id,
                         parse_levels(levels), flags.seed.value_or(0), flags.out);
      } else {
        if (flags.config.empty()) throw ValidationError("synth needs --config or --refs");
        run_stage(flags, "synth", cmd_synth);
      }
    } else if (make_refs->parsed()) {
      write_reference_dir(flags.out,
                          procedural_references(ref_count, ref_size, flags.seed.value_or(7)));
    } else if (train_domain->parsed()) {
      run_stage(flags, "train-domain", cmd_train_domain);
    } else if (select->parsed()) {
      run_stage(flags, "select", cmd_select);
    } else if (train_iqa->parsed()) {
      run_stage(flags, "train-iqa", cmd_train_iqa);
    } else if (evaluate->parsed()) {
      run_stage(flags, "evaluate", cmd_evaluate);
    } else if (pipeline->parsed()) {
      run_stage(flags, "pipeline", cmd_pipeline);
    } else if (gds->parsed()) {
      run_stage(flags, "gds", cmd_gds);
    } else if (report->parsed()) {
      fs::path dir = flags.out;
      if (dir.empty()) {
        if (flags.config.empty()) throw ValidationError("report needs --out or --config");
        dir = resolve_config(flags).output_dir;
      }
      cmd_report(dir);
    }
  } catch (const StageError& e) {
    std::cerr << "dgqa: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "dgqa: error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
