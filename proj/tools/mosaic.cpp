// mosaic: batch front end for generation, training and evaluation runs.
//
//   mosaic generate  --config run.ini --out run/archive
//   mosaic train     --config run.ini --archive run/archive --out run/checkpoints
//   mosaic probe     --config run.ini --archive run/archive --checkpoints run/checkpoints --out run/reports
//   mosaic fetch     ...same as probe
//   mosaic visualize --config run.ini --archive run/archive --checkpoints run/checkpoints --property Material
//
// Failures print one JSON line on stderr and exit nonzero.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mosaic/config.hpp"
#include "mosaic/datamodel.hpp"
#include "mosaic/error.hpp"
#include "mosaic/pipeline.hpp"
#include "mosaic/synthgen.hpp"

namespace fs = std::filesystem;
using namespace mosaic;

namespace {

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string behaviors;
  std::string ablation = "both";
  std::string condition = "both";
  std::string archive;
  std::string checkpoints;
  std::string checkpoint;
  std::string property;
  std::string behavior;
  std::optional<std::size_t> fold;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    require(eq != std::string::npos, ErrorKind::kConfiguration,
            "--set expects section.key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.property.empty()) c.visualize.property = o.property;
  if (!o.behavior.empty()) c.visualize.behavior = o.behavior;
  if (o.fold) c.visualize.fold = *o.fold;
  validate(c);
  return c;
}

RunPlan make_plan(const Options& o, const RunConfig& c) {
  RunPlan plan;
  plan.config = c;
  plan.behaviors = detail::split_list(o.behaviors);
  plan.ablations = parse_ablation(o.ablation);
  plan.conditions = parse_condition(o.condition);
  return plan;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  detail::write_file(path, text);
}

fs::path pick(const std::string& flag, const std::string& fallback) {
  return flag.empty() ? fs::path(fallback) : fs::path(flag);
}

void cmd_generate(const Options& o) {
  RunConfig c = resolve_config(o);
  // --seed picks the synthetic world here.
  if (o.seed) c.synthetic.seed = *o.seed;
  if (!o.behaviors.empty()) c.synthetic.behaviors = detail::split_list(o.behaviors);
  const fs::path out = pick(o.out, c.paths.archive);
  DirectoryLock lock(out);
  write_archive(generate_dataset(c.synthetic), out);
  detail::write_file(out / "generate_config.ini", config_ini(c));
}

void cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Dataset ds = load_archive(pick(o.archive, c.paths.archive));
  const fs::path out = pick(o.out, c.paths.checkpoints);
  DirectoryLock lock(out);
  const auto result = run_training(ds, make_plan(o, c), out);
  write_lines(out / "train_report.jsonl", result.records);
  write_lines(out / "train_timing.jsonl", result.timing);
}

void cmd_probe(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Dataset ds = load_archive(pick(o.archive, c.paths.archive));
  const fs::path out = pick(o.out, c.paths.reports);
  DirectoryLock lock(out);
  ModelStore store(ds, c, pick(o.checkpoints, c.paths.checkpoints));
  const auto result = run_probe(ds, make_plan(o, c), store);
  detail::write_file(out / "probe.txt", result.table);
  write_lines(out / "probe.jsonl", result.records);
  std::cout << result.table;
}

void cmd_fetch(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Dataset ds = load_archive(pick(o.archive, c.paths.archive));
  const fs::path out = pick(o.out, c.paths.reports);
  DirectoryLock lock(out);
  ModelStore store(ds, c, pick(o.checkpoints, c.paths.checkpoints));
  const auto result = run_fetch(ds, make_plan(o, c), store);
  detail::write_file(out / "fetch.txt", result.table);
  write_lines(out / "fetch.jsonl", result.records);
  std::cout << result.table;
}

void cmd_visualize(const Options& o) {
  const RunConfig c = resolve_config(o);
  const Dataset ds = load_archive(pick(o.archive, c.paths.archive));
  const fs::path out = pick(o.out, c.paths.reports);
  const auto ablations = parse_ablation(o.ablation == "both" ? "with-sa" : o.ablation);
  const fs::path model_dir =
      o.checkpoint.empty()
          ? checkpoint_path(pick(o.checkpoints, c.paths.checkpoints), ablations.front(),
                            c.visualize.fold, model_name_for(c, c.visualize.behavior))
          : fs::path(o.checkpoint);
  DirectoryLock lock(out);
  const FusionModel model = load_checkpoint(model_dir);
  const std::string name =
      "visualize_" + c.visualize.behavior + "_" + c.visualize.property + ".csv";
  detail::write_file(out / name, "# " + config_json(c).dump() + "\n" + run_visualize(ds, c, model));
}

int emit_error(std::string_view kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", message}}.dump() << std::endl;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MOSAIC multimodal distillation runs"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "INI run configuration");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--set", o.overrides, "override section.key=value")->take_all();
  };
  auto evaluated = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--archive", o.archive, "embedding archive directory");
    sub->add_option("--behaviors", o.behaviors, "comma-separated behaviors");
    sub->add_option("--ablation", o.ablation, "with-sa|without-sa|both");
  };

  auto* gen = app.add_subcommand("generate", "write a synthetic embedding archive");
  common(gen);
  gen->add_option("--behaviors", o.behaviors, "comma-separated behaviors to synthesize");

  auto* tr = app.add_subcommand("train", "train fusion models per fold and behavior");
  evaluated(tr);

  auto* pr = app.add_subcommand("probe", "category recognition report");
  evaluated(pr);
  pr->add_option("--checkpoints", o.checkpoints, "checkpoint root written by train");

  auto* fe = app.add_subcommand("fetch", "fetch-command report");
  evaluated(fe);
  fe->add_option("--checkpoints", o.checkpoints, "checkpoint root written by train");
  fe->add_option("--condition", o.condition, "look|interactive|both");

  auto* vi = app.add_subcommand("visualize", "2-D coordinate export");
  evaluated(vi);
  vi->add_option("--checkpoints", o.checkpoints, "checkpoint root written by train");
  vi->add_option("--checkpoint", o.checkpoint, "one model directory (overrides --checkpoints)");
  vi->add_option("--property", o.property, "category or a property category name");
  vi->add_option("--behavior", o.behavior, "behavior to embed");
  vi->add_option("--fold", o.fold, "fold whose training objects are embedded");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return emit_error("usage", e.what());
  }

  try {
    if (*gen) cmd_generate(o);
    else if (*tr) cmd_train(o);
    else if (*pr) cmd_probe(o);
    else if (*fe) cmd_fetch(o);
    else if (*vi) cmd_visualize(o);
  } catch (const Error& e) {
    return emit_error(kind_name(e.kind()), e.what());
  } catch (const std::exception& e) {
    return emit_error("internal", e.what());
  }
  return 0;
}
