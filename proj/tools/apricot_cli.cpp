// apricot: command-line driver for the acuity pipeline stages.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "apricot/pipeline.hpp"

namespace pl = apricot::pipeline;

namespace {

struct Common {
  std::string config;
  std::string out = "apricot_out";
  std::optional<std::uint64_t> seed;
  bool force = false;
  bool quiet = false;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "run seed");
  cmd->add_flag("--force", c.force, "replace existing stage outputs");
  cmd->add_flag("--quiet", c.quiet, "no progress output");
  cmd->add_option("--set", c.sets, "config override key=value (repeatable)");
  cmd->allow_extras();
}

// Remaining `--a.b=v` or `--a.b v` arguments become overrides.
std::vector<std::string> dotted_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& a = extras[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos)
      throw pl::PipelineError(pl::ErrorCategory::kUsage, "unrecognized argument '" + a + "'");
    const std::string body = a.substr(2);
    if (body.find('=') != std::string::npos) {
      out.push_back(body);
    } else if (i + 1 < extras.size()) {
      out.push_back(body + "=" + extras[++i]);
    } else {
      throw pl::PipelineError(pl::ErrorCategory::kUsage, "override '" + a + "' needs a value");
    }
  }
  return out;
}

int fail(pl::ErrorCategory c, const std::string& msg) {
  std::cerr << "error[" << pl::category_name(c) << "]: " << msg << '\n';
  return pl::exit_code(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"APRICOT-M ICU acuity pipeline"};
  app.require_subcommand(1);
  Common c;
  std::optional<std::size_t> patients;
  std::string data;

  const char* stages[][2] = {{"synth", "generate a synthetic cohort"},
                             {"prepare", "filter, label and window a cohort"},
                             {"train", "train the network"},
                             {"calibrate", "fit per-head isotonic calibrators"},
                             {"eval", "validation metrics, subgroups and thresholds"},
                             {"attribute", "integrated-gradient attributions"},
                             {"analyze", "lead-time, status confusion and daily tables"},
                             {"pipeline", "all stages in order"}};
  std::vector<CLI::App*> cmds;
  for (const auto& s : stages) {
    CLI::App* cmd = app.add_subcommand(s[0], s[1]);
    add_common(cmd, c);
    cmds.push_back(cmd);
  }
  cmds[0]->add_option("--patients", patients, "number of patients");
  cmds[1]->add_option("--data", data, "cohort directory (default: <out>/synth)");
  cmds[7]->add_option("--data", data, "use an existing cohort instead of generating one");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(pl::ErrorCategory::kUsage, e.what());
  }

  CLI::App* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  try {
    pl::ConfigSources sources;
    if (!c.config.empty()) sources.file = c.config;
    sources.overrides = c.sets;
    for (auto& o : dotted_overrides(cmd->remaining())) sources.overrides.push_back(std::move(o));
    if (patients) sources.overrides.push_back("synth.n_patients=" + std::to_string(*patients));
    sources.seed = c.seed;
    const pl::RunConfig config = pl::resolve_config(sources);

    pl::StageOptions opts;
    opts.out = c.out;
    opts.force = c.force;
    if (!c.quiet) opts.log = [](const std::string& m) { std::cerr << m << '\n'; };
    std::optional<std::filesystem::path> data_dir;
    if (!data.empty()) data_dir = data;

    if (name == "synth") pl::run_synth(config, opts);
    else if (name == "prepare") pl::run_prepare(config, opts, data_dir);
    else if (name == "train") pl::run_train(config, opts);
    else if (name == "calibrate") pl::run_calibrate(config, opts);
    else if (name == "eval") pl::run_eval(config, opts);
    else if (name == "attribute") pl::run_attribute(config, opts);
    else if (name == "analyze") pl::run_analyze(config, opts);
    else pl::run_pipeline(config, opts, data_dir);
  } catch (const pl::PipelineError& e) {
    return fail(e.category(), e.what());
  } catch (const std::invalid_argument& e) {
    return fail(pl::ErrorCategory::kData, e.what());
  } catch (const std::exception& e) {
    return fail(pl::ErrorCategory::kInternal, e.what());
  }
  return 0;
}
