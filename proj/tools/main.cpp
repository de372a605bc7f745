// Command-line front end: train, eval, audit, gradcheck, synth, sample-off.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "hemb/audit.hpp"
#include "hemb/config.hpp"
#include "hemb/data_io.hpp"
#include "hemb/errors.hpp"
#include "hemb/experiment.hpp"
#include "hemb/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace hemb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

constexpr const char* kOutputEnv = "HEMB_OUTPUT_DIR";

struct ConfigArgs {
  std::string file;
  std::map<std::string, std::string> overrides;
};

/// `--config FILE` plus one `--<key> VALUE` option per config key.
void add_config_options(CLI::App& cmd, ConfigArgs& args) {
  cmd.add_option("--config", args.file, "flat 'key = value' config file");
  for (const auto& key : config_keys()) {
    cmd.add_option_function<std::string>(
        "--" + key, [&args, key](const std::string& v) { args.overrides[key] = v; }, "override " + key);
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return text.str();
}

/// Precedence: defaults < base text < config file < HEMB_OUTPUT_DIR < flags.
RunConfig resolve(const ConfigArgs& args, const std::string& base = {}) {
  RunConfig config = RunConfig::defaults();
  apply_config_text(config, base);
  if (!args.file.empty()) apply_config_text(config, read_text(args.file));
  if (const char* env = std::getenv(kOutputEnv); env && *env) config.output_dir = env;
  for (const auto& [key, value] : args.overrides) set_key(config, key, value);
  config.model.validate();
  return config;
}

fs::path prepare_output(const RunConfig& config) {
  const fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

int cmd_train(const ConfigArgs& args) {
  const RunConfig config = resolve(args);
  const fs::path dir = prepare_output(config);
  write_file(dir / "config.cfg", config_text(config));

  const auto train = prepare_all(load_split(config, Split::train), config.model);
  const auto test = prepare_all(load_split(config, Split::test), config.model);
  std::cout << "train " << train.size() << " clouds, test " << test.size() << " clouds\n";

  ModelParams params = ModelParams::init(config.model);
  const fs::path csv_path = dir / "metrics.csv";
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
  csv << metrics_csv_header() << std::flush;
  fit(params, train, test, config, [&](const EpochMetrics& m) {
    csv << metrics_csv_row(m) << std::flush;
    std::printf("epoch %zu  loss %.4f  train %.4f  test %.4f  lr %.3g\n", m.epoch, m.train_loss, m.train_acc,
                m.test_acc, m.lr);
    std::fflush(stdout);
  });
  if (!csv) throw std::runtime_error("failed writing " + csv_path.string());
  save_checkpoint(dir / "checkpoint.hemb", Checkpoint{config_text(config), params.parameters()});
  std::cout << "wrote " << (dir / "checkpoint.hemb").string() << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const ConfigArgs& args) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const RunConfig config = resolve(args, checkpoint.config);
  ModelParams params = ModelParams::init(config.model);
  restore_parameters(checkpoint, params.parameters());
  const auto test = prepare_all(load_split(config, Split::test), config.model);
  const EvalResult result = evaluate(test, params);

  std::printf("OA %.4f (%zu/%zu)\n", result.accuracy(), result.correct, result.total);
  std::printf("%-6s %8s %8s %8s\n", "class", "samples", "correct", "acc");
  for (std::size_t c = 0; c < result.confusion.size(); ++c) {
    std::size_t count = 0;
    for (std::size_t v : result.confusion[c]) count += v;
    std::printf("%-6zu %8zu %8zu %8.4f\n", c, count, result.confusion[c][c],
                count ? static_cast<double>(result.confusion[c][c]) / static_cast<double>(count) : 0.0);
  }
  const fs::path dir = prepare_output(config);
  write_file(dir / "eval_config.cfg", config_text(config));
  write_file(dir / "confusion.csv", confusion_csv(result));
  return kExitOk;
}

void print_audit(const ModelConfig& config) {
  const ParamAudit audit = count_params(config);
  std::printf("%-28s %12s\n", "block", "params");
  for (const auto& row : audit.rows) std::printf("%-28s %12zu\n", row.block.c_str(), row.count);
  const FlopAudit flops = estimate_flops(config);
  std::printf("%-28s %12zu\n", "total", audit.total);
  std::printf("cofe delta      %zu params (%.4f M), %.4f GFLOPs\n", audit.cofe_delta, audit.cofe_delta / 1e6,
              flops.cofe_delta / 1e9);
  std::printf("geometry delta  %lld params\n", audit.geometry_delta);
  std::printf("estimated total %.4f GFLOPs\n", flops.total / 1e9);
}

int cmd_audit(const ConfigArgs& args) {
  const RunConfig config = resolve(args);
  print_audit(config.model);

  // Reference deltas: +0.03 M params for CoFE, none for the Gaussian path.
  const ModelConfig paper = ModelConfig::paper();
  const ParamAudit audit = count_params(paper);
  const FlopAudit flops = estimate_flops(paper);
  const bool cofe_ok = audit.cofe_delta >= 25000 && audit.cofe_delta <= 35000;
  const bool geometry_ok = audit.geometry_delta == 0;
  const bool flops_ok = flops.cofe_delta >= 0.045e9 && flops.cofe_delta <= 0.135e9;
  std::printf("\nreference config (depth 12, C 384, g 16)\n");
  std::printf("%s cofe params %zu in [25000, 35000]\n", cofe_ok ? "PASS" : "FAIL", audit.cofe_delta);
  std::printf("%s geometry params %lld == 0\n", geometry_ok ? "PASS" : "FAIL", audit.geometry_delta);
  std::printf("%s cofe GFLOPs %.4f in [0.045, 0.135]\n", flops_ok ? "PASS" : "FAIL", flops.cofe_delta / 1e9);
  return cofe_ok && geometry_ok && flops_ok ? kExitOk : kExitCheck;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t seeds, const std::string& fault) {
  if (fault == "sigmoid-backward") {
    testing::inject_fault(testing::Fault::sigmoid_backward);
  } else if (!fault.empty() && fault != "none") {
    throw ConfigError("unknown fault '" + fault + "' (expected none or sigmoid-backward)");
  }
  bool ok = true;
  std::printf("%-16s %12s %10s\n", "module", "worst", "threshold");
  for (const auto& row : run_gradcheck(seed, seeds)) {
    std::printf("%-16s %12.3e %10.0e %s\n", row.module.c_str(), row.worst, row.threshold,
                row.passed() ? "PASS" : "FAIL");
    ok = ok && row.passed();
  }
  return ok ? kExitOk : kExitCheck;
}

int cmd_synth(const std::string& out_dir, std::size_t per_class, std::size_t points, std::uint64_t seed) {
  const fs::path dir(out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create " + dir.string());
  std::string manifest = "file,label\n";
  for (std::size_t c = 0; c < kSyntheticClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      char name[96];
      std::snprintf(name, sizeof(name), "%s_%04zu.xyz", synthetic_class_names()[c].c_str(), i);
      save_xyz(dir / name, generate_synthetic(c, points, sample_seed(seed, Split::train, c, i), true));
      manifest += std::string(name) + "," + std::to_string(c) + "\n";
    }
  }
  write_file(dir / "manifest.csv", manifest);
  write_file(dir / "synth.cfg", "per_class = " + std::to_string(per_class) + "\nnum_points = " +
                                    std::to_string(points) + "\nseed = " + std::to_string(seed) + "\n");
  std::cout << "wrote " << per_class * kSyntheticClasses << " clouds to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_sample_off(const std::string& in, std::size_t n, std::uint64_t seed, const std::string& out) {
  save_xyz(out, sample_mesh_surface(load_off(in), n, seed));
  std::cout << "sampled " << n << " points from " << in << " with seed " << seed << " into " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid point-cloud classifier: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  ConfigArgs train_args, eval_args, audit_args;
  auto* train = app.add_subcommand("train", "train on the configured data and write metrics + checkpoint");
  add_config_options(*train, train_args);

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint; writes confusion.csv");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  add_config_options(*eval, eval_args);

  auto* audit = app.add_subcommand("audit", "parameter and FLOP report");
  add_config_options(*audit, audit_args);

  std::uint64_t gc_seed = 0;
  std::size_t gc_seeds = 1;
  std::string fault;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every module");
  gradcheck->add_option("--seed", gc_seed, "first seed");
  gradcheck->add_option("--seeds", gc_seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  gradcheck->add_option("--inject-fault", fault, "test hook: none | sigmoid-backward");

  std::string synth_out;
  std::size_t per_class = 10, synth_points = 256;
  std::uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synth", "write synthetic XYZ clouds and a manifest");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--per-class", per_class, "clouds per class");
  synth->add_option("--points", synth_points, "points per cloud");
  synth->add_option("--seed", synth_seed, "seed");

  std::string off_in, xyz_out;
  std::size_t off_n = 1024;
  std::uint64_t off_seed = 0;
  auto* sample = app.add_subcommand("sample-off", "sample points from an OFF mesh surface");
  sample->add_option("input", off_in, "OFF mesh")->required();
  sample->add_option("--n", off_n, "number of points");
  sample->add_option("--seed", off_seed, "seed");
  sample->add_option("--out", xyz_out, "output XYZ file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(checkpoint, eval_args);
    if (*audit) return cmd_audit(audit_args);
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_seeds, fault);
    if (*synth) return cmd_synth(synth_out, per_class, synth_points, synth_seed);
    if (*sample) return cmd_sample_off(off_in, off_n, off_seed, xyz_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
