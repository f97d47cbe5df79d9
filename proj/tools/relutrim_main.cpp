// relutrim command line tool. Subcommands cover the full pipeline: generate
// spiral data, train a small ReLU net, retrain it sparse (parallel or
// cascade), re-verify the discrepancy bounds from saved artifacts, run the
// planted exact-recovery experiment, spot-check the eigenvalue floor behind
// its sample rule, and re-render saved JSON reports as tables or CSV.
//
// Exit codes: 0 success, 1 flagged failure (solver nonconvergence, bound
// violation, infeasible last-layer budget, bad inputs at runtime), 2 usage.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "relutrim/datagen.hpp"
#include "relutrim/io.hpp"
#include "relutrim/model.hpp"
#include "relutrim/recovery.hpp"
#include "relutrim/trim.hpp"

using nlohmann::json;
using namespace relutrim;

namespace {

int default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<Index> parse_widths(const std::string& text) {
  std::vector<Index> widths;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string part =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    try {
      std::size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument(part);
      widths.push_back(static_cast<Index>(v));
    } catch (const std::exception&) {
      throw std::runtime_error("bad --widths entry '" + part +
                               "' (want comma-separated positive integers)");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return widths;
}

// "layer", "neuron" or "k:<n>".
void parse_clusters(const std::string& text, TrimConfig& config) {
  if (text == "layer") {
    config.clusters = ClusterScheme::kWholeLayer;
  } else if (text == "neuron") {
    config.clusters = ClusterScheme::kSingleton;
  } else if (text.rfind("k:", 0) == 0) {
    config.clusters = ClusterScheme::kBlocks;
    try {
      std::size_t used = 0;
      const long v = std::stol(text.substr(2), &used);
      if (used != text.size() - 2 || v < 1) throw std::invalid_argument(text);
      config.cluster_count = static_cast<Index>(v);
    } catch (const std::exception&) {
      throw std::runtime_error("bad --clusters value '" + text +
                               "' (want layer, neuron or k:<n>)");
    }
  } else {
    throw std::runtime_error("bad --clusters value '" + text +
                             "' (want layer, neuron or k:<n>)");
  }
}

std::vector<double> parse_list(const std::string& text, const char* flag) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string part =
        text.substr(start, comma == std::string::npos ? comma : comma - start);
    try {
      std::size_t used = 0;
      const double v = std::stod(part, &used);
      if (used != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw std::runtime_error(std::string("bad ") + flag + " entry '" + part +
                               "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double wall_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// Options shared by the subcommands that read a sample matrix.
struct DataFlags {
  std::string path;
  bool labeled = false;
  bool header = false;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags) {
  cmd->add_option("--data", flags.path, "input CSV, one sample per line")
      ->required();
  cmd->add_flag("--labeled", flags.labeled,
                "last CSV column is an integer class label");
  cmd->add_flag("--header", flags.header, "CSV has a header line");
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  SpiralConfig spiral;
  unsigned long long seed = 0;
  std::string out;
  bool header = false;
};

int run_gen_data(const GenDataArgs& args) {
  SpiralConfig cfg = args.spiral;
  cfg.seed = static_cast<std::uint64_t>(args.seed);
  const SpiralData data = gen_spirals(cfg);
  save_csv_data(args.out, data.x, &data.labels, args.header);
  std::printf("wrote %ld samples (%ld features + label) to %s\n",
              static_cast<long>(data.x.cols()),
              static_cast<long>(data.x.rows()), args.out.c_str());
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  DataFlags data;
  std::string widths = "2,50,50,2";
  TrainConfig config;
  unsigned long long seed = 0;
  std::string out;
};

int run_train(const TrainArgs& args) {
  CsvData data = load_csv_data(args.data.path, true, args.data.header);
  TrainConfig cfg = args.config;
  cfg.widths = parse_widths(args.widths);
  cfg.seed = static_cast<std::uint64_t>(args.seed);
  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = train_mlp(data.x, data.labels, cfg);
  const double acc = accuracy(result.net, data.x, data.labels);
  save_model(result.net, args.out);
  std::printf(
      "trained %s for %ld epochs in %.1fs: loss %.4f -> %.4f, accuracy "
      "%.3f\nsaved to %s\n",
      args.widths.c_str(), static_cast<long>(cfg.epochs), wall_since(t0),
      result.epoch_loss.empty() ? 0.0 : result.epoch_loss.front(),
      result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back(), acc,
      args.out.c_str());
  return 0;
}

// -------------------------------------------------------------------- trim

struct TrimArgs {
  std::string model;
  DataFlags data;
  std::string mode = "parallel";
  std::string clusters = "layer";
  TrimConfig config;
  unsigned long long seed = 0;
  std::string out;
};

json trim_config_echo(const TrimArgs& args, const TrimConfig& cfg) {
  return json{{"model", args.model},
              {"data", args.data.path},
              {"labeled", args.data.labeled},
              {"header", args.data.header},
              {"mode", args.mode},
              {"epsilon_rel", cfg.epsilon_rel},
              {"gamma", cfg.gamma},
              {"kappa", cfg.kappa},
              {"clusters", args.clusters},
              {"link_normalize", cfg.link_normalize},
              {"zero_tol", cfg.zero_tol},
              {"jobs", cfg.jobs}};
}

RunReport make_trim_report(const std::string& command, const json& config,
                           unsigned long long seed, const NetworkModel& before,
                           const TrimResult& result, const BoundLedger& ledger,
                           double zero_tol, double wall) {
  RunReport report;
  report.command = command;
  report.config_json = config.dump();
  report.seed = seed;
  for (std::size_t l = 0; l < result.layers.size(); ++l) {
    const LayerTrimReport& lt = result.layers[l];
    ReportLayer row;
    row.epsilon = lt.epsilon;
    row.nnz_before = lt.nnz_before;
    row.nnz_after = lt.nnz_after;
    row.sparsity_before = sparsity_ratio(before.layers[l], zero_tol);
    row.sparsity_after = sparsity_ratio(result.pruned.layers[l], zero_tol);
    row.solver_iterations = lt.solver.iterations;
    row.solver_converged = lt.solver.converged;
    row.solver_objective = lt.solver.objective;
    row.quad_residual = lt.solver.quad_residual;
    row.ineq_violation = lt.solver.ineq_violation;
    report.layers.push_back(row);
  }
  for (const BoundLedgerRow& row : ledger.rows)
    report.bounds.push_back({row.measured, row.claimed, row.margin, row.pass});
  report.bound_slack = ledger.slack;
  report.bounds_all_pass = ledger.all_pass;
  report.relative_discrepancy = result.relative_discrepancy;
  report.all_converged = result.all_converged;
  report.wall_seconds = wall;
  return report;
}

void print_trim_summary(const RunReport& report) {
  std::printf("layer  epsilon      nnz before -> after   converged\n");
  for (std::size_t l = 0; l < report.layers.size(); ++l) {
    const ReportLayer& row = report.layers[l];
    std::printf("%5zu  %-11.5g %6ld -> %-6ld        %s\n", l, row.epsilon,
                static_cast<long>(row.nnz_before),
                static_cast<long>(row.nnz_after),
                row.solver_converged ? "yes" : "NO");
  }
  for (std::size_t l = 0; l < report.bounds.size(); ++l) {
    const ReportBoundRow& b = report.bounds[l];
    std::printf("bound %zu: measured %.6g <= claimed %.6g + slack  %s\n", l,
                b.measured, b.claimed, b.pass ? "ok" : "VIOLATED");
  }
  std::printf("relative discrepancy %.6g, %s, %.1fs\n",
              report.relative_discrepancy,
              report.all_converged ? "all solves converged"
                                   : "UNCONVERGED solves present",
              report.wall_seconds);
}

int run_trim(const TrimArgs& args) {
  TrimConfig cfg = args.config;
  cfg.mode = args.mode == "cascade" ? TrimMode::kCascade : TrimMode::kParallel;
  parse_clusters(args.clusters, cfg);

  const LoadedModel loaded = load_model(args.model);
  const CsvData data =
      load_csv_data(args.data.path, args.data.labeled, args.data.header);

  const auto t0 = std::chrono::steady_clock::now();
  const TrimResult result = trim(loaded.net, data.x, cfg);
  const BoundLedger ledger =
      verify_discrepancy_bounds(result, loaded.net, data.x);
  const double wall = wall_since(t0);

  save_model(result.pruned, args.out, &result.scale);
  const RunReport report =
      make_trim_report("trim", trim_config_echo(args, cfg), args.seed,
                       loaded.net, result, ledger, cfg.zero_tol, wall);
  const std::string report_path =
      (std::filesystem::path(args.out) / "report.json").string();
  save_run_report(report, report_path);

  print_trim_summary(report);
  std::printf("pruned model and report.json saved to %s\n", args.out.c_str());
  return (result.all_converged && ledger.all_pass) ? 0 : 1;
}

// ------------------------------------------------------------------ verify

struct VerifyArgs {
  std::string model;
  std::string pruned;
  std::string report;
  DataFlags data;
  std::string out;
};

int run_verify(const VerifyArgs& args) {
  const LoadedModel original = load_model(args.model);
  const LoadedModel pruned = load_model(args.pruned);
  const std::string report_path =
      args.report.empty()
          ? (std::filesystem::path(args.pruned) / "report.json").string()
          : args.report;
  const RunReport recorded = load_run_report(report_path);
  const CsvData data =
      load_csv_data(args.data.path, args.data.labeled, args.data.header);

  if (recorded.layers.size() != original.net.layers.size())
    throw std::runtime_error(
        "verify: report layer count does not match the model");

  const json config = json::parse(recorded.config_json);
  const bool link_normalized = config.value("link_normalize", true);

  // Rebuild the result the bound checker expects from the saved artifacts.
  // The recorded budgets live in the solve domain; the masses that defined
  // that domain are recomputed from the original net (identical arithmetic
  // to the recording run).
  TrimResult result;
  result.pruned = pruned.net;
  result.mode = config.value("mode", "parallel") == "cascade"
                    ? TrimMode::kCascade
                    : TrimMode::kParallel;
  result.gamma = config.value("gamma", 1.0);
  result.kappa = config.value("kappa", 1.0);
  result.link_normalized = link_normalized;
  if (link_normalized) {
    result.scale = link_normalize(original.net).second;
  } else {
    result.scale.layer_mass.assign(original.net.layers.size(), 1.0);
    result.scale.cumulative.assign(original.net.layers.size(), 1.0);
  }
  result.layers.resize(recorded.layers.size());
  for (std::size_t l = 0; l < recorded.layers.size(); ++l)
    result.layers[l].epsilon = recorded.layers[l].epsilon;

  const auto t0 = std::chrono::steady_clock::now();
  const BoundLedger ledger =
      verify_discrepancy_bounds(result, original.net, data.x);
  for (std::size_t l = 0; l < ledger.rows.size(); ++l) {
    const BoundLedgerRow& b = ledger.rows[l];
    std::printf("bound %zu: measured %.6g <= claimed %.6g + slack  %s\n", l,
                b.measured, b.claimed, b.pass ? "ok" : "VIOLATED");
  }
  std::printf("%s\n", ledger.all_pass ? "all bounds hold" : "BOUND VIOLATION");

  if (!args.out.empty()) {
    RunReport report = recorded;
    report.command = "verify";
    report.bounds.clear();
    for (const BoundLedgerRow& b : ledger.rows)
      report.bounds.push_back({b.measured, b.claimed, b.margin, b.pass});
    report.bound_slack = ledger.slack;
    report.bounds_all_pass = ledger.all_pass;
    report.wall_seconds = wall_since(t0);
    save_run_report(report, args.out);
  }
  return ledger.all_pass ? 0 : 1;
}

// ----------------------------------------------------------------- recover

struct RecoverArgs {
  Index n = 64;
  std::string s_list = "3";
  std::string mu_list = "2";
  Index trials = 20;
  Index p_override = 0;
  unsigned long long seed = 0;
  std::string log_base = "e";
  int jobs = default_jobs();
  std::string out;
};

int run_recover(const RecoverArgs& args) {
  const LogBase base =
      args.log_base == "10" ? LogBase::kBase10 : LogBase::kNatural;
  json rows = json::array();
  for (double s : parse_list(args.s_list, "--s")) {
    for (double mu : parse_list(args.mu_list, "--mu")) {
      const ExperimentResult cell = sample_complexity_experiment(
          args.n, static_cast<Index>(s), mu, args.trials,
          static_cast<std::uint64_t>(args.seed), base, args.jobs, {},
          args.p_override);
      rows.push_back(json{{"n", cell.n},
                          {"s", cell.s},
                          {"mu", cell.mu},
                          {"p", cell.p},
                          {"trials", cell.trials},
                          {"successes", cell.successes},
                          {"certificate_holds", cell.certificate_holds},
                          {"certified_misses", cell.certified_misses},
                          {"mean_error", cell.mean_error},
                          {"regenerations", cell.regenerations},
                          {"wall_seconds", cell.wall_seconds}});
      std::printf(
          "n=%ld s=%ld mu=%g: P=%ld, %ld/%ld recovered, %ld certified, "
          "%ld certified misses\n",
          static_cast<long>(cell.n), static_cast<long>(cell.s), cell.mu,
          static_cast<long>(cell.p), static_cast<long>(cell.successes),
          static_cast<long>(cell.trials),
          static_cast<long>(cell.certificate_holds),
          static_cast<long>(cell.certified_misses));
    }
  }
  const json doc{{"command", "recover"},
                 {"seed", args.seed},
                 {"log_base", args.log_base},
                 {"rows", rows}};
  if (!args.out.empty()) {
    std::ofstream f(args.out, std::ios::binary | std::ios::trunc);
    f << doc.dump(2) << "\n";
    if (!f) throw std::runtime_error("recover: write failed on " + args.out);
  } else {
    std::printf("%s\n", doc.dump(2).c_str());
  }
  return 0;
}

// ------------------------------------------------------------- eigen-floor

struct EigenFloorArgs {
  Index s = 3;
  Index p = 425;
  Index trials = 200;
  double t = 0.0;  // 0 means the -P/4 default below
  unsigned long long seed = 0;
  std::string out;
};

int run_eigen_floor(const EigenFloorArgs& args) {
  const double t =
      args.t == 0.0 ? -static_cast<double>(args.p) / 4.0 : args.t;
  const EigenFloorResult res = empirical_eigen_floor(
      args.s, args.p, args.trials, t, static_cast<std::uint64_t>(args.seed));
  std::printf(
      "s=%ld P=%ld trials=%ld: mean lambda_min %.2f, threshold %.2f, "
      "violation fraction %.4f, bound %.4g\n",
      static_cast<long>(res.s), static_cast<long>(res.p),
      static_cast<long>(res.trials), res.mean, res.threshold,
      res.violation_fraction, res.bound);
  if (!args.out.empty()) {
    const json doc{{"command", "eigen-floor"},
                   {"seed", args.seed},
                   {"s", res.s},
                   {"p", res.p},
                   {"trials", res.trials},
                   {"t", res.t},
                   {"threshold", res.threshold},
                   {"mean", res.mean},
                   {"violation_fraction", res.violation_fraction},
                   {"bound", res.bound},
                   {"samples", res.samples}};
    std::ofstream f(args.out, std::ios::binary | std::ios::trunc);
    f << doc.dump(2) << "\n";
    if (!f)
      throw std::runtime_error("eigen-floor: write failed on " + args.out);
  }
  return 0;
}

// ------------------------------------------------------------------ report

struct ReportArgs {
  std::string path;
  bool as_csv = false;
  std::string schema;
  std::string out;
};

int run_report(const ReportArgs& args) {
  const RunReport report = load_run_report(args.path);

  if (!args.schema.empty()) {
    std::ifstream f(args.path, std::ios::binary);
    const std::string text((std::istreambuf_iterator<char>(f)),
                           std::istreambuf_iterator<char>());
    const auto problems = validate_run_report_json(text, args.schema);
    for (const std::string& p : problems)
      std::fprintf(stderr, "schema: %s\n", p.c_str());
    if (!problems.empty()) return 1;
  }

  if (args.as_csv) {
    std::string text =
        "layer,epsilon,nnz_before,nnz_after,sparsity_before,sparsity_after,"
        "iterations,converged,objective,quad_residual,ineq_violation\n";
    char buf[256];
    for (std::size_t l = 0; l < report.layers.size(); ++l) {
      const ReportLayer& row = report.layers[l];
      std::snprintf(buf, sizeof buf,
                    "%zu,%.17g,%ld,%ld,%.17g,%.17g,%ld,%d,%.17g,%.17g,%.17g\n",
                    l, row.epsilon, static_cast<long>(row.nnz_before),
                    static_cast<long>(row.nnz_after), row.sparsity_before,
                    row.sparsity_after,
                    static_cast<long>(row.solver_iterations),
                    row.solver_converged ? 1 : 0, row.solver_objective,
                    row.quad_residual, row.ineq_violation);
      text += buf;
    }
    if (!args.out.empty()) {
      std::ofstream f(args.out, std::ios::binary | std::ios::trunc);
      f << text;
      if (!f) throw std::runtime_error("report: write failed on " + args.out);
    } else {
      std::fputs(text.c_str(), stdout);
    }
    return 0;
  }

  std::printf("command: %s (seed %llu, %.1fs)\nconfig: %s\n",
              report.command.c_str(), report.seed, report.wall_seconds,
              report.config_json.c_str());
  print_trim_summary(report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse retraining of feed-forward ReLU networks"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate spiral CSV data");
  gen->add_option("--points-per-class", gen_args.spiral.points_per_class);
  gen->add_option("--turns", gen_args.spiral.turns);
  gen->add_option("--radial-scale", gen_args.spiral.radial_scale);
  gen->add_option("--noise-std", gen_args.spiral.noise_std);
  gen->add_option("--seed", gen_args.seed);
  gen->add_option("--out", gen_args.out, "output CSV path")->required();
  gen->add_flag("--header", gen_args.header, "emit a CSV header line");

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a ReLU net on CSV data");
  add_data_flags(train, train_args.data);
  train->get_option("--labeled")->default_val(true);
  train->add_option("--widths", train_args.widths,
                    "layer widths, e.g. 2,50,50,2");
  train->add_option("--learning-rate", train_args.config.learning_rate);
  train->add_option("--epochs", train_args.config.epochs);
  train->add_option("--batch-size", train_args.config.batch_size);
  train->add_option("--l1-penalty", train_args.config.l1_penalty);
  train->add_option("--seed", train_args.seed);
  train->add_option("--out", train_args.out, "output model directory")
      ->required();

  TrimArgs trim_args;
  trim_args.config.jobs = default_jobs();
  CLI::App* trm = app.add_subcommand("trim", "sparse retraining of a saved net");
  trm->add_option("--model", trim_args.model, "model directory")->required();
  add_data_flags(trm, trim_args.data);
  trm->add_option("--mode", trim_args.mode, "parallel or cascade")
      ->check(CLI::IsMember({"parallel", "cascade"}));
  trm->add_option("--epsilon-rel", trim_args.config.epsilon_rel,
                  "per-layer budget relative to the layer signal norm");
  trm->add_option("--gamma", trim_args.config.gamma, "cascade inflation rate");
  trm->add_option("--kappa", trim_args.config.kappa,
                  "last-layer risk coefficient");
  trm->add_option("--clusters", trim_args.clusters, "layer, neuron or k:<n>");
  trm->add_flag("--link-normalize,!--no-link-normalize",
                trim_args.config.link_normalize,
                "solve in the unit-mass domain the bounds are stated in");
  trm->add_option("--zero-tol", trim_args.config.zero_tol);
  trm->add_option("--jobs", trim_args.config.jobs,
                  "worker threads for independent solves");
  trm->add_option("--seed", trim_args.seed, "seed echoed into the report");
  trm->add_option("--out", trim_args.out, "output directory")->required();

  VerifyArgs verify_args;
  CLI::App* verify = app.add_subcommand(
      "verify", "re-check discrepancy bounds from saved artifacts");
  verify->add_option("--model", verify_args.model, "original model directory")
      ->required();
  verify->add_option("--pruned", verify_args.pruned, "pruned model directory")
      ->required();
  verify->add_option("--report", verify_args.report,
                     "trim report (default: <pruned>/report.json)");
  add_data_flags(verify, verify_args.data);
  verify->add_option("--out", verify_args.out, "write a verify report here");

  RecoverArgs recover_args;
  CLI::App* recover =
      app.add_subcommand("recover", "planted exact-recovery experiment");
  recover->add_option("--N", recover_args.n, "ambient dimension")->required();
  recover->add_option("--s", recover_args.s_list, "sparsity level(s)")
      ->required();
  recover->add_option("--mu", recover_args.mu_list, "oversampling factor(s)")
      ->required();
  recover->add_option("--trials", recover_args.trials);
  recover->add_option("--p", recover_args.p_override,
                      "sample count override (0 = use the rule)");
  recover->add_option("--seed", recover_args.seed);
  recover->add_option("--log-base", recover_args.log_base)
      ->check(CLI::IsMember({"e", "10"}));
  recover->add_option("--jobs", recover_args.jobs);
  recover->add_option("--out", recover_args.out, "output JSON path");

  EigenFloorArgs eigen_args;
  CLI::App* eig = app.add_subcommand(
      "eigen-floor", "empirical minimum-eigenvalue spot check");
  eig->add_option("--s", eigen_args.s)->required();
  eig->add_option("--p", eigen_args.p)->required();
  eig->add_option("--trials", eigen_args.trials);
  eig->add_option("--t", eigen_args.t, "tail offset, <= 0 (default -P/4)");
  eig->add_option("--seed", eigen_args.seed);
  eig->add_option("--out", eigen_args.out, "output JSON path");

  ReportArgs report_args;
  CLI::App* rep =
      app.add_subcommand("report", "re-render a saved JSON report");
  rep->add_option("path", report_args.path, "report JSON file")->required();
  rep->add_flag("--csv", report_args.as_csv, "emit per-layer CSV");
  rep->add_option("--schema", report_args.schema,
                  "validate against this JSON schema first");
  rep->add_option("--out", report_args.out, "write rendering here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_args);
    if (train->parsed()) return run_train(train_args);
    if (trm->parsed()) return run_trim(trim_args);
    if (verify->parsed()) return run_verify(verify_args);
    if (recover->parsed()) return run_recover(recover_args);
    if (eig->parsed()) return run_eigen_floor(eigen_args);
    if (rep->parsed()) return run_report(report_args);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
