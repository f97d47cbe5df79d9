#pragma once

// On-disk formats: the weight-directory container, CSV matrices, and the JSON
// run report.
//
// A network is stored as a directory holding manifest.json plus one raw
// binary per layer (64-bit little-endian doubles, column-major, exactly
// rows*cols*8 bytes). The manifest records dimensions, file names, flags and
// an optional scale ledger, so load(save(net)) is bitwise-identical and the
// files stay readable from any language without this library.
//
// CSV follows the data convention of the rest of the library transposed:
// one sample per line on disk, one sample per column in memory. Values are
// written with 17 significant digits so doubles survive a text round-trip.

#include <optional>
#include <string>
#include <vector>

#include "relutrim/model.hpp"
#include "relutrim/types.hpp"

namespace relutrim {

inline constexpr int kModelFormatVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

// Writes manifest.json and layer_<l>.bin files into dir, creating it when
// missing. An existing manifest in dir is overwritten; unrelated files are
// left alone. Throws std::runtime_error on filesystem failures and
// std::invalid_argument when the net fails validate().
void save_model(const NetworkModel& net, const std::string& dir,
                const ScaleLedger* scale = nullptr);

struct LoadedModel {
  NetworkModel net;
  std::optional<ScaleLedger> scale;
};

// Reads a directory written by save_model. Errors carry the layer index and
// file name where applicable: missing file, wrong byte count, dimension
// chain break between consecutive layers, unknown format version.
LoadedModel load_model(const std::string& dir);

struct CsvData {
  Matrix x;  // N x P, one sample per column
  std::vector<int> labels;
  bool has_labels = false;
};

// Rectangular numeric CSV, one sample per line, '.' decimal, no locale
// dependence. With labels_last_column the final field of every line must be
// an integer class label. header skips (load) or emits (save) a first line
// of column names. Throws std::runtime_error naming the offending line for
// ragged rows, non-numeric cells, non-integer labels or an empty file.
CsvData load_csv_data(const std::string& path, bool labels_last_column = false,
                      bool header = false);
void save_csv_data(const std::string& path, const Matrix& x,
                   const std::vector<int>* labels = nullptr,
                   bool header = false);

// One retrained layer's row in the run report.
struct ReportLayer {
  double epsilon = 0.0;
  Index nnz_before = 0;
  Index nnz_after = 0;
  double sparsity_before = 0.0;
  double sparsity_after = 0.0;
  Index solver_iterations = 0;
  bool solver_converged = false;
  double solver_objective = 0.0;
  double quad_residual = 0.0;
  double ineq_violation = 0.0;
};

struct ReportBoundRow {
  double measured = 0.0;
  double claimed = 0.0;
  double margin = 0.0;
  bool pass = false;
};

// Everything needed to reproduce and audit a pipeline run: the effective
// configuration (as a JSON object in config_json), the seed, per-layer
// sparsity and solver outcomes, the discrepancy-bound ledger and the final
// relative discrepancy.
struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string command;
  std::string config_json = "{}";
  unsigned long long seed = 0;
  std::vector<ReportLayer> layers;
  std::vector<ReportBoundRow> bounds;
  double bound_slack = 0.0;
  bool bounds_all_pass = false;
  double relative_discrepancy = 0.0;
  bool all_converged = false;
  double wall_seconds = 0.0;
};

// Serialization is stable: emitting the same report twice gives identical
// text, so seeded runs can be compared byte for byte.
std::string run_report_to_json(const RunReport& report);
RunReport run_report_from_json(const std::string& text);

void save_run_report(const RunReport& report, const std::string& path);
RunReport load_run_report(const std::string& path);

// Structural validation against the JSON schema shipped in-repo
// (schemas/run_report.schema.json). Returns one message per violation,
// empty when the document conforms. The checker covers the subset the
// schema uses: type, required, properties, items, enum, minimum.
std::vector<std::string> validate_run_report_json(
    const std::string& report_text, const std::string& schema_path);

}  // namespace relutrim
