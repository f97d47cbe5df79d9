#include "relutrim/io.hpp"

#include <bit>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <system_error>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relutrim {

namespace {

// The container is defined as little-endian on disk and the loaders write
// raw host doubles, which is only the same thing on a little-endian host.
void require_little_endian(const char* who) {
  if constexpr (std::endian::native != std::endian::little)
    throw std::runtime_error(std::string(who) +
                             ": big-endian hosts are not supported");
}

std::string layer_file_name(Index l) {
  return "layer_" + std::to_string(l) + ".bin";
}

std::string read_text_file(const fs::path& path, const char* who) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error(std::string(who) + ": cannot open '" +
                             path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof())
    throw std::runtime_error(std::string(who) + ": read failed on '" +
                             path.string() + "'");
  return text;
}

void write_text_file(const fs::path& path, const std::string& text,
                     const char* who) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out)
    throw std::runtime_error(std::string(who) + ": write failed on '" +
                             path.string() + "'");
}

json parse_json(const std::string& text, const std::string& origin,
                const char* who) {
  json doc = json::parse(text, nullptr, false);
  if (doc.is_discarded())
    throw std::runtime_error(std::string(who) + ": '" + origin +
                             "' is not valid JSON");
  return doc;
}

double number_field(const json& obj, const char* key, const char* who) {
  if (!obj.contains(key) || !obj[key].is_number())
    throw std::runtime_error(std::string(who) + ": missing numeric field '" +
                             key + "'");
  return obj[key].get<double>();
}

}  // namespace

void save_model(const NetworkModel& net, const std::string& dir,
                const ScaleLedger* scale) {
  require_little_endian("save_model");
  validate(net);

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw std::runtime_error("save_model: cannot create directory '" + dir +
                             "': " + ec.message());

  json layers = json::array();
  for (Index l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.layers[static_cast<std::size_t>(l)];
    const std::string name = layer_file_name(l);
    std::ofstream out(fs::path(dir) / name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(w.data()),
              static_cast<std::streamsize>(sizeof(double)) * w.size());
    if (!out)
      throw std::runtime_error("save_model: write failed on layer " +
                               std::to_string(l) + " file '" + name + "'");
    layers.push_back(json{{"rows", w.rows()},
                          {"cols", w.cols()},
                          {"file", name},
                          {"byte_order", "little"},
                          {"element_type", "f64"}});
  }

  json manifest{{"format_version", kModelFormatVersion},
                {"layers", layers},
                {"last_layer_linear", net.last_layer_linear},
                {"augment_input", net.augment_input}};
  if (scale != nullptr)
    manifest["scale_ledger"] = json{{"layer_mass", scale->layer_mass},
                                    {"cumulative", scale->cumulative}};
  write_text_file(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n",
                  "save_model");
}

LoadedModel load_model(const std::string& dir) {
  require_little_endian("load_model");
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  const json manifest = parse_json(
      read_text_file(manifest_path, "load_model"), manifest_path.string(),
      "load_model");

  if (!manifest.contains("format_version") ||
      !manifest["format_version"].is_number_integer())
    throw std::runtime_error("load_model: manifest has no format_version");
  const int version = manifest["format_version"].get<int>();
  if (version != kModelFormatVersion)
    throw std::runtime_error("load_model: unknown format version " +
                             std::to_string(version) + " (supported: " +
                             std::to_string(kModelFormatVersion) + ")");
  if (!manifest.contains("layers") || !manifest["layers"].is_array() ||
      manifest["layers"].empty())
    throw std::runtime_error("load_model: manifest has no layers");

  struct Entry {
    Index rows, cols;
    std::string file;
  };
  std::vector<Entry> entries;
  Index l = 0;
  for (const json& row : manifest["layers"]) {
    const std::string tag = "layer " + std::to_string(l);
    if (!row.contains("rows") || !row.contains("cols") ||
        !row.contains("file"))
      throw std::runtime_error("load_model: manifest " + tag +
                               " lacks rows/cols/file");
    Entry e{row["rows"].get<Index>(), row["cols"].get<Index>(),
            row["file"].get<std::string>()};
    if (e.rows < 1 || e.cols < 1)
      throw std::runtime_error("load_model: manifest " + tag +
                               " has non-positive dimensions");
    if (row.value("byte_order", "little") != "little")
      throw std::runtime_error("load_model: " + tag +
                               " uses an unsupported byte order");
    if (row.value("element_type", "f64") != "f64")
      throw std::runtime_error("load_model: " + tag +
                               " uses an unsupported element type");
    entries.push_back(std::move(e));
    ++l;
  }

  // Catch dimension-chain breaks before touching any of the binaries, so a
  // manifest with swapped dims fails fast and by name.
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
    if (entries[i].cols != entries[i + 1].rows)
      throw std::runtime_error(
          "load_model: dimension chain break between layer " +
          std::to_string(i) + " (" + std::to_string(entries[i].rows) + " x " +
          std::to_string(entries[i].cols) + ") and layer " +
          std::to_string(i + 1) + " (" + std::to_string(entries[i + 1].rows) +
          " x " + std::to_string(entries[i + 1].cols) + ")");
  }

  LoadedModel out;
  out.net.last_layer_linear = manifest.value("last_layer_linear", false);
  out.net.augment_input = manifest.value("augment_input", false);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    const fs::path bin = fs::path(dir) / e.file;
    std::error_code ec;
    const auto actual = fs::file_size(bin, ec);
    if (ec)
      throw std::runtime_error("load_model: layer " + std::to_string(i) +
                               " file '" + e.file + "' is missing");
    const std::uintmax_t expected =
        static_cast<std::uintmax_t>(e.rows) *
        static_cast<std::uintmax_t>(e.cols) * sizeof(double);
    if (actual != expected)
      throw std::runtime_error("load_model: layer " + std::to_string(i) +
                               " file '" + e.file + "' has " +
                               std::to_string(actual) + " bytes, expected " +
                               std::to_string(expected));
    Matrix w(e.rows, e.cols);
    std::ifstream in(bin, std::ios::binary);
    in.read(reinterpret_cast<char*>(w.data()),
            static_cast<std::streamsize>(expected));
    if (!in || in.gcount() != static_cast<std::streamsize>(expected))
      throw std::runtime_error("load_model: layer " + std::to_string(i) +
                               " file '" + e.file + "' read failed");
    out.net.layers.push_back(std::move(w));
  }
  validate(out.net);

  if (manifest.contains("scale_ledger")) {
    const json& led = manifest["scale_ledger"];
    if (!led.contains("layer_mass") || !led.contains("cumulative"))
      throw std::runtime_error(
          "load_model: scale_ledger lacks layer_mass/cumulative");
    ScaleLedger scale;
    scale.layer_mass = led["layer_mass"].get<std::vector<double>>();
    scale.cumulative = led["cumulative"].get<std::vector<double>>();
    if (scale.layer_mass.size() != out.net.layers.size() ||
        scale.cumulative.size() != out.net.layers.size())
      throw std::runtime_error(
          "load_model: scale_ledger length does not match the layer count");
    out.scale = std::move(scale);
  }
  return out;
}

namespace {

double parse_double(std::string_view cell, std::size_t line_no,
                    const char* who) {
  double value = 0.0;
  const auto [end, err] =
      std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (err != std::errc() || end != cell.data() + cell.size())
    throw std::runtime_error(std::string(who) + ": non-numeric cell '" +
                             std::string(cell) + "' on line " +
                             std::to_string(line_no));
  return value;
}

int parse_label(std::string_view cell, std::size_t line_no, const char* who) {
  int value = 0;
  const auto [end, err] =
      std::from_chars(cell.data(), cell.data() + cell.size(), value);
  if (err != std::errc() || end != cell.data() + cell.size())
    throw std::runtime_error(std::string(who) + ": non-integer label '" +
                             std::string(cell) + "' on line " +
                             std::to_string(line_no));
  return value;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

}  // namespace

CsvData load_csv_data(const std::string& path, bool labels_last_column,
                      bool header) {
  const std::string text = read_text_file(path, "load_csv_data");

  // Collect logical lines first (tolerating \r\n and a missing final
  // newline), then parse; the column count of the first data line sets the
  // expected width for the rest.
  std::vector<std::string_view> lines;
  std::string_view rest(text);
  while (!rest.empty()) {
    std::size_t nl = rest.find('\n');
    std::string_view line =
        nl == std::string_view::npos ? rest : rest.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!line.empty()) lines.push_back(line);
    if (nl == std::string_view::npos) break;
    rest.remove_prefix(nl + 1);
  }
  std::size_t first = header ? 1 : 0;
  if (lines.size() <= first)
    throw std::runtime_error("load_csv_data: '" + path + "' has no data rows");

  const std::size_t width = split_fields(lines[first]).size();
  if (labels_last_column && width < 2)
    throw std::runtime_error(
        "load_csv_data: need at least one feature column besides the labels");

  const Index p = static_cast<Index>(lines.size() - first);
  const Index n = static_cast<Index>(width - (labels_last_column ? 1 : 0));
  CsvData out;
  out.x.resize(n, p);
  out.has_labels = labels_last_column;
  if (labels_last_column) out.labels.resize(static_cast<std::size_t>(p));

  for (std::size_t i = first; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto fields = split_fields(lines[i]);
    if (fields.size() != width)
      throw std::runtime_error(
          "load_csv_data: ragged row on line " + std::to_string(line_no) +
          " (" + std::to_string(fields.size()) + " fields, expected " +
          std::to_string(width) + ")");
    const Index col = static_cast<Index>(i - first);
    for (Index r = 0; r < n; ++r)
      out.x(r, col) = parse_double(fields[static_cast<std::size_t>(r)],
                                   line_no, "load_csv_data");
    if (labels_last_column)
      out.labels[static_cast<std::size_t>(col)] =
          parse_label(fields.back(), line_no, "load_csv_data");
  }
  return out;
}

void save_csv_data(const std::string& path, const Matrix& x,
                   const std::vector<int>* labels, bool header) {
  if (x.size() == 0)
    throw std::invalid_argument("save_csv_data: empty matrix");
  if (labels != nullptr &&
      static_cast<Index>(labels->size()) != x.cols())
    throw std::invalid_argument(
        "save_csv_data: need exactly one label per sample column");

  std::string text;
  text.reserve(static_cast<std::size_t>(x.size()) * 20);
  char buf[32];
  if (header) {
    for (Index r = 0; r < x.rows(); ++r) {
      if (r > 0) text += ',';
      text += "x" + std::to_string(r);
    }
    if (labels != nullptr) text += ",label";
    text += '\n';
  }
  for (Index pcol = 0; pcol < x.cols(); ++pcol) {
    for (Index r = 0; r < x.rows(); ++r) {
      if (r > 0) text += ',';
      // 17 significant digits: enough for any double to parse back to the
      // identical bits.
      std::snprintf(buf, sizeof buf, "%.17g", x(r, pcol));
      text += buf;
    }
    if (labels != nullptr) {
      text += ',';
      text += std::to_string((*labels)[static_cast<std::size_t>(pcol)]);
    }
    text += '\n';
  }
  write_text_file(path, text, "save_csv_data");
}

namespace {

json report_to_json_doc(const RunReport& report) {
  json layers = json::array();
  for (const ReportLayer& l : report.layers) {
    layers.push_back(json{
        {"epsilon", l.epsilon},
        {"nnz_before", l.nnz_before},
        {"nnz_after", l.nnz_after},
        {"sparsity_before", l.sparsity_before},
        {"sparsity_after", l.sparsity_after},
        {"solver", json{{"iterations", l.solver_iterations},
                        {"converged", l.solver_converged},
                        {"objective", l.solver_objective},
                        {"quad_residual", l.quad_residual},
                        {"ineq_violation", l.ineq_violation}}}});
  }
  json rows = json::array();
  for (const ReportBoundRow& b : report.bounds)
    rows.push_back(json{{"measured", b.measured},
                        {"claimed", b.claimed},
                        {"margin", b.margin},
                        {"pass", b.pass}});
  return json{{"schema_version", report.schema_version},
              {"command", report.command},
              {"config", parse_json(report.config_json, "config_json",
                                    "run_report_to_json")},
              {"seed", report.seed},
              {"layers", layers},
              {"bounds", json{{"slack", report.bound_slack},
                              {"all_pass", report.bounds_all_pass},
                              {"rows", rows}}},
              {"relative_discrepancy", report.relative_discrepancy},
              {"all_converged", report.all_converged},
              {"wall_seconds", report.wall_seconds}};
}

}  // namespace

std::string run_report_to_json(const RunReport& report) {
  return report_to_json_doc(report).dump(2) + "\n";
}

RunReport run_report_from_json(const std::string& text) {
  const json doc = parse_json(text, "report", "run_report_from_json");
  const char* who = "run_report_from_json";
  RunReport out;
  out.schema_version = static_cast<int>(number_field(doc, "schema_version", who));
  if (!doc.contains("command") || !doc["command"].is_string())
    throw std::runtime_error("run_report_from_json: missing command string");
  out.command = doc["command"].get<std::string>();
  if (!doc.contains("config") || !doc["config"].is_object())
    throw std::runtime_error("run_report_from_json: missing config object");
  out.config_json = doc["config"].dump();
  out.seed = static_cast<unsigned long long>(number_field(doc, "seed", who));
  out.relative_discrepancy = number_field(doc, "relative_discrepancy", who);
  out.all_converged = doc.value("all_converged", false);
  out.wall_seconds = number_field(doc, "wall_seconds", who);

  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw std::runtime_error("run_report_from_json: missing layers array");
  for (const json& l : doc["layers"]) {
    ReportLayer row;
    row.epsilon = number_field(l, "epsilon", who);
    row.nnz_before = static_cast<Index>(number_field(l, "nnz_before", who));
    row.nnz_after = static_cast<Index>(number_field(l, "nnz_after", who));
    row.sparsity_before = number_field(l, "sparsity_before", who);
    row.sparsity_after = number_field(l, "sparsity_after", who);
    if (!l.contains("solver") || !l["solver"].is_object())
      throw std::runtime_error("run_report_from_json: layer lacks solver");
    const json& s = l["solver"];
    row.solver_iterations = static_cast<Index>(number_field(s, "iterations", who));
    row.solver_converged = s.value("converged", false);
    row.solver_objective = number_field(s, "objective", who);
    row.quad_residual = number_field(s, "quad_residual", who);
    row.ineq_violation = number_field(s, "ineq_violation", who);
    out.layers.push_back(row);
  }
  if (doc.contains("bounds")) {
    const json& b = doc["bounds"];
    out.bound_slack = number_field(b, "slack", who);
    out.bounds_all_pass = b.value("all_pass", false);
    if (b.contains("rows")) {
      for (const json& r : b["rows"]) {
        ReportBoundRow row;
        row.measured = number_field(r, "measured", who);
        row.claimed = number_field(r, "claimed", who);
        row.margin = number_field(r, "margin", who);
        row.pass = r.value("pass", false);
        out.bounds.push_back(row);
      }
    }
  }
  return out;
}

void save_run_report(const RunReport& report, const std::string& path) {
  write_text_file(path, run_report_to_json(report), "save_run_report");
}

RunReport load_run_report(const std::string& path) {
  return run_report_from_json(read_text_file(path, "load_run_report"));
}

namespace {

const char* json_type_name(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number_integer()) return "integer";
  if (v.is_number()) return "number";
  if (v.is_null()) return "null";
  return "unknown";
}

bool type_matches(const json& v, const std::string& want) {
  if (want == "object") return v.is_object();
  if (want == "array") return v.is_array();
  if (want == "string") return v.is_string();
  if (want == "boolean") return v.is_boolean();
  if (want == "integer") return v.is_number_integer();
  if (want == "number") return v.is_number();
  return false;
}

// Walks the document alongside the schema, collecting problems. Handles the
// keyword subset the shipped schema uses; anything else in the schema is
// ignored rather than guessed at.
void check_against_schema(const json& doc, const json& schema,
                          const std::string& path,
                          std::vector<std::string>& problems) {
  if (schema.contains("type")) {
    const std::string want = schema["type"].get<std::string>();
    if (!type_matches(doc, want)) {
      problems.push_back(path + ": expected " + want + ", got " +
                         json_type_name(doc));
      return;  // further keyword checks assume the right shape
    }
  }
  if (schema.contains("enum")) {
    bool hit = false;
    for (const json& v : schema["enum"])
      if (doc == v) hit = true;
    if (!hit)
      problems.push_back(path + ": value " + doc.dump() +
                         " is not one of the allowed values");
  }
  if (schema.contains("minimum") && doc.is_number()) {
    if (doc.get<double>() < schema["minimum"].get<double>())
      problems.push_back(path + ": value " + doc.dump() + " is below " +
                         schema["minimum"].dump());
  }
  if (doc.is_object() && schema.contains("required")) {
    for (const json& key : schema["required"])
      if (!doc.contains(key.get<std::string>()))
        problems.push_back(path + ": missing required member '" +
                           key.get<std::string>() + "'");
  }
  if (doc.is_object() && schema.contains("properties")) {
    for (const auto& [key, sub] : schema["properties"].items())
      if (doc.contains(key))
        check_against_schema(doc[key], sub, path + "." + key, problems);
  }
  if (doc.is_array() && schema.contains("items")) {
    Index i = 0;
    for (const json& el : doc) {
      check_against_schema(el, schema["items"],
                           path + "[" + std::to_string(i) + "]", problems);
      ++i;
    }
  }
}

}  // namespace

std::vector<std::string> validate_run_report_json(
    const std::string& report_text, const std::string& schema_path) {
  const json schema = parse_json(read_text_file(schema_path,
                                                "validate_run_report_json"),
                                 schema_path, "validate_run_report_json");
  std::vector<std::string> problems;
  json doc = json::parse(report_text, nullptr, false);
  if (doc.is_discarded()) {
    problems.push_back("$: report is not valid JSON");
    return problems;
  }
  check_against_schema(doc, schema, "$", problems);
  return problems;
}

}  // namespace relutrim
