#include "datt/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <system_error>
#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>

namespace datt {

namespace {

const char* kind_label(CsvError::Kind k) {
  switch (k) {
    case CsvError::Kind::kMissingFile: return "missing file";
    case CsvError::Kind::kBadHeader: return "bad header";
    case CsvError::Kind::kBadCell: return "malformed cell";
    case CsvError::Kind::kBadRow: return "malformed row";
    case CsvError::Kind::kInvariant: return "invariant violation";
  }
  return "error";
}

std::string location(std::size_t row, std::size_t column) {
  std::string s;
  if (row) s += "row " + std::to_string(row);
  if (column) s += (s.empty() ? "" : ", ") + std::string("column ") + std::to_string(column);
  return s.empty() ? s : s + ": ";
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

double parse_cell(std::string_view cell, std::size_t row, std::size_t column, std::string_view name) {
  if (cell.empty()) {
    throw CsvError(CsvError::Kind::kBadCell, row, column, "empty value for " + std::string(name));
  }
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;  // from_chars rejects a leading plus
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw CsvError(CsvError::Kind::kBadCell, row, column,
                   "'" + std::string(cell) + "' is not a finite number for " + std::string(name));
  }
  return v;
}

// Little-endian helpers.
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> (8 * i) & 0xFF));
}

std::uint64_t get_u64(std::string_view bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(bits >> (8 * i) & 0xFF));
}

double get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

nlohmann::json rows_json(const Tensor& t) {
  nlohmann::json rows = nlohmann::json::array();
  if (t.empty()) return rows;
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto row = t.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Tensor rows_tensor(const nlohmann::json& j, std::size_t cols, const char* what) {
  if (!j.is_array()) throw FormatError(std::string(what) + " must be an array of rows");
  if (j.empty()) return Tensor();
  Tensor t(Shape{j.size(), cols});
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = j[r].get<std::vector<double>>();
    if (row.size() != cols) throw FormatError(std::string(what) + ": row " + std::to_string(r) + " has wrong width");
    std::copy(row.begin(), row.end(), t.row(r).begin());
  }
  return t;
}

}  // namespace

CsvError::CsvError(Kind kind, std::size_t row, std::size_t column, const std::string& message)
    : DataError(std::string(kind_label(kind)) + ": " + location(row, column) + message),
      kind_(kind),
      row_(row),
      column_(column) {}

std::vector<SoilSample> parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(start, nl - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = nl + 1;
  }
  if (lines.empty()) throw CsvError(CsvError::Kind::kBadHeader, 1, 0, "file is empty");

  const std::vector<std::string_view> header = split_fields(lines[0]);
  if (header.size() < kSoilFeatures || header.size() > kSoilFeatures + 1) {
    throw CsvError(CsvError::Kind::kBadHeader, 1, 0,
                   "expected 6 or 7 columns, got " + std::to_string(header.size()));
  }
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string_view want = c < kSoilFeatures ? kFeatureNames[c] : kTargetName;
    if (header[c] != want) {
      throw CsvError(CsvError::Kind::kBadHeader, 1, c + 1,
                     "expected '" + std::string(want) + "', got '" + std::string(header[c]) + "'");
    }
  }
  const bool with_target = header.size() == kSoilFeatures + 1;

  std::vector<SoilSample> samples;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t row = i + 1;
    if (lines[i].empty()) {
      throw CsvError(CsvError::Kind::kBadRow, row, 0, "blank line");
    }
    const std::vector<std::string_view> cells = split_fields(lines[i]);
    if (cells.size() != header.size()) {
      throw CsvError(CsvError::Kind::kBadRow, row, 0,
                     "expected " + std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    }
    std::array<double, kSoilFeatures> f{};
    for (std::size_t c = 0; c < kSoilFeatures; ++c) f[c] = parse_cell(cells[c], row, c + 1, kFeatureNames[c]);
    SoilSample s = SoilSample::from_features(f);
    if (with_target) s.resistivity = parse_cell(cells[kSoilFeatures], row, kSoilFeatures + 1, kTargetName);
    if (const auto bad = check_invariants(s)) {
      std::size_t column = 0;
      for (std::size_t c = 0; c < header.size(); ++c) {
        if (header[c] == bad->field) column = c + 1;
      }
      throw CsvError(CsvError::Kind::kInvariant, row, column, bad->field + ": " + bad->message);
    }
    samples.push_back(s);
  }
  return samples;
}

std::vector<SoilSample> load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(CsvError::Kind::kMissingFile, 0, 0, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str());
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("format_number failed");
  return std::string(buf, ptr);
}

std::string format_csv(const std::vector<SoilSample>& samples) {
  bool with_target = !samples.empty();
  for (const SoilSample& s : samples) with_target = with_target && s.resistivity.has_value();
  std::string out;
  for (std::size_t c = 0; c < kSoilFeatures; ++c) {
    if (c) out += ',';
    out += kFeatureNames[c];
  }
  if (with_target) out += "," + std::string(kTargetName);
  out += '\n';
  for (const SoilSample& s : samples) {
    const auto f = s.features();
    for (std::size_t c = 0; c < kSoilFeatures; ++c) {
      if (c) out += ',';
      out += format_number(f[c]);
    }
    if (with_target) out += "," + format_number(*s.resistivity);
    out += '\n';
  }
  return out;
}

void write_csv(const std::string& path, const std::vector<SoilSample>& samples) {
  write_file_atomic(path, format_csv(samples));
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw DataError("write to '" + tmp + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw DataError("cannot move '" + tmp + "' into place at '" + path + "'");
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string fingerprint(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string serialize_model(const TrainedModel& model) {
  const ParamStore& params = model.params();
  nlohmann::json directory = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    directory.push_back({{"name", params.name(i)}, {"shape", params.tensor(i).shape()}, {"offset", offset}});
    offset += params.tensor(i).size() * 4;
  }
  const FeatureTransform& ft = model.feature_transform();
  const nlohmann::json header{
      {"format", "DATT"},
      {"version", 1},
      {"config", model.config()},
      {"preprocessing",
       {{"lambdas", ft.lambdas},
        {"post_means", ft.post_means},
        {"post_stds", ft.post_stds},
        {"target_mean", model.target_transform().mean},
        {"target_std", model.target_transform().std}}},
      {"tensors", directory},
      {"payload_bytes", offset},
      {"context_rows", rows_json(model.context_rows())},
      {"background_rows", rows_json(model.background_rows())},
      {"metadata", model.metadata()}};
  const std::string text = header.dump();
  std::string out;
  out.reserve(5 + 8 + text.size() + offset);
  out += kModelMagic;
  out += kModelVersion;
  put_u64(out, text.size());
  out += text;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double v : params.tensor(i).values()) put_f32(out, v);
  }
  return out;
}

TrainedModel deserialize_model(std::string_view bytes) {
  if (bytes.size() < 5 || bytes.substr(0, 4) != kModelMagic) throw FormatError("not a DATT model file (bad magic)");
  if (bytes[4] != kModelVersion) {
    throw FormatError("unsupported model file version '" + std::string(1, bytes[4]) + "', expected '1'");
  }
  if (bytes.size() < 13) throw FormatError("truncated header: file ends before header length");
  const std::uint64_t header_len = get_u64(bytes.substr(5, 8));
  if (header_len > bytes.size() - 13) {
    throw FormatError("truncated header: declares " + std::to_string(header_len) + " bytes, " +
                      std::to_string(bytes.size() - 13) + " present");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(13, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt header: ") + e.what());
  }
  const std::string_view payload = bytes.substr(13 + header_len);
  try {
    if (header.at("version").get<int>() != 1) throw FormatError("header version mismatch");
    const ModelConfig config = header.at("config").get<ModelConfig>();
    config.validate();
    const std::size_t expected = header.at("payload_bytes").get<std::size_t>();
    if (payload.size() < expected) {
      throw FormatError("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                        std::to_string(payload.size()));
    }
    if (payload.size() > expected) {
      throw FormatError("trailing bytes after payload: expected " + std::to_string(expected) + ", got " +
                        std::to_string(payload.size()));
    }
    const auto layout = param_layout(config);
    const nlohmann::json& dir = header.at("tensors");
    if (dir.size() != layout.size()) {
      throw FormatError("tensor directory lists " + std::to_string(dir.size()) + " tensors, config needs " +
                        std::to_string(layout.size()));
    }
    ParamStore params;
    std::size_t offset = 0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const std::string name = dir[i].at("name").get<std::string>();
      const Shape shape = dir[i].at("shape").get<Shape>();
      const std::size_t off = dir[i].at("offset").get<std::size_t>();
      if (name != layout[i].first) {
        throw FormatError("tensor " + std::to_string(i) + " is '" + name + "', expected '" + layout[i].first + "'");
      }
      if (shape != layout[i].second) {
        throw FormatError("tensor '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                          shape_string(layout[i].second));
      }
      if (off != offset) throw FormatError("tensor '" + name + "' has inconsistent offset");
      Tensor t(shape);
      for (std::size_t j = 0; j < t.size(); ++j) t[j] = get_f32(payload.data() + offset + 4 * j);
      if (!t.all_finite()) throw FormatError("tensor '" + name + "' holds non-finite values");
      offset += t.size() * 4;
      params.add(name, std::move(t));
    }
    if (offset != expected) throw FormatError("payload size disagrees with tensor directory");

    const nlohmann::json& pre = header.at("preprocessing");
    FeatureTransform ft;
    ft.lambdas = pre.at("lambdas").get<std::vector<double>>();
    ft.post_means = pre.at("post_means").get<std::vector<double>>();
    ft.post_stds = pre.at("post_stds").get<std::vector<double>>();
    TargetTransform tt;
    tt.mean = pre.at("target_mean").get<double>();
    tt.std = pre.at("target_std").get<double>();
    const std::size_t nf = static_cast<std::size_t>(config.n_features);
    Tensor context = rows_tensor(header.at("context_rows"), nf, "context_rows");
    Tensor background = rows_tensor(header.at("background_rows"), nf, "background_rows");
    return TrainedModel(config, std::move(params), std::move(ft), tt, std::move(context),
                        std::move(background), header.value("metadata", nlohmann::json::object()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("corrupt header: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("inconsistent model file: ") + e.what());
  }
}

void save_model(const std::string& path, const TrainedModel& model) {
  write_file_atomic(path, serialize_model(model));
}

TrainedModel load_model(const std::string& path) { return deserialize_model(read_file(path)); }

}  // namespace datt
