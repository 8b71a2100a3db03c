#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "datt/dataset.hpp"
#include "datt/errors.hpp"
#include "datt/pipeline.hpp"

namespace datt {

// CSV ingestion failure. row and column are 1-based; 0 when not applicable.
class CsvError : public DataError {
 public:
  enum class Kind { kMissingFile, kBadHeader, kBadCell, kBadRow, kInvariant };

  CsvError(Kind kind, std::size_t row, std::size_t column, const std::string& message);

  Kind kind() const noexcept { return kind_; }
  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  Kind kind_;
  std::size_t row_;
  std::size_t column_;
};

// Header must be exactly pd_g_cm3,w_pct,F200_pct,Gs,LL_pct,PL_pct with an
// optional trailing resistivity_ohm_m. Rows are strictly parsed; the header
// is row 1.
std::vector<SoilSample> parse_csv(std::string_view text);
std::vector<SoilSample> load_csv(const std::string& path);

// Canonical form: fixed header, shortest round-trip numbers, '\n' endings.
// The target column is written when every sample carries one.
std::string format_csv(const std::vector<SoilSample>& samples);
void write_csv(const std::string& path, const std::vector<SoilSample>& samples);

// Shortest decimal text that parses back to exactly v.
std::string format_number(double v);

// Model file: "DATT1", u64 LE header length, JSON header, float32 LE payload.
inline constexpr std::string_view kModelMagic = "DATT";
inline constexpr char kModelVersion = '1';

std::string serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::string_view bytes);

// Written to a temporary file first and renamed into place.
void save_model(const std::string& path, const TrainedModel& model);
TrainedModel load_model(const std::string& path);

// Writes text to path atomically (temp file + rename).
void write_file_atomic(const std::string& path, std::string_view contents);
std::string read_file(const std::string& path);

// 64-bit FNV-1a of the bytes as 16 lowercase hex digits.
std::string fingerprint(std::string_view bytes);

}  // namespace datt
