#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace gzeb {

/// One non-empty line of a delimited text file.
struct TextRow {
  std::size_t offset = 0;  // byte offset of the line start
  std::size_t line = 0;    // 1-based
  std::vector<std::string> cells;
};

/// Splits a file into rows of `sep`-separated cells. Blank lines are skipped,
/// a trailing '\r' is dropped. A missing file is a DataError.
std::vector<TextRow> read_text_rows(const std::filesystem::path& path, char sep);

/// Replaces the file's content.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace gzeb
