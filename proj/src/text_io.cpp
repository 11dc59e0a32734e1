#include "gzeb/text_io.hpp"

#include <fstream>

#include "gzeb/error.hpp"
#include "gzeb/image_io.hpp"

namespace gzeb {

std::vector<TextRow> read_text_rows(const std::filesystem::path& path, char sep) {
  const auto bytes = read_file_bytes(path);
  std::vector<TextRow> rows;
  std::size_t pos = 0, line = 0;
  while (pos < bytes.size()) {
    const std::size_t start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    std::string text(reinterpret_cast<const char*>(bytes.data() + start), pos - start);
    if (pos < bytes.size()) ++pos;
    ++line;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty()) continue;
    TextRow row{start, line, {}};
    std::size_t from = 0;
    for (;;) {
      const std::size_t at = text.find(sep, from);
      row.cells.push_back(text.substr(from, at == std::string::npos ? std::string::npos : at - from));
      if (at == std::string::npos) break;
      from = at + 1;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

}  // namespace gzeb
