#include "cyclecap/export.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace cyclecap {

GridGeometry parse_geometry(const std::string& text) {
  GridGeometry g;
  char x = 0;
  std::istringstream in(text);
  if (!(in >> g.rows >> x >> g.cols) || x != 'x' || g.rows < 1 || g.cols < 1)
    throw ConfigError("grid geometry must look like ROWSxCOLS, got '" + text + "'");
  return g;
}

std::vector<std::uint8_t> attention_pgm(const Vector& row, GridGeometry geometry, int cell_px) {
  if (geometry.rows * geometry.cols != row.size())
    throw InputError("grid " + std::to_string(geometry.rows) + "x" + std::to_string(geometry.cols) +
                     " does not cover " + std::to_string(row.size()) + " regions");
  if (cell_px < 1) throw ConfigError("cell size must be >= 1 pixel");
  const int width = geometry.cols * cell_px, height = geometry.rows * cell_px;
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double w = row((y / cell_px) * geometry.cols + x / cell_px);
      out.push_back(static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(w, 0.0, 1.0))));
    }
  return out;
}

namespace {

void dump_matrix(std::string& out, const char* name, const Matrix& m) {
  char buf[64];
  out += std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, c ? " %.17g" : "%.17g", m(r, c));
      out += buf;
    }
    out += "\n";
  }
}

Matrix read_matrix(std::istream& in, const std::string& expected) {
  std::string name;
  Eigen::Index rows = 0, cols = 0;
  if (!(in >> name >> rows >> cols) || name != expected || rows < 0 || cols < 0)
    throw FormatError("attention dump: expected '" + expected + " ROWS COLS'");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::string tok;
    if (!(in >> tok)) throw FormatError("attention dump: " + expected + " truncated");
    char* end = nullptr;
    m.data()[i] = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw FormatError("attention dump: bad number '" + tok + "'");
  }
  return m;
}

Words read_tokens(std::istream& in, const std::string& expected) {
  std::string name;
  std::size_t n = 0;
  if (!(in >> name >> n) || name != expected) throw FormatError("attention dump: expected '" + expected + " COUNT'");
  Words w(n);
  for (auto& t : w)
    if (!(in >> t)) throw FormatError("attention dump: token list truncated");
  return w;
}

std::string token_line(const char* name, const Words& w) {
  std::string out = std::string(name) + " " + std::to_string(w.size());
  for (const auto& t : w) out += " " + t;
  return out + "\n";
}

}  // namespace

std::string dump_attention(const AttentionRecord& rec, const Words& en_tokens, const Words& de_tokens) {
  std::string out = "# cyclecap attention record v1\n";
  out += token_line("en", en_tokens);
  out += token_line("de", de_tokens);
  dump_matrix(out, "A_en", rec.a_en);
  dump_matrix(out, "A_de", rec.a_de);
  dump_matrix(out, "B", rec.b);
  return out;
}

AttentionDump parse_attention_dump(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  std::getline(in, header);
  if (header != "# cyclecap attention record v1") throw FormatError("attention dump: bad header");
  AttentionDump d;
  d.en_tokens = read_tokens(in, "en");
  d.de_tokens = read_tokens(in, "de");
  d.record.a_en = read_matrix(in, "A_en");
  d.record.a_de = read_matrix(in, "A_de");
  d.record.b = read_matrix(in, "B");
  return d;
}

void export_attention(const AttentionRecord& rec, const Words& en_tokens, const Words& de_tokens,
                      GridGeometry geometry, const std::filesystem::path& dir, int cell_px) {
  if (static_cast<Eigen::Index>(de_tokens.size()) != rec.a_de.rows())
    throw InputError("export: " + std::to_string(de_tokens.size()) + " German tokens vs " +
                     std::to_string(rec.a_de.rows()) + " attention rows");
  if (rec.a_en.size() != 0 && static_cast<Eigen::Index>(en_tokens.size()) != rec.a_en.rows())
    throw InputError("export: " + std::to_string(en_tokens.size()) + " English tokens vs " +
                     std::to_string(rec.a_en.rows()) + " attention rows");
  if (geometry.rows * geometry.cols != rec.a_de.cols())
    throw InputError("export: grid " + std::to_string(geometry.rows) + "x" + std::to_string(geometry.cols) +
                     " does not cover L = " + std::to_string(rec.a_de.cols()));
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "attention.txt", std::ios::binary);
    if (!out) throw IoError("cannot write '" + (dir / "attention.txt").string() + "'");
    out << dump_attention(rec, en_tokens, de_tokens);
  }
  for (Eigen::Index m = 0; m < rec.a_de.rows(); ++m) {
    char name[64];
    std::snprintf(name, sizeof name, "de_%02ld_", static_cast<long>(m));
    std::string token;
    for (char c : de_tokens[static_cast<std::size_t>(m)])
      token += std::isalnum(static_cast<unsigned char>(c)) ? c : '_';
    const auto bytes = attention_pgm(rec.a_de.row(m).transpose(), geometry, cell_px);
    std::ofstream out(dir / (name + token + ".pgm"), std::ios::binary);
    if (!out) throw IoError("cannot write heatmap into '" + dir.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

}  // namespace cyclecap
