#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cyclecap/cycle.hpp"
#include "cyclecap/data.hpp"

namespace cyclecap {

// Region layout of the feature grid; rows * cols must equal L.
struct GridGeometry {
  int rows = 4;
  int cols = 4;
};

GridGeometry parse_geometry(const std::string& text);  // "4x4"

// Binary PGM (P5, maxval 255) of one attention row reshaped row-major onto
// the grid; each region becomes a cell_px x cell_px block of gray
// round(255 * weight).
std::vector<std::uint8_t> attention_pgm(const Vector& row, GridGeometry geometry, int cell_px = 8);

// Text dump: header, token lines, then A_en, A_de and B with %.17g entries,
// which parse back to the same doubles.
std::string dump_attention(const AttentionRecord& rec, const Words& en_tokens, const Words& de_tokens);

struct AttentionDump {
  AttentionRecord record;
  Words en_tokens;
  Words de_tokens;
};
AttentionDump parse_attention_dump(const std::string& text);

// Writes attention.txt plus de_<m>_<token>.pgm per German token into dir.
// Token lists must match the record (N English, M German entries).
void export_attention(const AttentionRecord& rec, const Words& en_tokens, const Words& de_tokens,
                      GridGeometry geometry, const std::filesystem::path& dir, int cell_px = 8);

}  // namespace cyclecap
