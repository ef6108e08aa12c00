#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "segfuse/bundle.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse {

// ---------------------------------------------------------------------------
// Tensor files
//
//   offset  size  field
//   0       8     magic "SGFTENS\0"
//   8       4     height    (u32, little endian)
//   12      4     width     (u32, little endian)
//   16      4     channels  (u32, little endian)
//   20      4     reserved  (u32, must be 0)
//   24      4*N   float32 values, little endian, row-major, channel-minor
//
// Values are held as double in memory and rounded to float32 on save.
// ---------------------------------------------------------------------------

inline constexpr std::array<char, 8> kTensorMagic = {'S', 'G', 'F', 'T', 'E', 'N', 'S', '\0'};
inline constexpr std::size_t kTensorHeaderBytes = 24;

struct TensorHeader {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
};

std::vector<std::uint8_t> encode_tensor(const LogitMap& map);
std::vector<std::uint8_t> encode_tensor(const AttentionMap& map);
/// Throws FormatError on bad magic, nonzero reserved word, truncated or
/// oversized payload, or a non-finite value.
LogitMap decode_logits(std::span<const std::uint8_t> bytes);
/// As decode_logits, and additionally requires one channel with values in [0, 1].
AttentionMap decode_attention(std::span<const std::uint8_t> bytes);
TensorHeader decode_tensor_header(std::span<const std::uint8_t> bytes);

void save_tensor(const std::filesystem::path& path, const LogitMap& map);
void save_tensor(const std::filesystem::path& path, const AttentionMap& map);
LogitMap load_logits(const std::filesystem::path& path);
AttentionMap load_attention(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifests (JSON, schema documented in README.md)
// ---------------------------------------------------------------------------

inline constexpr const char* kManifestFormat = "segfuse-manifest";
inline constexpr int kManifestVersion = 1;

/// Parses and fully validates a manifest; tensor paths resolve against
/// `base_dir`. Every failure names the offending record, e.g.
/// "instances[3].rle: ...".
PredictionBundle bundle_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
PredictionBundle load_manifest(const std::filesystem::path& path);

nlohmann::json bundle_to_json(const PredictionBundle& bundle);
/// Writes the manifest document and every tensor it references (relative to
/// the manifest's directory).
void save_manifest(const PredictionBundle& bundle, const std::filesystem::path& path);

nlohmann::json instance_to_json(const MaskInstance& inst, bool ground_truth);

// ---------------------------------------------------------------------------
// Overlays and text output
// ---------------------------------------------------------------------------

/// RGB per label: 0 background, 1 shell, 2 meat, 3 gonad, 4 muscle.
inline constexpr std::array<std::array<std::uint8_t, 3>, 5> kOverlayPalette = {{
    {0, 0, 0},
    {170, 170, 170},
    {240, 160, 120},
    {250, 220, 60},
    {200, 40, 40},
}};

/// Binary P6 PPM ("P6\n<w> <h>\n255\n" + RGB triplets). Throws DataError on a
/// label outside [0, 4].
std::vector<std::uint8_t> encode_overlay(const LabelGrid& labels);
void write_overlay(const LabelGrid& labels, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
/// Pretty-printed with two-space indentation and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

}  // namespace segfuse
