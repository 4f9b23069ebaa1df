#pragma once

// Portable binary file formats shared across the pipeline. All multi-byte
// values are little-endian regardless of host; headers are single ASCII lines
// so files stay identifiable with `head -c`.
//
//   SOVSPL   v1  — pseudo/ground-truth label map + per-pixel confidence
//   SOVSEMB  v1  — dense embedding field (H=W=1 for a single text vector)
//   SOVSIMG  v1  — float image plane stack (scene cache)
//   SOVSCKPT v1  — flat model parameter snapshot

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sovs/core.hpp"

namespace sovs {

struct PlFile {
  LabelMap label;
  ConfMap confidence;
  int n_in = 0;
};

struct CkptFile {
  std::uint64_t config_hash = 0;
  std::vector<float> params;
};

void write_sovspl(const std::filesystem::path& path, const LabelMap& label,
                  const ConfMap& confidence, int n_in);
PlFile read_sovspl(const std::filesystem::path& path);

void write_sovsemb(const std::filesystem::path& path, const EmbeddingField& field);
EmbeddingField read_sovsemb(const std::filesystem::path& path);

void write_sovsimg(const std::filesystem::path& path, const Tensor3& img);
Tensor3 read_sovsimg(const std::filesystem::path& path);

void write_sovsckpt(const std::filesystem::path& path, std::uint64_t config_hash,
                    const std::vector<float>& params);
CkptFile read_sovsckpt(const std::filesystem::path& path);

// Whole-file convenience used by determinism checks and the CLI.
std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace sovs
