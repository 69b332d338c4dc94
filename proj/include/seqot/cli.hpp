#pragma once

#include <cstdint>
#include <string>

namespace seqot::cli {

inline constexpr const char* kToolName = "seqot";
inline constexpr const char* kToolVersion = "0.1.0";

// Every command drops exactly one of these into its output directory. The
// corpus format's own manifest.json is data, not a run manifest.
inline constexpr const char* kManifestFile = "run_manifest.json";

// FNV-1a over the raw bytes, rendered "fnv1a64:" + 16 hex digits.
std::string checksum_file(const std::string& path);

// Folds filename and contents of every regular file directly in the
// directory, sorted by name and skipping the run manifest, so equal trees
// hash equal regardless of creation order.
std::string checksum_dir(const std::string& directory);

// Full command dispatcher. Returns 0 on success, 1 on usage errors
// (unknown flags, missing required options, out-of-range values), 2 when a
// command body fails at runtime.
int run_cli(int argc, const char* const* argv);

}  // namespace seqot::cli
