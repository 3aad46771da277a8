#pragma once

#include "lac/autodiff/param_set.hpp"
#include "lac/autodiff/tensor.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace lac {

// Flat binary container, little-endian:
//
//   "LATCKPT1"
//   u32 metadata count, then per entry: str key, str value
//   u32 tensor count,   then per entry: str name, u64 rows, u64 cols, rows*cols f64 (row-major)
//
// where str is a u32 byte length followed by the bytes. Keys and tensor
// names are unique; tensors keep insertion order.
struct Checkpoint {
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Matrix>> tensors;

    void put(const std::string& name, Matrix m);
    [[nodiscard]] bool has(const std::string& name) const;
    [[nodiscard]] const Matrix& get(const std::string& name) const;

    [[nodiscard]] const std::string& meta_at(const std::string& key) const;

    // Every entry of p stored as prefix + name.
    void put_params(const std::string& prefix, const ParamSet& p);
    // Entries whose names start with prefix, prefix stripped, stored order.
    [[nodiscard]] ParamSet params(const std::string& prefix) const;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline constexpr char kCheckpointMagic[9] = "LATCKPT1";

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(const std::string& bytes);

// Written to a sibling temporary file and renamed into place, so a reader
// never sees a partial file.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace lac
