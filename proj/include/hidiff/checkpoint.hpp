#pragma once

#include "hidiff/params.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace hidiff {

inline constexpr char kCheckpointMagic[8] = {'H', 'I', 'D', 'I', 'F', 'F', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
    std::string name;
    std::variant<Tensor<float>, Tensor<double>> value;
};

// Layout (little-endian):
//   magic[8] u32 version u32 stage u64 step
//   str config  str rng  u32 n_meta {str key, str value}
//   u64 n_records {str name, u8 dtype (0 f32, 1 f64), u32 ndim, i64 dims[ndim], raw data}
// where str is u64 length + bytes.
struct Checkpoint {
    uint32_t stage = 1;
    uint64_t step = 0;
    std::string config;
    std::string rng_state;
    std::map<std::string, std::string> meta;
    std::vector<TensorRecord> records;

    const TensorRecord* find(const std::string& name) const;
    // Appends every parameter as "param/<name>".
    template <std::floating_point T>
    void add_params(const ParamStore<T>& store);
    // Copies "param/<name>" records whose name starts with `prefix` into the
    // store. Missing or mis-shaped tensors are errors. Returns the count.
    template <std::floating_point T>
    size_t load_params(ParamStore<T>& store, const std::string& prefix = "") const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string serialize(const Checkpoint& ck);
Checkpoint deserialize(const std::string& bytes);

}  // namespace hidiff
