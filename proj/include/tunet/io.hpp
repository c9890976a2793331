#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "tunet/data.hpp"
#include "tunet/model.hpp"
#include "tunet/tensor.hpp"

// Binary layouts, all little-endian:
//
//   TensorFile  "TNSR" | u16 version=1 | u8 dtype (1=f32, 2=f64) | u8 ndim |
//               ndim x u32 dims | row-major payload
//
//   Checkpoint  "TUCK" | u16 version=1 | u32 entry count |
//               entries: u16 name length | UTF-8 name | body |
//               u32 CRC32 of every preceding byte
//
// The first checkpoint entry is "__config__" whose body is u32 length + UTF-8
// JSON of the ModelConfig; every other body is a complete TensorFile.

namespace tunet {

enum class DType : std::uint8_t { Float32 = 1, Float64 = 2 };

template <typename Scalar>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Float32; }
template <>
constexpr DType dtype_of<double>() { return DType::Float64; }

inline constexpr std::uint16_t kTensorFileVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::string_view kConfigEntry = "__config__";

template <typename Scalar>
std::string encode_tensor(const Tensor<Scalar>& t);

struct DecodedHeader {
    DType dtype;
    Shape shape;
    std::size_t header_bytes;
    std::size_t total_bytes;
};

/// Parses and validates a TensorFile header starting at `bytes[0]`. `base` is
/// added to reported error offsets when the tensor is embedded in a larger file.
DecodedHeader decode_tensor_header(std::string_view bytes, std::uint64_t base = 0);

/// Decodes a TensorFile, converting to Scalar if the stored dtype differs. When
/// `allow_trailing` is false extra bytes after the payload are an error.
template <typename Scalar>
Tensor<Scalar> decode_tensor(std::string_view bytes, std::uint64_t base = 0,
                             std::size_t* consumed = nullptr, bool allow_trailing = false);

template <typename Scalar>
void save_tensor(const std::filesystem::path& path, const Tensor<Scalar>& t);

template <typename Scalar>
Tensor<Scalar> load_tensor(const std::filesystem::path& path);

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const TUnetParams<Scalar>& params,
                     const ModelConfig& config);

template <typename Scalar>
struct Checkpoint {
    ModelConfig config;
    TUnetParams<Scalar> params;
};

/// Loads with the config stored in the file.
template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::filesystem::path& path);

/// Loads and requires the stored config to equal `expected` (SchemaError otherwise).
template <typename Scalar>
TUnetParams<Scalar> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

/// Writes img_%04d.tnsr / msk_%04d.tnsr pairs.
template <typename Scalar>
void save_dataset_dir(const std::filesystem::path& dir, const std::vector<Sample<Scalar>>& samples);

/// Reads consecutive img_/msk_ pairs starting at index 0. With `apply_normalize`
/// images are divided by 1024 on load (raw CT slices).
template <typename Scalar>
std::vector<Sample<Scalar>> load_dataset_dir(const std::filesystem::path& dir, bool apply_normalize);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tunet
