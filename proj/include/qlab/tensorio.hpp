// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Single-file tensor container.
//
//   "QLAB-PACKAGE <version>\n"
//   "<header byte length>\n"
//   <JSON header>            tensors: name, dtype, shape, offset, length
//   <zero padding to a 64-byte boundary>
//   <payload>                each tensor starts 64-byte aligned; offsets are
//                            relative to the payload start
//
// Payload bytes are little-endian. int4packed stores ceil(numel / 2) bytes,
// element 2i in the low nibble of byte i.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qlab/error.hpp"
#include "qlab/matrix.hpp"
#include "qlab/numerics.hpp"
#include "qlab/recipe.hpp"

namespace qlab {

enum class DType { fp32, bf16, fp16, fp8e4m3, int4packed };

std::string_view to_string(DType d);
/// Throws IoError(unknown_dtype).
DType parse_dtype(std::string_view s);

/// Payload bytes needed for `numel` elements.
std::size_t payload_bytes(DType d, std::size_t numel);

struct Tensor {
  std::string name;
  DType dtype = DType::fp32;
  std::vector<std::size_t> shape;
  std::vector<std::uint8_t> payload;

  std::size_t numel() const;
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

Tensor make_fp32(std::string name, std::vector<std::size_t> shape, std::span<const double> values);
Tensor make_fp32(std::string name, const RealMatrix& m);
Tensor make_bf16(std::string name, std::vector<std::size_t> shape, std::span<const Bf16> values);
Tensor make_fp16(std::string name, std::vector<std::size_t> shape, std::span<const Fp16> values);
Tensor make_fp8(std::string name, std::vector<std::size_t> shape, std::span<const Fp8E4M3> values);
Tensor make_int4(std::string name, std::vector<std::size_t> shape,
                 std::span<const std::int8_t> codes);

/// Element values as doubles (INT4 codes as integers).
std::vector<double> decode_values(const Tensor& t);
std::vector<std::int8_t> decode_int4(const Tensor& t);
std::vector<std::uint16_t> decode_u16(const Tensor& t);  // raw bf16/fp16 patterns
RealMatrix to_matrix(const Tensor& t);

struct Package {
  std::vector<Tensor> tensors;
  std::vector<BlockRecipe> recipes;
  nlohmann::json metadata = nlohmann::json::object();

  bool contains(std::string_view name) const;
  const Tensor& at(std::string_view name) const;
  void add(Tensor t);  // replaces a tensor of the same name
  friend bool operator==(const Package&, const Package&) = default;
};

inline constexpr int kPackageVersion = 1;
inline constexpr std::size_t kPayloadAlignment = 64;

enum class IoErrorCode {
  malformed_header,
  overlapping_regions,
  truncated_payload,
  unknown_dtype,
  version_mismatch,
  io_failure,
};

std::string_view to_string(IoErrorCode c);

class IoError : public DataError {
 public:
  IoError(IoErrorCode code, const std::string& what);
  IoErrorCode code() const noexcept { return code_; }

 private:
  IoErrorCode code_;
};

std::vector<std::uint8_t> serialize_package(const Package& p);
Package deserialize_package(std::span<const std::uint8_t> bytes);

void write_package(const Package& p, const std::filesystem::path& path);
Package read_package(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace qlab
