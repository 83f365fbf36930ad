// Copyright 2026 The qlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "qlab/tensorio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <fstream>
#include <functional>
#include <numeric>

namespace qlab {
namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "QLAB-PACKAGE";

std::size_t align_up(std::size_t n) {
  return (n + kPayloadAlignment - 1) / kPayloadAlignment * kPayloadAlignment;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor blank(std::string name, DType d, std::vector<std::size_t> shape, std::size_t n) {
  if (shape_numel(shape) != n) {
    throw ShapeError("tensor '" + name + "': shape does not match " + std::to_string(n) +
                     " values");
  }
  Tensor t{std::move(name), d, std::move(shape), {}};
  t.payload.reserve(payload_bytes(d, n));
  return t;
}

// Parses "<decimal>\n" at `pos`; advances pos past the newline.
std::size_t parse_line_number(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  const auto* begin = reinterpret_cast<const char*>(bytes.data()) + pos;
  const auto* end = reinterpret_cast<const char*>(bytes.data()) + bytes.size();
  const auto* nl = std::find(begin, end, '\n');
  if (nl == end || nl == begin) throw IoError(IoErrorCode::malformed_header, "missing length line");
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(begin, nl, value);
  if (ec != std::errc() || ptr != nl) {
    throw IoError(IoErrorCode::malformed_header, "bad number in preamble");
  }
  pos += static_cast<std::size_t>(nl - begin) + 1;
  return value;
}

}  // namespace

std::string_view to_string(DType d) {
  switch (d) {
    case DType::fp32: return "fp32";
    case DType::bf16: return "bf16";
    case DType::fp16: return "fp16";
    case DType::fp8e4m3: return "fp8e4m3";
    case DType::int4packed: return "int4packed";
  }
  return "?";
}

DType parse_dtype(std::string_view s) {
  for (DType d : {DType::fp32, DType::bf16, DType::fp16, DType::fp8e4m3, DType::int4packed}) {
    if (s == to_string(d)) return d;
  }
  throw IoError(IoErrorCode::unknown_dtype, "unknown dtype '" + std::string(s) + "'");
}

std::size_t payload_bytes(DType d, std::size_t numel) {
  switch (d) {
    case DType::fp32: return 4 * numel;
    case DType::bf16:
    case DType::fp16: return 2 * numel;
    case DType::fp8e4m3: return numel;
    case DType::int4packed: return (numel + 1) / 2;
  }
  return 0;
}

std::size_t Tensor::numel() const { return shape_numel(shape); }

Tensor make_fp32(std::string name, std::vector<std::size_t> shape, std::span<const double> values) {
  Tensor t = blank(std::move(name), DType::fp32, std::move(shape), values.size());
  for (double v : values) put_u32(t.payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return t;
}

Tensor make_fp32(std::string name, const RealMatrix& m) {
  return make_fp32(std::move(name), {m.rows(), m.cols()}, m.flat());
}

Tensor make_bf16(std::string name, std::vector<std::size_t> shape, std::span<const Bf16> values) {
  Tensor t = blank(std::move(name), DType::bf16, std::move(shape), values.size());
  for (Bf16 v : values) put_u16(t.payload, v.bits());
  return t;
}

Tensor make_fp16(std::string name, std::vector<std::size_t> shape, std::span<const Fp16> values) {
  Tensor t = blank(std::move(name), DType::fp16, std::move(shape), values.size());
  for (Fp16 v : values) put_u16(t.payload, v.bits());
  return t;
}

Tensor make_fp8(std::string name, std::vector<std::size_t> shape, std::span<const Fp8E4M3> values) {
  Tensor t = blank(std::move(name), DType::fp8e4m3, std::move(shape), values.size());
  for (Fp8E4M3 v : values) t.payload.push_back(v.bits());
  return t;
}

Tensor make_int4(std::string name, std::vector<std::size_t> shape,
                 std::span<const std::int8_t> codes) {
  Tensor t = blank(std::move(name), DType::int4packed, std::move(shape), codes.size());
  for (std::int8_t c : codes) {
    if (c < kInt4Min || c > kInt4Max) throw DataError("make_int4: code out of range");
  }
  t.payload = pack_int4(codes);
  return t;
}

std::vector<std::uint16_t> decode_u16(const Tensor& t) {
  if (t.dtype != DType::bf16 && t.dtype != DType::fp16) {
    throw DataError("decode_u16: tensor '" + t.name + "' is not 16-bit");
  }
  std::vector<std::uint16_t> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint16_t>(t.payload[2 * i] | (t.payload[2 * i + 1] << 8));
  }
  return out;
}

std::vector<std::int8_t> decode_int4(const Tensor& t) {
  if (t.dtype != DType::int4packed) throw DataError("decode_int4: tensor '" + t.name + "' is not int4");
  return unpack_int4(t.payload, t.numel());
}

std::vector<double> decode_values(const Tensor& t) {
  const std::size_t n = t.numel();
  if (t.payload.size() != payload_bytes(t.dtype, n)) {
    throw IoError(IoErrorCode::truncated_payload, "tensor '" + t.name + "' payload size mismatch");
  }
  std::vector<double> out;
  out.reserve(n);
  switch (t.dtype) {
    case DType::fp32:
      for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(t.payload[4 * i + b]) << (8 * b);
        out.push_back(std::bit_cast<float>(u));
      }
      break;
    case DType::bf16:
      for (std::uint16_t u : decode_u16(t)) out.push_back(bf16_decode(Bf16::from_bits(u)));
      break;
    case DType::fp16:
      for (std::uint16_t u : decode_u16(t)) out.push_back(fp16_decode(Fp16::from_bits(u)));
      break;
    case DType::fp8e4m3:
      for (std::uint8_t u : t.payload) out.push_back(fp8_decode(Fp8E4M3::from_bits(u)));
      break;
    case DType::int4packed:
      for (std::int8_t c : decode_int4(t)) out.push_back(c);
      break;
  }
  return out;
}

RealMatrix to_matrix(const Tensor& t) {
  if (t.shape.size() != 2) throw ShapeError("tensor '" + t.name + "' is not two-dimensional");
  return RealMatrix(t.shape[0], t.shape[1], decode_values(t));
}

bool Package::contains(std::string_view name) const {
  return std::ranges::any_of(tensors, [&](const Tensor& t) { return t.name == name; });
}

const Tensor& Package::at(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw DataError("package has no tensor '" + std::string(name) + "'");
}

void Package::add(Tensor t) {
  for (auto& existing : tensors) {
    if (existing.name == t.name) {
      existing = std::move(t);
      return;
    }
  }
  tensors.push_back(std::move(t));
}

std::string_view to_string(IoErrorCode c) {
  switch (c) {
    case IoErrorCode::malformed_header: return "malformed_header";
    case IoErrorCode::overlapping_regions: return "overlapping_regions";
    case IoErrorCode::truncated_payload: return "truncated_payload";
    case IoErrorCode::unknown_dtype: return "unknown_dtype";
    case IoErrorCode::version_mismatch: return "version_mismatch";
    case IoErrorCode::io_failure: return "io_failure";
  }
  return "?";
}

IoError::IoError(IoErrorCode code, const std::string& what)
    : DataError(std::string(to_string(code)) + ": " + what), code_(code) {}

std::vector<std::uint8_t> serialize_package(const Package& p) {
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& t : p.tensors) {
    if (t.payload.size() != payload_bytes(t.dtype, t.numel())) {
      throw DataError("tensor '" + t.name + "': payload does not match shape and dtype");
    }
    entries.push_back({{"name", t.name},
                       {"dtype", to_string(t.dtype)},
                       {"shape", t.shape},
                       {"offset", offset},
                       {"length", t.payload.size()}});
    offset = align_up(offset + t.payload.size());
  }
  json recipes = json::array();
  for (const auto& r : p.recipes) recipes.push_back(recipe_to_json(r));
  const json header = {{"format", "qlab-package"},
                       {"version", kPackageVersion},
                       {"tensors", entries},
                       {"recipes", recipes},
                       {"metadata", p.metadata}};
  const std::string text = header.dump();
  const std::string preamble = std::string(kMagic) + " " + std::to_string(kPackageVersion) + "\n" +
                               std::to_string(text.size()) + "\n";

  std::vector<std::uint8_t> out(preamble.begin(), preamble.end());
  out.insert(out.end(), text.begin(), text.end());
  out.resize(align_up(out.size()), 0);
  const std::size_t base = out.size();
  for (std::size_t i = 0; i < p.tensors.size(); ++i) {
    const auto& t = p.tensors[i];
    out.resize(base + entries[i]["offset"].get<std::size_t>(), 0);
    out.insert(out.end(), t.payload.begin(), t.payload.end());
    if (t.dtype == DType::int4packed && t.numel() % 2 == 1) out.back() &= 0x0F;
  }
  return out;
}

Package deserialize_package(std::span<const std::uint8_t> bytes) {
  const std::string magic = std::string(kMagic) + " ";
  if (bytes.size() < magic.size() || !std::equal(magic.begin(), magic.end(), bytes.begin())) {
    throw IoError(IoErrorCode::malformed_header, "missing package magic");
  }
  std::size_t pos = magic.size();
  const std::size_t version = parse_line_number(bytes, pos);
  if (version != static_cast<std::size_t>(kPackageVersion)) {
    throw IoError(IoErrorCode::version_mismatch, "package version " + std::to_string(version));
  }
  const std::size_t header_len = parse_line_number(bytes, pos);
  if (header_len > bytes.size() - pos) {
    throw IoError(IoErrorCode::truncated_payload, "header runs past end of file");
  }
  json header;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::malformed_header, e.what());
  }
  const std::size_t base = align_up(pos + header_len);

  Package p;
  struct Region {
    std::size_t begin, end;
    std::string name;
  };
  std::vector<Region> regions;
  try {
    if (header.at("format").get<std::string>() != "qlab-package") {
      throw IoError(IoErrorCode::malformed_header, "wrong format tag");
    }
    if (header.at("version").get<int>() != kPackageVersion) {
      throw IoError(IoErrorCode::version_mismatch, "header version disagrees with preamble");
    }
    for (const json& e : header.at("tensors")) {
      Tensor t;
      t.name = e.at("name").get<std::string>();
      t.dtype = parse_dtype(e.at("dtype").get<std::string>());
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != payload_bytes(t.dtype, t.numel())) {
        throw IoError(IoErrorCode::malformed_header, "tensor '" + t.name + "' length disagrees with shape");
      }
      if (offset % kPayloadAlignment != 0) {
        throw IoError(IoErrorCode::malformed_header, "tensor '" + t.name + "' is not 64-byte aligned");
      }
      if (p.contains(t.name)) throw IoError(IoErrorCode::malformed_header, "duplicate tensor '" + t.name + "'");
      regions.push_back({offset, offset + length, t.name});
      p.tensors.push_back(std::move(t));
    }
    for (const json& r : header.at("recipes")) p.recipes.push_back(recipe_from_json(r));
    p.metadata = header.at("metadata");
  } catch (const json::exception& e) {
    throw IoError(IoErrorCode::malformed_header, e.what());
  }

  std::vector<Region> sorted = regions;
  std::ranges::sort(sorted, {}, &Region::begin);
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].begin < sorted[i - 1].end) {
      throw IoError(IoErrorCode::overlapping_regions,
                    "'" + sorted[i - 1].name + "' overlaps '" + sorted[i].name + "'");
    }
  }
  const std::size_t payload_size = bytes.size() >= base ? bytes.size() - base : 0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    if (regions[i].end > payload_size) {
      throw IoError(IoErrorCode::truncated_payload, "tensor '" + regions[i].name + "' runs past end of file");
    }
    const auto first = bytes.begin() + static_cast<std::ptrdiff_t>(base + regions[i].begin);
    p.tensors[i].payload.assign(first, first + static_cast<std::ptrdiff_t>(regions[i].end - regions[i].begin));
  }
  return p;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorCode::io_failure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(IoErrorCode::io_failure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(IoErrorCode::io_failure, "failed writing " + path.string());
}

void write_package(const Package& p, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_package(p));
}

Package read_package(const std::filesystem::path& path) {
  return deserialize_package(read_file_bytes(path));
}

}  // namespace qlab
