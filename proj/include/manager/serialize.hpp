// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "manager/params.hpp"

namespace manager {

/// Named-tensor container used for checkpoints and diagnostic dumps.
///
/// Layout (all integers little-endian uint64 unless noted):
///   magic "MGRTNSR\0" | version (uint32) | metadata length | metadata bytes |
///   tensor count | per tensor: name length, name bytes, rank, dims...,
///   payload as little-endian IEEE-754 doubles.
struct TensorArchive {
  static constexpr std::uint32_t kVersion = 1;

  std::string metadata;
  std::vector<NamedTensor> tensors;
};

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
/// Throws FormatError on truncation, bad magic or unsupported version.
TensorArchive decode_archive(const std::vector<std::uint8_t>& bytes);

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

/// Copies archived values into the store. Every store entry must be present
/// with a matching shape; nothing is modified unless all entries validate.
void load_into(ParameterStore& store, const TensorArchive& archive);
TensorArchive snapshot(const ParameterStore& store, std::string metadata = {});

}  // namespace manager
