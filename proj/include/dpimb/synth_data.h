// Copyright 2026 The dpimb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Heavy-tail class-imbalanced synthetic data.
//
// Classes are organized in G dyadic frequency groups. Group g holds 2^g
// classes with max(2^(S-g), min_class_size) samples each, so without clamping
// every group contributes 2^S samples. Features are i.i.d. uniform on [0,1]^d
// with d = n + 2^S and are independent of the labels.
//
// On-disk layout (all integers little-endian):
//   8 bytes   magic "DPIMBDS\0"
//   4 bytes   uint32 header length H
//   H bytes   JSON header: format_version, n, d, c, spec, groups,
//             payload_bytes, crc32
//   n*d*4     float32 features, row-major
//   n*4       uint32 labels
// The crc32 covers the two payload blocks.

#ifndef DPIMB_SYNTH_DATA_H_
#define DPIMB_SYNTH_DATA_H_

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "dpimb/common.h"
#include "dpimb/linear_model.h"
#include "json.hpp"

namespace dpimb {

struct GeneratorSpec {
  int num_groups = 8;       // G
  int scale_exponent = 10;  // S
  int min_class_size = 5;
  std::uint64_t seed = 0;
  // Refuse to allocate feature storage above this many bytes.
  std::uint64_t memory_budget_bytes = std::uint64_t{3} << 30;
};

inline void ValidateSpec(const GeneratorSpec& spec) {
  if (spec.num_groups < 1) {
    throw Error(ErrorCode::kInvalidArgument, "need at least one group");
  }
  if (spec.scale_exponent < spec.num_groups - 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "scale exponent S=" + std::to_string(spec.scale_exponent) +
                    " must be >= G-1=" + std::to_string(spec.num_groups - 1));
  }
  if (spec.min_class_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "min_class_size must be >= 1");
  }
  if (spec.num_groups > 24 || spec.scale_exponent > 40) {
    throw Error(ErrorCode::kInvalidArgument, "G or S unreasonably large");
  }
}

struct FrequencyGroup {
  int group_id = 0;
  int num_classes = 0;
  std::int64_t samples_per_class = 0;
  int first_class = 0;  // classes [first_class, first_class + num_classes)

  bool operator==(const FrequencyGroup&) const = default;
};

inline std::vector<FrequencyGroup> GroupTable(const GeneratorSpec& spec) {
  ValidateSpec(spec);
  std::vector<FrequencyGroup> groups;
  int first = 0;
  for (int g = 0; g < spec.num_groups; ++g) {
    FrequencyGroup group;
    group.group_id = g;
    group.num_classes = 1 << g;
    group.samples_per_class = std::max<std::int64_t>(
        std::int64_t{1} << (spec.scale_exponent - g), spec.min_class_size);
    group.first_class = first;
    first += group.num_classes;
    groups.push_back(group);
  }
  return groups;
}

struct DatasetShape {
  std::int64_t n = 0;
  std::int64_t d = 0;
  int c = 0;
};

inline DatasetShape ShapeOf(const GeneratorSpec& spec) {
  DatasetShape shape;
  for (const FrequencyGroup& g : GroupTable(spec)) {
    shape.n += g.num_classes * g.samples_per_class;
    shape.c += g.num_classes;
  }
  shape.d = shape.n + (std::int64_t{1} << spec.scale_exponent);
  return shape;
}

struct SyntheticData {
  GeneratorSpec spec;
  Dataset dataset;
  ClassStats stats;
  std::vector<FrequencyGroup> groups;
};

inline std::vector<int> GroupOfClass(const std::vector<FrequencyGroup>& groups,
                                     int num_classes) {
  std::vector<int> out(num_classes, -1);
  for (const FrequencyGroup& g : groups) {
    for (int k = g.first_class; k < g.first_class + g.num_classes; ++k) {
      if (k >= num_classes) {
        throw Error(ErrorCode::kIntegrity, "group table exceeds class count");
      }
      out[k] = g.group_id;
    }
  }
  if (std::find(out.begin(), out.end(), -1) != out.end()) {
    throw Error(ErrorCode::kIntegrity,
                "group table does not cover all classes");
  }
  return out;
}

// Features come from RngStream::kFeatures, drawn as float32 so the on-disk
// representation is exact. Labels are laid out group by group, class by class,
// then shuffled with RngStream::kShuffle.
inline SyntheticData Generate(const GeneratorSpec& spec) {
  const DatasetShape shape = ShapeOf(spec);
  const std::uint64_t required = static_cast<std::uint64_t>(shape.n) *
                                 static_cast<std::uint64_t>(shape.d) *
                                 sizeof(double);
  if (required > spec.memory_budget_bytes) {
    throw Error(ErrorCode::kResourceLimit,
                "dataset needs " + std::to_string(required) +
                    " bytes of feature storage; budget is " +
                    std::to_string(spec.memory_budget_bytes));
  }

  SyntheticData out;
  out.spec = spec;
  out.groups = GroupTable(spec);
  Dataset& data = out.dataset;
  data.num_classes = shape.c;
  data.features.resize(shape.n, shape.d);
  std::mt19937_64 feature_rng = MakeRng(spec.seed, RngStream::kFeatures);
  std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
  double* dst = data.features.data();
  for (Index i = 0; i < data.features.size(); ++i) {
    dst[i] = static_cast<double>(uniform(feature_rng));
  }

  data.labels.reserve(shape.n);
  for (const FrequencyGroup& g : out.groups) {
    for (int k = g.first_class; k < g.first_class + g.num_classes; ++k) {
      data.labels.insert(data.labels.end(), g.samples_per_class,
                         static_cast<std::uint32_t>(k));
    }
  }
  std::mt19937_64 shuffle_rng = MakeRng(spec.seed, RngStream::kShuffle);
  std::shuffle(data.labels.begin(), data.labels.end(), shuffle_rng);

  out.stats = ComputeClassStats(data.labels, data.num_classes,
                                GroupOfClass(out.groups, data.num_classes));
  return out;
}

inline constexpr int kDatasetFormatVersion = 1;

namespace internal {

inline constexpr std::array<char, 8> kDatasetMagic = {'D', 'P', 'I', 'M',
                                                      'B', 'D', 'S', '\0'};

inline std::uint32_t ToLittleEndian(std::uint32_t value) {
  if constexpr (std::endian::native == std::endian::big) {
    return (value >> 24) | ((value >> 8) & 0xff00u) |
           ((value << 8) & 0xff0000u) | (value << 24);
  } else {
    return value;
  }
}

inline void AppendU32(std::string& buf, std::uint32_t v) {
  v = ToLittleEndian(v);
  buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint32_t ReadU32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, sizeof(v));
  return ToLittleEndian(v);
}

inline std::uint32_t Crc32(const char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    size -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline nlohmann::json SpecToJson(const GeneratorSpec& spec) {
  return {{"groups", spec.num_groups},
          {"scale_exponent", spec.scale_exponent},
          {"min_class_size", spec.min_class_size},
          {"seed", spec.seed}};
}

inline GeneratorSpec SpecFromJson(const nlohmann::json& j) {
  GeneratorSpec spec;
  spec.num_groups = j.at("groups").get<int>();
  spec.scale_exponent = j.at("scale_exponent").get<int>();
  spec.min_class_size = j.at("min_class_size").get<int>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

}  // namespace internal

inline nlohmann::json GroupTableToJson(
    const std::vector<FrequencyGroup>& groups) {
  nlohmann::json out = nlohmann::json::array();
  for (const FrequencyGroup& g : groups) {
    out.push_back({{"group_id", g.group_id},
                   {"num_classes", g.num_classes},
                   {"samples_per_class", g.samples_per_class},
                   {"first_class", g.first_class}});
  }
  return out;
}

inline void Save(const SyntheticData& data, const std::filesystem::path& path) {
  const Dataset& ds = data.dataset;
  std::string payload;
  payload.reserve(static_cast<std::size_t>(ds.n() * ds.d() * 4 + ds.n() * 4));
  const double* src = ds.features.data();
  for (Index i = 0; i < ds.features.size(); ++i) {
    internal::AppendU32(
        payload, std::bit_cast<std::uint32_t>(static_cast<float>(src[i])));
  }
  for (std::uint32_t y : ds.labels) internal::AppendU32(payload, y);

  nlohmann::json header = {
      {"format_version", kDatasetFormatVersion},
      {"n", ds.n()},
      {"d", ds.d()},
      {"c", ds.c()},
      {"spec", internal::SpecToJson(data.spec)},
      {"groups", GroupTableToJson(data.groups)},
      {"payload_bytes", payload.size()},
      {"crc32", internal::Crc32(payload.data(), payload.size())}};
  const std::string header_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo,
                "cannot open " + path.string() + " for writing");
  }
  std::string prefix(internal::kDatasetMagic.begin(),
                     internal::kDatasetMagic.end());
  internal::AppendU32(prefix, static_cast<std::uint32_t>(header_text.size()));
  out.write(prefix.data(), static_cast<std::streamsize>(prefix.size()));
  out.write(header_text.data(),
            static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

inline SyntheticData Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::size_t prefix_size = internal::kDatasetMagic.size() + 4;
  if (bytes.size() < prefix_size) {
    throw Error(ErrorCode::kTruncated, path.string() + " ends inside preamble");
  }
  if (!std::equal(internal::kDatasetMagic.begin(),
                  internal::kDatasetMagic.end(), bytes.begin())) {
    throw Error(ErrorCode::kIntegrity,
                path.string() + " is not a dataset file");
  }
  const std::uint32_t header_len =
      internal::ReadU32(bytes.data() + internal::kDatasetMagic.size());
  if (bytes.size() < prefix_size + header_len) {
    throw Error(ErrorCode::kTruncated, path.string() + " ends inside header");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + prefix_size,
                                   bytes.begin() + prefix_size + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIntegrity, std::string("bad header: ") + e.what());
  }

  SyntheticData out;
  std::int64_t n = 0, d = 0;
  std::uint64_t payload_bytes = 0;
  std::uint32_t expected_crc = 0;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kDatasetFormatVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  "file has format version " + std::to_string(version) +
                      ", reader supports " +
                      std::to_string(kDatasetFormatVersion));
    }
    n = header.at("n").get<std::int64_t>();
    d = header.at("d").get<std::int64_t>();
    out.dataset.num_classes = header.at("c").get<int>();
    out.spec = internal::SpecFromJson(header.at("spec"));
    for (const auto& g : header.at("groups")) {
      out.groups.push_back({g.at("group_id").get<int>(),
                            g.at("num_classes").get<int>(),
                            g.at("samples_per_class").get<std::int64_t>(),
                            g.at("first_class").get<int>()});
    }
    payload_bytes = header.at("payload_bytes").get<std::uint64_t>();
    expected_crc = header.at("crc32").get<std::uint32_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIntegrity, std::string("bad header: ") + e.what());
  }
  if (n <= 0 || d <= 0 || out.dataset.num_classes <= 0) {
    throw Error(ErrorCode::kIntegrity, "header has non-positive dimensions");
  }

  const std::size_t available = bytes.size() - prefix_size - header_len;
  if (available < payload_bytes) {
    throw Error(ErrorCode::kTruncated,
                "payload has " + std::to_string(available) + " of " +
                    std::to_string(payload_bytes) + " bytes");
  }
  const std::uint64_t implied =
      static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(d) * 4 +
      static_cast<std::uint64_t>(n) * 4;
  if (implied != payload_bytes || available != payload_bytes) {
    throw Error(ErrorCode::kIntegrity,
                "header n=" + std::to_string(n) + " d=" + std::to_string(d) +
                    " implies " + std::to_string(implied) +
                    " payload bytes; header declares " +
                    std::to_string(payload_bytes) + ", file holds " +
                    std::to_string(available));
  }
  const char* payload = bytes.data() + prefix_size + header_len;
  if (internal::Crc32(payload, payload_bytes) != expected_crc) {
    throw Error(ErrorCode::kChecksum,
                "payload crc32 mismatch in " + path.string());
  }

  Dataset& ds = out.dataset;
  ds.features.resize(n, d);
  double* dst = ds.features.data();
  for (Index i = 0; i < n * d; ++i) {
    dst[i] = static_cast<double>(
        std::bit_cast<float>(internal::ReadU32(payload + 4 * i)));
  }
  const char* label_block = payload + 4 * n * d;
  ds.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    ds.labels[i] = internal::ReadU32(label_block + 4 * i);
  }
  try {
    ValidateDataset(ds);
    out.stats =
        ComputeClassStats(ds.labels, ds.c(), GroupOfClass(out.groups, ds.c()));
  } catch (const Error& e) {
    throw Error(ErrorCode::kIntegrity, e.what());
  }
  for (const FrequencyGroup& g : out.groups) {
    for (int k = g.first_class; k < g.first_class + g.num_classes; ++k) {
      if (out.stats.counts[k] != g.samples_per_class) {
        throw Error(ErrorCode::kIntegrity,
                    "class " + std::to_string(k) + " has " +
                        std::to_string(out.stats.counts[k]) +
                        " samples, group table says " +
                        std::to_string(g.samples_per_class));
      }
    }
  }
  return out;
}

}  // namespace dpimb

#endif  // DPIMB_SYNTH_DATA_H_
