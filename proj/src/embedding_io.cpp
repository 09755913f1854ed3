// Copyright 2026 The fsar Authors
// SPDX-License-Identifier: Apache-2.0

// Binary embedding file:
//   "FSAR" | u16 version | u32 record count
//   per record: u32 class_id | u16 frames | u16 rows | u16 cols | u16 dim
//               | frames*rows*cols*dim f32
// All integers and floats little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "byte_io.hpp"
#include "fsar/data.hpp"
#include "fsar/errors.hpp"

namespace fsar {

namespace {

using detail::ByteReader;
using detail::ByteWriter;
using detail::read_all;

constexpr char kMagic[4] = {'F', 'S', 'A', 'R'};
constexpr std::size_t kFileHeader = 4 + 2 + 4;
constexpr std::size_t kRecordHeader = 4 + 2 + 2 + 2 + 2;

std::map<std::uint32_t, ClassInfo> read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path.string() + "'");
  std::map<std::uint32_t, ClassInfo> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw FormatError("sidecar line is not 'class_id<TAB>name<TAB>split'", line_offset);
    }
    std::uint32_t id = 0;
    try {
      id = static_cast<std::uint32_t>(std::stoul(line.substr(0, t1)));
    } catch (const std::exception&) {
      throw FormatError("sidecar class id is not an integer", line_offset);
    }
    ClassInfo info;
    info.name = line.substr(t1 + 1, t2 - t1 - 1);
    try {
      info.split = parse_split(line.substr(t2 + 1));
    } catch (const InputError&) {
      throw FormatError("sidecar split must be train, val or test", line_offset + t2 + 1);
    }
    info.text_seed = fnv1a64(info.name);
    if (!out.emplace(id, info).second) {
      throw FormatError("sidecar lists class " + std::to_string(id) + " twice", line_offset);
    }
  }
  return out;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  auto p = path;
  p += ".classes.tsv";
  return p;
}

void write_embedding_file(const std::filesystem::path& path, const DatasetManifest& manifest) {
  manifest.validate();
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u16(kEmbeddingFileVersion);
  w.u32(static_cast<std::uint32_t>(manifest.records.size()));
  for (const auto& r : manifest.records) {
    w.u32(r.class_id);
    w.u16(r.frame_count);
    w.u16(r.grid.rows);
    w.u16(r.grid.cols);
    w.u16(r.grid.dim);
    for (float v : r.payload) w.f32(v);
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    const auto& buf = w.buffer();
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw InputError("cannot write '" + sidecar_path(path).string() + "'");
  for (const auto& [id, info] : manifest.classes) {
    side << id << '\t' << info.name << '\t' << to_string(info.split) << '\n';
  }
}

DatasetManifest load_embedding_file(const std::filesystem::path& path) {
  ByteReader r(read_all(path));
  if (!r.has(kFileHeader)) throw FormatError("truncated file header", r.offset());
  if (std::memcmp(r.here(), kMagic, 4) != 0) throw FormatError("bad magic, expected 'FSAR'", 0);
  r.skip(4);
  const auto version = r.u16();
  if (version != kEmbeddingFileVersion) {
    throw FormatError("unsupported version " + std::to_string(version), 4);
  }
  const auto count = r.u32();

  DatasetManifest m;
  m.records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t record_offset = r.offset();
    if (!r.has(kRecordHeader)) {
      throw FormatError("record " + std::to_string(i) + " of " + std::to_string(count) +
                            " missing or truncated header",
                        record_offset);
    }
    VideoRecord rec;
    rec.class_id = r.u32();
    rec.frame_count = r.u16();
    rec.grid.rows = r.u16();
    rec.grid.cols = r.u16();
    rec.grid.dim = r.u16();
    if (!m.records.empty() && rec.grid != m.records.front().grid) {
      throw FormatError("record " + std::to_string(i) + " grid " + to_string(rec.grid) +
                            " is inconsistent with " + to_string(m.records.front().grid),
                        record_offset);
    }
    const std::size_t values = std::size_t{rec.frame_count} * rec.grid.frame_size();
    if (!r.has(values * 4)) {
      throw FormatError("record " + std::to_string(i) + " payload truncated", record_offset);
    }
    rec.payload.resize(values);
    for (auto& v : rec.payload) v = r.f32();
    m.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last record", r.offset());

  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    m.classes = read_sidecar(side);
  } else {
    std::set<std::uint32_t> ids;
    for (const auto& rec : m.records) ids.insert(rec.class_id);
    const auto plan = class_split_plan(ids.size());
    std::size_t k = 0;
    for (auto id : ids) {
      ClassInfo info;
      info.name = "class_" + std::to_string(id);
      info.split = plan[k++];
      info.text_seed = fnv1a64(info.name);
      m.classes.emplace(id, info);
    }
  }
  m.validate();
  return m;
}

}  // namespace fsar
