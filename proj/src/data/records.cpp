// SPDX-License-Identifier: Apache-2.0
#include <cstring>
#include <limits>
#include <string>

#include "echoreg/binary_io.hpp"
#include "echoreg/data.hpp"

namespace echoreg::data {

namespace {

// Guards the size arithmetic against overflow on hostile headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 40;

}  // namespace

std::uint64_t record_file_size(std::size_t n, const Shape& clip_shape) {
  return kRecordHeaderBytes + n * (shape_numel(clip_shape) * 4 + 4);
}

std::vector<unsigned char> encode_records(std::span<const VideoClip> clips) {
  if (clips.empty()) throw std::invalid_argument("write_records needs at least one clip");
  const Shape shape = clips.front().frames.shape();
  if (shape.size() != 4) throw ShapeError("clip frames must be T x H x W x C");
  for (const auto& c : clips) {
    if (c.frames.shape() != shape) {
      throw ShapeError("all clips must share shape " + shape_to_string(shape) + ", got " +
                       shape_to_string(c.frames.shape()));
    }
  }
  for (std::size_t extent : shape) {
    if (extent > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("clip extent does not fit the record header");
    }
  }
  std::vector<unsigned char> out(kRecordMagic, kRecordMagic + 8);
  out.reserve(record_file_size(clips.size(), shape));
  binary::put_u32(out, static_cast<std::uint32_t>(clips.size()));
  for (std::size_t extent : shape) binary::put_u32(out, static_cast<std::uint32_t>(extent));
  binary::put_u32(out, 0);
  for (const auto& c : clips) {
    for (double v : c.frames.data()) binary::put_f32(out, static_cast<float>(v));
    binary::put_f32(out, static_cast<float>(c.label));
  }
  return out;
}

void write_records(std::span<const VideoClip> clips, const std::filesystem::path& path) {
  binary::write_file(path.string(), encode_records(clips));
}

std::vector<VideoClip> decode_records(const std::vector<unsigned char>& bytes) {
  binary::Reader r(bytes);
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kRecordMagic, 7) != 0) throw FormatError(0, "not a clip-record file");
  if (magic[7] != kRecordMagic[7]) {
    throw FormatError(7, std::string("unsupported clip-record version '") + magic[7] + "'");
  }
  const std::uint64_t n = r.u32("clip count");
  if (n == 0) throw FormatError(8, "clip count is zero");
  Shape shape;
  std::uint64_t numel = 1;
  for (const char* field : {"T", "H", "W", "C"}) {
    const std::uint64_t at = r.offset();
    const std::uint64_t extent = r.u32(field);
    if (extent == 0) throw FormatError(at, std::string("extent ") + field + " is zero");
    numel *= extent;
    if (numel > kMaxElements) throw FormatError(at, "clip shape is implausibly large");
    shape.push_back(extent);
  }
  if (r.u32("header padding") != 0) throw FormatError(28, "header padding is not zero");
  const std::uint64_t record = numel * 4 + 4;
  const std::uint64_t expected = kRecordHeaderBytes + n * record;
  if (bytes.size() < expected) {
    const std::uint64_t complete = (bytes.size() - kRecordHeaderBytes) / record;
    throw FormatError(kRecordHeaderBytes + complete * record,
                      "truncated payload: header declares " + std::to_string(n) +
                          " clips, file holds " + std::to_string(complete) + " complete records");
  }
  if (bytes.size() > expected) {
    throw FormatError(expected, std::to_string(bytes.size() - expected) +
                                    " trailing bytes after the declared records");
  }
  std::vector<VideoClip> clips(n);
  for (auto& c : clips) {
    c.frames = Tensor(shape);
    for (double& v : c.frames.data()) v = r.f32("pixel");
    c.label = r.f32("label");
  }
  return clips;
}

std::vector<VideoClip> read_records(const std::filesystem::path& path) {
  return decode_records(binary::read_file(path.string()));
}

}  // namespace echoreg::data
