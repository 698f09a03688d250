#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rwd::io {

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u16(std::uint16_t v);
  void u32(std::uint32_t v);
  void f32(float v);
  void f64(double v);
  void f32_array(std::span<const float> v);

  const std::vector<char>& bytes() const noexcept { return buf_; }

 private:
  std::vector<char> buf_;
};

/// Little-endian decoder over an in-memory file image. Errors name the
/// source file and the byte offset at which decoding failed.
class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string source);

  /// Throws FormatError if the next bytes are not `tag`.
  void expect_magic(std::string_view tag);
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  double f64();
  void f32_array(std::span<float> out);

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  const std::string& source() const noexcept { return source_; }
  [[noreturn]] void fail_format(const std::string& what) const;

 private:
  void need(std::size_t n);

  std::vector<char> buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const char> bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace rwd::io
