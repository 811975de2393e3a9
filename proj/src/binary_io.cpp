#include "dtkc/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace dtkc {

namespace fs = std::filesystem;

namespace {

template <typename T>
T from_little_endian(const unsigned char* bytes) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <typename T>
void to_little_endian(T v, unsigned char* out) {
  std::memcpy(out, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(out, out + sizeof(T));
}

template <typename T>
std::vector<T> read_file(const fs::path& path, std::size_t count, Errc on_error) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(on_error, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != count * sizeof(T)) {
    throw Error(on_error, path.filename().string() + " holds " + std::to_string(bytes.size()) +
                              " bytes, expected " + std::to_string(count * sizeof(T)));
  }
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = from_little_endian<T>(bytes.data() + i * sizeof(T));
  return out;
}

template <typename T>
void write_file(const fs::path& path, std::span<const T> values) {
  std::vector<unsigned char> bytes(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) to_little_endian(values[i], bytes.data() + i * sizeof(T));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
}

}  // namespace

std::vector<float> read_f32_file(const fs::path& path, std::size_t count, Errc on_error) {
  return read_file<float>(path, count, on_error);
}

std::vector<int> read_i32_file(const fs::path& path, std::size_t count, Errc on_error) {
  const auto raw = read_file<std::int32_t>(path, count, on_error);
  return {raw.begin(), raw.end()};
}

std::vector<double> read_f64_file(const fs::path& path, std::size_t count, Errc on_error) {
  return read_file<double>(path, count, on_error);
}

void write_f32_file(const fs::path& path, std::span<const float> values) { write_file(path, values); }

void write_i32_file(const fs::path& path, std::span<const int> values) {
  std::vector<std::int32_t> raw(values.begin(), values.end());
  write_file<std::int32_t>(path, raw);
}

void write_f64_file(const fs::path& path, std::span<const double> values) { write_file(path, values); }

}  // namespace dtkc
