#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dtkc/types.hpp"

namespace dtkc {

// Little-endian flat arrays. Readers throw `on_error` when the file is missing
// or its size is not exactly `count` elements.
std::vector<float> read_f32_file(const std::filesystem::path& path, std::size_t count, Errc on_error);
std::vector<int> read_i32_file(const std::filesystem::path& path, std::size_t count, Errc on_error);
std::vector<double> read_f64_file(const std::filesystem::path& path, std::size_t count, Errc on_error);

void write_f32_file(const std::filesystem::path& path, std::span<const float> values);
void write_i32_file(const std::filesystem::path& path, std::span<const int> values);
void write_f64_file(const std::filesystem::path& path, std::span<const double> values);

}  // namespace dtkc
