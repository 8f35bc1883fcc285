#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dabtps {

// 17 significant digits: enough for binary64 values to survive a
// text round trip exactly. All CSV and model files use this format.
std::string format_g17(double v);
void append_g17(std::string& out, double v);

// strict double parse; throws std::runtime_error on trailing garbage
double parse_double(std::string_view s);
long parse_long(std::string_view s);

std::vector<std::string> split(std::string_view line, char sep);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

// FNV-1a over bytes; used for artifact provenance digests
std::uint64_t fnv1a64(std::string_view s);

}  // namespace dabtps
