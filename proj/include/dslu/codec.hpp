#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dslu::codec {

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

// Raw little-endian IEEE-754 bytes of a double array and back.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view b64);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view bytes);

}  // namespace dslu::codec
