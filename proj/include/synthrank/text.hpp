#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace synthrank::text {

/// Strict UTF-8 check: rejects overlongs, surrogates, and code points past U+10FFFF.
bool is_valid_utf8(std::string_view s);

/// Byte offset of the first invalid sequence, or nullopt.
std::optional<std::size_t> first_invalid_utf8(std::string_view s);

/// Decodes one code point at `pos` and advances past it. Invalid bytes decode
/// to U+FFFD one at a time.
char32_t decode_next(std::string_view s, std::size_t& pos);

void append_utf8(std::string& out, char32_t cp);

/// Replaces every line break ("\r\n", "\n", "\r") with a single space.
std::string collapse_newlines(std::string_view s);

std::string_view trim(std::string_view s);

}  // namespace synthrank::text
