#include <doctest.h>

#include "synthrank/text.hpp"

using namespace synthrank::text;

TEST_CASE("utf8 validation") {
  CHECK(is_valid_utf8("plain ascii"));
  CHECK(is_valid_utf8("caf\xC3\xA9 \xE2\x82\xAC \xF0\x9F\x98\x80"));
  CHECK_FALSE(is_valid_utf8("\xC0\xAF"));          // overlong '/'
  CHECK_FALSE(is_valid_utf8("\xED\xA0\x80"));      // surrogate
  CHECK_FALSE(is_valid_utf8("\xF4\x90\x80\x80"));  // past U+10FFFF
  CHECK_FALSE(is_valid_utf8("ab\xE2\x82"));        // truncated
  CHECK(first_invalid_utf8("ab\xFF").value() == 2);
  CHECK_FALSE(first_invalid_utf8("ok").has_value());
}

TEST_CASE("decode_next replaces invalid bytes one at a time") {
  const std::string s = "a\xFF\xC3\xA9";
  std::size_t pos = 0;
  CHECK(decode_next(s, pos) == U'a');
  CHECK(decode_next(s, pos) == 0xFFFD);
  CHECK(pos == 2);
  CHECK(decode_next(s, pos) == 0xE9);
  CHECK(pos == s.size());
}

TEST_CASE("append_utf8 round-trips") {
  for (char32_t cp : {U'x', char32_t(0xE9), char32_t(0x20AC), char32_t(0x1F600)}) {
    std::string out;
    append_utf8(out, cp);
    std::size_t pos = 0;
    CHECK(decode_next(out, pos) == cp);
    CHECK(pos == out.size());
  }
}

TEST_CASE("collapse_newlines and trim") {
  CHECK(collapse_newlines("a\r\nb\nc\rd") == "a b c d");
  CHECK(collapse_newlines("\n\n") == "  ");
  CHECK(trim("  x y \t") == "x y");
  CHECK(trim(" \n ").empty());
}
