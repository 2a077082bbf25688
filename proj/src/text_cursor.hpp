#pragma once

#include <cctype>
#include <charconv>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fiberflow/core.hpp"

namespace fiberflow::detail {

/// Minimal recursive-descent helper shared by the small spec grammars.
class TextCursor {
 public:
  TextCursor(std::string_view text, std::string what) : text_(text), what_(std::move(what)) {}

  void skipSpace() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  bool atEnd() {
    skipSpace();
    return pos_ == text_.size();
  }
  char peek() {
    skipSpace();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }
  bool consume(char c) {
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!consume(c)) fail(std::string("expected '") + c + "'");
  }
  bool peekIdentifier() {
    const char c = peek();
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_';
  }
  std::string identifier() {
    skipSpace();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
            text_[pos_] == '-'))
      ++pos_;
    if (pos_ == start) fail("expected a name");
    return std::string(text_.substr(start, pos_ - start));
  }
  bool peekNumber() {
    const char c = peek();
    return std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '+';
  }
  double number() {
    skipSpace();
    std::size_t p = pos_;
    if (p < text_.size() && text_[p] == '+') ++p;
    double value = 0.0;
    const auto res = std::from_chars(text_.data() + p, text_.data() + text_.size(), value);
    if (res.ec != std::errc()) fail("expected a number");
    pos_ = static_cast<std::size_t>(res.ptr - text_.data());
    return value;
  }
  std::vector<double> numberList() {
    std::vector<double> values;
    expect('[');
    if (consume(']')) return values;
    do {
      values.push_back(number());
    } while (consume(','));
    expect(']');
    return values;
  }
  [[noreturn]] void fail(const std::string& message) const {
    throw Error(what_ + ": " + message + " at position " + std::to_string(pos_) + " in \"" +
                std::string(text_) + "\"");
  }

 private:
  std::string_view text_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace fiberflow::detail
