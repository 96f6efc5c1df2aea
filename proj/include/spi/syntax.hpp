#ifndef SPI_SYNTAX_HPP
#define SPI_SYNTAX_HPP

#include <cctype>
#include <stdexcept>
#include <string>

namespace spi {

// Parse failure with 1-based source position.
struct ParseError : std::runtime_error {
  int line;
  int column;
  ParseError(std::string msg, int line_, int col_)
      : std::runtime_error(std::move(msg)), line(line_), column(col_) {}
};

namespace detail {

// Character cursor over a source string. Tracks line/column and skips
// whitespace and comments. A `#` followed by a letter is the start of a
// rigid name, so comments are `#` followed by anything else, up to the
// end of the line.
class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  void skip_ws() {
    for (;;) {
      while (pos_ < text_.size() && is_space(text_[pos_])) advance();
      if (pos_ < text_.size() && text_[pos_] == '#' &&
          !(pos_ + 1 < text_.size() && is_ident_start(text_[pos_ + 1]))) {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
        continue;
      }
      break;
    }
  }

  bool eof() {
    skip_ws();
    return pos_ >= text_.size();
  }

  char peek() {
    skip_ws();
    return pos_ < text_.size() ? text_[pos_] : '\0';
  }

  bool try_consume(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      advance();
      return true;
    }
    return false;
  }

  void expect(char c, const std::string& what) {
    if (!try_consume(c))
      fail("expected '" + std::string(1, c) + "' " + what);
  }

  // Longest match of [a-zA-Z][a-zA-Z0-9_]*; empty string if none.
  std::string try_ident() {
    skip_ws();
    if (pos_ >= text_.size() || !is_ident_start(text_[pos_])) return {};
    std::string out;
    while (pos_ < text_.size() && is_ident_char(text_[pos_])) {
      out.push_back(text_[pos_]);
      advance();
    }
    return out;
  }

  std::string expect_ident(const std::string& what) {
    std::string id = try_ident();
    if (id.empty()) fail("expected identifier " + what);
    return id;
  }

  // Consume a specific keyword if it is the next identifier.
  bool try_keyword(const std::string& kw) {
    skip_ws();
    size_t save_pos = pos_;
    int save_line = line_, save_col = col_;
    std::string id = try_ident();
    if (id == kw) return true;
    pos_ = save_pos;
    line_ = save_line;
    col_ = save_col;
    return false;
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, line_, col_);
  }

  int line() const { return line_; }
  int column() const { return col_; }

 private:
  static bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n';
  }
  static bool is_ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)); }
  static bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  }

  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  std::string_view text_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

}  // namespace detail
}  // namespace spi

#endif  // SPI_SYNTAX_HPP
