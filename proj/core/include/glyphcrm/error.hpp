#pragma once

#include <stdexcept>
#include <string>

namespace glyphcrm {

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement; message carries both shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed input file (BDF, corpus, config). line is 1-based, 0 = unknown.
class ParseError : public Error {
public:
    ParseError(const std::string& msg, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_ = 0;
};

// Character has no glyph in the active font.
class GlyphMissError : public Error {
public:
    GlyphMissError(const std::string& msg, char32_t cp) : Error(msg), cp_(cp) {}
    char32_t codepoint() const { return cp_; }

private:
    char32_t cp_;
};

// Bad run configuration (unknown key, inconsistent hyperparameters).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem / serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

// Task data file problem; line is 1-based.
class DataError : public Error {
public:
    DataError(const std::string& msg, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_ = 0;
};

// Non-finite value where a finite one is required (loss, gradient).
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace glyphcrm
