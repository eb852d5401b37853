#pragma once

#include <stdexcept>
#include <string>

namespace kgfuse {

// Base for everything thrown by the toolkit.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed config, unknown stage, invalid flag combination.
// The CLI maps these to exit code 1; all other Errors map to exit code 2.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed data file (TSV / JSONL); carries a line number when known.
struct ParseError : Error {
    ParseError(const std::string& file, long line, const std::string& msg)
        : Error(file + ":" + std::to_string(line) + ": " + msg), line_number(line) {}
    explicit ParseError(const std::string& msg) : Error(msg), line_number(-1) {}
    long line_number;
};

std::string trim(const std::string& s);
std::string lowercase(const std::string& s);
bool starts_with(const std::string& s, const std::string& prefix);
bool ends_with(const std::string& s, const std::string& suffix);

// Replaces every occurrence of `from` in `s` (non-overlapping, left to right).
std::string replace_all(std::string s, const std::string& from, const std::string& to);

}  // namespace kgfuse
