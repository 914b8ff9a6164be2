#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rforge/corpus.hpp"

namespace rforge {

namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kValidation = 1;
inline constexpr int kRuntime = 2;
} // namespace exit_code

/// Entry point of the command-line tool. `args` excludes the program name.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

/// Flat key=value text; '#' starts a comment line. Throws ParseError with the line number.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_file(const std::filesystem::path& path);
std::string format_config(const std::map<std::string, std::string>& values);

/// 64-bit FNV-1a of the text, as 16 lowercase hex digits.
std::string fnv1a_hex(const std::string& text);

/// Static HTML view: gold rationale underlined, predicted rationale
/// highlighted, discovered shortcut spans struck through.
std::string render_html(std::span<const Document> docs, std::span<const Mask> predicted, const Vocabulary* vocabulary);

} // namespace rforge
