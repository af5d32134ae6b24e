#pragma once

// Strict helpers over boost::property_tree INI files. Internal to dpc_core.

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <boost/property_tree/ptree.hpp>

#include "dpc/matrix.hpp"

namespace dpc::ini {

using Tree = boost::property_tree::ptree;

Tree read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Tree& tree);
Tree read_string(const std::string& text);
std::string write_string(const Tree& tree);

/// Shortest decimal text that reads back to the same double (17 digits).
std::string format_double(double v);
double parse_double(std::string_view text, std::string_view what);
std::uint64_t parse_u64(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);

/// Throws ConfigError if `tree` holds a section or key outside `allowed`.
void require_known_sections(const Tree& tree, std::initializer_list<std::string_view> allowed);
void require_known_keys(const Tree& section, std::string_view name,
                        std::initializer_list<std::string_view> allowed);

const Tree* find_section(const Tree& tree, std::string_view name);
const Tree& section(const Tree& tree, std::string_view name);
std::string get_string(const Tree& section, std::string_view key, std::string_view section_name);

// Optional readers: leave `out` untouched when the key is absent.
void read(const Tree& s, std::string_view section_name, std::string_view key, double& out);
void read(const Tree& s, std::string_view section_name, std::string_view key, bool& out);
void read(const Tree& s, std::string_view section_name, std::string_view key, std::string& out);

template <std::unsigned_integral T>
void read(const Tree& s, std::string_view section_name, std::string_view key, T& out) {
  std::string text;
  read(s, section_name, key, text);
  if (!text.empty()) {
    out = static_cast<T>(parse_u64(text, std::string(section_name) + "." + std::string(key)));
  }
}

/// Rows serialised as "rows x cols" plus one comma-separated key per row.
void put_matrix(Tree& section, std::string_view prefix, const Matrix& m);
Matrix get_matrix(const Tree& section, std::string_view prefix, std::string_view section_name);

}  // namespace dpc::ini
