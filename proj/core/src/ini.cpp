#include "ini.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <fmt/format.h>

#include "dpc/errors.hpp"

namespace dpc::ini {

namespace {

bool contains(std::initializer_list<std::string_view> allowed, std::string_view name) {
  return std::find(allowed.begin(), allowed.end(), name) != allowed.end();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Tree read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  Tree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.message()));
  }
  return tree;
}

void write_file(const std::filesystem::path& path, const Tree& tree) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  boost::property_tree::write_ini(out, tree);
}

Tree read_string(const std::string& text) {
  std::istringstream in(text);
  Tree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(e.message());
  }
  return tree;
}

std::string write_string(const Tree& tree) {
  std::ostringstream out;
  boost::property_tree::write_ini(out, tree);
  return out.str();
}

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

double parse_double(std::string_view text, std::string_view what) {
  text = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", what, text));
  }
  return v;
}

std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  text = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", what, text));
  }
  return v;
}

bool parse_bool(std::string_view text, std::string_view what) {
  text = trim(text);
  if (text == "true" || text == "on" || text == "1") return true;
  if (text == "false" || text == "off" || text == "0") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean", what, text));
}

void require_known_sections(const Tree& tree, std::initializer_list<std::string_view> allowed) {
  for (const auto& [name, child] : tree) {
    if (child.empty()) throw ConfigError(fmt::format("key '{}' outside any section", name));
    if (!contains(allowed, name)) throw ConfigError(fmt::format("unknown section [{}]", name));
  }
}

void require_known_keys(const Tree& section, std::string_view name,
                        std::initializer_list<std::string_view> allowed) {
  for (const auto& [key, child] : section) {
    if (!contains(allowed, key)) throw ConfigError(fmt::format("unknown key {}.{}", name, key));
  }
}

const Tree* find_section(const Tree& tree, std::string_view name) {
  const auto it = tree.find(std::string(name));
  return it == tree.not_found() ? nullptr : &it->second;
}

const Tree& section(const Tree& tree, std::string_view name) {
  const Tree* s = find_section(tree, name);
  if (s == nullptr) throw ConfigError(fmt::format("missing section [{}]", name));
  return *s;
}

std::string get_string(const Tree& s, std::string_view key, std::string_view section_name) {
  const auto it = s.find(std::string(key));
  if (it == s.not_found()) throw ConfigError(fmt::format("missing key {}.{}", section_name, key));
  return std::string(trim(it->second.data()));
}

void read(const Tree& s, std::string_view section_name, std::string_view key, double& out) {
  const auto it = s.find(std::string(key));
  if (it != s.not_found()) out = parse_double(it->second.data(), fmt::format("{}.{}", section_name, key));
}

void read(const Tree& s, std::string_view section_name, std::string_view key, bool& out) {
  const auto it = s.find(std::string(key));
  if (it != s.not_found()) out = parse_bool(it->second.data(), fmt::format("{}.{}", section_name, key));
}

void read(const Tree& s, std::string_view, std::string_view key, std::string& out) {
  const auto it = s.find(std::string(key));
  if (it != s.not_found()) out = std::string(trim(it->second.data()));
}

void put_matrix(Tree& section, std::string_view prefix, const Matrix& m) {
  section.put(fmt::format("{}_shape", prefix), fmt::format("{}x{}", m.rows(), m.cols()));
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::string line;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) line += ", ";
      line += format_double(m(r, c));
    }
    section.put(fmt::format("{}_row{}", prefix, r), line);
  }
}

Matrix get_matrix(const Tree& section, std::string_view prefix, std::string_view section_name) {
  const std::string shape = get_string(section, fmt::format("{}_shape", prefix), section_name);
  const auto x = shape.find('x');
  if (x == std::string::npos) throw ConfigError(fmt::format("bad shape '{}' for {}", shape, prefix));
  const std::size_t rows = parse_u64(std::string_view(shape).substr(0, x), prefix);
  const std::size_t cols = parse_u64(std::string_view(shape).substr(x + 1), prefix);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::string key = fmt::format("{}_row{}", prefix, r);
    const std::string line = get_string(section, key, section_name);
    std::string_view rest = line;
    for (std::size_t c = 0; c < cols; ++c) {
      const auto comma = rest.find(',');
      const std::string_view cell = rest.substr(0, comma);
      m(r, c) = parse_double(cell, key);
      if (comma == std::string_view::npos) {
        if (c + 1 != cols) throw ConfigError(fmt::format("{}: expected {} values", key, cols));
        rest = {};
      } else {
        rest.remove_prefix(comma + 1);
      }
    }
    if (!trim(rest).empty()) throw ConfigError(fmt::format("{}: expected {} values", key, cols));
  }
  return m;
}

}  // namespace dpc::ini
