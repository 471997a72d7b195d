#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clue/autograd.hpp"

namespace clue {

static_assert(std::endian::native == std::endian::little,
              "weight manifests are little-endian; big-endian hosts are unsupported");

/// One row of `manifest.tsv`: name, dtype, comma-separated dims, file path
/// relative to the manifest directory.
struct ManifestEntry {
  std::string name;
  std::string dtype;
  Shape shape;
  std::string path;
};

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto file = dir / "manifest.tsv";
  std::ifstream in(file);
  if (!in) throw IoError("cannot open weight manifest " + file.string());
  std::vector<ManifestEntry> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (cols.size() != 4)
      throw FormatError(file.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated columns");
    ManifestEntry e{cols[0], cols[1], {}, cols[3]};
    std::stringstream ds(cols[2]);
    std::string d;
    while (std::getline(ds, d, ',')) {
      try {
        const long long v = std::stoll(d);
        if (v <= 0) throw FormatError("non-positive extent");
        e.shape.push_back(static_cast<std::size_t>(v));
      } catch (const std::exception&) {
        throw FormatError(file.string() + ":" + std::to_string(lineno) + ": bad dims '" + cols[2] + "'");
      }
    }
    rows.push_back(std::move(e));
  }
  return rows;
}

template <class T>
void write_weights(const ParameterSet<T>& params, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create weight directory " + dir.string() + ": " + ec.message());
  std::ofstream man(dir / "manifest.tsv", std::ios::binary);
  if (!man) throw IoError("cannot write " + (dir / "manifest.tsv").string());
  for (const auto& p : params) {
    const std::string rel = p.name + ".bin";
    man << p.name << '\t' << dtype_name<T>() << '\t';
    for (std::size_t i = 0; i < p.value().rank(); ++i) man << (i ? "," : "") << p.value().dim(i);
    man << '\t' << rel << '\n';
    std::ofstream bin(dir / rel, std::ios::binary);
    if (!bin) throw IoError("cannot write " + (dir / rel).string());
    bin.write(reinterpret_cast<const char*>(p.value().ptr()),
              static_cast<std::streamsize>(p.value().size() * sizeof(T)));
  }
  if (!man) throw IoError("failed writing weight manifest in " + dir.string());
}

/// Overwrites every parameter from the manifest. Names present in only one of
/// the two sides, shape or dtype disagreement, and missing or short files are
/// errors that name the offending parameter.
template <class T>
void read_weights(ParameterSet<T>& params, const std::filesystem::path& dir) {
  const auto rows = read_manifest(dir);
  std::set<std::string> seen;
  for (const auto& e : rows) {
    if (!params.contains(e.name)) throw FormatError("weight manifest names unknown parameter: " + e.name);
    if (!seen.insert(e.name).second) throw FormatError("weight manifest repeats parameter: " + e.name);
    auto& p = params.get(e.name);
    if (e.dtype != dtype_name<T>())
      throw FormatError("dtype mismatch for " + e.name + ": manifest " + e.dtype + ", model " + dtype_name<T>());
    if (e.shape != p.value().shape())
      throw DimensionError("shape mismatch for " + e.name + ": manifest " + shape_str(e.shape) + ", model " +
                           shape_str(p.value().shape()));
  }
  for (const auto& p : params)
    if (!seen.count(p.name)) throw FormatError("weight manifest is missing parameter: " + p.name);
  for (const auto& e : rows) {
    auto& p = params.get(e.name);
    const auto file = dir / e.path;
    std::ifstream bin(file, std::ios::binary);
    if (!bin) throw IoError("missing weight file for " + e.name + ": " + file.string());
    std::vector<T> buf(p.value().size());
    bin.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(T)));
    if (bin.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(T)))
      throw FormatError("weight file too short for " + e.name + ": " + file.string());
    char extra;
    if (bin.read(&extra, 1)) throw FormatError("weight file too long for " + e.name + ": " + file.string());
    p.mutable_value() = Tensor<T>(p.value().shape(), std::move(buf));
  }
}

/// Copy of the parameters whose names start with `prefix`, in model order.
template <class T>
ParameterSet<T> select_params(const ParameterSet<T>& params, const std::string& prefix) {
  ParameterSet<T> out;
  for (const auto& p : params)
    if (p.name.rfind(prefix, 0) == 0) out.add(p.name, p.value());
  return out;
}

/// Overwrites each parameter of `dst` that `src` also names.
template <class T>
void assign_params(ParameterSet<T>& dst, const ParameterSet<T>& src) {
  for (const auto& p : src) dst.get(p.name).mutable_value() = p.value();
}

}  // namespace clue
