#include "smac/point_cloud.hpp"

#include "smac/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

namespace smac {

namespace {

bool is_finite3(double x, double y, double z) {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return s;
}

} // namespace

int validate_and_merge(PointCloud4D& cloud) {
  const Eigen::Index n = cloud.size();
  if (cloud.color.size() != n)
    throw ValidationError("color length " + std::to_string(cloud.color.size()) +
                          " does not match point count " + std::to_string(n));
  if (n == 0) throw ValidationError("empty point cloud");

  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_finite3(cloud.positions(i, 0), cloud.positions(i, 1), cloud.positions(i, 2)) ||
        !std::isfinite(cloud.color(i)))
      throw ValidationError("non-finite value at point index " + std::to_string(i));
  }

  // Merge points with bit-identical coordinates, averaging their color and
  // keeping the first occurrence's slot.
  std::map<std::array<double, 3>, Eigen::Index> seen;
  std::vector<Eigen::Index> keep;
  std::vector<double> color_sum;
  std::vector<int> color_count;
  keep.reserve(static_cast<size_t>(n));
  int merged = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::array<double, 3> key{cloud.positions(i, 0), cloud.positions(i, 1),
                              cloud.positions(i, 2)};
    auto it = seen.find(key);
    if (it == seen.end()) {
      seen.emplace(key, static_cast<Eigen::Index>(keep.size()));
      keep.push_back(i);
      color_sum.push_back(cloud.color(i));
      color_count.push_back(1);
    } else {
      color_sum[static_cast<size_t>(it->second)] += cloud.color(i);
      color_count[static_cast<size_t>(it->second)] += 1;
      ++merged;
    }
  }
  if (merged > 0) {
    const Eigen::Index m = static_cast<Eigen::Index>(keep.size());
    Eigen::Matrix<double, Eigen::Dynamic, 3> pos(m, 3);
    Eigen::VectorXd col(m);
    for (Eigen::Index j = 0; j < m; ++j) {
      pos.row(j) = cloud.positions.row(keep[static_cast<size_t>(j)]);
      col(j) = color_sum[static_cast<size_t>(j)] / color_count[static_cast<size_t>(j)];
    }
    cloud.positions = std::move(pos);
    cloud.color = std::move(col);
  }
  return merged;
}

CloudFormat format_from_path(const std::filesystem::path& path) {
  const std::string ext = lower(path.extension().string());
  if (ext == ".csv") return CloudFormat::csv;
  if (ext == ".ply") return CloudFormat::ply;
  throw ParamError("cannot infer cloud format from extension '" + ext + "' of " +
                   path.string());
}

namespace {

PointCloud4D load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::array<double, 4>> rows;
  std::string line;
  long lineno = 0;
  long datarow = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip CR and whitespace-only lines
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (lineno == 1) {
      // optional header
      std::string h = lower(line);
      h.erase(std::remove_if(h.begin(), h.end(),
                             [](unsigned char c) { return std::isspace(c); }),
              h.end());
      if (h == "x,y,z,c") continue;
    }
    std::array<double, 4> v{};
    std::stringstream ss(line);
    std::string tok;
    int field = 0;
    while (std::getline(ss, tok, ',')) {
      if (field >= 4)
        throw ParseError(path.string() + ": line " + std::to_string(lineno) +
                         ": expected 4 fields");
      size_t pos = 0;
      try {
        v[static_cast<size_t>(field)] = std::stod(tok, &pos);
      } catch (const std::exception&) {
        throw ParseError(path.string() + ": line " + std::to_string(lineno) +
                         ": malformed number '" + tok + "'");
      }
      while (pos < tok.size() && std::isspace(static_cast<unsigned char>(tok[pos]))) ++pos;
      if (pos != tok.size())
        throw ParseError(path.string() + ": line " + std::to_string(lineno) +
                         ": malformed number '" + tok + "'");
      ++field;
    }
    if (field != 4)
      throw ParseError(path.string() + ": line " + std::to_string(lineno) +
                       ": expected 4 fields, got " + std::to_string(field));
    if (!is_finite3(v[0], v[1], v[2]) || !std::isfinite(v[3]))
      throw ValidationError(path.string() + ": non-finite value at row index " +
                            std::to_string(datarow));
    rows.push_back(v);
    ++datarow;
  }
  if (rows.empty()) throw ParseError(path.string() + ": no data rows");

  PointCloud4D cloud;
  cloud.positions.resize(static_cast<Eigen::Index>(rows.size()), 3);
  cloud.color.resize(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i) {
    cloud.positions(static_cast<Eigen::Index>(i), 0) = rows[i][0];
    cloud.positions(static_cast<Eigen::Index>(i), 1) = rows[i][1];
    cloud.positions(static_cast<Eigen::Index>(i), 2) = rows[i][2];
    cloud.color(static_cast<Eigen::Index>(i)) = rows[i][3];
  }
  cloud.id = path.stem().string();
  return cloud;
}

struct PlyProperty {
  std::string type;
  std::string name;
};

size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
      t == "float32")
    return 4;
  if (t == "double" || t == "float64" || t == "int64" || t == "uint64") return 8;
  throw ParseError("unsupported PLY property type '" + t + "'");
}

double read_scalar_le(const char* p, const std::string& t) {
  auto load = [&](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "float" || t == "float32") return load(float{});
  if (t == "double" || t == "float64") return load(double{});
  if (t == "char" || t == "int8") return load(std::int8_t{});
  if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
  if (t == "short" || t == "int16") return load(std::int16_t{});
  if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
  if (t == "int" || t == "int32") return load(std::int32_t{});
  if (t == "uint" || t == "uint32") return load(std::uint32_t{});
  throw ParseError("unsupported PLY property type '" + t + "'");
}

PointCloud4D load_ply(const std::filesystem::path& path, const CloudIoOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "ply") throw ParseError(path.string() + ": missing 'ply' magic");

  bool binary = false;
  long n_vertex = -1;
  std::vector<PlyProperty> props;
  bool in_vertex_element = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::stringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "comment" || kw == "obj_info") continue;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii")
        binary = false;
      else if (fmt == "binary_little_endian")
        binary = true;
      else
        throw ParseError(path.string() + ": unsupported PLY format '" + fmt + "'");
    } else if (kw == "element") {
      std::string name;
      long count = 0;
      ss >> name >> count;
      if (name == "vertex") {
        n_vertex = count;
        in_vertex_element = true;
      } else {
        if (count != 0)
          throw ParseError(path.string() + ": unsupported non-empty element '" + name + "'");
        in_vertex_element = false;
      }
    } else if (kw == "property") {
      if (!in_vertex_element) continue;
      PlyProperty p;
      ss >> p.type >> p.name;
      if (p.type == "list")
        throw ParseError(path.string() + ": list properties not supported on vertices");
      props.push_back(p);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (n_vertex < 0) throw ParseError(path.string() + ": no vertex element");

  int ix = -1, iy = -1, iz = -1, ic = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    if (props[i].name == "y") iy = static_cast<int>(i);
    if (props[i].name == "z") iz = static_cast<int>(i);
    if (props[i].name == opts.ply_color_property) ic = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw ParseError(path.string() + ": vertex element lacks x/y/z properties");
  if (ic < 0)
    throw ParseError(path.string() + ": vertex element lacks color property '" +
                     opts.ply_color_property + "'");

  PointCloud4D cloud;
  cloud.positions.resize(n_vertex, 3);
  cloud.color.resize(n_vertex);

  if (binary) {
    size_t stride = 0;
    std::vector<size_t> offsets(props.size());
    for (size_t i = 0; i < props.size(); ++i) {
      offsets[i] = stride;
      stride += ply_type_size(props[i].type);
    }
    std::vector<char> buf(stride);
    for (long i = 0; i < n_vertex; ++i) {
      in.read(buf.data(), static_cast<std::streamsize>(stride));
      if (!in)
        throw ParseError(path.string() + ": truncated vertex data at vertex " +
                         std::to_string(i));
      cloud.positions(i, 0) =
          read_scalar_le(buf.data() + offsets[static_cast<size_t>(ix)], props[static_cast<size_t>(ix)].type);
      cloud.positions(i, 1) =
          read_scalar_le(buf.data() + offsets[static_cast<size_t>(iy)], props[static_cast<size_t>(iy)].type);
      cloud.positions(i, 2) =
          read_scalar_le(buf.data() + offsets[static_cast<size_t>(iz)], props[static_cast<size_t>(iz)].type);
      cloud.color(i) =
          read_scalar_le(buf.data() + offsets[static_cast<size_t>(ic)], props[static_cast<size_t>(ic)].type);
    }
  } else {
    for (long i = 0; i < n_vertex; ++i) {
      if (!std::getline(in, line))
        throw ParseError(path.string() + ": truncated vertex data at vertex " +
                         std::to_string(i));
      std::stringstream ss(line);
      std::vector<double> vals(props.size());
      for (size_t j = 0; j < props.size(); ++j) {
        if (!(ss >> vals[j]))
          throw ParseError(path.string() + ": malformed vertex line " + std::to_string(i));
      }
      cloud.positions(i, 0) = vals[static_cast<size_t>(ix)];
      cloud.positions(i, 1) = vals[static_cast<size_t>(iy)];
      cloud.positions(i, 2) = vals[static_cast<size_t>(iz)];
      cloud.color(i) = vals[static_cast<size_t>(ic)];
    }
  }
  cloud.id = path.stem().string();
  return cloud;
}

void save_csv(const PointCloud4D& cloud, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,y,z,c\n";
  char buf[128];
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", cloud.positions(i, 0),
                  cloud.positions(i, 1), cloud.positions(i, 2), cloud.color(i));
    out << buf;
  }
  if (!out) throw IoError("write failure on " + path.string());
}

void save_ply(const PointCloud4D& cloud, const std::filesystem::path& path,
              const CloudIoOptions& opts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\n"
      << (opts.ply_binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
      << "element vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n"
      << "property double " << opts.ply_color_property << "\n"
      << "end_header\n";
  if (opts.ply_binary) {
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      double row[4] = {cloud.positions(i, 0), cloud.positions(i, 1), cloud.positions(i, 2),
                       cloud.color(i)};
      out.write(reinterpret_cast<const char*>(row), sizeof(row));
    }
  } else {
    char buf[160];
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g\n", cloud.positions(i, 0),
                    cloud.positions(i, 1), cloud.positions(i, 2), cloud.color(i));
      out << buf;
    }
  }
  if (!out) throw IoError("write failure on " + path.string());
}

} // namespace

PointCloud4D load_cloud(const std::filesystem::path& path, CloudFormat format,
                        const CloudIoOptions& opts) {
  if (!std::filesystem::exists(path)) throw IoError("file not found: " + path.string());
  PointCloud4D cloud =
      format == CloudFormat::csv ? load_csv(path) : load_ply(path, opts);
  const int merged = validate_and_merge(cloud);
  if (merged > 0)
    std::fprintf(stderr, "warning: %s: merged %d duplicate point(s)\n",
                 path.string().c_str(), merged);
  return cloud;
}

PointCloud4D load_cloud(const std::filesystem::path& path, const CloudIoOptions& opts) {
  return load_cloud(path, format_from_path(path), opts);
}

void save_cloud(const PointCloud4D& cloud, const std::filesystem::path& path,
                CloudFormat format, const CloudIoOptions& opts) {
  if (format == CloudFormat::csv)
    save_csv(cloud, path);
  else
    save_ply(cloud, path, opts);
}

void save_cloud(const PointCloud4D& cloud, const std::filesystem::path& path,
                const CloudIoOptions& opts) {
  save_cloud(cloud, path, format_from_path(path), opts);
}

} // namespace smac
