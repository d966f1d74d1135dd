#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>

namespace smac {

// A 4D point cloud: 3D positions plus one scalar color attribute per point.
struct PointCloud4D {
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions;
  Eigen::VectorXd color;
  std::string id;

  Eigen::Index size() const { return positions.rows(); }
};

enum class CloudFormat { csv, ply };

struct CloudIoOptions {
  // Name of the PLY vertex property carrying the color attribute.
  std::string ply_color_property = "quality";
  // Write PLY as binary little-endian doubles (false = ASCII).
  bool ply_binary = true;
};

// Validates invariants (finite entries, matching lengths) and merges exact
// duplicate positions by averaging their color. Returns the number of points
// merged away, reported by load_cloud as a warning count.
int validate_and_merge(PointCloud4D& cloud);

CloudFormat format_from_path(const std::filesystem::path& path);

PointCloud4D load_cloud(const std::filesystem::path& path, CloudFormat format,
                        const CloudIoOptions& opts = {});
PointCloud4D load_cloud(const std::filesystem::path& path,
                        const CloudIoOptions& opts = {});

void save_cloud(const PointCloud4D& cloud, const std::filesystem::path& path,
                CloudFormat format, const CloudIoOptions& opts = {});
void save_cloud(const PointCloud4D& cloud, const std::filesystem::path& path,
                const CloudIoOptions& opts = {});

} // namespace smac
