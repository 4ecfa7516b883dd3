#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace msub {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Face = std::array<int, 3>;

struct TriMesh {
  Points vertices;
  std::vector<Face> faces;

  std::size_t vertex_count() const { return static_cast<std::size_t>(vertices.rows()); }

  // Throws degenerate_input / invalid_input when the mesh breaks its invariants.
  void validate() const;
  double area() const;
};

/// Ordered point set. Index i of two clouds from the same generator refers to
/// the same semantic sample.
struct PointCloud {
  Points points;

  PointCloud() = default;
  explicit PointCloud(Points p) : points(std::move(p)) {}

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  bool empty() const { return points.rows() == 0; }

  Eigen::Map<const Eigen::VectorXd> flat() const {
    return {points.data(), points.size()};
  }
  Eigen::Map<Eigen::VectorXd> flat() { return {points.data(), points.size()}; }

  static PointCloud from_flat(const Eigen::VectorXd& flat);
};

// ---------------------------------------------------------------------------
// Nearest-neighbour queries

class KdTree3 {
 public:
  explicit KdTree3(const Points& points);

  struct Hit {
    int index = -1;
    double squared_distance = 0.0;
  };
  Hit nearest(const Vec3& query) const;

 private:
  struct Node {
    int begin, end;  // range into order_
    int left = -1, right = -1;
    int axis = -1;   // -1 marks a leaf
    double split = 0.0;
  };
  int build(int begin, int end, int depth);
  void search(int node, const Vec3& q, Hit& best) const;

  const Points& points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

PointCloud sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed);

/// Symmetric mean-of-squares Chamfer distance.
double chamfer(const PointCloud& a, const PointCloud& b);
double chamfer(const Points& a, const Points& b);

// ---------------------------------------------------------------------------
// 2D triangulation

struct Triangulation2D {
  std::vector<Vec2> sites;
  std::vector<Face> triangles;              // counter-clockwise
  std::vector<std::array<int, 2>> edges;    // (a < b), sorted
  std::vector<int> hull;                    // counter-clockwise

  // Index into edges for the pair (a, b), or -1.
  int edge_index(int a, int b) const;
  double triangle_area(int t) const;
};

Triangulation2D delaunay(std::span<const Vec2> sites);

/// Every triangle's circumcircle is empty of other sites (within tol).
bool is_delaunay(const Triangulation2D& tri, double tol = 1e-9);

struct Location {
  int triangle = -1;
  Eigen::Vector3d barycentric = Eigen::Vector3d::Zero();
};

std::optional<Location> locate(const Triangulation2D& tri, const Vec2& q);

Eigen::Vector3d barycentric(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& q);

int voronoi_cell_of(std::span<const Vec2> sites, const Vec2& q);

/// Voronoi cells intersected with a convex polygon (counter-clockwise).
std::vector<std::vector<Vec2>> voronoi_cells_clipped(std::span<const Vec2> sites,
                                                     std::span<const Vec2> boundary);

double polygon_area(std::span<const Vec2> polygon);
bool inside_convex(std::span<const Vec2> polygon, const Vec2& q, double tol = 1e-12);
Vec2 closest_on_polygon(std::span<const Vec2> polygon, const Vec2& q);
double distance_to_polygon(std::span<const Vec2> polygon, const Vec2& q);

// ---------------------------------------------------------------------------
// I/O

TriMesh read_obj(const std::filesystem::path& path);
void write_obj(const TriMesh& mesh, const std::filesystem::path& path);

// u64 count followed by little-endian f32 xyz triplets.
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);

TriMesh icosphere(int subdivisions);

}  // namespace msub
