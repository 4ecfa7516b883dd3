#include "msub/geomcore.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <numeric>
#include <sstream>
#include <string>

#include "msub/binary_io.hpp"
#include "msub/error.hpp"
#include "msub/random.hpp"

namespace msub {

// ---------------------------------------------------------------------------
// TriMesh / PointCloud

void TriMesh::validate() const {
  if (vertices.rows() < 3) fail(ErrorCode::invalid_input, "mesh needs at least 3 vertices");
  if (faces.empty()) fail(ErrorCode::invalid_input, "mesh has no faces");
  const int n = static_cast<int>(vertices.rows());
  if (!vertices.allFinite()) fail(ErrorCode::invalid_input, "mesh has non-finite vertices");
  for (std::size_t f = 0; f < faces.size(); ++f) {
    for (int v : faces[f]) {
      if (v < 0 || v >= n)
        fail(ErrorCode::invalid_input, "face " + std::to_string(f) + " index out of range");
    }
    const Vec3 a = vertices.row(faces[f][0]);
    const Vec3 b = vertices.row(faces[f][1]);
    const Vec3 c = vertices.row(faces[f][2]);
    if ((b - a).cross(c - a).norm() <= 0.0)
      fail(ErrorCode::degenerate_input, "face " + std::to_string(f) + " has zero area");
  }
}

double TriMesh::area() const {
  double total = 0.0;
  for (const auto& f : faces) {
    const Vec3 a = vertices.row(f[0]);
    total += 0.5 * (Vec3(vertices.row(f[1])) - a).cross(Vec3(vertices.row(f[2])) - a).norm();
  }
  return total;
}

PointCloud PointCloud::from_flat(const Eigen::VectorXd& flat) {
  if (flat.size() % 3 != 0) fail(ErrorCode::invalid_input, "flat cloud length not a multiple of 3");
  Points p(flat.size() / 3, 3);
  std::copy(flat.data(), flat.data() + flat.size(), p.data());
  return PointCloud(std::move(p));
}

// ---------------------------------------------------------------------------
// KdTree3

KdTree3::KdTree3(const Points& points) : points_(points) {
  order_.resize(points.rows());
  std::iota(order_.begin(), order_.end(), 0);
  if (!order_.empty()) {
    nodes_.reserve(2 * order_.size() / 8 + 2);
    build(0, static_cast<int>(order_.size()), 0);
  }
}

int KdTree3::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= 8) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(Vec3(points_.row(order_[i])));
    hi = hi.cwiseMax(Vec3(points_.row(order_[i])));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double pa = points_(a, axis), pb = points_(b, axis);
                     return pa < pb || (pa == pb && a < b);
                   });
  (void)depth;
  const double split = points_(order_[mid], axis);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree3::search(int node_id, const Vec3& q, Hit& best) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[i];
      const double d = (Vec3(points_.row(idx)) - q).squaredNorm();
      if (d < best.squared_distance || (d == best.squared_distance && idx < best.index)) {
        best.squared_distance = d;
        best.index = idx;
      }
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const int near = delta < 0 ? node.left : node.right;
  const int far = delta < 0 ? node.right : node.left;
  search(near, q, best);
  if (delta * delta <= best.squared_distance) search(far, q, best);
}

KdTree3::Hit KdTree3::nearest(const Vec3& query) const {
  if (!query.allFinite()) fail(ErrorCode::numerical, "nearest-neighbour query has non-finite coordinates");
  Hit best{-1, std::numeric_limits<double>::infinity()};
  if (!nodes_.empty()) search(0, query, best);
  return best;
}

// ---------------------------------------------------------------------------
// Sampling and Chamfer

PointCloud sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (mesh.faces.empty() || mesh.vertices.rows() == 0)
    fail(ErrorCode::invalid_input, "sample_surface: empty mesh");
  if (count == 0) fail(ErrorCode::invalid_input, "sample_surface: count must be positive");

  std::vector<double> cumulative(mesh.faces.size());
  double total = 0.0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces[f][0]);
    const Vec3 b = mesh.vertices.row(mesh.faces[f][1]);
    const Vec3 c = mesh.vertices.row(mesh.faces[f][2]);
    total += 0.5 * (b - a).cross(c - a).norm();
    cumulative[f] = total;
  }
  if (!(total > 0.0)) fail(ErrorCode::invalid_input, "sample_surface: mesh has zero area");

  Rng rng(seed);
  Points out(static_cast<Eigen::Index>(count), 3);
  for (std::size_t s = 0; s < count; ++s) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    const Face& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
    out.row(static_cast<Eigen::Index>(s)) = wa * mesh.vertices.row(f[0]) +
                                            wb * mesh.vertices.row(f[1]) +
                                            wc * mesh.vertices.row(f[2]);
  }
  return PointCloud(std::move(out));
}

namespace {
double mean_nearest(const Points& from, const KdTree3& to) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < from.rows(); ++i) sum += to.nearest(from.row(i)).squared_distance;
  return sum / static_cast<double>(from.rows());
}
}  // namespace

double chamfer(const Points& a, const Points& b) {
  if (a.rows() == 0 || b.rows() == 0) fail(ErrorCode::invalid_input, "chamfer: empty cloud");
  const KdTree3 ta(a), tb(b);
  // Written as a commutative sum of the two directed terms so that
  // chamfer(a, b) == chamfer(b, a) bit for bit.
  const double ab = mean_nearest(a, tb);
  const double ba = mean_nearest(b, ta);
  return ab + ba;
}

double chamfer(const PointCloud& a, const PointCloud& b) { return chamfer(a.points, b.points); }

// ---------------------------------------------------------------------------
// Delaunay (incremental insertion, ghost triangles for the hull)

namespace {

constexpr int kInf = -1;
constexpr double kEps = 1e-12;

double orient(const Vec2& a, const Vec2& b, const Vec2& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

double incircle(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double alift = adx * adx + ady * ady;
  const double blift = bdx * bdx + bdy * bdy;
  const double clift = cdx * cdx + cdy * cdy;
  return alift * (bdx * cdy - bdy * cdx) + blift * (cdx * ady - cdy * adx) +
         clift * (adx * bdy - ady * bdx);
}

struct Tri {
  std::array<int, 3> v;  // ghost triangles store kInf in slot 2
  bool alive = true;
  bool ghost() const { return v[2] == kInf; }
};

std::string site_list(const std::vector<int>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size() && i < 8; ++i) {
    if (i) s += ", ";
    s += std::to_string(ids[i]);
  }
  if (ids.size() > 8) s += ", ...";
  return s;
}

class Builder {
 public:
  explicit Builder(const std::vector<Vec2>& pts) : p_(pts) {}

  // Ghost triangle (a, b, inf) stands for hull edge b -> a; it "contains" q when
  // q lies strictly outside that edge or on its open segment.
  bool conflicts(const Tri& t, const Vec2& q) const {
    if (t.ghost()) {
      const Vec2& a = p_[t.v[0]];
      const Vec2& b = p_[t.v[1]];
      const double o = orient(a, b, q);
      if (o > kEps) return true;
      if (o < -kEps) return false;
      const Vec2 ab = b - a;
      const double s = (q - a).dot(ab) / ab.squaredNorm();
      return s > kEps && s < 1.0 - kEps;
    }
    return incircle(p_[t.v[0]], p_[t.v[1]], p_[t.v[2]], q) > kEps;
  }

  void add(int a, int b, int c) {
    // canonical ghost layout keeps kInf last
    if (a == kInf) tris_.push_back({{b, c, kInf}});
    else if (b == kInf) tris_.push_back({{c, a, kInf}});
    else tris_.push_back({{a, b, c}});
  }

  void seed(int a, int b, int c) {
    if (orient(p_[a], p_[b], p_[c]) < 0) std::swap(b, c);
    add(a, b, c);
    add(b, a, kInf);
    add(c, b, kInf);
    add(a, c, kInf);
  }

  void insert(int q, const std::vector<int>& original_ids) {
    const Vec2& pq = p_[q];
    std::vector<int> bad;
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t)
      if (tris_[t].alive && conflicts(tris_[t], pq)) bad.push_back(t);
    if (bad.empty())
      fail(ErrorCode::degenerate_input,
           "delaunay: site " + std::to_string(original_ids[q]) + " could not be inserted");

    std::map<std::pair<int, int>, int> directed;
    for (int t : bad) {
      const auto& v = tris_[t].v;
      for (int e = 0; e < 3; ++e) directed[{v[e], v[(e + 1) % 3]}] += 1;
    }
    std::vector<std::pair<int, int>> boundary;
    for (const auto& [edge, count] : directed) {
      if (!directed.count({edge.second, edge.first})) boundary.push_back(edge);
    }
    for (int t : bad) tris_[t].alive = false;
    for (const auto& [u, w] : boundary) {
      if (u != kInf && w != kInf && orient(p_[u], p_[w], pq) <= kEps) {
        fail(ErrorCode::degenerate_input,
             "delaunay: degenerate configuration near sites " +
                 site_list({original_ids[u], original_ids[w], original_ids[q]}));
      }
      add(u, w, q);
    }
  }

  const std::vector<Tri>& tris() const { return tris_; }

 private:
  const std::vector<Vec2>& p_;
  std::vector<Tri> tris_;
};

}  // namespace

int Triangulation2D::edge_index(int a, int b) const {
  if (a > b) std::swap(a, b);
  const std::array<int, 2> key{a, b};
  auto it = std::lower_bound(edges.begin(), edges.end(), key);
  if (it == edges.end() || *it != key) return -1;
  return static_cast<int>(it - edges.begin());
}

double Triangulation2D::triangle_area(int t) const {
  const auto& f = triangles[static_cast<std::size_t>(t)];
  return 0.5 * orient(sites[f[0]], sites[f[1]], sites[f[2]]);
}

// A site lying (numerically) on a hull edge produces a near-flat triangle
// glued to that edge. Peel such triangles so the site becomes a hull vertex.
static void peel_boundary_slivers(const std::vector<Vec2>& pts, std::vector<Face>& tris,
                           std::map<int, int>& hull_next) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::set<int> on_hull;
    for (const auto& [a, b] : hull_next) on_hull.insert(a);
    for (const auto& [u, v] : hull_next) {
      for (std::size_t t = 0; t < tris.size(); ++t) {
        const auto& f = tris[t];
        int w = -1;
        for (int e = 0; e < 3; ++e)
          if (f[e] == u && f[(e + 1) % 3] == v) w = f[(e + 2) % 3];
        if (w < 0) continue;
        const double len2 = (pts[v] - pts[u]).squaredNorm();
        const double rel = std::abs(orient(pts[u], pts[v], pts[w])) / len2;
        if (rel < 1e-9 && !on_hull.count(w)) {
          tris.erase(tris.begin() + static_cast<std::ptrdiff_t>(t));
          hull_next[u] = w;
          hull_next[w] = v;
          changed = true;
        }
        break;
      }
      if (changed) break;
    }
  }
}

Triangulation2D delaunay(std::span<const Vec2> sites) {
  const int n = static_cast<int>(sites.size());
  if (n < 3) fail(ErrorCode::degenerate_input, "delaunay: need at least 3 sites");
  for (int i = 0; i < n; ++i)
    if (!sites[i].allFinite())
      fail(ErrorCode::invalid_input, "delaunay: site " + std::to_string(i) + " is not finite");

  // Lexicographic insertion order makes the result independent of input order.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sites[a].x() != sites[b].x()) return sites[a].x() < sites[b].x();
    if (sites[a].y() != sites[b].y()) return sites[a].y() < sites[b].y();
    return a < b;
  });
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n && sites[order[j]].x() - sites[order[i]].x() <= 1e-9; ++j) {
      if ((sites[order[j]] - sites[order[i]]).norm() <= 1e-9) {
        fail(ErrorCode::degenerate_input,
             "delaunay: duplicate sites " + std::to_string(std::min(order[i], order[j])) +
                 " and " + std::to_string(std::max(order[i], order[j])));
      }
    }
  }

  // Normalise into the unit box so that absolute predicate tolerances apply.
  Vec2 lo = sites[0], hi = sites[0];
  for (const auto& s : sites) {
    lo = lo.cwiseMin(s);
    hi = hi.cwiseMax(s);
  }
  const double scale = std::max((hi - lo).maxCoeff(), 1e-300);
  std::vector<Vec2> pts(n);
  for (int i = 0; i < n; ++i) pts[i] = (sites[order[i]] - lo) / scale;

  int third = -1;
  for (int i = 2; i < n; ++i) {
    if (std::abs(orient(pts[0], pts[1], pts[i])) > kEps) {
      third = i;
      break;
    }
  }
  if (third < 0) {
    std::vector<int> ids(order.begin(), order.end());
    std::sort(ids.begin(), ids.end());
    fail(ErrorCode::degenerate_input, "delaunay: all sites collinear (" + site_list(ids) + ")");
  }

  Builder builder(pts);
  builder.seed(0, 1, third);
  for (int i = 2; i < n; ++i)
    if (i != third) builder.insert(i, order);

  // Internal (sorted) indices until the end.
  std::map<int, int> hull_next;
  std::vector<Face> tris;
  for (const auto& t : builder.tris()) {
    if (!t.alive) continue;
    if (t.ghost()) {
      hull_next[t.v[1]] = t.v[0];
      continue;
    }
    tris.push_back({t.v[0], t.v[1], t.v[2]});
  }
  peel_boundary_slivers(pts, tris, hull_next);

  Triangulation2D out;
  out.sites.assign(sites.begin(), sites.end());
  {
    std::map<int, int> mapped;
    for (const auto& [a, b] : hull_next) mapped[order[a]] = order[b];
    hull_next = std::move(mapped);
  }
  for (const auto& f : tris) out.triangles.push_back({order[f[0]], order[f[1]], order[f[2]]});
  // Canonical labelling: rotate each triangle to start at its smallest index, sort.
  for (auto& f : out.triangles) {
    const auto m = std::min_element(f.begin(), f.end()) - f.begin();
    std::rotate(f.begin(), f.begin() + m, f.end());
  }
  std::sort(out.triangles.begin(), out.triangles.end());

  for (const auto& f : out.triangles) {
    for (int e = 0; e < 3; ++e) {
      int a = f[e], b = f[(e + 1) % 3];
      if (a > b) std::swap(a, b);
      out.edges.push_back({a, b});
    }
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());

  const int start = hull_next.begin()->first;
  int cur = start;
  do {
    out.hull.push_back(cur);
    cur = hull_next.at(cur);
  } while (cur != start && out.hull.size() <= static_cast<std::size_t>(n));
  return out;
}

bool is_delaunay(const Triangulation2D& tri, double tol) {
  Vec2 lo = tri.sites[0], hi = tri.sites[0];
  for (const auto& s : tri.sites) {
    lo = lo.cwiseMin(s);
    hi = hi.cwiseMax(s);
  }
  const double scale = std::max((hi - lo).maxCoeff(), 1e-300);
  auto norm = [&](int i) -> Vec2 { return (tri.sites[i] - lo) / scale; };
  for (const auto& f : tri.triangles) {
    const Vec2 a = norm(f[0]), b = norm(f[1]), c = norm(f[2]);
    if (orient(a, b, c) <= 0) return false;
    for (int s = 0; s < static_cast<int>(tri.sites.size()); ++s) {
      if (s == f[0] || s == f[1] || s == f[2]) continue;
      if (incircle(a, b, c, norm(s)) > tol) return false;
    }
  }
  return true;
}

Eigen::Vector3d barycentric(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& q) {
  const double det = orient(a, b, c);
  const double l1 = orient(q, b, c) / det;
  const double l2 = orient(a, q, c) / det;
  return {l1, l2, 1.0 - l1 - l2};
}

std::optional<Location> locate(const Triangulation2D& tri, const Vec2& q) {
  Location best;
  double best_min = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < tri.triangles.size(); ++t) {
    const auto& f = tri.triangles[t];
    const Eigen::Vector3d w = barycentric(tri.sites[f[0]], tri.sites[f[1]], tri.sites[f[2]], q);
    const double m = w.minCoeff();
    if (m > best_min) {
      best_min = m;
      best.triangle = static_cast<int>(t);
      best.barycentric = w;
    }
  }
  if (best_min < -1e-12) return std::nullopt;
  return best;
}

int voronoi_cell_of(std::span<const Vec2> sites, const Vec2& q) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < static_cast<int>(sites.size()); ++i) {
    const double d = (sites[i] - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace {
std::vector<Vec2> clip_halfplane(const std::vector<Vec2>& poly, const Vec2& normal, double offset) {
  // keep { x : normal . x <= offset }
  std::vector<Vec2> out;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[(i + 1) % n];
    const double da = normal.dot(a) - offset;
    const double db = normal.dot(b) - offset;
    if (da <= 0) out.push_back(a);
    if ((da < 0 && db > 0) || (da > 0 && db < 0)) {
      const double s = da / (da - db);
      out.push_back(a + s * (b - a));
    }
  }
  return out;
}
}  // namespace

std::vector<std::vector<Vec2>> voronoi_cells_clipped(std::span<const Vec2> sites,
                                                     std::span<const Vec2> boundary) {
  std::vector<std::vector<Vec2>> cells(sites.size());
  for (std::size_t i = 0; i < sites.size(); ++i) {
    std::vector<Vec2> cell(boundary.begin(), boundary.end());
    for (std::size_t j = 0; j < sites.size() && !cell.empty(); ++j) {
      if (i == j) continue;
      const Vec2 normal = sites[j] - sites[i];
      const double offset = normal.dot(0.5 * (sites[i] + sites[j]));
      cell = clip_halfplane(cell, normal, offset);
    }
    cells[i] = std::move(cell);
  }
  return cells;
}

double polygon_area(std::span<const Vec2> polygon) {
  double a = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Vec2& p = polygon[i];
    const Vec2& q = polygon[(i + 1) % polygon.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * a;
}

bool inside_convex(std::span<const Vec2> polygon, const Vec2& q, double tol) {
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Vec2& a = polygon[i];
    const Vec2& b = polygon[(i + 1) % polygon.size()];
    if (orient(a, b, q) < -tol * std::max(1.0, (b - a).norm())) return false;
  }
  return true;
}

Vec2 closest_on_polygon(std::span<const Vec2> polygon, const Vec2& q) {
  Vec2 best = polygon[0];
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Vec2& a = polygon[i];
    const Vec2& b = polygon[(i + 1) % polygon.size()];
    const Vec2 ab = b - a;
    const double s = std::clamp((q - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
    const Vec2 p = a + s * ab;
    const double d = (p - q).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

double distance_to_polygon(std::span<const Vec2> polygon, const Vec2& q) {
  return (closest_on_polygon(polygon, q) - q).norm();
}

// ---------------------------------------------------------------------------
// I/O

TriMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open mesh " + path.string());
  std::vector<Vec3> verts;
  TriMesh mesh;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x() >> p.y() >> p.z()))
        fail(ErrorCode::invalid_input, path.string() + ":" + std::to_string(line_no) + ": bad vertex");
      verts.push_back(p);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        const auto slash = tok.find('/');
        int i = 0;
        try {
          i = std::stoi(tok.substr(0, slash));
        } catch (const std::exception&) {
          fail(ErrorCode::invalid_input, path.string() + ":" + std::to_string(line_no) + ": bad face index");
        }
        idx.push_back(i > 0 ? i - 1 : static_cast<int>(verts.size()) + i);
      }
      if (idx.size() < 3)
        fail(ErrorCode::invalid_input, path.string() + ":" + std::to_string(line_no) + ": face needs 3 indices");
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.faces.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  mesh.validate();
  return mesh;
}

void write_obj(const TriMesh& mesh, const std::filesystem::path& path) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i)
    out << "v " << mesh.vertices(i, 0) << ' ' << mesh.vertices(i, 1) << ' ' << mesh.vertices(i, 2) << '\n';
  for (const auto& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  binio::write_file(path, out.str());
}

void write_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
  binio::Writer w;
  w.u64(cloud.size());
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i)
    for (int k = 0; k < 3; ++k) w.f32(static_cast<float>(cloud.points(i, k)));
  binio::write_file(path, w.bytes());
}

PointCloud read_cloud(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes, path.string());
  const auto n = r.u64();
  if (bytes.size() != 8 + n * 12) fail(ErrorCode::io, "cloud size mismatch: " + path.string());
  Points p(static_cast<Eigen::Index>(n), 3);
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (int k = 0; k < 3; ++k) p(i, k) = r.f32();
  return PointCloud(std::move(p));
}

TriMesh icosphere(int subdivisions) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<Face> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                         {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                         {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                         {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mids;
    auto mid = [&](int a, int b) {
      auto key = std::minmax(a, b);
      auto it = mids.find(key);
      if (it != mids.end()) return it->second;
      v.push_back((v[a] + v[b]).normalized());
      const int id = static_cast<int>(v.size()) - 1;
      mids[key] = id;
      return id;
    };
    std::vector<Face> next;
    for (const auto& tri : f) {
      const int a = mid(tri[0], tri[1]), b = mid(tri[1], tri[2]), c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  TriMesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (std::size_t i = 0; i < v.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = v[i];
  mesh.faces = std::move(f);
  return mesh;
}

}  // namespace msub
