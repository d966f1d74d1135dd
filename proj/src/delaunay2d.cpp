#include "delaunay2d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace smac::detail {

namespace {

double orient2d(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                const Eigen::Vector2d& c) {
  return (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
}

// d strictly inside the circumcircle of CCW triangle (a, b, c). Evaluated
// relative to d for conditioning; near-zero values count as outside so that
// cocircular configurations resolve deterministically by insertion order.
bool in_circumcircle(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                     const Eigen::Vector2d& c, const Eigen::Vector2d& d,
                     double scale2) {
  const double adx = a.x() - d.x(), ady = a.y() - d.y();
  const double bdx = b.x() - d.x(), bdy = b.y() - d.y();
  const double cdx = c.x() - d.x(), cdy = c.y() - d.y();
  const double ad2 = adx * adx + ady * ady;
  const double bd2 = bdx * bdx + bdy * bdy;
  const double cd2 = cdx * cdx + cdy * cdy;
  const double det = adx * (bdy * cd2 - cdy * bd2) - ady * (bdx * cd2 - cdx * bd2) +
                     ad2 * (bdx * cdy - cdx * bdy);
  return det > 1e-12 * scale2 * scale2;
}

} // namespace

std::vector<Tri2d> delaunay2d(const std::vector<Eigen::Vector2d>& pts, double merge_tol) {
  const int n = static_cast<int>(pts.size());
  std::vector<Tri2d> out;
  if (n < 3) return out;

  // Bounding box and super-triangle (vertices n, n+1, n+2).
  Eigen::Vector2d lo = pts[0], hi = pts[0];
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double span = std::max({hi.x() - lo.x(), hi.y() - lo.y(), merge_tol, 1e-300});
  const Eigen::Vector2d mid = 0.5 * (lo + hi);
  std::vector<Eigen::Vector2d> P = pts;
  P.push_back(mid + Eigen::Vector2d(-20 * span, -10 * span));
  P.push_back(mid + Eigen::Vector2d(20 * span, -10 * span));
  P.push_back(mid + Eigen::Vector2d(0, 20 * span));

  struct Tri {
    int a, b, c;
    bool alive;
  };
  std::vector<Tri> tris;
  tris.push_back({n, n + 1, n + 2, true});

  std::vector<int> inserted;
  std::vector<std::array<int, 2>> frontier;
  for (int ip = 0; ip < n; ++ip) {
    bool dup = false;
    for (int q : inserted) {
      if ((P[static_cast<size_t>(ip)] - P[static_cast<size_t>(q)]).norm() <= merge_tol) {
        dup = true;
        break;
      }
    }
    if (dup) continue;

    // Cavity: triangles whose circumcircle contains the new point.
    frontier.clear();
    bool any_bad = false;
    for (auto& t : tris) {
      if (!t.alive) continue;
      Eigen::Vector2d a = P[static_cast<size_t>(t.a)], b = P[static_cast<size_t>(t.b)],
                      c = P[static_cast<size_t>(t.c)];
      int ia = t.a, ib = t.b, ic = t.c;
      if (orient2d(a, b, c) < 0) {
        std::swap(b, c);
        std::swap(ib, ic);
      }
      if (in_circumcircle(a, b, c, P[static_cast<size_t>(ip)], span)) {
        t.alive = false;
        any_bad = true;
        const std::array<std::array<int, 2>, 3> edges{{{ia, ib}, {ib, ic}, {ic, ia}}};
        for (const auto& e : edges) {
          // An edge shared by two cavity triangles appears twice in opposite
          // orientation; keep only boundary edges.
          auto rev = std::find_if(frontier.begin(), frontier.end(), [&](const auto& f) {
            return f[0] == e[1] && f[1] == e[0];
          });
          if (rev != frontier.end())
            frontier.erase(rev);
          else
            frontier.push_back(e);
        }
      }
    }
    if (!any_bad) continue; // exactly on an edge of the hull with tolerance; skip

    for (const auto& e : frontier) tris.push_back({e[0], e[1], ip, true});
    inserted.push_back(ip);
  }

  for (const auto& t : tris) {
    if (!t.alive) continue;
    if (t.a >= n || t.b >= n || t.c >= n) continue;
    out.push_back({t.a, t.b, t.c});
  }
  return out;
}

} // namespace smac::detail
