#include "racer/track.hpp"

#include <cmath>
#include <stdexcept>

namespace racer::track {

namespace {

// 5-point Gauss-Legendre on [-1, 1].
constexpr double kGLNode[5] = {-0.906179845938663993, -0.538469310105683091, 0.0,
                               0.538469310105683091, 0.906179845938663993};
constexpr double kGLWeight[5] = {0.236926885056189088, 0.478628670499366468,
                                 0.568888888888888889, 0.478628670499366468,
                                 0.236926885056189088};

struct Spline1D {
  std::vector<double> t;      // knots, size n+1 for closed (t[n] wraps), n for open
  std::vector<double> v;      // values at knots
  std::vector<double> m;      // second derivatives at knots
  bool closed = false;

  double eval(double tt, int seg, int deriv) const {
    const double h = t[seg + 1] - t[seg];
    const double a = (t[seg + 1] - tt) / h;
    const double b = (tt - t[seg]) / h;
    const double mk = m[seg], mk1 = m[seg + 1];
    const double vk = v[seg], vk1 = v[seg + 1];
    switch (deriv) {
      case 0:
        return a * vk + b * vk1 +
               ((a * a * a - a) * mk + (b * b * b - b) * mk1) * h * h / 6.0;
      case 1:
        return (vk1 - vk) / h +
               ((3 * b * b - 1) * mk1 - (3 * a * a - 1) * mk) * h / 6.0;
      default:
        return a * mk + b * mk1;
    }
  }
};

// Cubic spline second derivatives: natural ends (open) or periodic (closed).
// For closed input, knots/values must already wrap (t has n+1 entries with
// v[n] = v[0]).
void solve_spline(Spline1D& s) {
  const int n = static_cast<int>(s.t.size()) - 1;  // segment count
  s.m.assign(n + 1, 0.0);
  if (!s.closed) {
    if (n < 2) return;  // straight segment, natural spline is linear
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n - 1, n - 1);
    Eigen::VectorXd rhs(n - 1);
    for (int k = 1; k < n; ++k) {
      const double h0 = s.t[k] - s.t[k - 1];
      const double h1 = s.t[k + 1] - s.t[k];
      const int i = k - 1;
      if (i > 0) A(i, i - 1) = h0 / 6.0;
      A(i, i) = (h0 + h1) / 3.0;
      if (i < n - 2) A(i, i + 1) = h1 / 6.0;
      rhs(i) = (s.v[k + 1] - s.v[k]) / h1 - (s.v[k] - s.v[k - 1]) / h0;
    }
    const Eigen::VectorXd sol = A.partialPivLu().solve(rhs);
    for (int k = 1; k < n; ++k) s.m[k] = sol(k - 1);
    return;
  }
  // Periodic: unknowns m[0..n-1], m[n] = m[0]; cyclic tridiagonal system.
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd rhs(n);
  for (int k = 0; k < n; ++k) {
    const int prev = (k + n - 1) % n;
    const double h0 = s.t[(k == 0) ? n : k] - s.t[(k == 0) ? n - 1 : k - 1];
    const double h1 = s.t[k + 1] - s.t[k];
    A(k, prev) += h0 / 6.0;
    A(k, k) += (h0 + h1) / 3.0;
    A(k, (k + 1) % n) += h1 / 6.0;
    const double vprev = s.v[(k == 0) ? n - 1 : k - 1];
    rhs(k) = (s.v[k + 1] - s.v[k]) / h1 - (s.v[k] - vprev) / h0;
  }
  const Eigen::VectorXd sol = A.partialPivLu().solve(rhs);
  for (int k = 0; k < n; ++k) s.m[k] = sol(k);
  s.m[n] = s.m[0];
}

struct Spline2D {
  Spline1D x, y;

  int find_segment(double tt) const {
    const auto& t = x.t;
    int lo = 0, hi = static_cast<int>(t.size()) - 2;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (t[mid] <= tt) lo = mid;
      else hi = mid - 1;
    }
    return lo;
  }

  Eigen::Vector2d point(double tt) const {
    const int seg = find_segment(tt);
    return {x.eval(tt, seg, 0), y.eval(tt, seg, 0)};
  }

  double speed(double tt) const {
    const int seg = find_segment(tt);
    return std::hypot(x.eval(tt, seg, 1), y.eval(tt, seg, 1));
  }

  double segment_arclen(int seg, double a, double b) const {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double acc = 0;
    for (int q = 0; q < 5; ++q) {
      const double tt = mid + half * kGLNode[q];
      acc += kGLWeight[q] * std::hypot(x.eval(tt, seg, 1), y.eval(tt, seg, 1));
    }
    return acc * half;
  }
};

Spline2D fit_spline(const std::vector<Eigen::Vector2d>& pts, bool closed,
                    const std::vector<double>* params = nullptr) {
  const int n = static_cast<int>(pts.size());
  Spline2D sp;
  sp.x.closed = sp.y.closed = closed;
  const int nk = closed ? n + 1 : n;
  sp.x.t.resize(nk);
  sp.x.v.resize(nk);
  sp.y.v.resize(nk);
  if (params) {
    sp.x.t = *params;
  } else {
    sp.x.t[0] = 0;
    for (int i = 1; i < nk; ++i)
      sp.x.t[i] = sp.x.t[i - 1] + (pts[i % n] - pts[i - 1]).norm();
  }
  for (int i = 0; i < nk; ++i) {
    sp.x.v[i] = pts[i % n].x();
    sp.y.v[i] = pts[i % n].y();
  }
  sp.y.t = sp.x.t;
  solve_spline(sp.x);
  solve_spline(sp.y);
  return sp;
}

// Midpoint of chord (a, b) lifted onto the circumcircle through (p, a, b) or
// (a, b, q); exact for points sampled from a circle, chord midpoint for
// collinear data. One subdivision round before fitting keeps interpolating
// splines from cutting corners between sparse waypoints.
Eigen::Vector2d arc_midpoint(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                             const Eigen::Vector2d& b) {
  const Eigen::Vector2d u = a - p, w = b - p;
  const double d = 2.0 * (u.x() * w.y() - u.y() * w.x());
  const Eigen::Vector2d mid = 0.5 * (a + b);
  const double scale = std::max({u.norm(), w.norm(), (b - a).norm()});
  if (std::abs(d) < 1e-9 * scale * scale) return mid;  // collinear
  const double uu = u.squaredNorm(), ww = w.squaredNorm();
  const Eigen::Vector2d center =
      p + Eigen::Vector2d(w.y() * uu - u.y() * ww, u.x() * ww - w.x() * uu) / d;
  const double radius = (a - center).norm();
  Eigen::Vector2d dir = mid - center;
  const double dn = dir.norm();
  if (dn < 1e-12 * radius) return mid;  // diametral chord, direction undefined
  return center + dir * (radius / dn);
}

std::vector<Eigen::Vector2d> subdivide(const std::vector<Eigen::Vector2d>& pts,
                                       bool closed) {
  const int n = static_cast<int>(pts.size());
  std::vector<Eigen::Vector2d> out;
  out.reserve(2 * n);
  const int last = closed ? n : n - 1;
  for (int i = 0; i < last; ++i) {
    const Eigen::Vector2d& a = pts[i];
    const Eigen::Vector2d& b = pts[(i + 1) % n];
    out.push_back(a);
    // Average the two neighbor-based circumcircle estimates where available.
    Eigen::Vector2d m;
    const bool has_prev = closed || i > 0;
    const bool has_next = closed || i + 2 < n;
    const Eigen::Vector2d prev = pts[(i + n - 1) % n];
    const Eigen::Vector2d next = pts[(i + 2) % n];
    if (has_prev && has_next)
      m = 0.5 * (arc_midpoint(prev, a, b) + arc_midpoint(next, b, a));
    else if (has_prev)
      m = arc_midpoint(prev, a, b);
    else if (has_next)
      m = arc_midpoint(next, b, a);
    else
      m = 0.5 * (a + b);
    out.push_back(m);
  }
  if (!closed) out.push_back(pts[n - 1]);
  return out;
}

}  // namespace

Track Track::build(const std::vector<Eigen::Vector2d>& waypoints, double half_width,
                   bool closed) {
  if (waypoints.size() < 4)
    throw std::invalid_argument("track: need at least 4 waypoints");
  if (!(half_width > 0)) throw std::invalid_argument("track: half_width must be > 0");
  for (size_t i = 0; i + 1 < waypoints.size(); ++i)
    if ((waypoints[i + 1] - waypoints[i]).norm() < 1e-9)
      throw std::invalid_argument("track: duplicate consecutive waypoints");
  if (closed && (waypoints.front() - waypoints.back()).norm() < 1e-9)
    throw std::invalid_argument(
        "track: closed tracks must not repeat the first waypoint");

  // Stage 1: chord-parametrized spline through circle-refined waypoints.
  const std::vector<Eigen::Vector2d> refined = subdivide(waypoints, closed);
  const Spline2D chord = fit_spline(refined, closed);
  const double t_end = chord.x.t.back();
  const int nseg = static_cast<int>(chord.x.t.size()) - 1;

  // Stage 2: cumulative arc length on a fine sub-grid of each segment.
  const int sub = 16;
  std::vector<double> tab_t{0.0}, tab_s{0.0};
  for (int seg = 0; seg < nseg; ++seg) {
    const double a = chord.x.t[seg], b = chord.x.t[seg + 1];
    for (int j = 0; j < sub; ++j) {
      const double lo = a + (b - a) * j / sub;
      const double hi = a + (b - a) * (j + 1) / sub;
      tab_s.push_back(tab_s.back() + chord.segment_arclen(seg, lo, hi));
      tab_t.push_back(hi);
    }
  }
  const double total_len = tab_s.back();

  // Stage 3: resample uniformly in arc length (Newton-refined table inverse).
  const int K = std::max(64, static_cast<int>(std::lround(total_len / 0.05)));
  const int npts = closed ? K : K + 1;
  std::vector<Eigen::Vector2d> samples(npts);
  size_t cursor = 0;
  for (int i = 0; i < npts; ++i) {
    const double target = total_len * i / K;
    while (cursor + 1 < tab_s.size() && tab_s[cursor + 1] < target) ++cursor;
    const double span = tab_s[cursor + 1] - tab_s[cursor];
    double tt = tab_t[cursor] +
                (tab_t[cursor + 1] - tab_t[cursor]) *
                    (span > 0 ? (target - tab_s[cursor]) / span : 0.0);
    for (int it = 0; it < 4; ++it) {
      const int seg = chord.find_segment(std::min(tt, t_end));
      const double s_here =
          tab_s[cursor] + chord.segment_arclen(seg, tab_t[cursor], tt);
      const double sp = chord.speed(std::min(tt, t_end));
      if (sp <= 0) break;
      tt -= (s_here - target) / sp;
      tt = std::clamp(tt, tab_t[cursor], tab_t[cursor + 1]);
    }
    samples[i] = chord.point(std::min(tt, t_end));
  }

  // Stage 4: refit on uniform arc-length knots.
  std::vector<double> params(K + 1);
  for (int i = 0; i <= K; ++i) params[i] = total_len * i / K;
  const Spline2D arc = fit_spline(samples, closed, &params);

  Track trk;
  trk.closed_ = closed;
  trk.half_width_ = half_width;
  trk.length_ = total_len;
  trk.h_ = total_len / K;
  trk.cx_.resize(K);
  trk.cy_.resize(K);
  for (int seg = 0; seg < K; ++seg) {
    // Convert Hermite/second-derivative form to local cubic coefficients.
    const double h = trk.h_;
    auto coeffs = [&](const Spline1D& s) {
      const double vk = s.v[seg], vk1 = s.v[seg + 1];
      const double mk = s.m[seg], mk1 = s.m[seg + 1];
      Eigen::Vector4d c;
      c(0) = vk;
      c(1) = (vk1 - vk) / h - h * (2 * mk + mk1) / 6.0;
      c(2) = mk / 2.0;
      c(3) = (mk1 - mk) / (6.0 * h);
      return c;
    };
    trk.cx_[seg] = coeffs(arc.x);
    trk.cy_[seg] = coeffs(arc.y);
  }

  // Reject centerlines whose far-apart sections pass within a track width.
  const double step = std::min(0.02, trk.length_ / 512);
  const int ns = static_cast<int>(trk.length_ / step);
  std::vector<Eigen::Vector2d> probe(ns);
  for (int i = 0; i < ns; ++i) {
    const CenterlinePose p = trk.eval(i * step);
    probe[i] = {p.Xc, p.Yc};
  }
  const double min_sep = 2.0 * half_width;
  for (int i = 0; i < ns; ++i) {
    for (int j = i + 1; j < ns; ++j) {
      double arc_gap = (j - i) * step;
      if (closed) arc_gap = std::min(arc_gap, trk.length_ - arc_gap);
      if (arc_gap < 3.0 * min_sep) continue;
      if ((probe[i] - probe[j]).norm() < min_sep)
        throw std::runtime_error("track: centerline self-intersects within track width");
    }
  }
  return trk;
}

std::optional<Track> Track::from_kv(config::KV& kv) {
  const double width = kv.require_double("width");
  const bool closed = kv.get_bool("closed", true);
  const std::vector<double> flat = kv.get_doubles("point");
  if (flat.size() % 2 != 0) kv.add_error("point list must hold x y pairs");
  if (flat.size() < 8) kv.add_error("need at least 4 waypoints");
  if (!kv.ok()) return std::nullopt;
  std::vector<Eigen::Vector2d> pts(flat.size() / 2);
  for (size_t i = 0; i < pts.size(); ++i) pts[i] = {flat[2 * i], flat[2 * i + 1]};
  try {
    return build(pts, width / 2.0, closed);
  } catch (const std::exception& e) {
    kv.add_error(e.what());
    return std::nullopt;
  }
}

double Track::wrap(double theta) const {
  if (!closed_) return std::clamp(theta, 0.0, length_);
  double t = std::fmod(theta, length_);
  if (t < 0) t += length_;
  return t;
}

int Track::segment_index(double tw) const {
  int idx = static_cast<int>(tw / h_);
  return std::clamp(idx, 0, static_cast<int>(cx_.size()) - 1);
}

void Track::eval_derivs(double theta, Eigen::Vector2d& c, Eigen::Vector2d& d1,
                        Eigen::Vector2d& d2) const {
  const double tw = wrap(theta);
  const int seg = segment_index(tw);
  const double t = tw - seg * h_;
  auto horner = [t](const Eigen::Vector4d& a, double& v, double& g, double& gg) {
    v = a(0) + t * (a(1) + t * (a(2) + t * a(3)));
    g = a(1) + t * (2 * a(2) + t * 3 * a(3));
    gg = 2 * a(2) + 6 * a(3) * t;
  };
  horner(cx_[seg], c.x(), d1.x(), d2.x());
  horner(cy_[seg], c.y(), d1.y(), d2.y());
}

CenterlinePose Track::eval(double theta) const {
  Eigen::Vector2d c, d1, d2;
  eval_derivs(theta, c, d1, d2);
  CenterlinePose pose;
  pose.Xc = c.x();
  pose.Yc = c.y();
  pose.Phic = std::atan2(d1.y(), d1.x());
  const double sp2 = d1.squaredNorm();
  pose.curvature = (d1.x() * d2.y() - d1.y() * d2.x()) / (sp2 * std::sqrt(sp2));
  return pose;
}

std::optional<double> Track::project(const Eigen::Vector2d& pos, double theta_hint) const {
  double theta = wrap(theta_hint);
  for (int it = 0; it < 20; ++it) {
    Eigen::Vector2d c, d1, d2;
    eval_derivs(theta, c, d1, d2);
    const Eigen::Vector2d r = pos - c;
    const double g = -r.dot(d1);
    if (std::abs(g) <= 1e-8) return theta;
    const double gp = d1.squaredNorm() - r.dot(d2);
    double step = (gp > 1e-12) ? -g / gp : -g;  // gradient step if not convex here
    step = std::clamp(step, -h_, h_);
    theta = wrap(theta + step);
  }
  return std::nullopt;
}

double Track::project_global(const Eigen::Vector2d& pos) const {
  const int K = static_cast<int>(cx_.size());
  double best_d2 = std::numeric_limits<double>::infinity();
  int best = 0;
  for (int i = 0; i < K; ++i) {
    const double d2 = (pos - Eigen::Vector2d(cx_[i](0), cy_[i](0))).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  double best_theta = best * h_;
  double best_dist = std::sqrt(best_d2);
  // Knot spacing is below the usual feature size, so refining from the best
  // knot and both neighbors covers the true minimizer.
  for (int off = -1; off <= 1; ++off) {
    if (const auto t = project(pos, (best + off) * h_)) {
      Eigen::Vector2d c, d1, d2v;
      eval_derivs(*t, c, d1, d2v);
      const double d = (pos - c).norm();
      if (d < best_dist) {
        best_dist = d;
        best_theta = *t;
      }
    }
  }
  return best_theta;
}

ContouringErrors Track::contouring_errors(double X, double Y, double theta) const {
  Eigen::Vector2d c, d1, d2;
  eval_derivs(theta, c, d1, d2);
  const double phic = std::atan2(d1.y(), d1.x());
  const double dphic = (d1.x() * d2.y() - d1.y() * d2.x()) / d1.squaredNorm();
  const double s = std::sin(phic), co = std::cos(phic);
  const double dx = X - c.x(), dy = Y - c.y();

  ContouringErrors e;
  e.ec = s * dx - co * dy;
  e.el = -co * dx - s * dy;
  e.grad_ec = {s, -co, dphic * (co * dx + s * dy) - s * d1.x() + co * d1.y()};
  e.grad_el = {-co, -s, dphic * (s * dx - co * dy) + co * d1.x() + s * d1.y()};
  return e;
}

double Track::lateral_violation(const Eigen::Vector2d& pos, double margin,
                                double theta_hint) const {
  const double theta = project(pos, theta_hint).value_or(theta_hint);
  Eigen::Vector2d c, d1, d2;
  eval_derivs(theta, c, d1, d2);
  return (pos - c).norm() - (half_width_ - margin);
}

double Track::lateral_violation_global(const Eigen::Vector2d& pos, double margin) const {
  const double theta = project_global(pos);
  Eigen::Vector2d c, d1, d2;
  eval_derivs(theta, c, d1, d2);
  return (pos - c).norm() - (half_width_ - margin);
}

}  // namespace racer::track
