#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "racer/config.hpp"

namespace racer::track {

struct CenterlinePose {
  double Xc = 0;         // [m]
  double Yc = 0;         // [m]
  double Phic = 0;       // tangent angle [rad]
  double curvature = 0;  // signed [1/m]
};

/// Contouring (lateral) and lag (longitudinal) errors of a position against
/// the centerline pose at progress theta, with gradients w.r.t. (X, Y, theta).
struct ContouringErrors {
  double ec = 0;
  double el = 0;
  Eigen::Vector3d grad_ec = Eigen::Vector3d::Zero();
  Eigen::Vector3d grad_el = Eigen::Vector3d::Zero();
};

/// Arc-length-parametrized piecewise-cubic centerline with constant
/// half-width. Immutable after build; all queries are read-only.
class Track {
 public:
  /// Fits a cubic spline through the waypoints (periodic when closed),
  /// re-parametrized to arc length on uniform knots. Throws
  /// std::invalid_argument on bad input and std::runtime_error when the
  /// geometry self-intersects within the track width.
  static Track build(const std::vector<Eigen::Vector2d>& waypoints, double half_width,
                     bool closed);

  /// Loads `width`, `closed`, and repeated `point = x y` keys. Errors
  /// accumulate on kv; returns nullopt if the track cannot be built.
  static std::optional<Track> from_kv(config::KV& kv);

  double length() const { return length_; }
  double half_width() const { return half_width_; }
  bool closed() const { return closed_; }

  /// Wraps modulo length (closed) or clamps to [0, length] (open).
  double wrap(double theta) const;

  CenterlinePose eval(double theta) const;

  /// Position and its first/second derivatives w.r.t. theta.
  void eval_derivs(double theta, Eigen::Vector2d& c, Eigen::Vector2d& d1,
                   Eigen::Vector2d& d2) const;

  /// Local squared-distance minimizer by Newton iteration from the hint;
  /// nullopt when it fails to converge (caller keeps the hint).
  std::optional<double> project(const Eigen::Vector2d& pos, double theta_hint) const;

  /// Projection without a hint: coarse scan over knots plus Newton refine.
  double project_global(const Eigen::Vector2d& pos) const;

  ContouringErrors contouring_errors(double X, double Y, double theta) const;

  /// Signed boundary distance ||pos - c(theta_proj)|| - (r - margin);
  /// <= 0 means inside the (tightened) track.
  double lateral_violation(const Eigen::Vector2d& pos, double margin,
                           double theta_hint) const;
  double lateral_violation_global(const Eigen::Vector2d& pos, double margin) const;

 private:
  Track() = default;

  int segment_index(double theta_wrapped) const;

  // Uniform-knot cubic segments: coefficients in local tau = theta - k*h_.
  std::vector<Eigen::Vector4d> cx_, cy_;  // [a, b, c, d]: a + b t + c t^2 + d t^3
  double h_ = 0;                          // knot spacing
  double length_ = 0;
  double half_width_ = 0;
  bool closed_ = true;
};

}  // namespace racer::track
