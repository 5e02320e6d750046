#include "msmap/registration.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "msmap/error.hpp"

namespace msmap {

void IcpConfig::validate() const {
  if (max_iterations < 1) throw Error(ErrorCode::InvalidConfig, "icp max_iterations must be >= 1");
  if (!(max_correspondence_initial > 0.0) || !(max_correspondence_final > 0.0) || !(overlap_distance > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "icp distances must be positive");
  }
  if (!(trim_ratio >= 0.0 && trim_ratio < 0.5)) throw Error(ErrorCode::InvalidConfig, "icp trim_ratio outside [0, 0.5)");
  if (!(convergence_epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "icp convergence_epsilon must be positive");
}

double IcpConfig::gate(int iteration) const {
  if (schedule_iterations <= 1 || iteration >= schedule_iterations - 1) return max_correspondence_final;
  const double t = double(iteration) / double(schedule_iterations - 1);
  return max_correspondence_initial + t * (max_correspondence_final - max_correspondence_initial);
}

RegistrationTarget::RegistrationTarget(PointCloud cloud) : cloud_(std::move(cloud)), index_(cloud_) {}

RegistrationTarget::RegistrationTarget(PointCloud cloud, SpatialIndex index)
    : cloud_(std::move(cloud)), index_(std::move(index)) {
  if (index_.size() != cloud_.size()) throw Error(ErrorCode::InvalidConfig, "index does not match cloud");
}

namespace {

struct Match {
  Vec3 world;  // transformed source point
  std::uint32_t target;
  double distance;  // Euclidean
  double cost;      // squared point or plane residual
  bool plane;
  bool usable;  // false when the target point has no defined normal
};

class Matcher {
 public:
  Matcher(const PointCloud& source, const RegistrationTarget& target, const IcpConfig& cfg)
      : source_(source), target_(target), use_planes_(cfg.variant == IcpVariant::PointToPlane &&
                                                      target.cloud().has_normals()),
        trim_(cfg.trim_ratio),
        // nothing beyond the widest gate affects any cost
        reach_(std::max({cfg.max_correspondence_initial, cfg.max_correspondence_final, cfg.overlap_distance})) {}

  std::vector<Match> match(const Pose& t) const {
    std::vector<Match> out(source_.size());
    const Mat3 r = t.rotation_matrix();
    for (std::size_t i = 0; i < source_.size(); ++i) {
      Match& m = out[i];
      m.world = r * source_.points[i].cast<double>() + t.translation();
      const Neighbor nn = target_.index().nearest(m.world.cast<float>(), reach_);
      m.distance = nn.distance;
      m.plane = false;
      m.usable = true;
      if (!std::isfinite(nn.distance)) {
        m.target = 0;
        m.cost = 0.0;
        continue;
      }
      m.target = nn.id;
      const Vec3 q = target_.cloud().points[nn.id].cast<double>();
      if (use_planes_) {
        const Vec3f& n = target_.cloud().normals[nn.id];
        if (n.isZero()) {
          m.usable = false;
          m.cost = 0.0;
          continue;
        }
        const double e = n.cast<double>().dot(m.world - q);
        m.cost = e * e;
        m.plane = true;
        continue;
      }
      m.cost = (m.world - q).squaredNorm();
    }
    return out;
  }

  /// Trimmed mean of per-point costs truncated at gate^2.
  double objective(const std::vector<Match>& matches, double gate) const {
    std::vector<double> costs;
    costs.reserve(matches.size());
    const double cap = gate * gate;
    for (const auto& m : matches) {
      if (m.usable) costs.push_back(m.distance <= gate ? std::min(m.cost, cap) : cap);
    }
    if (costs.empty()) return cap;
    const std::size_t keep = kept(costs.size());
    std::nth_element(costs.begin(), costs.begin() + (keep - 1), costs.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += costs[i];
    return sum / double(keep);
  }

  /// Gauss-Newton increment (translation, rotation) applied on the left.
  std::optional<Vec6> step(const std::vector<Match>& matches, double gate) const {
    std::vector<std::pair<double, std::uint32_t>> inliers;
    for (std::uint32_t i = 0; i < matches.size(); ++i) {
      if (matches[i].usable && matches[i].distance <= gate) inliers.emplace_back(matches[i].cost, i);
    }
    if (inliers.empty()) return std::nullopt;
    std::size_t usable = 0;
    for (const auto& m : matches) usable += m.usable;
    const std::size_t keep = std::min(inliers.size(), kept(usable));
    std::nth_element(inliers.begin(), inliers.begin() + (keep - 1), inliers.end());

    Mat6 h = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    for (std::size_t k = 0; k < keep; ++k) {
      const Match& m = matches[inliers[k].second];
      const Vec3 q = target_.cloud().points[m.target].cast<double>();
      if (m.plane) {
        const Vec3 n = target_.cloud().normals[m.target].cast<double>();
        Vec6 j;
        j.head<3>() = n;
        j.tail<3>() = m.world.cross(n);
        const double e = n.dot(m.world - q);
        h.noalias() += j * j.transpose();
        b.noalias() += j * e;
      } else {
        Eigen::Matrix<double, 3, 6> j;
        j.leftCols<3>() = Mat3::Identity();
        j.rightCols<3>() = -skew(m.world);
        const Vec3 e = m.world - q;
        h.noalias() += j.transpose() * j;
        b.noalias() += j.transpose() * e;
      }
    }
    h.diagonal().array() += 1e-9 * (1.0 + h.diagonal().maxCoeff());
    Eigen::LDLT<Mat6> ldlt(h);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    Vec6 delta = -ldlt.solve(b);
    if (!delta.allFinite()) return std::nullopt;
    return delta;
  }

  double inlier_rms(const std::vector<Match>& matches, double gate) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& m : matches) {
      if (m.usable && m.distance <= gate) {
        sum += m.cost;
        ++n;
      }
    }
    return n == 0 ? gate : std::sqrt(sum / double(n));
  }

 private:
  std::size_t kept(std::size_t n) const {
    return std::max<std::size_t>(1, n - static_cast<std::size_t>(std::floor(trim_ * double(n))));
  }

  const PointCloud& source_;
  const RegistrationTarget& target_;
  bool use_planes_;
  double trim_;
  double reach_;
};

double overlap_from_matches(const std::vector<Match>& matches, double d) {
  std::size_t n = 0;
  for (const auto& m : matches) n += m.distance <= d;
  return double(n) / double(matches.size());
}

}  // namespace

IcpResult icp(const PointCloud& source, const RegistrationTarget& target, const Pose& initial_guess,
              const IcpConfig& cfg) {
  cfg.validate();
  if (source.empty()) throw Error(ErrorCode::EmptyCloud, "icp source is empty");
  const Matcher matcher(source, target, cfg);

  IcpResult result;
  Pose current = initial_guess;
  std::vector<Match> matches = matcher.match(current);
  result.cost_trace.push_back(matcher.objective(matches, cfg.gate(0)));

  for (int it = 0; it < cfg.max_iterations; ++it) {
    const double gate = cfg.gate(it);
    const double base = matcher.objective(matches, gate);
    const auto delta = matcher.step(matches, gate);
    if (!delta) {
      throw Error(ErrorCode::NoCorrespondences,
                  "no correspondences within " + std::to_string(gate) + " m at iteration " + std::to_string(it));
    }
    result.iterations = it + 1;

    // accept only non-increasing objective; halve the step otherwise
    bool accepted = false;
    Vec6 step = *delta;
    for (int attempt = 0; attempt < 4 && !accepted; ++attempt, step *= 0.5) {
      const Pose candidate = compose(exp_map(step), current);
      auto candidate_matches = matcher.match(candidate);
      const double cost = matcher.objective(candidate_matches, gate);
      if (cost <= base) {
        current = candidate;
        matches = std::move(candidate_matches);
        result.cost_trace.push_back(cost);
        accepted = true;
      }
    }
    if (!accepted) {
      result.converged = true;  // no descent from here
      break;
    }
    step *= 2.0;  // undo the post-loop halving
    if (step.norm() < cfg.convergence_epsilon) {
      result.converged = true;
      break;
    }
  }

  result.transform = current;
  const double final_gate = cfg.gate(result.iterations);
  result.rms_residual = matcher.inlier_rms(matches, final_gate);
  result.overlap_ratio = overlap_from_matches(matches, cfg.overlap_distance);
  return result;
}

IcpResult icp(const PointCloud& source, const PointCloud& target, const Pose& initial_guess, const IcpConfig& cfg) {
  return icp(source, RegistrationTarget(target), initial_guess, cfg);
}

double overlap_ratio(const PointCloud& source, const RegistrationTarget& target, const Pose& transform,
                     double d_overlap) {
  if (source.empty()) throw Error(ErrorCode::EmptyCloud, "overlap source is empty");
  std::size_t n = 0;
  for (const auto& p : source.points) n += target.index().nearest(transform.apply(p), d_overlap).distance <= d_overlap;
  return double(n) / double(source.size());
}

double overlap_ratio(const PointCloud& source, const PointCloud& target, const Pose& transform, double d_overlap) {
  return overlap_ratio(source, RegistrationTarget(target), transform, d_overlap);
}

bool better_registration(const IcpResult& a, const IcpResult& b) {
  if (a.converged != b.converged) return a.converged;
  if (a.overlap_ratio != b.overlap_ratio) return a.overlap_ratio > b.overlap_ratio;
  return a.rms_residual < b.rms_residual;
}

IcpResult multi_start_icp(const PointCloud& source, const RegistrationTarget& target, std::span<const Pose> seeds,
                          const IcpConfig& cfg) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "multi_start_icp needs at least one seed");
  std::optional<IcpResult> best;
  std::optional<Error> last_error;
  for (const auto& seed : seeds) {
    try {
      IcpResult r = icp(source, target, seed, cfg);
      if (!best || better_registration(r, *best)) best = std::move(r);
    } catch (const Error& e) {
      last_error = e;
    }
  }
  if (!best) throw *last_error;
  return *best;
}

IcpResult multi_start_icp(const PointCloud& source, const PointCloud& target, std::span<const Pose> seeds,
                          const IcpConfig& cfg) {
  return multi_start_icp(source, RegistrationTarget(target), seeds, cfg);
}

std::vector<Pose> yaw_variants(const Pose& prior, int count) {
  std::vector<Pose> seeds;
  for (int i = 0; i < count; ++i) {
    seeds.push_back(compose(prior, Pose::from_yaw(2.0 * std::numbers::pi * double(i) / double(count))));
  }
  return seeds;
}

}  // namespace msmap
