#include "signflip/family.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>

#include "signflip/errors.hpp"

namespace signflip {

namespace {

constexpr double kEps = DBL_EPSILON;
// Beyond this |eta| the logistic mean is within machine epsilon of 0 or 1.
constexpr double kLogitClamp = 36.04365338911715;  // -log(DBL_EPSILON)
constexpr double kMaxLogEta = 700.0;

}  // namespace

Family Family::from_name(std::string_view name) {
  if (name == "gaussian") return gaussian();
  if (name == "binomial") return binomial();
  if (name == "poisson") return poisson();
  throw InvalidArgument("unknown family '" + std::string(name) + "'");
}

std::string_view Family::name() const {
  switch (kind_) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::binomial: return "binomial";
    case FamilyKind::poisson: return "poisson";
  }
  return "?";
}

double Family::variance(double mu) const {
  switch (kind_) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::binomial: return std::max(mu * (1.0 - mu), kEps * kEps);
    case FamilyKind::poisson: return std::max(mu, kEps * kEps);
  }
  return 1.0;
}

double Family::variance_derivative(double mu) const {
  switch (kind_) {
    case FamilyKind::gaussian: return 0.0;
    case FamilyKind::binomial: return 1.0 - 2.0 * mu;
    case FamilyKind::poisson: return 1.0;
  }
  return 0.0;
}

bool Family::valid_mean(double mu) const {
  if (!std::isfinite(mu)) return false;
  switch (kind_) {
    case FamilyKind::gaussian: return true;
    case FamilyKind::binomial: return mu > 0.0 && mu < 1.0;
    case FamilyKind::poisson: return mu > 0.0;
  }
  return false;
}

bool Family::valid_response(double y) const {
  if (!std::isfinite(y)) return false;
  switch (kind_) {
    case FamilyKind::gaussian: return true;
    case FamilyKind::binomial: return y == 0.0 || y == 1.0;
    case FamilyKind::poisson: return y >= 0.0 && std::floor(y) == y;
  }
  return false;
}

double Family::initial_mean(double y) const {
  switch (kind_) {
    case FamilyKind::gaussian: return y;
    case FamilyKind::binomial: return (y + 0.5) / 2.0;
    case FamilyKind::poisson: return y + 0.1;
  }
  return y;
}

double Family::log_density(double y, double mu) const {
  switch (kind_) {
    case FamilyKind::gaussian: {
      const double r = y - mu;
      return -0.5 * (std::log(2.0 * M_PI) + r * r);
    }
    case FamilyKind::binomial: {
      const double m = std::clamp(mu, kEps * kEps, 1.0 - kEps);
      return y > 0.5 ? std::log(m) : std::log1p(-m);
    }
    case FamilyKind::poisson: {
      const double m = std::max(mu, kEps * kEps);
      return y * std::log(m) - m - std::lgamma(y + 1.0);
    }
  }
  return 0.0;
}

Link Family::canonical_link() const {
  switch (kind_) {
    case FamilyKind::gaussian: return Link::identity();
    case FamilyKind::binomial: return Link::logit();
    case FamilyKind::poisson: return Link::log();
  }
  return Link::identity();
}

bool Family::is_canonical(Link const& link) const { return link == canonical_link(); }

Link Link::from_name(std::string_view name) {
  if (name == "identity") return identity();
  if (name == "logit") return logit();
  if (name == "log") return log();
  throw InvalidArgument("unknown link '" + std::string(name) + "'");
}

std::string_view Link::name() const {
  switch (kind_) {
    case LinkKind::identity: return "identity";
    case LinkKind::logit: return "logit";
    case LinkKind::log: return "log";
  }
  return "?";
}

double Link::link(double mu) const {
  switch (kind_) {
    case LinkKind::identity: return mu;
    case LinkKind::logit: return std::log(mu / (1.0 - mu));
    case LinkKind::log: return std::log(mu);
  }
  return mu;
}

double Link::inverse(double eta) const {
  switch (kind_) {
    case LinkKind::identity: return eta;
    case LinkKind::logit: {
      const double e = std::clamp(eta, -kLogitClamp, kLogitClamp);
      return 1.0 / (1.0 + std::exp(-e));
    }
    case LinkKind::log: return std::max(std::exp(std::min(eta, kMaxLogEta)), kEps);
  }
  return eta;
}

double Link::mu_eta(double eta) const {
  switch (kind_) {
    case LinkKind::identity: return 1.0;
    case LinkKind::logit: {
      const double e = std::exp(-std::abs(eta));
      return std::max(e / ((1.0 + e) * (1.0 + e)), kEps);
    }
    case LinkKind::log: return std::max(std::exp(std::min(eta, kMaxLogEta)), kEps);
  }
  return 1.0;
}

double Link::mu_eta_derivative(double eta) const {
  switch (kind_) {
    case LinkKind::identity: return 0.0;
    case LinkKind::logit: {
      const double mu = inverse(eta);
      return mu * (1.0 - mu) * (1.0 - 2.0 * mu);
    }
    case LinkKind::log: return std::exp(std::min(eta, kMaxLogEta));
  }
  return 0.0;
}

}  // namespace signflip
