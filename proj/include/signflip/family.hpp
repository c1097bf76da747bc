#pragma once

#include <string>
#include <string_view>

namespace signflip {

enum class FamilyKind { gaussian, binomial, poisson };
enum class LinkKind { identity, logit, log };

class Link;

// Exponential dispersion family with a(phi) = 1. Only the pieces the score
// machinery and the IRLS fitter need: the variance function b''(theta(mu)),
// its derivative, support checks and the log-likelihood contribution.
class Family {
 public:
  constexpr explicit Family(FamilyKind kind = FamilyKind::gaussian) : kind_(kind) {}

  static Family gaussian() { return Family(FamilyKind::gaussian); }
  static Family binomial() { return Family(FamilyKind::binomial); }
  static Family poisson() { return Family(FamilyKind::poisson); }
  static Family from_name(std::string_view name);

  FamilyKind kind() const { return kind_; }
  std::string_view name() const;

  double variance(double mu) const;
  double variance_derivative(double mu) const;

  bool valid_mean(double mu) const;
  bool valid_response(double y) const;

  // Starting mean for IRLS, as in the usual glm() initialization.
  double initial_mean(double y) const;

  // Log-density of one observation with unit dispersion. The gaussian case is
  // handled separately by log_likelihood() because sigma^2 is profiled.
  double log_density(double y, double mu) const;

  bool is_canonical(Link const& link) const;
  Link canonical_link() const;

  friend bool operator==(const Family&, const Family&) = default;

 private:
  FamilyKind kind_;
};

class Link {
 public:
  constexpr explicit Link(LinkKind kind = LinkKind::identity) : kind_(kind) {}

  static Link identity() { return Link(LinkKind::identity); }
  static Link logit() { return Link(LinkKind::logit); }
  static Link log() { return Link(LinkKind::log); }
  static Link from_name(std::string_view name);

  LinkKind kind() const { return kind_; }
  std::string_view name() const;

  double link(double mu) const;
  double inverse(double eta) const;
  // d mu / d eta, bounded away from zero.
  double mu_eta(double eta) const;
  // d^2 mu / d eta^2, used by the observed information of non-canonical fits.
  double mu_eta_derivative(double eta) const;

  friend bool operator==(const Link&, const Link&) = default;

 private:
  LinkKind kind_;
};

}  // namespace signflip
