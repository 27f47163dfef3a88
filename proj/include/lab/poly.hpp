#pragma once

#include "lab/core.hpp"

#include <memory>

namespace lab {

// Monomials in nv variables up to total degree maxdeg, graded order.
class PolySpace {
 public:
  PolySpace(int nv, int maxdeg);

  int nvars() const { return nv_; }
  int maxdeg() const { return maxdeg_; }
  int size() const { return static_cast<int>(exps_.size()); }
  const std::vector<int>& exps(int k) const { return exps_[k]; }
  int degree(int k) const { return deg_[k]; }
  // -1 if the exponent vector is not in the space
  int index(const std::vector<int>& e) const;
  int product(int a, int b) const { return mul_[a * size() + b]; }
  // index of d/dz_v of monomial k (coefficient = exponent), -1 if zero
  int deriv(int k, int v) const { return der_[k * nv_ + v]; }
  // values of all monomials at z (out has size())
  void monomials(const double* z, double* out) const;
  // monomial k = monomial parent(k) times z_{pvar(k)}, for k >= 1
  int parent(int k) const { return parent_[k]; }
  int pvar(int k) const { return pvar_[k]; }

 private:
  int nv_, maxdeg_;
  std::vector<std::vector<int>> exps_;
  std::vector<int> deg_, mul_, der_, parent_, pvar_;
};

// Complex polynomial over a shared space; products truncate at maxdeg.
class Poly {
 public:
  Poly() = default;
  explicit Poly(std::shared_ptr<const PolySpace> sp);
  Poly(std::shared_ptr<const PolySpace> sp, CVec c);

  const PolySpace& space() const { return *sp_; }
  std::shared_ptr<const PolySpace> space_ptr() const { return sp_; }
  CVec& coeffs() { return c_; }
  const CVec& coeffs() const { return c_; }
  cplx& operator[](int k) { return c_[k]; }
  cplx operator[](int k) const { return c_[k]; }

  Poly operator+(const Poly& o) const;
  Poly operator-(const Poly& o) const;
  Poly operator*(const Poly& o) const;
  Poly operator*(cplx s) const;
  Poly& operator+=(const Poly& o);
  Poly d(int v) const;
  // homogeneous part of degree k
  Poly part(int k) const;
  // drop terms above degree k
  Poly upto(int k) const;
  cplx operator()(const Vec& z) const;
  cplx dot(const double* monos) const;

  static Poly variable(std::shared_ptr<const PolySpace> sp, int v);
  static Poly constant(std::shared_ptr<const PolySpace> sp, cplx c);
  // sum_ij Q_ij z_i z_j
  static Poly quadratic(std::shared_ptr<const PolySpace> sp, const CMat& Q);

 private:
  std::shared_ptr<const PolySpace> sp_;
  CVec c_;
};

// p(sub_0, ..., sub_{nv-1}); the substituted polynomials share one space.
Poly compose(const Poly& p, const std::vector<Poly>& sub);

}  // namespace lab
