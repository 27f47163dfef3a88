#include "lab/poly.hpp"

#include <map>

namespace lab {

namespace {

void enumerate(int nv, int deg, int v, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (v == nv - 1) {
    cur[v] = deg;
    out.push_back(cur);
    return;
  }
  for (int k = deg; k >= 0; --k) {
    cur[v] = k;
    enumerate(nv, deg - k, v + 1, cur, out);
  }
}

}  // namespace

PolySpace::PolySpace(int nv, int maxdeg) : nv_(nv), maxdeg_(maxdeg) {
  if (nv < 1 || maxdeg < 0) throw PreconditionError("PolySpace: bad shape");
  std::vector<int> cur(nv, 0);
  for (int d = 0; d <= maxdeg; ++d) {
    size_t before = exps_.size();
    enumerate(nv, d, 0, cur, exps_);
    deg_.insert(deg_.end(), exps_.size() - before, d);
  }
  const int n = size();
  mul_.assign(n * n, -1);
  der_.assign(n * nv, -1);
  for (int a = 0; a < n; ++a) {
    for (int b = 0; b < n; ++b) {
      if (deg_[a] + deg_[b] > maxdeg) continue;
      std::vector<int> e(nv);
      for (int v = 0; v < nv; ++v) e[v] = exps_[a][v] + exps_[b][v];
      mul_[a * n + b] = index(e);
    }
    for (int v = 0; v < nv; ++v) {
      if (exps_[a][v] == 0) continue;
      std::vector<int> e = exps_[a];
      --e[v];
      der_[a * nv + v] = index(e);
    }
  }
  parent_.assign(n, -1);
  pvar_.assign(n, -1);
  for (int a = 1; a < n; ++a)
    for (int v = 0; v < nv; ++v)
      if (exps_[a][v] > 0) {
        parent_[a] = der_[a * nv + v];
        pvar_[a] = v;
        break;
      }
}

void PolySpace::monomials(const double* z, double* out) const {
  out[0] = 1;
  for (int a = 1; a < size(); ++a) out[a] = out[parent_[a]] * z[pvar_[a]];
}

int PolySpace::index(const std::vector<int>& e) const {
  int d = 0;
  for (int x : e) d += x;
  if (d > maxdeg_) return -1;
  for (int k = 0; k < size(); ++k)
    if (deg_[k] == d && exps_[k] == e) return k;
  return -1;
}

Poly::Poly(std::shared_ptr<const PolySpace> sp) : sp_(std::move(sp)), c_(CVec::Zero(sp_->size())) {}
Poly::Poly(std::shared_ptr<const PolySpace> sp, CVec c) : sp_(std::move(sp)), c_(std::move(c)) {}

Poly Poly::operator+(const Poly& o) const { return Poly(sp_, c_ + o.c_); }
Poly Poly::operator-(const Poly& o) const { return Poly(sp_, c_ - o.c_); }
Poly Poly::operator*(cplx s) const { return Poly(sp_, c_ * s); }
Poly& Poly::operator+=(const Poly& o) {
  c_ += o.c_;
  return *this;
}

Poly Poly::operator*(const Poly& o) const {
  Poly r(sp_);
  const int n = sp_->size();
  for (int a = 0; a < n; ++a) {
    if (c_[a] == cplx(0)) continue;
    for (int b = 0; b < n; ++b) {
      int k = sp_->product(a, b);
      if (k >= 0 && o.c_[b] != cplx(0)) r.c_[k] += c_[a] * o.c_[b];
    }
  }
  return r;
}

Poly Poly::d(int v) const {
  Poly r(sp_);
  for (int a = 0; a < sp_->size(); ++a) {
    int k = sp_->deriv(a, v);
    if (k >= 0) r.c_[k] += c_[a] * static_cast<double>(sp_->exps(a)[v]);
  }
  return r;
}

Poly Poly::part(int k) const {
  Poly r(sp_);
  for (int a = 0; a < sp_->size(); ++a)
    if (sp_->degree(a) == k) r.c_[a] = c_[a];
  return r;
}

Poly Poly::upto(int k) const {
  Poly r(sp_);
  for (int a = 0; a < sp_->size(); ++a)
    if (sp_->degree(a) <= k) r.c_[a] = c_[a];
  return r;
}

cplx Poly::operator()(const Vec& z) const {
  std::vector<double> m(sp_->size());
  sp_->monomials(z.data(), m.data());
  return dot(m.data());
}

cplx Poly::dot(const double* monos) const {
  cplx s = 0;
  for (int a = 0; a < sp_->size(); ++a) s += c_[a] * monos[a];
  return s;
}

Poly Poly::variable(std::shared_ptr<const PolySpace> sp, int v) {
  Poly r(sp);
  std::vector<int> e(sp->nvars(), 0);
  e[v] = 1;
  r.c_[sp->index(e)] = 1;
  return r;
}

Poly Poly::constant(std::shared_ptr<const PolySpace> sp, cplx c) {
  Poly r(sp);
  r.c_[0] = c;
  return r;
}

Poly Poly::quadratic(std::shared_ptr<const PolySpace> sp, const CMat& Q) {
  Poly r(sp);
  const int n = sp->nvars();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<int> e(n, 0);
      ++e[i];
      ++e[j];
      r.c_[sp->index(e)] += Q(i, j);
    }
  return r;
}

Poly compose(const Poly& p, const std::vector<Poly>& sub) {
  const PolySpace& sp = p.space();
  if (static_cast<int>(sub.size()) != sp.nvars()) throw PreconditionError("compose: arity");
  auto tsp = sub[0].space_ptr();
  std::vector<Poly> mono;
  mono.reserve(sp.size());
  mono.push_back(Poly::constant(tsp, 1));
  Poly r = mono[0] * p[0];
  for (int a = 1; a < sp.size(); ++a) {
    mono.push_back(mono[sp.parent(a)] * sub[sp.pvar(a)]);
    if (p[a] != cplx(0)) r += mono[a] * p[a];
  }
  return r;
}

}  // namespace lab
