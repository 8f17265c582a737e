#pragma once

// Straight-line reference for capsule projection, squash, routing (guided
// and masked) and the dual consistency loss. Deliberately shares no code
// with the library: plain nested vectors and loops only.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;    // row-major [rows][cols]
using Cube = std::vector<Mat>;   // [i][j][d]

// u[i][j][d] = sum_k h[i][k] * W[k][j * dc + d]
inline Cube project(const Mat& h, const Mat& W, std::size_t J, std::size_t dc) {
  Cube u(h.size(), Mat(J, Vec(dc, 0.0)));
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t d = 0; d < dc; ++d) {
        double acc = 0.0;
        for (std::size_t k = 0; k < h[i].size(); ++k) acc += h[i][k] * W[k][j * dc + d];
        u[i][j][d] = acc;
      }
  return u;
}

inline Vec squash(const Vec& s) {
  double sq = 0.0;
  for (double v : s) sq += v * v;
  Vec out(s.size(), 0.0);
  if (sq == 0.0) return out;
  const double norm = std::sqrt(sq);
  const double f = sq / (1.0 + sq) / norm;
  for (std::size_t d = 0; d < s.size(); ++d) out[d] = f * s[d];
  return out;
}

struct Routed {
  Mat omega;  // [J][dc]
  Mat c;      // [I][J]
};

// One round over the low capsules with rows[i] set and columns allowed[j] set.
inline Routed round(const Cube& u, const Mat& b, const std::vector<bool>& rows, const std::vector<bool>& allowed) {
  const std::size_t I = u.size(), J = allowed.size(), dc = u.empty() ? 0 : u[0][0].size();
  Routed r{Mat(J, Vec(dc, 0.0)), Mat(I, Vec(J, 0.0))};
  for (std::size_t i = 0; i < I; ++i) {
    if (!rows[i]) continue;
    double mx = -1e300;
    for (std::size_t j = 0; j < J; ++j)
      if (allowed[j] && b[i][j] > mx) mx = b[i][j];
    double z = 0.0;
    for (std::size_t j = 0; j < J; ++j)
      if (allowed[j]) z += std::exp(b[i][j] - mx);
    for (std::size_t j = 0; j < J; ++j)
      if (allowed[j]) r.c[i][j] = std::exp(b[i][j] - mx) / z;
  }
  for (std::size_t j = 0; j < J; ++j) {
    Vec s(dc, 0.0);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t d = 0; d < dc; ++d) s[d] += r.c[i][j] * u[i][j][d];
    r.omega[j] = squash(s);
  }
  return r;
}

// Guided routing for one decoder state z. Wb is [d + 2 dc][H], w is [H].
inline Routed guided(const Cube& u, const Vec& z, const Mat& Wb, const Vec& w, std::size_t iterations) {
  const std::size_t I = u.size(), J = u[0].size(), H = w.size();
  Mat b(I, Vec(J, 0.0));
  const std::vector<bool> rows(I, true), allowed(J, true);
  for (std::size_t it = 0; it < iterations; ++it) {
    const Routed r = round(u, b, rows, allowed);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        Vec x = z;
        x.insert(x.end(), u[i][j].begin(), u[i][j].end());
        x.insert(x.end(), r.omega[j].begin(), r.omega[j].end());
        double inc = 0.0;
        for (std::size_t h = 0; h < H; ++h) {
          double a = 0.0;
          for (std::size_t k = 0; k < x.size(); ++k) a += Wb[k][h] * x[k];
          inc += w[h] * std::tanh(a);
        }
        b[i][j] += inc;
      }
  }
  return round(u, b, rows, allowed);
}

// Unguided routing over selected rows and columns with b += u . omega.
inline Routed masked(const Cube& u, const std::vector<bool>& rows, const std::vector<bool>& allowed,
                     std::size_t iterations) {
  const std::size_t I = u.size(), J = allowed.size();
  Mat b(I, Vec(J, 0.0));
  for (std::size_t it = 0; it < iterations; ++it) {
    const Routed r = round(u, b, rows, allowed);
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t j = 0; j < J; ++j) {
        if (!allowed[j]) continue;
        double dot = 0.0;
        for (std::size_t d = 0; d < u[i][j].size(); ++d) dot += u[i][j][d] * r.omega[j][d];
        b[i][j] += dot;
      }
  }
  return round(u, b, rows, allowed);
}

// Mean over steps of the summed Euclidean distances between paired capsules.
inline double consistency(const std::vector<Mat>& student, const std::vector<Mat>& teacher) {
  double total = 0.0;
  for (std::size_t t = 0; t < student.size(); ++t)
    for (std::size_t j = 0; j < student[t].size(); ++j) {
      double sq = 0.0;
      for (std::size_t d = 0; d < student[t][j].size(); ++d) {
        const double diff = student[t][j][d] - teacher[t][j][d];
        sq += diff * diff;
      }
      total += std::sqrt(sq);
    }
  return total / static_cast<double>(student.size());
}

}  // namespace oracle
