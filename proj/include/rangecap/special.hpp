#pragma once

#include <span>
#include <vector>

namespace rangecap {

/// lgamma(a) - lgamma(b) without cancellation when both arguments are large.
double log_gamma_diff(double a, double b);

/// Fills out[nu] = exp(-z) I_nu(z) for nu = 0..out.size()-1, z >= 0.
/// Series for tiny z, Miller backward recurrence normalised by
/// I_0 + 2 sum I_k = e^z in the bulk, Hankel expansion for z >> nu^2.
void scaled_bessel_i(double z, std::span<double> out);

/// Analytic continuation of sum over nonzero n in Z^d of |n|^{-s}
/// (Epstein zeta of the cubic lattice), for 0 < s < d.
double epstein_zeta(int d, double s);

/// Upper tail of the chi-square law with k degrees of freedom.
double chi_square_sf(double x, double dof);
/// Standard normal cumulative distribution.
double normal_cdf(double x);

/// Gauss-Legendre nodes and weights on [-1, 1].
void gauss_legendre(int n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace rangecap
