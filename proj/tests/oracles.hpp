#pragma once

// Independent reference computations for the tests. Each one is written from
// the textbook definition and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

namespace oracle {

struct Obs {
    double time;
    bool event;
    double weight = 1.0;
};

/// Product-limit estimate at t by direct enumeration of the distinct event
/// times not after t. O(n^2).
inline double km_at(const std::vector<Obs>& data, double t) {
    std::vector<double> times;
    for (const auto& o : data)
        if (o.event && o.time <= t) times.push_back(o.time);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    double s = 1.0;
    for (double u : times) {
        double at_risk = 0.0, died = 0.0;
        for (const auto& o : data) {
            if (o.time >= u) at_risk += o.weight;
            if (o.time == u && o.event) died += o.weight;
        }
        s *= 1.0 - died / at_risk;
    }
    return s;
}

/// Integral of the product-limit step function over [0, tau] by summing
/// rectangles between consecutive jump times.
inline double rmst(const std::vector<Obs>& data, double tau) {
    std::vector<double> cuts{0.0};
    for (const auto& o : data)
        if (o.event && o.time < tau) cuts.push_back(o.time);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    cuts.push_back(tau);
    double area = 0.0;
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) area += km_at(data, cuts[k]) * (cuts[k + 1] - cuts[k]);
    return area;
}

/// Weighted Breslow partial log-likelihood of a two-arm Cox model, summed
/// subject by subject (z = 1 for arm A).
inline double cox_loglik(const std::vector<Obs>& a, const std::vector<Obs>& b, double beta) {
    struct Row {
        Obs o;
        double z;
    };
    std::vector<Row> rows;
    for (const auto& o : a) rows.push_back({o, 1.0});
    for (const auto& o : b) rows.push_back({o, 0.0});
    double ll = 0.0;
    for (const auto& r : rows) {
        if (!r.o.event) continue;
        double denom = 0.0;
        for (const auto& q : rows)
            if (q.o.time >= r.o.time) denom += q.o.weight * std::exp(beta * q.z);
        ll += r.o.weight * (beta * r.z - std::log(denom));
    }
    return ll;
}

/// Golden-section maximization of a unimodal function on [lo, hi].
inline double argmax(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = f(c), fd = f(d);
    for (int i = 0; i < iters; ++i) {
        if (fc > fd) {
            b = d, d = c, fd = fc;
            c = b - g * (b - a), fc = f(c);
        } else {
            a = c, c = d, fc = fd;
            d = a + g * (b - a), fd = f(d);
        }
    }
    return 0.5 * (a + b);
}

/// Plain grid search on [lo, hi] with a given spacing.
inline double grid_argmax(const std::function<double(double)>& f, double lo, double hi, double step) {
    double best = lo, best_v = -std::numeric_limits<double>::infinity();
    for (double x = lo; x <= hi + 1e-15; x += step) {
        const double v = f(x);
        if (v > best_v) best_v = v, best = x;
    }
    return best;
}

/// Root of a monotone increasing function by bisection.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, int iters = 200) {
    for (int i = 0; i < iters; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

/// Tilted weights q_i exp(nu x_i) / Z.
inline std::vector<double> tilt_weights(const std::vector<double>& q, const std::vector<std::vector<double>>& phi,
                                        const std::vector<double>& nu) {
    std::vector<double> s(q.size(), 0.0);
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = 0; j < nu.size(); ++j) s[i] += nu[j] * phi[i][j];
    const double top = *std::max_element(s.begin(), s.end());
    std::vector<double> w(q.size());
    double z = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        w[i] = q[i] * std::exp(s[i] - top);
        z += w[i];
    }
    for (auto& x : w) x /= z;
    return w;
}

/// One-dimensional mean matching: the exponential tilt of q whose mean of
/// x equals target, found by bisection on the tilt parameter.
inline std::vector<double> mean_match_bisection(const std::vector<double>& q, const std::vector<double>& x,
                                                double target) {
    std::vector<std::vector<double>> phi;
    for (double v : x) phi.push_back({v - target});
    const auto mean_at = [&](double nu) {
        const auto w = tilt_weights(q, phi, {nu});
        double m = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) m += w[i] * (x[i] - target);
        return m;
    };
    return tilt_weights(q, phi, {bisect(mean_at, -60.0, 60.0)});
}

/// All-hard entropy balancing by gradient descent on the dual
/// log sum_i q_i exp(nu . (phi_i - c)) with a fixed step 1 / L, where L
/// bounds the largest eigenvalue of the weighted covariance.
inline std::vector<double> gradient_descent_dual(const std::vector<double>& q,
                                                 const std::vector<std::vector<double>>& phi,
                                                 const std::vector<double>& target, int iters = 200000) {
    const std::size_t k = target.size();
    double lmax = 0.0;
    for (const auto& row : phi) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += (row[j] - target[j]) * (row[j] - target[j]);
        lmax = std::max(lmax, s);
    }
    const double step = 1.0 / std::max(lmax, 1e-9);
    std::vector<double> nu(k, 0.0);
    for (int it = 0; it < iters; ++it) {
        const auto w = tilt_weights(q, phi, nu);
        std::vector<double> grad(k, 0.0);
        double gn = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i)
            for (std::size_t j = 0; j < k; ++j) grad[j] += w[i] * (phi[i][j] - target[j]);
        for (std::size_t j = 0; j < k; ++j) gn += grad[j] * grad[j];
        if (std::sqrt(gn) < 1e-15) break;
        for (std::size_t j = 0; j < k; ++j) nu[j] -= step * grad[j];
    }
    return tilt_weights(q, phi, nu);
}

/// Tilted finite law p_k exp(sum_j lambda_j f_j(y_k)) / Z.
inline std::vector<double> tilted_law(const std::vector<double>& support, const std::vector<double>& p,
                                      const std::vector<std::function<double(double)>>& f,
                                      const std::vector<double>& lambda) {
    std::vector<double> out(p.size());
    double z = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) s += lambda[j] * f[j](support[k]);
        out[k] = p[k] * std::exp(s);
        z += out[k];
    }
    for (auto& x : out) x /= z;
    return out;
}

inline double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
    return 0.5 * s;
}

/// Newton solve of the conditional dual for finite per-group laws:
/// sum_g pi_g E_{tilt_g}[f] = c, with pi_g the group shares of the cohort.
inline std::vector<double> conditional_dual_newton(const std::vector<double>& group_share,
                                                   const std::vector<std::vector<double>>& support,
                                                   const std::vector<std::vector<double>>& prob,
                                                   const std::vector<std::function<double(double)>>& f,
                                                   const std::vector<double>& target) {
    const std::size_t J = target.size();
    std::vector<double> lambda(J, 0.0);
    for (int it = 0; it < 100; ++it) {
        std::vector<double> g(J, 0.0);
        std::vector<double> h(J * J, 0.0);
        for (std::size_t grp = 0; grp < group_share.size(); ++grp) {
            const auto law = tilted_law(support[grp], prob[grp], f, lambda);
            std::vector<double> mean(J, 0.0);
            for (std::size_t k = 0; k < law.size(); ++k)
                for (std::size_t j = 0; j < J; ++j) mean[j] += law[k] * f[j](support[grp][k]);
            for (std::size_t j = 0; j < J; ++j) g[j] += group_share[grp] * mean[j];
            for (std::size_t k = 0; k < law.size(); ++k)
                for (std::size_t a = 0; a < J; ++a)
                    for (std::size_t b = 0; b < J; ++b)
                        h[a * J + b] += group_share[grp] * law[k] * (f[a](support[grp][k]) - mean[a]) *
                                        (f[b](support[grp][k]) - mean[b]);
        }
        std::vector<double> r(J);
        for (std::size_t j = 0; j < J; ++j) r[j] = target[j] - g[j];
        // Gaussian elimination on h * d = r
        std::vector<double> m = h;
        for (std::size_t c = 0; c < J; ++c) {
            std::size_t piv = c;
            for (std::size_t q = c + 1; q < J; ++q)
                if (std::abs(m[q * J + c]) > std::abs(m[piv * J + c])) piv = q;
            for (std::size_t q = 0; q < J; ++q) std::swap(m[c * J + q], m[piv * J + q]);
            std::swap(r[c], r[piv]);
            for (std::size_t q = c + 1; q < J; ++q) {
                const double fac = m[q * J + c] / m[c * J + c];
                for (std::size_t s = c; s < J; ++s) m[q * J + s] -= fac * m[c * J + s];
                r[q] -= fac * r[c];
            }
        }
        std::vector<double> d(J);
        for (std::size_t c = J; c-- > 0;) {
            double s = r[c];
            for (std::size_t q = c + 1; q < J; ++q) s -= m[c * J + q] * d[q];
            d[c] = s / m[c * J + c];
        }
        double dn = 0.0;
        for (std::size_t j = 0; j < J; ++j) lambda[j] += d[j], dn += d[j] * d[j];
        if (std::sqrt(dn) < 1e-14) break;
    }
    return lambda;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

} // namespace oracle
