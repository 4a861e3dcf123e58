#include "tiltcal/survival.hpp"
#include "tiltcal/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tiltcal {

double AggregatedSurvival::total_weight() const {
    return std::accumulate(event_weight.begin(), event_weight.end(), 0.0) +
           std::accumulate(censor_weight.begin(), censor_weight.end(), 0.0);
}

AggregatedSurvival aggregate(const std::vector<WeightedTimeToEvent>& data) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (const auto& d : data) {
        if (!(d.time >= 0.0) || !std::isfinite(d.time)) fail(ErrorKind::Precondition, "survival times must be finite and >= 0");
        if (!(d.weight >= 0.0) || !std::isfinite(d.weight)) fail(ErrorKind::Precondition, "survival weights must be finite and >= 0");
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return data[a].time < data[b].time; });
    AggregatedSurvival agg;
    for (std::size_t idx : order) {
        const auto& d = data[idx];
        if (agg.times.empty() || agg.times.back() != d.time) {
            agg.times.push_back(d.time);
            agg.event_weight.push_back(0.0);
            agg.event_weight_sq.push_back(0.0);
            agg.censor_weight.push_back(0.0);
            agg.censor_weight_sq.push_back(0.0);
        }
        if (d.event) {
            agg.event_weight.back() += d.weight;
            agg.event_weight_sq.back() += d.weight * d.weight;
        } else {
            agg.censor_weight.back() += d.weight;
            agg.censor_weight_sq.back() += d.weight * d.weight;
        }
    }
    return agg;
}

SurvivalCurve weighted_km(const std::vector<WeightedTimeToEvent>& data) {
    require(!data.empty(), "weighted_km: no observations");
    return weighted_km(aggregate(data));
}

SurvivalCurve weighted_km(const AggregatedSurvival& data) {
    require(!data.times.empty(), "weighted_km: no observations");
    const double total = data.total_weight();
    if (!(total > 0.0)) fail(ErrorKind::DegenerateInput, "weighted_km: all weights are zero");
    SurvivalCurve curve;
    curve.points.reserve(data.times.size());
    double at_risk = total;
    double s = 1.0;
    for (std::size_t k = 0; k < data.times.size(); ++k) {
        const double d = data.event_weight[k];
        if (d > 0.0 && at_risk > 0.0) s *= std::max(0.0, 1.0 - d / at_risk);
        curve.points.push_back({data.times[k], s, at_risk, d});
        at_risk -= d + data.censor_weight[k];
        if (at_risk < 0.0) at_risk = 0.0;
    }
    return curve;
}

double curve_landmark(const SurvivalCurve& curve, double t) {
    const auto it = std::upper_bound(curve.points.begin(), curve.points.end(), t,
                                     [](double v, const CurvePoint& p) { return v < p.time; });
    if (it == curve.points.begin()) return curve.initial;
    return std::prev(it)->survival;
}

std::optional<double> curve_quantile(const SurvivalCurve& curve, double p) {
    require(p > 0.0 && p < 1.0, "curve_quantile: p must lie in (0, 1)");
    const double level = 1.0 - p + 1e-12;
    if (curve.initial <= level) return 0.0;
    for (const auto& pt : curve.points)
        if (pt.survival <= level) return pt.time;
    return std::nullopt;
}

double rmst(const SurvivalCurve& curve, double tau) {
    require(tau > 0.0, "rmst: tau must be > 0");
    double area = 0.0;
    double prev_t = 0.0;
    double prev_s = curve.initial;
    for (const auto& pt : curve.points) {
        if (pt.time >= tau) break;
        area += prev_s * (pt.time - prev_t);
        prev_t = pt.time;
        prev_s = pt.survival;
    }
    area += prev_s * (tau - prev_t);
    return area;
}

namespace {

struct MergedArms {
    std::vector<double> ea, ea2, ca2, eb, eb2, cb2; // per merged time
    std::vector<double> ra, rb;                     // weighted at-risk just before each time
};

MergedArms merge_arms(const AggregatedSurvival& a, const AggregatedSurvival& b) {
    MergedArms m;
    std::size_t i = 0, j = 0;
    const std::size_t na = a.times.size(), nb = b.times.size();
    std::vector<double> leave_a, leave_b;
    while (i < na || j < nb) {
        const double t = (j >= nb || (i < na && a.times[i] <= b.times[j])) ? a.times[i] : b.times[j];
        double ea = 0, ea2 = 0, ca = 0, ca2 = 0, eb = 0, eb2 = 0, cb = 0, cb2 = 0;
        if (i < na && a.times[i] == t) {
            ea = a.event_weight[i];
            ea2 = a.event_weight_sq[i];
            ca = a.censor_weight[i];
            ca2 = a.censor_weight_sq[i];
            ++i;
        }
        if (j < nb && b.times[j] == t) {
            eb = b.event_weight[j];
            eb2 = b.event_weight_sq[j];
            cb = b.censor_weight[j];
            cb2 = b.censor_weight_sq[j];
            ++j;
        }
        m.ea.push_back(ea);
        m.ea2.push_back(ea2);
        m.ca2.push_back(ca2);
        m.eb.push_back(eb);
        m.eb2.push_back(eb2);
        m.cb2.push_back(cb2);
        leave_a.push_back(ea + ca);
        leave_b.push_back(eb + cb);
    }
    const std::size_t n = m.ea.size();
    m.ra.assign(n, 0.0);
    m.rb.assign(n, 0.0);
    double ra = 0.0, rb = 0.0;
    for (std::size_t k = n; k-- > 0;) {
        ra += leave_a[k];
        rb += leave_b[k];
        m.ra[k] = ra;
        m.rb[k] = rb;
    }
    return m;
}

struct CoxTerms {
    double loglik = 0.0, score = 0.0, info = 0.0;
};

CoxTerms cox_terms(const MergedArms& m, double beta) {
    CoxTerms c;
    const double eb = std::exp(beta);
    for (std::size_t k = 0; k < m.ea.size(); ++k) {
        const double d = m.ea[k] + m.eb[k];
        if (d <= 0.0) continue;
        const double s1 = m.ra[k] * eb;
        const double s0 = s1 + m.rb[k];
        const double zbar = s1 / s0;
        c.loglik += beta * m.ea[k] - d * std::log(s0);
        c.score += m.ea[k] - d * zbar;
        c.info += d * zbar * (1.0 - zbar);
    }
    return c;
}

double event_weight_total(const AggregatedSurvival& a) {
    return std::accumulate(a.event_weight.begin(), a.event_weight.end(), 0.0);
}

} // namespace

double cox_log_likelihood(const AggregatedSurvival& arm_a, const AggregatedSurvival& arm_b, double beta) {
    return cox_terms(merge_arms(arm_a, arm_b), beta).loglik;
}

CoxResult weighted_cox_hr(const std::vector<WeightedTimeToEvent>& arm_a,
                          const std::vector<WeightedTimeToEvent>& arm_b) {
    return weighted_cox_hr(aggregate(arm_a), aggregate(arm_b));
}

CoxResult weighted_cox_hr(const AggregatedSurvival& arm_a, const AggregatedSurvival& arm_b) {
    if (!(event_weight_total(arm_a) > 0.0) || !(event_weight_total(arm_b) > 0.0))
        fail(ErrorKind::NonIdentifiable, "Cox model needs at least one event in each arm");
    const MergedArms m = merge_arms(arm_a, arm_b);

    CoxResult r;
    double beta = 0.0;
    CoxTerms cur = cox_terms(m, beta);
    for (r.iterations = 0; r.iterations < 200; ++r.iterations) {
        if (!(cur.info > 0.0)) fail(ErrorKind::NonIdentifiable, "Cox information vanished");
        double step = cur.score / cur.info;
        if (std::abs(step) < 1e-13) break;
        double next_beta = beta + step;
        CoxTerms next = cox_terms(m, next_beta);
        for (int h = 0; h < 60 && !(next.loglik >= cur.loglik - 1e-12 * std::abs(cur.loglik)); ++h) {
            step *= 0.5;
            next_beta = beta + step;
            next = cox_terms(m, next_beta);
        }
        beta = next_beta;
        cur = next;
        if (std::abs(beta) > 50.0) fail(ErrorKind::NonIdentifiable, "Cox estimate diverges (monotone likelihood)");
    }
    r.log_hr = beta;
    r.hr = std::exp(beta);
    r.se = 1.0 / std::sqrt(cur.info);

    // Lin-Wei score residuals depend only on (time, event, arm), so each
    // aggregated cell contributes (sum of squared weights) * residual^2.
    const double eb = std::exp(beta);
    double cum_a = 0.0, cum_bz = 0.0, meat = 0.0;
    for (std::size_t k = 0; k < m.ea.size(); ++k) {
        const double d = m.ea[k] + m.eb[k];
        double zbar = 0.0;
        if (d > 0.0) {
            const double s1 = m.ra[k] * eb;
            const double s0 = s1 + m.rb[k];
            zbar = s1 / s0;
            cum_a += d / s0;
            cum_bz += zbar * d / s0;
        }
        // arm A (z = 1)
        const double comp_a = eb * (cum_a - cum_bz);
        const double wa_event = (1.0 - zbar) - comp_a;
        const double wa_cens = -comp_a;
        // arm B (z = 0)
        const double comp_b = -cum_bz;
        const double wb_event = (0.0 - zbar) - comp_b;
        const double wb_cens = -comp_b;
        meat += m.ea2[k] * wa_event * wa_event + m.ca2[k] * wa_cens * wa_cens + m.eb2[k] * wb_event * wb_event +
                m.cb2[k] * wb_cens * wb_cens;
    }
    r.robust_se = std::sqrt(meat) / cur.info;
    return r;
}

} // namespace tiltcal
