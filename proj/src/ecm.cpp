#include "heckcn/ecm.hpp"

#include "heckcn/normal.hpp"
#include "heckcn/trunc_moments.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace heckcn {

namespace {

double sup_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Eigen::Index rank_of(const Eigen::MatrixXd& m) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
    qr.setThreshold(1e-10);
    return qr.rank();
}

}  // namespace

ProbitResult probit_fit(const Eigen::MatrixXd& w, const Eigen::VectorXi& c, double grad_tol, int max_iter) {
    const Eigen::Index n = w.rows(), q = w.cols();
    if (c.size() != n) throw DataError("probit_fit: w and c sizes differ");
    const Eigen::Index ones = c.sum();
    if (ones == 0 || ones == n) throw DataError("probit_fit: selection indicator is constant");
    if (rank_of(w) < q) throw DataError("probit_fit: w is not of full column rank");

    const Eigen::VectorXd sgn = (2 * c.cast<double>().array() - 1).matrix();
    auto loglik = [&](const Eigen::VectorXd& g) {
        const Eigen::VectorXd m = w * g;
        double s = 0;
        for (Eigen::Index i = 0; i < n; ++i) s += log_norm_cdf(sgn(i) * m(i));
        return s;
    };

    ProbitResult r;
    r.gamma = Eigen::VectorXd::Zero(q);
    double ll = loglik(r.gamma);
    Eigen::MatrixXd hess(q, q);
    for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
        const Eigen::VectorXd m = w * r.gamma;
        Eigen::VectorXd d1(n), d2(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double qm = sgn(i) * m(i);
            const double lam = std::exp(std_norm_logpdf(qm) - log_norm_cdf(qm));
            d1(i) = sgn(i) * lam;
            d2(i) = lam * (lam + qm);
        }
        const Eigen::VectorXd grad = w.transpose() * d1;
        hess = w.transpose() * (w.array().colwise() * d2.array()).matrix();
        if (sup_norm(grad) <= grad_tol) break;
        const Eigen::VectorXd step = hess.ldlt().solve(grad);
        double t = 1;
        Eigen::VectorXd next;
        double ll_next = -inf<double>();
        const double slack = 1e-12 * (1 + std::abs(ll));  // rounding noise near the optimum
        for (int h = 0; h < 40; ++h, t /= 2) {
            next = r.gamma + t * step;
            ll_next = loglik(next);
            if (ll_next >= ll - slack) break;
        }
        if (!(ll_next >= ll - slack)) break;  // no ascent possible: at the numerical optimum
        r.gamma = next;
        ll = ll_next;
    }
    // perfect prediction drives the log-likelihood to 0 while the coefficients run off
    if (ll > -1e-6 || sup_norm(w * r.gamma) > 30)
        throw SeparationError("probit_fit: estimates diverge (selection indicator separated by w)");
    if (r.iterations == max_iter) throw EstimationError("probit_fit: Newton-Raphson did not converge");
    r.loglik = ll;
    r.cov = hess.inverse();
    return r;
}

void check_estimable(const SelectionData& data) {
    data.validate();
    const Eigen::Index n1 = data.n_selected();
    if (n1 == data.n()) throw EstimationError("not estimable: no censored units");
    if (n1 < data.p() + 2) throw EstimationError("not estimable: need at least p + 2 selected units");
    std::vector<Eigen::Index> sel;
    for (Eigen::Index i = 0; i < data.n(); ++i)
        if (data.selected(i)) sel.push_back(i);
    if (rank_of(data.rows(sel).x) < data.p()) throw EstimationError("not estimable: x is rank deficient on selected units");
    if (rank_of(data.w) < data.q()) throw EstimationError("not estimable: w is rank deficient");
}

TwoStepResult heckman_two_step(const SelectionData& data, double nu1, double nu2) {
    check_estimable(data);
    const auto pr = probit_fit(data.w, data.c);
    const Eigen::Index n1 = data.n_selected(), p = data.p();
    Eigen::MatrixXd z(n1, p + 1);
    Eigen::VectorXd v(n1), delta(n1);
    for (Eigen::Index i = 0, r = 0; i < data.n(); ++i) {
        if (!data.selected(i)) continue;
        const double m = data.w.row(i).dot(pr.gamma);
        const double lam = std::exp(std_norm_logpdf(m) - log_norm_cdf(m));
        z.row(r).head(p) = data.x.row(i);
        z(r, p) = lam;
        v(r) = data.v1(i);
        delta(r) = lam * (lam + m);
        ++r;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
    qr.setThreshold(1e-10);
    if (qr.rank() < p + 1) throw EstimationError("heckman_two_step: second-step regression is rank deficient");
    const Eigen::VectorXd coef = qr.solve(v);
    const Eigen::VectorXd e = v - z * coef;

    TwoStepResult out;
    out.mills_coef = coef(p);
    const double s2_ols = e.squaredNorm() / double(n1 - p - 1);
    const Eigen::MatrixXd ztz_inv = (z.transpose() * z).inverse();
    out.mills_coef_se = std::sqrt(s2_ols * ztz_inv(p, p));

    Theta& t = out.theta;
    t.beta = coef.head(p);
    t.gamma = pr.gamma;
    t.sigma2 = e.squaredNorm() / double(n1) + out.mills_coef * out.mills_coef * delta.mean();
    t.rho = out.mills_coef / std::sqrt(t.sigma2);
    if (std::abs(t.rho) > 0.99) {
        t.rho = std::copysign(0.99, t.rho);
        out.rho_clamped = true;
    }
    t.nu1 = nu1;
    t.nu2 = nu2;
    return out;
}

// ---------------------------------------------------------------- E-step

Eigen::VectorXd EStepQuantities::eps() const {
    Eigen::VectorXd e(size());
    for (Eigen::Index i = 0; i < size(); ++i) e(i) = units[i].eps;
    return e;
}

Eigen::Matrix2d EStepQuantities::E1(Eigen::Index i, const Eigen::Vector2d& mu) const {
    const auto& u = units[i];
    return u.yy - u.y * mu.transpose() - mu * u.y.transpose() + mu * mu.transpose();
}

Eigen::Matrix2d EStepQuantities::E2(Eigen::Index i, const Eigen::Vector2d& mu) const {
    const auto& u = units[i];
    return u.eps_yy - u.eps_y * mu.transpose() - mu * u.eps_y.transpose() + u.eps * mu * mu.transpose();
}

Eigen::Matrix2d EStepQuantities::Gamma(Eigen::Index i, const Eigen::Vector2d& mu, double nu2) const {
    return E1(i, mu) + (nu2 - 1) * E2(i, mu);
}

Eigen::Vector2d unit_mean(const SelectionData& data, const Theta& theta, Eigen::Index i) {
    return {data.x.row(i).dot(theta.beta), data.w.row(i).dot(theta.gamma)};
}

namespace {

struct Component {
    double log_w;  // log prior weight + log density of the observed part + log truncation mass
    Eigen::Vector2d m1;
    Eigen::Matrix2d m2;
};

// u = precision multiplier of the component (nu2 or 1).
Component selected_component(double v, const Eigen::Vector2d& mu, const Theta& t, double log_prior, double u) {
    const double s = t.sigma();
    const double mt = mu(1) + t.rho / s * (v - mu(0));
    const double st = std::sqrt((1 - t.rho * t.rho) / u);
    const auto tr = detail::std_trunc(-mt / st, inf<double>());
    const double e1 = mt + st * tr.m1;
    const double e2 = mt * mt + 2 * mt * st * tr.m1 + st * st * tr.m2;
    Component c;
    c.log_w = log_prior + norm_logpdf(v, mu(0), t.sigma2 / u) + tr.log_mass;
    c.m1 << v, e1;
    c.m2 << v * v, v * e1, v * e1, e2;
    return c;
}

Component censored_component(const Eigen::Vector2d& mu, const Theta& t, double log_prior, double u) {
    const double s2 = 1 / u;
    const double s = std::sqrt(s2);
    const auto tr = detail::std_trunc(-inf<double>(), -mu(1) / s);
    const double e2 = mu(1) + s * tr.m1;                                   // E[Y2]
    const double e22 = mu(1) * mu(1) + 2 * mu(1) * s * tr.m1 + s2 * tr.m2;  // E[Y2^2]
    const double slope = t.rho_star();
    const double d1 = s * tr.m1;   // E[Y2 - mu2]
    const double d2 = s2 * tr.m2;  // E[(Y2 - mu2)^2]
    const double e1 = mu(0) + slope * d1;
    const double e11 = t.psi() / u + mu(0) * mu(0) + 2 * mu(0) * slope * d1 + slope * slope * d2;
    const double e12 = mu(0) * e2 + slope * (e22 - mu(1) * e2);
    Component c;
    c.log_w = log_prior + tr.log_mass;
    c.m1 << e1, e2;
    c.m2 << e11, e12, e12, e22;
    return c;
}

}  // namespace

EStepQuantities e_step(const Theta& theta, const SelectionData& data, ModelKind kind) {
    theta.validate(kind);
    if (theta.beta.size() != data.p() || theta.gamma.size() != data.q())
        throw std::invalid_argument("e_step: Theta dimensions do not match the design matrices");
    const bool cn = kind == ModelKind::SLcn;
    const double la = cn ? std::log(theta.nu1) : -inf<double>();
    const double lb = cn ? std::log1p(-theta.nu1) : 0.0;

    EStepQuantities q;
    q.units.resize(data.n());
    q.unit_loglik.resize(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const Eigen::Vector2d mu = unit_mean(data, theta, i);
        const bool sel = data.selected(i);
        const Component b = sel ? selected_component(data.v1(i), mu, theta, lb, 1.0) : censored_component(mu, theta, lb, 1.0);
        UnitMoments& um = q.units[i];
        double ll;
        if (cn) {
            const Component a = sel ? selected_component(data.v1(i), mu, theta, la, theta.nu2)
                                    : censored_component(mu, theta, la, theta.nu2);
            ll = log_add_exp(a.log_w, b.log_w);
            const double e = std::exp(a.log_w - ll);
            um.eps = e;
            um.y = e * a.m1 + (1 - e) * b.m1;
            um.yy = e * a.m2 + (1 - e) * b.m2;
            um.eps_y = e * a.m1;
            um.eps_yy = e * a.m2;
        } else {
            ll = b.log_w;
            um.y = b.m1;
            um.yy = b.m2;
        }
        double log_mass = ll;
        if (sel) {
            const double v = data.v1(i);
            const double lf = norm_logpdf(v, mu(0), theta.sigma2);
            log_mass -= cn ? log_add_exp(la + norm_logpdf(v, mu(0), theta.sigma2 / theta.nu2), lb + lf) : lf;
        }
        if (!(log_mass >= min_log_mass) || !um.yy.allFinite()) {
            std::ostringstream os;
            os << "e_step: truncation region has zero mass at unit " << i;
            throw ZeroMassError(os.str(), static_cast<long>(i));
        }
        if (sel) {
            // observed coordinate is exact
            um.y(0) = data.v1(i);
            um.yy(0, 0) = data.v1(i) * data.v1(i);
        }
        q.unit_loglik(i) = ll;
    }
    q.loglik = pairwise_sum(q.unit_loglik.data(), q.unit_loglik.size());
    return q;
}

// ---------------------------------------------------------------- CM-step

Theta cm_step(const EStepQuantities& q, const SelectionData& data, const Theta& theta_old, ModelKind kind, bool update_nu,
              CmFlags* flags) {
    const Eigen::Index n = data.n(), p = data.p(), qq = data.q();
    if (q.size() != n) throw std::invalid_argument("cm_step: E-step size does not match the data");
    const bool cn = kind == ModelKind::SLcn;
    const double nu2 = cn ? theta_old.nu2 : 1.0;

    Eigen::VectorXd r(n), z1(n), z2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& u = q.units[i];
        r(i) = 1 + (nu2 - 1) * u.eps;
        const Eigen::Vector2d z = u.y + (nu2 - 1) * u.eps_y;
        z1(i) = z(0);
        z2(i) = z(1);
    }

    // beta_c = (sum r_i X_i' S X_i)^{-1} sum X_i' S z_i with S the old inverse scale
    const Eigen::Matrix2d S = theta_old.Sigma().inverse();
    const Eigen::MatrixXd xr = data.x.array().colwise() * r.array();
    const Eigen::MatrixXd wr = data.w.array().colwise() * r.array();
    Eigen::MatrixXd A(p + qq, p + qq);
    A.topLeftCorner(p, p) = S(0, 0) * data.x.transpose() * xr;
    A.topRightCorner(p, qq) = S(0, 1) * data.x.transpose() * wr;
    A.bottomLeftCorner(qq, p) = A.topRightCorner(p, qq).transpose();
    A.bottomRightCorner(qq, qq) = S(1, 1) * data.w.transpose() * wr;
    Eigen::VectorXd rhs(p + qq);
    rhs.head(p) = data.x.transpose() * (S(0, 0) * z1 + S(0, 1) * z2);
    rhs.tail(qq) = data.w.transpose() * (S(1, 0) * z1 + S(1, 1) * z2);
    const Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw EstimationError("cm_step: weighted normal equations are singular");
    const Eigen::VectorXd bc = llt.solve(rhs);
    if (!bc.allFinite()) throw EstimationError("cm_step: weighted normal equations are singular");

    Theta t = theta_old;
    t.beta = bc.head(p);
    t.gamma = bc.tail(qq);
    if (!cn) {
        t.nu1 = 0;
        t.nu2 = 1;
    }

    Eigen::Matrix2d G = Eigen::Matrix2d::Zero(), E2 = Eigen::Matrix2d::Zero();
    double eps_sum = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Vector2d mu = unit_mean(data, t, i);
        const Eigen::Matrix2d e2 = q.E2(i, mu);
        G += q.E1(i, mu) + (nu2 - 1) * e2;
        E2 += e2;
        eps_sum += q.units[i].eps;
    }
    const double rho_star = (G(0, 1) + G(1, 0)) / (2 * G(1, 1));
    const double psi = (G(0, 0) - rho_star * (G(0, 1) + G(1, 0)) + rho_star * rho_star * G(1, 1)) / double(n);
    if (!(psi > 0) || !std::isfinite(rho_star)) throw EstimationError("cm_step: degenerate scale update");
    t.sigma2 = psi + rho_star * rho_star;
    t.rho = rho_star / std::sqrt(t.sigma2);
    if (!(std::abs(t.rho) < rho_limit)) throw EstimationError("cm_step: |rho| reached 1");

    if (cn && update_nu) {
        CmFlags f;
        double nu1 = eps_sum / double(n);
        if (nu1 < nu_floor || nu1 > 1 - nu_floor) {
            nu1 = std::clamp(nu1, nu_floor, 1 - nu_floor);
            f.nu1_clipped = true;
        }
        const double tr = (t.Sigma().inverse() * E2).trace();
        double nu2_new = 2 * eps_sum / tr;
        if (!(nu2_new >= nu_floor && nu2_new <= 1 - nu_floor)) {
            nu2_new = std::isfinite(nu2_new) ? std::clamp(nu2_new, nu_floor, 1 - nu_floor) : 1 - nu_floor;
            f.nu2_clipped = true;
        }
        t.nu1 = nu1;
        t.nu2 = nu2_new;
        if (flags) *flags = f;
    }
    return t;
}

// ---------------------------------------------------------------- driver

void EcmOptions::validate() const {
    if (!(tol > 0)) throw std::invalid_argument("EcmOptions: tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("EcmOptions: max_iter must be positive");
    if (pilot_iter < 1) throw std::invalid_argument("EcmOptions: pilot_iter must be positive");
    auto in_open = [](double a) { return a > 0 && a < 1; };
    for (const auto& [a, b] : nu_grid)
        if (!in_open(a) || !in_open(b)) throw std::invalid_argument("EcmOptions: grid pairs must lie in (0,1)^2");
    if (fix_nu && (!in_open(fix_nu->first) || !in_open(fix_nu->second)))
        throw std::invalid_argument("EcmOptions: fix_nu must lie in (0,1)^2");
    if (init == InitMethod::UserSupplied && !start) throw std::invalid_argument("EcmOptions: UserSupplied init needs a start");
}

std::vector<std::pair<double, double>> default_nu_grid() {
    std::vector<std::pair<double, double>> g;
    for (double a : {0.1, 0.3, 0.5, 0.7, 0.9})
        for (double b : {0.1, 0.3, 0.5, 0.7, 0.9}) g.emplace_back(a, b);
    return g;
}

EcmFit fit_from(const SelectionData& data, ModelKind kind, Theta start, const EcmOptions& opts) {
    const bool cn = kind == ModelKind::SLcn;
    if (!cn) {
        start.nu1 = 0;
        start.nu2 = 1;
    } else if (opts.fix_nu) {
        start.nu1 = opts.fix_nu->first;
        start.nu2 = opts.fix_nu->second;
    }
    const bool update_nu = cn && !opts.fix_nu;

    EcmFit out;
    out.kind = kind;
    out.start_nu = {start.nu1, start.nu2};
    Theta theta = std::move(start);
    EStepQuantities q = e_step(theta, data, kind);
    out.trace.loglik_path.push_back(q.loglik);
    if (opts.keep_path) out.trace.theta_path.push_back(theta);
    bool warned_nu1 = false, warned_nu2 = false;

    for (int k = 1; k <= opts.max_iter; ++k) {
        CmFlags flags;
        Theta next = cm_step(q, data, theta, kind, update_nu, &flags);
        EStepQuantities qn = e_step(next, data, kind);
        const double l_old = q.loglik, l_new = qn.loglik;
        if (l_new < l_old - 1e-8) {
            std::ostringstream os;
            os.precision(17);
            os << "ECM log-likelihood decreased at iteration " << k << ": " << l_old << " -> " << l_new;
            throw ConsistencyError(os.str());
        }
        if (flags.nu1_clipped || flags.nu2_clipped) ++out.trace.nu_clip_count;
        if (flags.nu1_clipped && !warned_nu1) {
            out.warnings.push_back("nu1 clipped to the boundary of (0,1)");
            warned_nu1 = true;
        }
        if (flags.nu2_clipped && !warned_nu2) {
            out.warnings.push_back("nu2 update exceeded the identifiable range and was clipped");
            warned_nu2 = true;
        }
        theta = std::move(next);
        q = std::move(qn);
        out.trace.loglik_path.push_back(l_new);
        if (opts.keep_path) out.trace.theta_path.push_back(theta);
        out.trace.iterations = k;
        const double d = std::abs(l_new - l_old);
        if (std::abs(l_new / l_old - 1) < opts.tol && d <= opts.tol * (1 + std::abs(l_new))) {
            out.trace.converged = true;
            break;
        }
    }
    out.theta = std::move(theta);
    out.loglik = q.loglik;
    out.estep = std::move(q);
    if (!out.trace.converged) out.warnings.push_back("ECM reached max_iter without converging");
    return out;
}

EcmFit fit(const SelectionData& data, ModelKind kind, const EcmOptions& opts) {
    opts.validate();
    check_estimable(data);
    const bool cn = kind == ModelKind::SLcn;

    Theta start;
    std::vector<std::string> notes;
    if (opts.init == InitMethod::UserSupplied) {
        start = *opts.start;
        if (start.beta.size() != data.p() || start.gamma.size() != data.q())
            throw std::invalid_argument("fit: starting value dimensions do not match the data");
    } else {
        auto ts = heckman_two_step(data);
        if (ts.rho_clamped) notes.push_back("two-step rho clamped to +-0.99");
        start = ts.theta;
    }

    if (cn && !opts.fix_nu && opts.init == InitMethod::Grid) {
        const auto grid = opts.nu_grid.empty() ? default_nu_grid() : opts.nu_grid;
        EcmOptions pilot = opts;
        pilot.max_iter = opts.pilot_iter;
        pilot.keep_path = false;
        double best = -inf<double>();
        Theta best_theta;
        for (const auto& [a, b] : grid) {
            Theta s = start;
            s.nu1 = a;
            s.nu2 = b;
            try {
                const auto f = fit_from(data, kind, s, pilot);
                if (f.loglik > best) {
                    best = f.loglik;
                    best_theta = f.theta;
                }
            } catch (const EstimationError&) {
            } catch (const ZeroMassError&) {
            }
        }
        if (!(best > -inf<double>())) throw EstimationError("fit: every grid pilot run failed");
        start = best_theta;
    }

    auto out = fit_from(data, kind, start, opts);
    out.warnings.insert(out.warnings.begin(), notes.begin(), notes.end());
    return out;
}

}  // namespace heckcn
