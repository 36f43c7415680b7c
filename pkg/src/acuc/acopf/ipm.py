"""Primal-dual interior-point method for smooth NLPs with bounds and equalities.

    min f(x)  subject to  c(x) = 0,  lo <= x <= hi

Bounds are handled by a log barrier with explicit bound multipliers; Newton
steps solve the full KKT system with a sparse LU factorization.  When the
step shows negative curvature the Hessian block is regularized by a multiple
of the identity.  Globalization uses an l1 exact-penalty merit function with
backtracking and one second-order correction per iteration.  Variables whose
bounds coincide are removed before the iteration starts.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
STALLED = "stalled"

BOUND_RELAX = 1e-9


@dataclass
class IpmOptions:
    primal_tol: float = 1e-3
    dual_tol: float = 1.0
    comp_tol: float = 1e-3
    max_iter: int = 300
    mu_init: float = 0.1
    obj_scale_max_grad: float = 100.0
    bound_push: float = 1e-2
    max_ls_fail: int = 8


@dataclass
class IpmResult:
    x: np.ndarray
    lam: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    status: str
    iterations: int
    primal_residual: float
    dual_residual: float
    comp_residual: float
    objective: float
    regularizations: int = 0
    fallback_steps: int = 0


class _Reduced:
    """View of the NLP on its non-fixed columns."""

    def __init__(self, nlp, x_full):
        lo, hi = nlp.lo, nlp.hi
        width = hi - lo
        self.fixed = np.isfinite(width) & (width <= 1e-12 * np.maximum(1.0, np.abs(lo)))
        self.free = np.flatnonzero(~self.fixed)
        self.nlp = nlp
        self.base = x_full.copy()
        self.base[self.fixed] = lo[self.fixed]
        # a slight relaxation keeps the barrier finite when rounding lands on a bound
        self.lo_exact = lo[self.free]
        self.hi_exact = hi[self.free]
        self.lo = self.lo_exact - BOUND_RELAX * np.maximum(1.0, np.abs(self.lo_exact))
        self.hi = self.hi_exact + BOUND_RELAX * np.maximum(1.0, np.abs(self.hi_exact))

    def full(self, x):
        out = self.base.copy()
        out[self.free] = x
        return out

    def f(self, x):
        return self.nlp.objective(self.full(x))

    def grad(self, x):
        return self.nlp.gradient(self.full(x))[self.free]

    def c(self, x):
        return self.nlp.constraints(self.full(x))

    def jac(self, x):
        return self.nlp.jacobian(self.full(x))[:, self.free]

    def hess(self, x, lam, sf):
        H = self.nlp.hessian(self.full(x), lam, sf)
        return H[self.free][:, self.free]


def _push_interior(x, lo, hi, push):
    x = x.copy()
    has_lo, has_hi = np.isfinite(lo), np.isfinite(hi)
    width = np.where(has_lo & has_hi, hi - lo, np.inf)
    lo0, hi0 = np.where(has_lo, lo, 0.0), np.where(has_hi, hi, 0.0)
    pl = np.minimum(push * np.maximum(1.0, np.abs(lo0)), 0.5 * width)
    ph = np.minimum(push * np.maximum(1.0, np.abs(hi0)), 0.5 * width)
    x = np.where(has_lo, np.maximum(x, lo0 + pl), x)
    x = np.where(has_hi, np.minimum(x, hi0 - ph), x)
    return x


def _max_step(x, dx, lo, hi, tau):
    """Largest step in (0, 1] keeping ``x + a dx`` a fraction ``tau`` inside the bounds."""
    a = 1.0
    neg = np.isfinite(lo) & (dx < 0)
    if np.any(neg):
        a = min(a, np.min(-tau * (x[neg] - lo[neg]) / dx[neg]))
    pos = np.isfinite(hi) & (dx > 0)
    if np.any(pos):
        a = min(a, np.min(tau * (hi[pos] - x[pos]) / dx[pos]))
    return max(a, 0.0)


def _max_step_pos(z, dz, tau):
    neg = dz < 0
    if not np.any(neg):
        return 1.0
    return max(0.0, min(1.0, np.min(-tau * z[neg] / dz[neg])))


def solve_nlp(nlp, x0=None, options: IpmOptions | None = None) -> IpmResult:
    """Run the interior-point iteration.

    ``nlp`` must provide ``n``, ``m``, ``lo``, ``hi``, ``objective``,
    ``gradient``, ``constraints``, ``jacobian`` and ``hessian(x, lam, obj_factor)``.
    Residuals are reported for the unscaled problem: the primal residual is
    ``max |c(x)|``, the dual residual is the max-norm of the Lagrangian
    gradient and the complementarity residual the largest bound product.
    """
    opt = options or IpmOptions()
    x_full0 = np.asarray(nlp.flat_start() if x0 is None else x0, float)
    red = _Reduced(nlp, x_full0)
    lo, hi = red.lo, red.hi
    has_lo, has_hi = np.isfinite(lo), np.isfinite(hi)
    n, m = len(red.free), nlp.m

    x = _push_interior(x_full0[red.free], lo, hi, opt.bound_push)
    if hasattr(nlp, "fill_dependent"):
        # re-balance slacks after pushing; keeps the start nearly feasible
        xf = red.full(x)
        nlp.fill_dependent(xf, floor=opt.bound_push)
        x = _push_interior(xf[red.free], lo, hi, opt.bound_push)

    g0 = red.grad(x)
    sf = min(1.0, opt.obj_scale_max_grad / max(np.abs(g0).max(initial=0.0), 1e-12))
    mu = opt.mu_init
    mu_min = min(opt.comp_tol * sf, opt.primal_tol) * 1e-2
    kappa_sigma = 1e10

    sl = np.where(has_lo, x - lo, 1.0)
    su = np.where(has_hi, hi - x, 1.0)
    zl = np.where(has_lo, mu / sl, 0.0)
    zu = np.where(has_hi, mu / su, 0.0)
    lam = np.zeros(m)

    def kkt(H, A, delta_w, delta_c):
        K = sp.bmat([[H + delta_w * sp.identity(n), A.T], [A, -delta_c * sp.identity(m)]], format="csc")
        with warnings.catch_warnings():
            warnings.simplefilter("error", spla.MatrixRankWarning)
            return spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1)

    # least-squares multiplier estimate
    A = red.jac(x)
    g = sf * g0
    try:
        lu = kkt(sp.identity(n, format="csr"), A, 0.0, 1e-8)
        sol = lu.solve(np.concatenate([-(g - zl + zu), np.zeros(m)]))
        lam_ls = sol[n:]
        if np.all(np.isfinite(lam_ls)) and np.abs(lam_ls).max(initial=0.0) <= 1e3:
            lam = lam_ls
    except (RuntimeError, spla.MatrixRankWarning):
        pass

    def barrier(xv):
        # a trial point on a bound scores +inf and is rejected by the filter
        val = sf * red.f(xv)
        with np.errstate(divide="ignore"):
            if np.any(has_lo):
                val -= mu * np.sum(np.log(xv[has_lo] - lo[has_lo]))
            if np.any(has_hi):
                val -= mu * np.sum(np.log(hi[has_hi] - xv[has_hi]))
        return val

    def residuals(xv, cv, A, lamv, zlv, zuv):
        gv = sf * red.grad(xv)
        stat = gv + A.T @ lamv - zlv + zuv
        primal = np.abs(cv).max(initial=0.0)
        dual = np.abs(stat).max(initial=0.0) / sf
        comp = max((zlv * np.where(has_lo, xv - lo, 0.0)).max(initial=0.0),
                   (zuv * np.where(has_hi, hi - xv, 0.0)).max(initial=0.0)) / sf
        return primal, dual, comp, stat

    def score(pr, du, co):
        return max(pr / opt.primal_tol, du / opt.dual_tol, co / opt.comp_tol)

    theta_init = np.abs(red.c(x)).sum()
    theta_max = 1e4 * max(1.0, theta_init)
    theta_min = 1e-4 * max(1.0, theta_init)
    filt: list = []
    filter_reset = False
    delta_w_last = 0.0
    best = None
    status = MAX_ITER
    regs = fallback = ls_fail = 0
    it = 0
    cv = red.c(x)
    for it in range(opt.max_iter + 1):
        A = red.jac(x)
        pr, du, co, stat = residuals(x, cv, A, lam, zl, zu)
        sc = score(pr, du, co)
        if best is None or sc < best[0]:
            best = (sc, x.copy(), lam.copy(), zl.copy(), zu.copy(), it, pr, du, co)
        if pr <= opt.primal_tol and du <= opt.dual_tol and co <= opt.comp_tol:
            status = CONVERGED
            break
        if it == opt.max_iter:
            break
        # barrier subproblem error and monotone update of mu
        while True:
            sl = np.where(has_lo, x - lo, 1.0)
            su = np.where(has_hi, hi - x, 1.0)
            e_mu = max(pr, np.abs(stat).max(initial=0.0),
                       np.abs(np.where(has_lo, zl * sl - mu, 0.0)).max(initial=0.0),
                       np.abs(np.where(has_hi, zu * su - mu, 0.0)).max(initial=0.0))
            if e_mu > 10.0 * mu or mu <= mu_min:
                break
            mu = max(mu_min, min(0.2 * mu, mu ** 1.5))
            filter_reset = True
        tau = max(0.99, 1.0 - mu)

        g = sf * red.grad(x)
        sig = np.where(has_lo, zl / sl, 0.0) + np.where(has_hi, zu / su, 0.0)
        grad_phi = g - np.where(has_lo, mu / sl, 0.0) + np.where(has_hi, mu / su, 0.0)
        H = red.hess(x, lam, sf) + sp.diags(sig)
        rhs = -np.concatenate([grad_phi + A.T @ lam, cv])

        # Newton step with curvature-driven regularization
        delta_w = 0.0
        step = None
        for attempt in range(30):
            try:
                lu = kkt(H, A, delta_w, 1e-9 * max(mu, 1e-4) ** 0.25 if attempt else 0.0)
                sol = lu.solve(rhs)
                if not np.all(np.isfinite(sol)):
                    raise RuntimeError("non-finite step")
            except (RuntimeError, spla.MatrixRankWarning):
                sol = None
            if sol is not None:
                dx = sol[:n]
                curv = dx @ (H @ dx) + delta_w * (dx @ dx)
                if curv >= 1e-12 * (dx @ dx) or np.abs(dx).max(initial=0.0) < 1e-14:
                    step = (sol, lu)
                    break
            regs += 1
            if delta_w == 0.0:
                delta_w = 1e-4 if delta_w_last == 0.0 else max(1e-20, delta_w_last / 3)
            else:
                delta_w *= 8.0 if delta_w_last else 100.0
        if step is None:
            # projected-gradient fallback on the quadratic-penalty merit
            fallback += 1
            dx = -(grad_phi + 10.0 * (A.T @ cv))
            dlam = np.zeros(m)
            lu = None
        else:
            sol, lu = step
            dx, dlam = sol[:n], sol[n:]
            delta_w_last = delta_w
        dzl = np.where(has_lo, mu / sl - zl - zl / sl * dx, 0.0)
        dzu = np.where(has_hi, mu / su - zu + zu / su * dx, 0.0)

        a_max = _max_step(x, dx, lo, hi, tau)
        a_z = min(_max_step_pos(np.where(has_lo, zl, 1.0), np.where(has_lo, dzl, 0.0), tau),
                  _max_step_pos(np.where(has_hi, zu, 1.0), np.where(has_hi, dzu, 0.0), tau))

        theta0 = np.abs(cv).sum()
        phi0 = barrier(x)
        gd = grad_phi @ dx
        if filter_reset:
            filt = []
            filter_reset = False
        switching = lambda a: gd < 0 and a * (-gd) ** 2.3 > theta0 ** 1.1  # noqa: E731

        def acceptable(a, theta_t, phi_t):
            if not np.isfinite(phi_t) or theta_t > theta_max:
                return None
            if any(theta_t >= tf and phi_t >= pf for tf, pf in filt):
                return None
            if theta0 <= theta_min and switching(a):
                return "f" if phi_t <= phi0 + 1e-8 * a * gd else None
            if theta_t <= (1 - 1e-5) * theta0 or phi_t <= phi0 - 1e-8 * theta0:
                return "h"
            return None

        alpha = a_max
        accepted = None
        kind = None
        while alpha > 1e-12:
            xt = x + alpha * dx
            ct = red.c(xt)
            theta_t = np.abs(ct).sum()
            kind = acceptable(alpha, theta_t, barrier(xt))
            if kind:
                accepted = (xt, ct, alpha)
                break
            if alpha == a_max and lu is not None and theta_t >= theta0:
                # second-order corrections on the constraint linearization
                c_soc = alpha * cv + ct
                theta_prev = theta_t
                for _ in range(4):
                    sol_soc = lu.solve(-np.concatenate([grad_phi + A.T @ lam, c_soc]))
                    dsoc = sol_soc[:n]
                    a_soc = _max_step(x, dsoc, lo, hi, tau)
                    xs = x + a_soc * dsoc
                    cs = red.c(xs)
                    theta_s = np.abs(cs).sum()
                    kind = acceptable(alpha, theta_s, barrier(xs))
                    if kind:
                        accepted = (xs, cs, alpha)
                        dlam = sol_soc[n:]
                        break
                    if theta_s > 0.99 * theta_prev:
                        break
                    theta_prev = theta_s
                    c_soc = a_soc * c_soc + cs
                if accepted:
                    break
            alpha *= 0.5
        if accepted is None:
            ls_fail += 1
            if ls_fail > opt.max_ls_fail:
                status = STALLED
                break
            alpha = min(a_max, 1e-4)
            xt = x + alpha * dx
            accepted = (xt, red.c(xt), alpha)
            kind = "h"
        else:
            ls_fail = 0
        if kind == "h":
            filt.append(((1 - 1e-5) * theta0, phi0 - 1e-8 * theta0))
        x, cv, alpha = accepted
        log.debug("it %d mu %.1e primal %.1e dual %.1e comp %.1e step %.1e %s",
                  it, mu, pr, du, co, alpha, kind)
        lam = lam + alpha * dlam
        zl = np.where(has_lo, zl + a_z * dzl, 0.0)
        zu = np.where(has_hi, zu + a_z * dzu, 0.0)
        sl = np.where(has_lo, x - lo, 1.0)
        su = np.where(has_hi, hi - x, 1.0)
        zl = np.where(has_lo, np.clip(zl, mu / (kappa_sigma * sl), kappa_sigma * mu / sl), 0.0)
        zu = np.where(has_hi, np.clip(zu, mu / (kappa_sigma * su), kappa_sigma * mu / su), 0.0)

    if status != CONVERGED and best is not None:
        _, x, lam, zl, zu, _, pr, du, co = best
    x_full = red.full(np.clip(x, red.lo_exact, red.hi_exact))
    z_lo = np.zeros(nlp.n)
    z_hi = np.zeros(nlp.n)
    z_lo[red.free] = zl / sf
    z_hi[red.free] = zu / sf
    return IpmResult(x_full, lam / sf, z_lo, z_hi, status, it, float(pr), float(du), float(co),
                     nlp.objective(x_full), regs, fallback)
