"""Polar-form branch flows and bus balance residuals.

Each of the four terminal flows of a line has the shape

    a_f v_f^2 + a_t v_t^2 + (alpha cos D + beta sin D) v_f v_t,    D = theta_f - theta_t

with coefficients fixed by the series admittance ``g + jb`` and the shunts.
Keeping that shared form lets values and derivatives come from one routine.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..model import ACLine, Case


class LineArrays(NamedTuple):
    """Parameters of many lines as parallel arrays."""

    g: np.ndarray
    b: np.ndarray
    g_fr: np.ndarray
    g_to: np.ndarray
    b_fr: np.ndarray
    b_to: np.ndarray
    b_ch: np.ndarray

    @classmethod
    def from_lines(cls, lines) -> "LineArrays":
        lines = list(lines)
        return cls(*(np.array([getattr(l, f) for l in lines], dtype=float)
                     for f in ("g_sr", "b_sr", "g_fr", "g_to", "b_fr", "b_to", "b_ch")))


def _as_arrays(line) -> LineArrays:
    if isinstance(line, ACLine):
        return LineArrays.from_lines([line])
    return line


def flow_coefficients(line) -> np.ndarray:
    """Coefficients ``(a_f, a_t, alpha, beta)`` for p_fr, q_fr, p_to, q_to.

    Returns an array shaped (4, 4, L): flow, coefficient, line.
    """
    la = _as_arrays(line)
    g, b = la.g, la.b
    zero = np.zeros_like(g)
    return np.array([
        [g + la.g_fr, zero, -g, -b],                        # p_fr
        [-(b + la.b_fr + 0.5 * la.b_ch), zero, b, -g],      # q_fr
        [zero, g + la.g_to, -g, b],                         # p_to
        [zero, -(b + la.b_to + 0.5 * la.b_ch), b, g],       # q_to
    ])


def branch_flows(v_fr, v_to, th_fr, th_to, line, u_on=1.0):
    """Real and reactive power leaving each end of a line.

    Parameters
    ----------
    v_fr, v_to, th_fr, th_to : float or ndarray
        Terminal voltage magnitudes and angles (radians).
    line : ACLine or LineArrays
    u_on : float or ndarray
        Line status multiplier.

    Returns
    -------
    tuple of ndarray
        ``(p_fr, q_fr, p_to, q_to)``.
    """
    coef = flow_coefficients(line)
    v_fr, v_to = np.asarray(v_fr, float), np.asarray(v_to, float)
    delta = np.asarray(th_fr, float) - np.asarray(th_to, float)
    c, s = np.cos(delta), np.sin(delta)
    vv = v_fr * v_to
    out = []
    for a_f, a_t, al, be in coef:
        val = a_f * v_fr ** 2 + a_t * v_to ** 2 + (al * c + be * s) * vv
        val = np.asarray(u_on * val, float)
        out.append(val.item() if isinstance(line, ACLine) and val.size == 1 else val)
    return tuple(out)


def flow_derivatives(coef: np.ndarray, v_f, v_t, delta):
    """Values, gradients and Hessians of the four flows.

    Gradients are with respect to ``(theta_f, theta_t, v_f, v_t)``.

    Returns
    -------
    val : ndarray, shape (4, L)
    grad : ndarray, shape (4, L, 4)
    hess : ndarray, shape (4, L, 4, 4)
    """
    c, s = np.cos(delta), np.sin(delta)
    L = np.size(delta)
    vv = v_f * v_t
    a_f, a_t, al, be = coef[:, 0], coef[:, 1], coef[:, 2], coef[:, 3]
    trig = al * c + be * s
    dtrig = -al * s + be * c
    val = a_f * v_f ** 2 + a_t * v_t ** 2 + trig * vv
    grad = np.empty((4, L, 4))
    g_d = dtrig * vv
    grad[..., 0] = g_d
    grad[..., 1] = -g_d
    grad[..., 2] = 2 * a_f * v_f + trig * v_t
    grad[..., 3] = 2 * a_t * v_t + trig * v_f
    hess = np.empty((4, L, 4, 4))
    h_dd = -trig * vv
    h_dvf = dtrig * v_t
    h_dvt = dtrig * v_f
    hess[..., 0, 0] = h_dd
    hess[..., 1, 1] = h_dd
    hess[..., 0, 1] = hess[..., 1, 0] = -h_dd
    hess[..., 0, 2] = hess[..., 2, 0] = h_dvf
    hess[..., 1, 2] = hess[..., 2, 1] = -h_dvf
    hess[..., 0, 3] = hess[..., 3, 0] = h_dvt
    hess[..., 1, 3] = hess[..., 3, 1] = -h_dvt
    hess[..., 2, 2] = 2 * a_f
    hess[..., 3, 3] = 2 * a_t
    hess[..., 2, 3] = hess[..., 3, 2] = trig
    return val, grad, hess


def line_flows(case: Case, v: np.ndarray, theta: np.ndarray):
    """Flows on every line of ``case`` for bus voltages ``v`` and angles ``theta``.

    Out-of-service lines carry zero flow.  ``v`` and ``theta`` may be (I,) or
    (I, T); the result has the matching trailing shape.
    """
    fr, to, status = case.line_from, case.line_to, case.line_status
    la = LineArrays.from_lines(case.lines)
    if np.ndim(v) == 2:
        status = status[:, None]
        la = LineArrays(*(a[:, None] for a in la))
    return branch_flows(v[fr], v[to], theta[fr], theta[to], la, status)


def balance_residual(case: Case, p, q, p_fr, q_fr, p_to, q_to):
    """Per-bus real and reactive balance residuals.

    Injections from producers minus consumers, minus the power leaving on each
    line end.  This is the value a bus mismatch slack has to take.  Works on a
    single period (vectors) or all periods at once (trailing axis T).
    """
    I = case.n_buses
    p, q = np.asarray(p, float), np.asarray(q, float)
    shape = (I,) + p.shape[1:]
    dp, dq = np.zeros(shape), np.zeros(shape)
    sign = case.sign.reshape((-1,) + (1,) * (p.ndim - 1))
    np.add.at(dp, case.device_bus, sign * p)
    np.add.at(dq, case.device_bus, sign * q)
    if case.n_lines:
        fr, to = case.line_from, case.line_to
        np.subtract.at(dp, fr, np.asarray(p_fr, float))
        np.subtract.at(dp, to, np.asarray(p_to, float))
        np.subtract.at(dq, fr, np.asarray(q_fr, float))
        np.subtract.at(dq, to, np.asarray(q_to, float))
    return dp, dq
