"""Renormalization constants of the counterterm C_eps = m1/eps + m2 log(1/eps) + m3.

m1 comes from the small-scale divergence of the quadratic field's expectation,
m2 from the universal third-order logarithm, m3 as the extrapolated finite
part of the third-order expectation.  The third-order space-momentum
integrals are evaluated in scaled variables on tensorized logarithmic grids.
"""

from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTensor, contract
from .kernels import ScaledKernelTables
from .quadrature import adaptive_quad, log_grid, trapezoid_weights

_M1_PREFACTOR = 1.0 / (2.0 ** 3.5 * np.sqrt(np.pi))


class NonCauchyError(RuntimeError):
    """The third-order finite parts failed to settle; raw table attached."""

    def __init__(self, message, table):
        super().__init__(message)
        self.table = table


@dataclass(frozen=True)
class RenormConstants:
    """Counterterm coefficients with provenance.

    m2 vanishes identically for totally symmetric coupling tensors; m1 and m3
    depend on the cutoff, so the cutoff identifier travels with the record and
    records from different cutoffs must never be combined.
    """

    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    chi_id: str
    quadrature_error: float = 0.0
    m3_extrapolation_residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("m1", "m2", "m3"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)

    def require_same_cutoff(self, other):
        if self.chi_id != other.chi_id:
            raise ValueError(
                f"constants from cutoffs {self.chi_id!r} and {other.chi_id!r} "
                "cannot be combined into one counterterm")


def m1_scalar_factor(chi, rtol=1e-11):
    """c_chi = (2^{7/2} sqrt(pi))^{-1} int_0^inf s^{-3/2} (1 - chi(s))^2 ds.

    The integrand vanishes on [0, 1]; on [2, inf) it equals s^{-3/2} exactly,
    integrated in closed form.  The squared-difference form is forced by the
    exact scale-split identity

        int s^{-3/2} (chi(s) - chi(L^{2m} s))^2 ds
            = L^m int s^{-3/2} (1 - chi)^2 ds - int s^{-3/2} (1 - chi^2) ds,

    which keeps the heat-kernel remainder bounded uniformly in the scale gap.
    """
    end = chi.support_end
    val, err = adaptive_quad(lambda s: s ** -1.5 * (1.0 - chi(s)) ** 2,
                             1.0, end, rtol=rtol)
    return _M1_PREFACTOR * (val + 2.0 / np.sqrt(end)), _M1_PREFACTOR * err


def m1_offset_factor(chi, rtol=1e-11):
    """The scale-independent offset (2^{7/2} sqrt(pi))^{-1} int s^{-3/2}(1-chi^2)."""
    end = chi.support_end
    val, err = adaptive_quad(lambda s: s ** -1.5 * (1.0 - chi(s) ** 2),
                             1.0, end, rtol=rtol)
    return _M1_PREFACTOR * (val + 2.0 / np.sqrt(end)), _M1_PREFACTOR * err


def compute_m1(chi, M: CouplingTensor, rtol=1e-11):
    """m1 component a = tr(M^(a)) * c_chi."""
    c, err = m1_scalar_factor(chi, rtol)
    tr = contract(M).trace_vector
    return tr * c, abs(err) * float(np.max(np.abs(tr)))


def compute_m2(M: CouplingTensor):
    """Universal logarithmic coefficient (pi / sqrt(3)) (calM2 - calM1)."""
    cs = contract(M)
    return np.pi / np.sqrt(3.0) * (cs.calM2 - cs.calM1)


def compute_mu_eps(chi, eps, rtol=1e-9):
    """Reference third-order integral mu_eps; mu_eps / log(1/eps) -> pi/(4 sqrt 3).

    Sharp-window version of the third-order divergence: nested quadrature over
    the two time variables, the momentum integrals performed exactly (their
    Gaussian tails integrate in closed form).  Independent of the cutoff shape;
    chi is accepted to validate admissibility of the configured family.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError("need 0 < eps < 1")
    if abs(float(chi(0.5)) - 1.0) > 1e-12 or abs(float(chi(2.5))) > 1e-12:
        raise ValueError("inadmissible cutoff")
    e2 = eps * eps

    def inner(t):
        # int_0^{t - e2} ds sqrt(pi/(2 s)) sqrt(pi)/(2 (2 t - s/2)^{3/2})
        hi = t - e2
        if hi <= 0.0:
            return 0.0
        v, _ = adaptive_quad(
            lambda s: np.sqrt(np.pi / (2.0 * s)) * np.sqrt(np.pi)
            / (2.0 * (2.0 * t - 0.5 * s) ** 1.5),
            0.0, hi, rtol=rtol)
        return v

    total, errtot = 0.0, 0.0
    for a, b in [(e2, 2 * e2), (2 * e2, min(1.0, 2.0)), (1.0, 2.0)]:
        if b <= a:
            continue
        v, e = adaptive_quad(inner, a, b, rtol=1e-7, limit=400)
        total += v
        errtot += e
    return 0.25 * total, 0.25 * errtot


def third_order_pair_integral(chi, eps, tables=None, n_u=280, n_v=280,
                              n_a=400, points_per_decade=42):
    """F = int (Y * theta cov^2)(z) Y(z) dz in scaled variables (full cutoff).

    Tensorized logarithmic quadrature; carries the cutoff-shape dependence
    that the reference mu_eps deliberately drops.
    """
    e2 = eps * eps
    if tables is None:
        tables = ScaledKernelTables(chi, eps)

    def chie(x):
        return chi(x) - chi(x / e2)

    tg = tables.t_grid
    rg = tables.r_grid
    nt = tg.size
    # g(s, u) = int dr e^{-((u+r)^2 + r^2)} h(s, r) h(s, u + r)
    ug = np.linspace(0.0, 6.0, n_u)
    rr = np.linspace(-8.0, 8.0, 2 * rg.size + 1)
    dr = rr[1] - rr[0]
    expo = np.exp(-((ug[:, None] + rr[None, :]) ** 2 + rr[None, :] ** 2))
    g = np.zeros((nt, n_u))
    for i in range(nt):
        hr = np.interp(np.abs(rr), rg, tables.h[i])
        hur = np.interp(np.clip(np.abs(ug[:, None] + rr[None, :]), 0, rg[-1]),
                        rg, tables.h[i])
        g[i] = (expo * hur) @ hr * dr
    # G(s, a) = 2 a^{-3/2} int dv v^2 e^{-v^2} g(s, v / sqrt(a))
    vg = np.linspace(0.0, 6.0, n_v)
    dv = vg[1] - vg[0]
    wv = vg ** 2 * np.exp(-vg ** 2) * dv
    a_max = (1.0 + 8.0 / e2) * 1.2
    ag = np.exp(np.linspace(0.0, np.log(a_max), n_a))
    G = np.zeros((nt, n_a))
    for k, a in enumerate(ag):
        uq = vg / np.sqrt(a)
        j0 = np.clip(np.searchsorted(ug, uq) - 1, 0, n_u - 2)
        wq = np.clip((uq - ug[j0]) / (ug[j0 + 1] - ug[j0]), 0.0, 1.0)
        vals = (1 - wq) * g[:, j0] + wq * g[:, j0 + 1]
        G[:, k] = 2.0 * a ** -1.5 * (vals @ wv)
    log_ag = np.log(ag)
    log_tg = np.log(tg)

    def G_row(i0, wt, avals):
        la = np.log(np.clip(avals, ag[0], ag[-1]))
        ia = np.clip(np.searchsorted(log_ag, la) - 1, 0, n_a - 2)
        wa = (la - log_ag[ia]) / (log_ag[ia + 1] - log_ag[ia])
        r0 = (1 - wa) * G[i0, ia] + wa * G[i0, ia + 1]
        r1 = (1 - wa) * G[i0 + 1, ia] + wa * G[i0 + 1, ia + 1]
        return (1 - wt) * r0 + wt * r1

    so, ws = log_grid(tg[0], 2.0, points_per_decade)
    to, wto = log_grid(0.45 * e2, 2.0, points_per_decade)
    cto = chie(to)
    total = 0.0
    for s, w in zip(so, ws):
        cv = chie(s + to) * cto
        m = cv > 0.0
        if not np.any(m):
            continue
        i0 = min(max(np.searchsorted(log_tg, np.log(s)) - 1, 0), nt - 2)
        wt = np.clip((np.log(s) - log_tg[i0]) / (log_tg[i0 + 1] - log_tg[i0]),
                     0.0, 1.0)
        total += w * s ** -2 * np.sum(wto[m] * cv[m] * G_row(i0, wt, 1.0 + 2.0 * to[m] / s))
    return total


def third_order_cross_integral(chi, eps, tables=None, n_v=220,
                               points_per_decade=42):
    """A = int (Y * theta J)(z) cov(z) dz in scaled variables (full cutoff).

    Negative; cancels half of the pair integral so that totally symmetric
    couplings need no logarithmic counterterm.
    """
    e2 = eps * eps
    if tables is None:
        tables = ScaledKernelTables(chi, eps)

    def chie(x):
        return chi(x) - chi(x / e2)

    t1g, w1 = log_grid(0.45 * e2, 2.0, points_per_decade)
    t2g, w2 = log_grid(0.45 * e2, 2.0, points_per_decade)
    c2 = chie(t2g)
    vg = np.linspace(1e-4, 6.0, n_v)
    dv = vg[1] - vg[0]
    wv = vg * np.exp(-vg ** 2) * dv
    total = 0.0
    for t1, wa in zip(t1g, w1):
        c1 = chie(t1)
        if c1 == 0.0:
            continue
        denom = 2.0 * t1 + t2g                              # (n_t2,)
        scale_p = np.sqrt(t2g / denom)[:, None] * vg[None, :]
        scale_h = np.sqrt((t1 + t2g) / denom)[:, None] * vg[None, :]
        tsum = np.broadcast_to((t1 + t2g)[:, None], scale_h.shape)
        t2b = np.broadcast_to(t2g[:, None], scale_p.shape)
        Pv = tables.P_at(t2b.ravel(), scale_p.ravel()).reshape(scale_p.shape)
        hv = tables.h_at(tsum.ravel(), scale_h.ravel()).reshape(scale_h.shape)
        inner = (Pv * hv) @ wv                               # (n_t2,)
        total += wa * c1 * np.sum(w2 * c2 / (t2g * denom) * inner)
    return -2.0 * total


def third_order_expectation(chi, M: CouplingTensor, eps, tables=None):
    """Raw expectation of the third-order noise coefficient at cutoff eps."""
    cs = contract(M)
    if tables is None:
        tables = ScaledKernelTables(chi, eps)
    F = third_order_pair_integral(chi, eps, tables)
    A = third_order_cross_integral(chi, eps, tables)
    return 8.0 * cs.calM1 * A + 4.0 * cs.calM2 * F, F, A


def compute_m3(chi, M: CouplingTensor, eps_sequence, tables_factory=None):
    """Finite part of the third-order expectation, extrapolated in 1/log(1/eps).

    Returns (m3 vector, extrapolation residual, nu table).  Raises
    NonCauchyError when the finite parts do not settle.
    """
    eps_sequence = list(eps_sequence)
    if len(eps_sequence) < 3 or any(b >= a for a, b in
                                    zip(eps_sequence, eps_sequence[1:])):
        raise ValueError("eps_sequence must be strictly decreasing, length >= 3")
    m2 = compute_m2(M)
    nu = []
    for eps in eps_sequence:
        tables = (tables_factory(chi, eps) if tables_factory
                  else ScaledKernelTables(chi, eps))
        e3, _, _ = third_order_expectation(chi, M, eps, tables)
        nu.append(e3 - m2 * np.log(1.0 / eps))
    nu = np.asarray(nu)
    steps = np.linalg.norm(np.diff(nu, axis=0), axis=1)
    scale = max(float(np.max(np.linalg.norm(nu, axis=1))), 1e-12)
    # growing steps that are also significant against the overall scale mean
    # the subtraction missed a divergence
    if steps.size >= 2 and steps[-1] > 1.05 * steps[-2] \
            and steps[-1] > 0.1 * scale:
        raise NonCauchyError(
            "third-order finite parts are not settling along the eps "
            f"sequence (step norms {steps})", table=nu)
    # linear fit nu ~ m3 + c / log(1/eps) through the last three points
    xs = 1.0 / np.log(1.0 / np.asarray(eps_sequence[-3:]))
    ys = nu[-3:]
    A = np.vstack([np.ones_like(xs), xs]).T
    coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
    m3 = coef[0]
    residual = float(np.linalg.norm(nu[-1] - nu[-2]))
    return m3, residual, nu


def compute_constants(chi, chi_id, M: CouplingTensor, eps_sequence=None,
                      skip_m3=False):
    """Assemble the full constants record for one cutoff and coupling tensor."""
    m1, err = compute_m1(chi, M)
    m2 = compute_m2(M)
    if skip_m3 or np.max(np.abs(M.entries)) == 0.0:
        m3 = np.zeros(3)
        resid = 0.0
    else:
        if eps_sequence is None:
            eps_sequence = [2.0 ** -4, 2.0 ** -5, 2.0 ** -6]
        m3, resid, _ = compute_m3(chi, M, eps_sequence)
    return RenormConstants(m1=m1, m2=m2, m3=m3, chi_id=chi_id,
                           quadrature_error=err,
                           m3_extrapolation_residual=resid)


def counterterm(rc: RenormConstants, eps):
    """C_eps = m1 / eps + m2 log(1/eps) + m3, componentwise."""
    if not (0.0 < eps <= 1.0):
        raise ValueError("need 0 < eps <= 1")
    return rc.m1 / eps + rc.m2 * np.log(1.0 / eps) + rc.m3
