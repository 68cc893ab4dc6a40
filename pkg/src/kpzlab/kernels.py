"""Deterministic space-time kernels on the torus.

Heat kernel image sums, the gradient kernel with scale-window cutoff, the
stationary covariance of the linear field, the one-step RG kernel, the
smoothing kernel of the negative-regularity norm, and the Fourier-side
decomposition of the product kernel J = Y * covariance into a gradient part
plus a smooth torus correction.

Conventions: spatial Fourier transform f^(p) = int f(x) e^{-ipx} dx; torus
modes p_k = 2 pi k / circumference.
"""

from dataclasses import dataclass, field

import numpy as np

from .cutoffs import chi_m, chi_m_mixed
from .quadrature import (QuadratureError, adaptive_quad, log_grid,
                         trapezoid_weights)

IMAGE_TOL = 1e-14
_SQRT4PI = np.sqrt(4.0 * np.pi)


# ---------------------------------------------------------------------------
# heat kernel on the torus (image sum / spectral sum, whichever converges)

def _heat_sum(t, x, circ, deriv, tol):
    """Gaussian image sum for the heat kernel and its x-derivatives."""
    t = float(t)
    x = np.asarray(x, dtype=float)
    x = x - circ * np.round(x / circ)
    if 4.0 * t <= circ * circ:
        # image sum: images beyond the tail tolerance are dropped
        reach = np.sqrt(max(4.0 * t * np.log(1.0 / tol), 0.0))
        n_img = int(np.ceil((reach + circ / 2) / circ)) + 1
        out = np.zeros_like(x)
        c = 1.0 / (_SQRT4PI * np.sqrt(t))
        for i in range(-n_img, n_img + 1):
            z = x + i * circ
            g = np.exp(-z * z / (4.0 * t))
            if deriv == 0:
                out += g
            elif deriv == 1:
                out += -z / (2.0 * t) * g
            else:
                out += (z * z / (4.0 * t * t) - 1.0 / (2.0 * t)) * g
        return c * out
    # wide kernel: spectral sum converges in a handful of modes
    kmax = int(np.ceil(circ / (2 * np.pi) * np.sqrt(np.log(1.0 / tol) / t))) + 1
    k = np.arange(1, kmax + 1)
    p = 2.0 * np.pi * k / circ
    damp = np.exp(-t * p * p)
    phase = np.outer(x, p)
    if deriv == 0:
        return (1.0 + 2.0 * np.cos(phase) @ damp) / circ
    if deriv == 1:
        return (-2.0 * np.sin(phase) @ (p * damp)) / circ
    return (-2.0 * np.cos(phase) @ (p * p * damp)) / circ


def heat_kernel_torus(n, L, t, x, tol=IMAGE_TOL):
    """Heat kernel on the torus of circumference L^n at time t > 0."""
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    circ = float(L) ** n
    out = _heat_sum(t, x, circ, 0, tol)
    return out if np.ndim(x) else float(out)


def heat_kernel_torus_dx(n, L, t, x, tol=IMAGE_TOL):
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    out = _heat_sum(t, x, float(L) ** n, 1, tol)
    return out if np.ndim(x) else float(out)


def heat_kernel_torus_lap(n, L, t, x, tol=IMAGE_TOL):
    if t <= 0:
        raise ValueError("heat kernel needs t > 0")
    out = _heat_sum(t, x, float(L) ** n, 2, tol)
    return out if np.ndim(x) else float(out)


# ---------------------------------------------------------------------------
# gradient kernel with scale window, one-step RG kernel, cutoff multiplier

def Y_kernel(n, N, L, chi, t, x):
    """Gradient heat kernel windowed to scales between L^{-(N-n)} and 1."""
    if N < n:
        raise ValueError("need N >= n")
    w = chi_m(chi, N - n, L, t) if t > 0 else 0.0
    if w == 0.0:
        return np.zeros_like(np.asarray(x, float)) if np.ndim(x) else 0.0
    out = heat_kernel_torus_dx(n, L, t, x) * w
    return out if np.ndim(x) else float(out)


def Gamma_kernel(n, L, chi, t, x):
    """One-step kernel H_n(t, x) (chi(t) - chi(L^2 t)); scales in [1/L, 1]."""
    w = chi_m(chi, 1, L, t) if t > 0 else 0.0
    if w == 0.0:
        return np.zeros_like(np.asarray(x, float)) if np.ndim(x) else 0.0
    out = heat_kernel_torus(n, L, t, x) * w
    return out if np.ndim(x) else float(out)


def Upsilon_kernel(n, L, chi, t, x):
    """d_x Gamma: the kernel convolving the feedback term in one RG step."""
    w = chi_m(chi, 1, L, t) if t > 0 else 0.0
    if w == 0.0:
        return np.zeros_like(np.asarray(x, float)) if np.ndim(x) else 0.0
    out = heat_kernel_torus_dx(n, L, t, x) * w
    return out if np.ndim(x) else float(out)


def G_eps_multiplier(eps, chi, t, p):
    """Fourier multiplier e^{-t p^2} (1 - chi(t / eps^2)) of the cut propagator."""
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, np.exp(-t * np.asarray(p, float) ** 2)
                   * (1.0 - chi(t / eps ** 2)), 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# stationary covariance of the windowed gradient field

def _tau_breakpoints(m, L, t, chi, chi_lower):
    """Quadrature knots: cutoff transition points of the tau integrand."""
    a = float(L) ** (-2.0 * m)
    lo, hi = 0.45 * a, 2.0
    pts = {lo, hi, a, 2.0 * a, min(1.0, hi), 1.5 * a}
    for edge in (1.0, 1.5, 2.0):
        pts.add(edge - t)        # transitions of chi_m(t + tau)
        pts.add(edge * a)
    return sorted(p for p in pts if lo < p < hi)


def covariance_C(n, N, L, chi, t, x, chi_lower=None, rtol=1e-9):
    """Stationary covariance of the scale-(n, N) gradient field at lag (t, x).

    chi_lower, when given, replaces the small-scale cutoff in one factor
    (the mixed covariance used for cutoff-sensitivity studies).

    Returns (value, error_estimate).
    """
    if N < n:
        raise ValueError("need N >= n")
    m = N - n
    t = abs(float(t))
    if t >= 2.0:
        return 0.0, 0.0
    lower = chi if chi_lower is None else chi_lower

    def integrand(tau):
        w = chi_m(chi, m, L, t + tau) * chi_m_mixed(chi, lower, m, L, tau)
        if w == 0.0:
            return 0.0
        return -heat_kernel_torus_lap(n, L, t + 2.0 * tau, x) * w

    a = float(L) ** (-2.0 * m)
    knots = [0.45 * a] + _tau_breakpoints(m, L, t, chi, lower) + [2.0]
    knots = sorted(set(knots))
    val, err = 0.0, 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        if hi - lo < 1e-300:
            continue
        v, e = adaptive_quad(integrand, lo, hi, rtol=rtol)
        val += v
        err += e
    return val, err


def _gl_panels(lo, hi, knots, nodes=12):
    """Gauss-Legendre nodes/weights on geometric panels between knots."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    edges = [lo]
    for k in sorted(knots):
        if lo < k < hi:
            edges.append(k)
    edges.append(hi)
    # refine geometrically inside each span so the 1/sqrt(tau) scale is resolved
    refined = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b / a > 4.0:
            sub = np.exp(np.linspace(np.log(a), np.log(b),
                                     int(np.ceil(np.log(b / a) / np.log(4.0))) + 1))
            refined.extend(sub[:-1])
        else:
            refined.append(a)
    refined.append(hi)
    nodes_all, w_all = [], []
    for a, b in zip(refined[:-1], refined[1:]):
        nodes_all.append(0.5 * (b - a) * xs + 0.5 * (a + b))
        w_all.append(0.5 * (b - a) * ws)
    return np.concatenate(nodes_all), np.concatenate(w_all)


def covariance_table(n, N, L, chi, t_vals, x_vals, chi_lower=None, nodes=12):
    """Vectorized covariance on a (t, x) grid; one Gauss-Legendre rule per row.

    Returns array of shape (len(t_vals), len(x_vals)).
    """
    m = N - n
    a = float(L) ** (-2.0 * m)
    lower = chi if chi_lower is None else chi_lower
    x_vals = np.asarray(x_vals, dtype=float)
    out = np.zeros((len(t_vals), x_vals.size))
    for i, t in enumerate(np.abs(np.asarray(t_vals, dtype=float))):
        if t >= 2.0:
            continue
        taus, ws = _gl_panels(0.45 * a, 2.0, _tau_breakpoints(m, L, t, chi, lower),
                              nodes)
        cw = chi_m(chi, m, L, t + taus) * chi_m_mixed(chi, lower, m, L, taus)
        keep = cw != 0.0
        if not np.any(keep):
            continue
        acc = np.zeros(x_vals.size)
        for tau, w in zip(taus[keep], (ws * cw)[keep]):
            acc -= w * heat_kernel_torus_lap(n, L, t + 2.0 * tau, x_vals)
        out[i] = acc
    return out


# ---------------------------------------------------------------------------
# smoothing kernel of the negative-regularity norm

def K_smoothing(n, L, t, x, tol=IMAGE_TOL):
    """K(t, x) = (1/2) e^{-|t|} * periodized (1/2) e^{-|x|} on the torus."""
    circ = float(L) ** n
    x = np.asarray(x, dtype=float)
    xw = x - circ * np.round(x / circ)
    n_img = int(np.ceil(np.log(1.0 / tol) / circ)) + 1
    k2 = np.zeros_like(xw)
    for i in range(-n_img, n_img + 1):
        k2 += 0.5 * np.exp(-np.abs(xw + i * circ))
    out = 0.5 * np.exp(-abs(t)) * k2
    return out if np.ndim(x) else float(out)


def K_time(t):
    return 0.5 * np.exp(-np.abs(t))


# ---------------------------------------------------------------------------
# h multiplier and the scaled Fourier tables behind J, W and the third-order
# integrals

def h_eps(eps, chi, t, p, rtol=1e-9):
    """p^2 int_0^inf e^{-2 sigma p^2} chi_eps((1+sigma) t) chi_eps(sigma t) dsigma."""
    if t <= 0:
        raise ValueError("h_eps needs t > 0")
    p = float(p)
    if p == 0.0:
        return 0.0
    e2 = eps * eps
    if t >= 2.0:
        return 0.0

    def chie(x):
        return chi(x) - chi(x / e2)

    lo = e2 / t * 0.45
    hi = 2.0 / t
    knots = sorted({e2 / t, 2 * e2 / t, 1.0 / t, 2.0 / t,
                    max(e2 / t - 1.0, lo), max(1.0 / t - 1.0, lo),
                    max(2.0 / t - 1.0, lo), 1.5 * e2 / t, 1.5 / t - 1.0})
    knots = [k for k in knots if lo < k < hi]
    # Gaussian decay: nothing survives beyond sigma ~ 40 / p^2
    hi = min(hi, max(lo * 2.0, 40.0 / (p * p)))
    knots = [k for k in knots if k < hi]
    val, err = 0.0, 0.0
    for a, b in zip([lo] + knots, knots + [hi]):
        if b <= a:
            continue
        v, e = adaptive_quad(
            lambda s: np.exp(-2.0 * s * p * p) * chie((1.0 + s) * t) * chie(s * t),
            a, b, rtol=rtol)
        val += v
        err += e
    return p * p * val


class ScaledKernelTables:
    """Log-t x r tables of the h multiplier and the odd moment P(t, r).

    h(t, r) is the covariance shape factor; P(t, r) = int dq (r + q)
    e^{-((r+q)^2 + q^2)} h(t, q) carries the Fourier transform of J on the
    line: J^(t, p) = (i / (2 pi)) chi_eps(t) P(t, sqrt(t) p) / t.
    """

    def __init__(self, chi, eps, points_per_decade=42, n_r=300, r_max=8.0,
                 n_sigma=450, t_floor_factor=0.3):
        self.chi = chi
        self.eps = float(eps)
        e2 = self.eps ** 2
        self.t_grid, _ = log_grid(t_floor_factor * e2, 4.2, points_per_decade)
        self.r_grid = np.linspace(0.0, r_max, n_r)
        self._log_t = np.log(self.t_grid)
        nt = self.t_grid.size

        def chie(x):
            return chi(x) - chi(x / e2)

        h = np.zeros((nt, n_r))
        for i, t in enumerate(self.t_grid):
            lo, hi = 0.45 * e2 / t, 2.0 / t
            if lo >= hi:
                continue
            sg = np.exp(np.linspace(np.log(lo), np.log(hi), n_sigma))
            w = trapezoid_weights(sg)
            cc = chie((1.0 + sg) * t) * chie(sg * t)
            E = np.exp(-2.0 * np.outer(sg, self.r_grid ** 2))
            h[i] = self.r_grid ** 2 * ((w * cc) @ E)
        self.h = h

        # odd moment P(t, r) over a symmetric q-grid
        q = np.linspace(-r_max, r_max, 2 * n_r + 1)
        dq = q[1] - q[0]
        self._q = q
        rq = self.r_grid[:, None] + q[None, :]
        kern = rq * np.exp(-(rq ** 2 + q[None, :] ** 2))    # (n_r, n_q)
        P = np.zeros((nt, n_r))
        for i in range(nt):
            hq = np.interp(np.abs(q), self.r_grid, h[i])
            P[i] = kern @ hq * dq
        self.P = P

    def _row_weights(self, t):
        lt = np.log(np.clip(t, self.t_grid[0], self.t_grid[-1]))
        i0 = np.clip(np.searchsorted(self._log_t, lt) - 1, 0, self.t_grid.size - 2)
        w = (lt - self._log_t[i0]) / (self._log_t[i0 + 1] - self._log_t[i0])
        return i0, np.clip(w, 0.0, 1.0)

    def _interp(self, table, t, r):
        """Bilinear interp in (log t, |r|), sign-symmetric tables."""
        i0, wt = self._row_weights(t)
        r = np.abs(np.asarray(r, dtype=float))
        rg = self.r_grid
        j0 = np.clip(np.searchsorted(rg, r) - 1, 0, rg.size - 2)
        wr = np.clip((r - rg[j0]) / (rg[j0 + 1] - rg[j0]), 0.0, 1.0)
        v0 = (1 - wr) * table[i0, j0] + wr * table[i0, j0 + 1]
        v1 = (1 - wr) * table[i0 + 1, j0] + wr * table[i0 + 1, j0 + 1]
        return (1 - wt) * v0 + wt * v1

    def h_at(self, t, r):
        return self._interp(self.h, t, r)

    def P_at(self, t, r):
        """P is odd in r; interpolation on |r| with the sign restored."""
        r = np.asarray(r, dtype=float)
        return np.sign(r) * self._interp(self.P, t, r)


# ---------------------------------------------------------------------------
# J = Y * covariance, its gradient/smooth decomposition, and Z = Y conv J

def J_product(n, N, L, chi, t, x):
    """Pointwise product kernel J(t, x) = Y(t, x) * covariance(t, x) (torus)."""
    y = Y_kernel(n, N, L, chi, t, x)
    if np.all(np.asarray(y) == 0.0):
        return np.zeros_like(np.asarray(x, float)) if np.ndim(x) else 0.0
    if np.ndim(x) == 0:
        c, _ = covariance_C(n, N, L, chi, t, x)
        return y * c
    return y * covariance_table(n, N, L, chi, [t], x)[0]


@dataclass
class JDecomposition:
    """J on the torus split as d_x W (line kernel) + smooth torus correction."""

    t: float
    x: np.ndarray
    J: np.ndarray
    W: np.ndarray
    dxW: np.ndarray
    j_smooth: np.ndarray
    quadrature_error: float


def _w_r_grid(spacing=0.05, r_max=12.0):
    r = np.arange(-r_max, r_max + spacing / 2, spacing)
    return r


def J_decomposition(n, N, L, chi, t, x, tables=None):
    """Split J(t, .) = d_x W(t, .) + j(t, .) at fixed time t on an x grid.

    W is reconstructed from the scaled Fourier representation on the line by
    a trapezoidal inverse transform; j is the (smooth, exponentially small)
    torus-minus-line correction.  Returns a JDecomposition.
    """
    if N < n:
        raise ValueError("need N >= n")
    eps = float(L) ** (-(N - n))
    if tables is None:
        tables = ScaledKernelTables(chi, eps)
    x = np.asarray(x, dtype=float)
    t = float(t)
    e2 = eps * eps

    chie_t = chi(t) - chi(t / e2) if t > 0 else 0.0
    J_tor = np.zeros_like(x)
    if chie_t != 0.0:
        y = heat_kernel_torus_dx(n, L, t, x) * chie_t
        cv = covariance_table(n, N, L, chi, [t], x)[0]
        J_tor = y * cv

    r = _w_r_grid()
    dr = r[1] - r[0]
    Pv = tables.P_at(np.full(r.size, t), r)
    Qv = np.divide(Pv, r, out=np.zeros_like(Pv), where=np.abs(r) > 1e-12)
    # even-in-r Q: fill r = 0 by parabolic continuation
    if np.any(np.abs(r) <= 1e-12):
        j0 = np.argmin(np.abs(r))
        Qv[j0] = 2.0 * Qv[j0 + 1] - Qv[j0 + 2]
    st = np.sqrt(t) if t > 0 else 1.0
    pref = chie_t / (4.0 * np.pi ** 2 * t) if t > 0 else 0.0
    phase = np.outer(x / st, r)
    W = pref * (np.cos(phase) @ Qv) * dr
    dxW = -pref / st * (np.sin(phase) @ (Qv * r)) * dr
    j_smooth = J_tor - dxW
    return JDecomposition(t=t, x=x, J=J_tor, W=W, dxW=dxW, j_smooth=j_smooth,
                          quadrature_error=np.abs(Qv[-1]) * dr + 1e-12)


def W_l1_norm(n, N, L, chi, tables=None, n_t=160, n_y=241):
    """L1 norm of the gradient potential W over time and the line."""
    eps = float(L) ** (-(N - n))
    if tables is None:
        tables = ScaledKernelTables(chi, eps)
    e2 = eps * eps
    tg, tw = log_grid(0.45 * e2, 2.0, 40)
    r = _w_r_grid()
    dr = r[1] - r[0]
    y = np.linspace(-12.0, 12.0, n_y)
    dy = y[1] - y[0]
    total = 0.0
    for t, wt in zip(tg, tw):
        chie_t = chi(t) - chi(t / e2)
        if chie_t == 0.0:
            continue
        Pv = tables.P_at(np.full(r.size, t), r)
        Qv = np.divide(Pv, r, out=np.zeros_like(Pv), where=np.abs(r) > 1e-12)
        j0 = np.argmin(np.abs(r))
        Qv[j0] = 2.0 * Qv[j0 + 1] - Qv[j0 + 2]
        prof = (np.cos(np.outer(y, r)) @ Qv) * dr          # W(t, sqrt(t) y) * (4 pi^2 t / chie)
        # ||W(t, .)||_L1(dx) = chie/(4 pi^2 t) * sqrt(t) * int |prof| dy
        total += wt * abs(chie_t) / (4.0 * np.pi ** 2 * np.sqrt(t)) \
            * np.sum(np.abs(prof)) * dy
    return total


def Z_line_table(chi, eps, t_vals, y_vals, tables=None, n_s=96):
    """Z = Y conv J on the line, tabulated at (t, x = sqrt(t) y) points.

    Works in spatial Fourier: Z^(t, p) = int_0^t Y^(t-s, p) J^(s, p) ds with
    the scaled tables; inverse transform on a fixed r grid.  Returns
    Z[t_index, y_index] with x measured as sqrt(t) * y.
    """
    if tables is None:
        tables = ScaledKernelTables(chi, eps)
    e2 = eps * eps

    def chie(x):
        return chi(x) - chi(x / e2)

    r = _w_r_grid(spacing=0.05, r_max=10.0)
    dr = r[1] - r[0]
    out = np.zeros((len(t_vals), len(y_vals)))
    y_vals = np.asarray(y_vals, dtype=float)
    for i, t in enumerate(t_vals):
        if t <= 2.0 * 0.45 * e2:
            continue
        p = r / np.sqrt(t)
        sg = np.exp(np.linspace(np.log(0.45 * e2), np.log(t * (1 - 1e-12)), n_s))
        sw = trapezoid_weights(sg)
        acc = np.zeros(r.size)
        for s, w in zip(sg, sw):
            cy = chie(t - s)
            if cy == 0.0 or s > 2.0:
                continue
            Pv = tables.P_at(np.full(r.size, s), np.sqrt(s) * p)
            # Y^(t-s, p) J^(s, p) = (ip) e^{-(t-s)p^2} chie(t-s) * (i/(2pi)) chie(s) P/s
            acc += w * (-p) * np.exp(-(t - s) * p * p) * cy \
                * chie(s) * Pv / s / (2.0 * np.pi)
        # inverse transform: Z(t, x) = (1/2pi) int dp Z^(t,p) e^{ipx}; Z^ real even
        phase = np.outer(y_vals * np.sqrt(t), p)
        out[i] = (np.cos(phase) @ acc) * (dr / np.sqrt(t)) / (2.0 * np.pi)
    return out


# ---------------------------------------------------------------------------
# kernel tables with CSV export

@dataclass
class KernelTable:
    """Tabulated kernel on a uniform [0, T_max] x torus lattice."""

    kernel: str
    n: int
    N: int
    L: int
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    quadrature_error: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.N < self.n:
            raise ValueError("need N >= n")
        if self.L < 2:
            raise ValueError("need L >= 2")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("kernel table values must be finite")

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("t,x,value,error\n")
            for i, t in enumerate(self.t):
                for j, x in enumerate(self.x):
                    f.write(f"{t!r},{x!r},{self.values[i, j]!r},"
                            f"{self.quadrature_error!r}\n")


def build_kernel_table(kernel, n, N, L, chi, n_t=64, n_x=64, T_max=2.5,
                       t_min=None):
    """Tabulate a named kernel ('H', 'Y', 'C', 'Gamma', 'K', 'J') uniformly."""
    circ = float(L) ** n
    if t_min is None:
        t_min = T_max / n_t
    t = np.linspace(t_min, T_max, n_t)
    x = np.arange(n_x) * (circ / n_x)
    err = 0.0
    if kernel == "H":
        vals = np.stack([heat_kernel_torus(n, L, ti, x) for ti in t])
        dx = circ / n_x
        err = float(np.max(np.abs(np.sum(vals, axis=1) * dx - 1.0)))
    elif kernel == "Y":
        vals = np.stack([Y_kernel(n, N, L, chi, ti, x) for ti in t])
    elif kernel == "C":
        vals = covariance_table(n, N, L, chi, t, x)
        err = 1e-9 * float(np.max(np.abs(vals)))
    elif kernel == "Gamma":
        vals = np.stack([Gamma_kernel(n, L, chi, ti, x) for ti in t])
    elif kernel == "K":
        vals = np.stack([K_smoothing(n, L, ti, x) for ti in t])
    elif kernel == "J":
        ys = np.stack([Y_kernel(n, N, L, chi, ti, x) for ti in t])
        vals = ys * covariance_table(n, N, L, chi, t, x)
        err = 1e-9 * float(np.max(np.abs(vals)))
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    return KernelTable(kernel=kernel, n=n, N=N, L=L, t=t, x=x, values=vals,
                       quadrature_error=err)
