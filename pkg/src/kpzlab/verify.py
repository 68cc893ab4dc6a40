"""Norms, Monte-Carlo covariance estimators, and the statistical batteries.

The negative-regularity norm smooths with K = (1 - d_t^2)^{-1} (1 - Lap)^{-1}
kernels (exact exponential recursions in time, exact 1/(1+p^2) multipliers in
space) and takes the supremum of L^2 masses over unit space-time cubes.
"""

from dataclasses import dataclass, field

import numpy as np

from .cutoffs import chi_m, chi_m_mixed
from .frames import ScaleFrame
from .kernels import (Z_line_table, ScaledKernelTables, covariance_table,
                      heat_kernel_torus_dx)
from .quadrature import log_grid, trapezoid_weights

_LINE_SCALE = 40          # torus exponent large enough to kill image terms


@dataclass(frozen=True)
class NormReport:
    norm_id: str
    value: float
    refinement: int = 0
    error: float = 0.0

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("norms are nonnegative")


@dataclass
class CovarianceEstimate:
    field_id: str
    lags: list
    mean: np.ndarray
    covariance: np.ndarray
    std_error: np.ndarray
    ensemble: int


# ---------------------------------------------------------------------------
# smoothing and the cube norm

def _k_time_smooth(values, dt):
    """Exact discrete convolution with K1(t) = e^{-|t|}/2 via two recursions."""
    decay = np.exp(-dt)
    fwd = np.empty_like(values)
    acc = np.zeros_like(values[0])
    for r in range(values.shape[0]):
        acc = decay * acc + values[r]
        fwd[r] = acc
    bwd = np.empty_like(values)
    acc = np.zeros_like(values[0])
    for r in range(values.shape[0] - 1, -1, -1):
        acc = decay * acc + values[r]
        bwd[r] = acc
    return 0.5 * dt * (fwd + bwd - values)


def _k_space_smooth(values, circumference):
    n_x = values.shape[1]
    p = 2.0 * np.pi * np.fft.fftfreq(n_x, d=1.0 / n_x) / circumference
    spec = np.fft.fft(values, axis=1)
    spec *= (1.0 / (1.0 + p * p))[None, :, None]
    return np.fft.ifft(spec, axis=1).real


def k_smooth(values, frame: ScaleFrame):
    """K * v on the frame grid (exact in both factors of K)."""
    return _k_space_smooth(_k_time_smooth(values, frame.dt), frame.circumference)


def _cube_edges(extent, step):
    """Unit-cube band edges over [0, extent]; a short trailing band merges."""
    n_full = int(np.floor(extent + 1e-9))
    edges = list(np.arange(0, n_full + 1, dtype=float))
    if not edges or edges[-1] < extent - 1e-9:
        if extent - (edges[-1] if edges else 0.0) < 0.5 and len(edges) > 1:
            edges[-1] = extent
        else:
            edges.append(extent)
    if len(edges) == 1:
        edges = [0.0, extent]
    return edges


def cube_masses(smoothed, frame: ScaleFrame):
    """L^2 masses of a smоothed field over unit space-time cubes (t >= 0)."""
    sq = np.sum(smoothed ** 2, axis=2)
    dt, dx = frame.dt, frame.dx
    n0 = frame.n_neg
    t_edges = _cube_edges(frame.tau, dt)
    x_edges = _cube_edges(frame.circumference, dx)
    masses = np.zeros((len(t_edges) - 1, len(x_edges) - 1))
    t_idx = [n0 + int(round(e / dt)) for e in t_edges]
    x_idx = [int(round(e / dx)) for e in x_edges]
    for a in range(len(t_edges) - 1):
        rows = sq[t_idx[a]:max(t_idx[a + 1], t_idx[a] + 1)]
        for b in range(len(x_edges) - 1):
            cell = rows[:, x_idx[b]:max(x_idx[b + 1], x_idx[b] + 1)]
            masses[a, b] = np.sqrt(np.sum(cell) * dt * dx)
    return masses


def vn_norm(values, frame: ScaleFrame) -> NormReport:
    """sup over unit cubes of ||K * v||_{L^2(cube)} for a (rows, n_x, 3) field."""
    if values.shape != (frame.n_rows, frame.n_x, 3):
        raise ValueError("field shape does not match the frame grid")
    if frame.dt > 1.0 or frame.dx > 1.0:
        raise ValueError("grid coarser than unit cubes")
    masses = cube_masses(k_smooth(values, frame), frame)
    return NormReport(norm_id="Vn", value=float(np.max(masses)),
                      error=frame.dt + frame.dx)


def phi_norm(values, frame: ScaleFrame) -> NormReport:
    """Sup norm over derivatives up to order (2, 2) by finite differences."""
    total = 0.0
    v = values[frame.n_neg:]
    for it in range(3):
        w = v
        for jx in range(3):
            total += float(np.max(np.abs(w)))
            w = (np.roll(w, -1, axis=1) - np.roll(w, 1, axis=1)) / (2 * frame.dx)
        v = np.gradient(v, frame.dt, axis=0) if it < 2 else v
    return NormReport(norm_id="Phi", value=total)


def bilocal_norm(sigma_eval, frame: ScaleFrame, tail_tol=1e-12,
                 max_offsets=None) -> NormReport:
    """sup_i sum_j ||K (x) K * sigma||_{L^2(c_i x c_j)} for a bilocal field.

    sigma_eval(rows_a, rows_b) -> array over the frame grid pairs is expensive;
    this routine smooths a tabulated bilocal array sigma[r1, x1, r2, x2]
    (Euclidean norm over any matrix components taken first).
    """
    tab = sigma_eval
    n_r, n_x = frame.n_rows, frame.n_x
    if tab.shape[:4] != (n_r, n_x, n_r, n_x):
        raise ValueError("bilocal table does not match the frame grid")
    if tab.ndim > 4:
        tab = np.sqrt(np.sum(tab.reshape(tab.shape[:4] + (-1,)) ** 2, axis=-1))
    # smooth in the first pair of slots, then the second
    flat = tab.reshape(n_r, n_x, -1)
    sm = _k_space_smooth(_k_time_smooth(flat, frame.dt), frame.circumference)
    sm = sm.reshape(n_r, n_x, n_r, n_x).transpose(2, 3, 0, 1).reshape(n_r, n_x, -1)
    sm = _k_space_smooth(_k_time_smooth(sm, frame.dt), frame.circumference)
    sm = sm.reshape(n_r, n_x, n_r, n_x).transpose(2, 3, 0, 1)
    sq = sm ** 2
    dt, dx = frame.dt, frame.dx
    n0 = frame.n_neg
    t_edges = _cube_edges(frame.tau, dt)
    x_edges = _cube_edges(frame.circumference, dx)
    t_idx = [n0 + int(round(e / dt)) for e in t_edges]
    x_idx = [int(round(e / dx)) for e in x_edges]
    n_tc, n_xc = len(t_edges) - 1, len(x_edges) - 1
    best = 0.0
    for a1 in range(n_tc):
        for b1 in range(n_xc):
            block = sq[t_idx[a1]:max(t_idx[a1 + 1], t_idx[a1] + 1),
                       x_idx[b1]:max(x_idx[b1 + 1], x_idx[b1] + 1)]
            total, running = 0.0, []
            for a2 in range(n_tc):
                for b2 in range(n_xc):
                    cell = block[:, :, t_idx[a2]:max(t_idx[a2 + 1], t_idx[a2] + 1),
                                 x_idx[b2]:max(x_idx[b2 + 1], x_idx[b2] + 1)]
                    running.append(np.sqrt(np.sum(cell) * dt * dt * dx * dx))
            running.sort(reverse=True)
            for v in running:
                if total > 0 and v < tail_tol * total:
                    break
                total += v
            best = max(best, total)
    return NormReport(norm_id="Vn-bilocal", value=float(best))


# ---------------------------------------------------------------------------
# L^p scans of the singular kernels

def _lp_grid(eps, t_floor_factor=0.35, ppd=26, y_max=8.0, n_y=161):
    tg, tw = log_grid(t_floor_factor * eps * eps, 2.2, ppd)
    y = np.linspace(-y_max, y_max, n_y)
    yw = trapezoid_weights(y)
    return tg, tw, y, yw


def _lp_value(f_ty, tg, tw, y, yw, p):
    """int dt dx |f|^p with x = sqrt(t) y on the scaled grid; returns the
    p-th-power integral (the quantity the regularity estimates control)."""
    return float(np.sum(tw * np.sqrt(tg) * ((np.abs(f_ty) ** p) @ yw)))


def _kernel_on_grid(kernel, gap, chi, chi_prime, L, tg, y):
    """Evaluate one named kernel at (t, x = sqrt(t) y) on the line."""
    n = _LINE_SCALE
    N = n + gap
    out = np.zeros((tg.size, y.size))
    if kernel in ("C", "dC"):
        for i, t in enumerate(tg):
            x = np.sqrt(t) * y
            base = covariance_table(n, N, L, chi, [t], x)[0]
            if kernel == "C":
                out[i] = np.abs(base)
            else:
                mixed = covariance_table(n, N, L, chi, [t], x,
                                         chi_lower=chi_prime)[0]
                out[i] = np.abs(mixed - base)
    elif kernel in ("Y", "dY"):
        for i, t in enumerate(tg):
            x = np.sqrt(t) * y
            dh = heat_kernel_torus_dx(n, L, t, x)
            if kernel == "Y":
                out[i] = np.abs(dh) * abs(chi_m(chi, gap, L, t))
            else:
                out[i] = np.abs(dh) * abs(chi_m(chi, gap, L, t)
                                          - chi_m_mixed(chi, chi_prime, gap, L, t))
    elif kernel == "W":
        eps = float(L) ** -gap
        tables = ScaledKernelTables(chi, eps)
        from .kernels import _w_r_grid
        r = _w_r_grid()
        dr = r[1] - r[0]
        cosm = np.cos(np.outer(y, r))
        for i, t in enumerate(tg):
            chie = float(chi(t) - chi(t / eps ** 2)) if t > 0 else 0.0
            if chie == 0.0:
                continue
            Pv = tables.P_at(np.full(r.size, t), r)
            Qv = np.divide(Pv, r, out=np.zeros_like(Pv),
                           where=np.abs(r) > 1e-12)
            j0 = np.argmin(np.abs(r))
            Qv[j0] = 2.0 * Qv[j0 + 1] - Qv[j0 + 2]
            out[i] = np.abs(chie / (4.0 * np.pi ** 2 * t) * (cosm @ Qv) * dr)
    elif kernel == "Z":
        eps = float(L) ** -gap
        out = np.abs(Z_line_table(chi, eps, tg, y))
    else:
        raise ValueError(f"unknown kernel id {kernel!r}")
    return out


def lp_norm_scan(kernel, p_list, levels, chi, chi_prime=None, L=2,
                 stable_tol=0.05, diverge_tol=0.25):
    """Discrete L^p integrals of a singular kernel under joint refinement.

    levels: increasing scale gaps N - n; each level refines the grid floor to
    resolve its own small-scale cutoff and (for the sup-envelope kernels C, Y)
    extends the envelope to the new gap.  Classification per p: 'stable' when
    the last two levels agree within stable_tol, 'diverging' when every step
    grows monotonically by more than diverge_tol, else 'undecided'.
    """
    levels = list(levels)
    values = {p: [] for p in p_list}
    for li, gap in enumerate(levels):
        eps = float(L) ** -gap
        tg, tw, y, yw = _lp_grid(eps)
        if kernel in ("C", "Y"):
            env = np.zeros((tg.size, y.size))
            for g in levels[:li + 1]:
                env = np.maximum(env, _kernel_on_grid(kernel, g, chi,
                                                      chi_prime, L, tg, y))
        else:
            env = _kernel_on_grid(kernel, gap, chi, chi_prime, L, tg, y)
        for p in p_list:
            values[p].append(_lp_value(env, tg, tw, y, yw, p))
    report = {}
    for p in p_list:
        v = values[p]
        growth = [b / a - 1.0 for a, b in zip(v[:-1], v[1:])]
        if abs(v[-1] - v[-2]) / max(abs(v[-1]), 1e-300) < stable_tol:
            label = "stable"
        elif all(g > diverge_tol for g in growth):
            label = "diverging"
        else:
            label = "undecided"
        report[p] = {"values": v, "growth": growth, "classification": label}
    return report


# ---------------------------------------------------------------------------
# Monte-Carlo estimators

def _jackknife(per_seed):
    """Mean and jackknife standard error along axis 0."""
    per_seed = np.asarray(per_seed)
    n = per_seed.shape[0]
    mean = per_seed.mean(axis=0)
    if n < 2:
        return mean, np.full_like(mean, np.inf, dtype=float)
    loo = (per_seed.sum(axis=0)[None] - per_seed) / (n - 1)
    se = np.sqrt((n - 1) / n * np.sum((loo - mean) ** 2, axis=0))
    return mean, se


def mc_covariance(sampler, frame: ScaleFrame, lags, ensemble,
                  base_rows=None, field_id="field") -> CovarianceEstimate:
    """Covariance at the requested space-time lags, jackknifed over seeds.

    sampler(seed) -> (rows, n_x, n_comp) field on the frame; lags are
    (t_lag, x_lag) pairs in physical units (grid multiples).  Products are
    averaged over base points in the stationary window and over components.
    """
    if ensemble < 100:
        raise ValueError("ensemble >= 100 required")
    lag_idx = []
    for (tl, xl) in lags:
        rt = tl / frame.dt
        rx = xl / frame.dx
        if abs(rt - round(rt)) > 1e-9 or abs(rx - round(rx)) > 1e-9:
            raise ValueError(f"lag {(tl, xl)} is not a grid multiple")
        lag_idx.append((int(round(rt)), int(round(rx))))
    if base_rows is None:
        max_rt = max(r for r, _ in lag_idx)
        base_rows = np.arange(frame.n_neg, frame.n_rows - max_rt)
    per_seed_cov = np.zeros((ensemble, len(lags)))
    per_seed_mean = np.zeros(ensemble)
    for s in range(ensemble):
        f = sampler(s)
        base = f[base_rows]
        per_seed_mean[s] = base.mean()
        for li, (rt, rx) in enumerate(lag_idx):
            shifted = np.roll(f[base_rows + rt], -rx, axis=1)
            per_seed_cov[s, li] = np.mean(base * shifted)
    cov, cov_se = _jackknife(per_seed_cov)
    mean, mean_se = _jackknife(per_seed_mean)
    return CovarianceEstimate(field_id=field_id, lags=list(lags),
                              mean=np.array([mean, mean_se]),
                              covariance=cov, std_error=cov_se,
                              ensemble=ensemble)


def rho_second_moment(sampler, frame: ScaleFrame, points, ensemble,
                      field_id="field"):
    """E ||rho(t, x)||^2 for rho = K * (h_n zeta), jackknifed over seeds.

    points: (t, x) sample locations inside [0, tau] (grid multiples).
    Returns (values, std_errors) arrays over the points.
    """
    cap = frame.time_indicator()[:, None, None]
    idx = []
    for (t, x) in points:
        idx.append((frame.n_neg + int(round(t / frame.dt)),
                    int(round(x / frame.dx))))
    per_seed = np.zeros((ensemble, len(points)))
    for s in range(ensemble):
        f = sampler(s)
        sm = k_smooth(f * cap, frame)
        for pi, (r, c) in enumerate(idx):
            per_seed[s, pi] = np.sum(sm[r, c] ** 2)
    return _jackknife(per_seed)
