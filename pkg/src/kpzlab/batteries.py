"""Named verification batteries: each returns a structured pass/fail report.

The same routines back the `verify` CLI subcommand and the acceptance tests,
so the command-line battery and the test suite cannot drift apart.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTensor, contract
from .cutoffs import SMOOTHERSTEP, SMOOTHERSTEP_NARROW
from .frames import ScaleFrame, restrict_rows
from .kernels import (J_decomposition, W_l1_norm, ScaledKernelTables,
                      covariance_C)
from .noise import TimeGrid, sample_theta, sample_white_noise
from .renorm import m1_scalar_factor
from .rgflow import sigma_bilocal
from .verify import lp_norm_scan


@dataclass
class BatteryResult:
    name: str
    passed: bool
    checks: list = field(default_factory=list)   # (label, ok, detail)

    def add(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))
        self.passed = self.passed and bool(ok)

    def rows(self):
        return [{"battery": self.name, "check": label,
                 "passed": int(ok), "detail": detail}
                for (label, ok, detail) in self.checks]


# ---------------------------------------------------------------------------

def battery_lemma_heatkernel(chi=SMOOTHERSTEP, L=2, n=2, gaps=range(1, 7),
                             M=None):
    """Residual of the covariance at the origin against the linear divergence
    stays in a fixed band (max/min ratio < 2) as the scale gap grows."""
    M = M or CouplingTensor.identity()
    tr = contract(M).trace_vector
    c_chi, _ = m1_scalar_factor(chi)
    residuals = []
    for gap in gaps:
        c0, _ = covariance_C(n, n + gap, L, chi, 0.0, 0.0)
        residuals.append(float(np.max(np.abs(
            tr * c0 - float(L) ** gap * tr * c_chi))))
    ratio = max(residuals) / min(residuals)
    res = BatteryResult("lemma-heatkernel", True)
    res.add("residual-band", ratio < 2.0,
            f"gaps {list(gaps)}: residuals {['%.4f' % r for r in residuals]}, "
            f"max/min {ratio:.3f}")
    return res


def battery_lemma_greg(chi=SMOOTHERSTEP, chi_prime=SMOOTHERSTEP_NARROW, L=2):
    """L^p regularity thresholds of the singular kernels."""
    res = BatteryResult("lemma-greg", True)
    scan_c = lp_norm_scan("C", [2.5, 3.5], [2, 6, 10], chi, chi_prime, L)
    res.add("C-stable-p2.5", scan_c[2.5]["classification"] == "stable",
            str(scan_c[2.5]))
    res.add("C-diverging-p3.5", scan_c[3.5]["classification"] == "diverging",
            str(scan_c[3.5]))
    scan_y = lp_norm_scan("Y", [1.2, 1.6], [2, 6, 10], chi, chi_prime, L)
    res.add("Y-stable-p1.2", scan_y[1.2]["classification"] == "stable",
            str(scan_y[1.2]))
    res.add("Y-diverging-p1.6", scan_y[1.6]["classification"] == "diverging",
            str(scan_y[1.6]))
    scan_z = lp_norm_scan("Z", [1.0], [1, 2, 3, 4], chi, chi_prime, L)
    res.add("Z-stable-p1.0", scan_z[1.0]["classification"] == "stable",
            str(scan_z[1.0]))
    return res


def battery_lemma_deco(chi=SMOOTHERSTEP, L=2, n=1, gap=3):
    """Gradient/smooth decomposition of J and the L^1 uniformity of W."""
    res = BatteryResult("lemma-deco", True)
    N = n + gap
    eps = float(L) ** -gap
    tables = ScaledKernelTables(chi, eps)
    circ = float(L) ** n
    x = np.arange(128) * (circ / 128)
    worst = 0.0
    for t in [1.5 * eps ** 2, 8 * eps ** 2, 0.05, 0.3, 1.2]:
        dec = J_decomposition(n, N, L, chi, t, x, tables)
        fd = np.gradient(dec.W, circ / 128, axis=0)
        resid = np.max(np.abs(dec.J - fd - dec.j_smooth))
        scale = max(np.max(np.abs(dec.J)), 1e-30)
        # fd vs analytic d_x W: second-order finite-difference error
        worst = max(worst, resid / scale)
        jbound = np.max(np.abs(dec.j_smooth)
                        / (np.exp(-np.minimum(np.abs(x), circ - np.abs(x)))
                           * max(scale, 1.0) + 1e-30))
    res.add("J-minus-dxW-consistency", worst < 0.15,
            f"max relative closure residual {worst:.3e} (finite-difference "
            "gradient vs analytic)")
    norms = [W_l1_norm(n, n + g, L, chi) for g in range(1, 6)]
    spread = (max(norms) - min(norms)) / np.mean(norms)
    res.add("W-L1-uniform", spread < 0.10,
            f"||W||_1 over gaps 1..5: {['%.4f' % v for v in norms]}, "
            f"spread {spread:.2%}")
    return res


# --- Monte-Carlo battery -----------------------------------------------------

def _theta_sampler_args(seed, n, N, L, rows, n_x, chi_name):
    chi = SMOOTHERSTEP if chi_name == "smootherstep" else SMOOTHERSTEP_NARROW
    grid = TimeGrid(dt=1.0 / rows, n_neg=int(np.ceil(2.25 * rows)), n_pos=rows)
    k_max = n_x // 2 - 1
    noise = sample_white_noise(seed, grid, k_max)
    th = sample_theta(noise, n, N, L, chi, n_x, m=0)
    return th


def _z1_rho(seed, cfg):
    """Per-seed ||rho||^2 at the sample points for the quadratic field."""
    from .verify import k_smooth

    th = _theta_sampler_args(seed, cfg["n"], cfg["N"], cfg["L"], cfg["rows"],
                             cfg["n_x"], cfg["chi"])
    M = CouplingTensor.identity()
    fr = ScaleFrame(n=cfg["n"], N=cfg["N"], L=cfg["L"], m=0,
                    rows=cfg["rows"], n_x=cfg["n_x"])
    n_neg_master = int(np.ceil(2.25 * cfg["rows"]))
    vals = restrict_rows(th.values, n_neg_master, fr)
    quad = np.einsum("ibc,rxb,rxc->rxi", M.entries, vals, vals)
    z1 = quad - cfg["wick"][None, None, :]
    cap = fr.time_indicator()[:, None, None]
    sm = k_smooth(z1 * cap, fr)
    out = []
    for (t, x) in [(0.25 * fr.tau, 0.0), (0.5 * fr.tau, 0.25)]:
        r = fr.n_neg + int(round(t / fr.dt))
        c = int(round(x / fr.dx))
        out.append(np.sum(sm[r, c] ** 2))
    return np.array(out)


def _pmap(fn, seeds, cfg, jobs=1):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, seeds, [cfg] * len(seeds)))
    return [fn(s, cfg) for s in seeds]


def _theta_stats(seed, cfg):
    """Per-seed scalars: covariance products at the lags, sigma values."""
    th = _theta_sampler_args(seed, cfg["n"], cfg["N"], cfg["L"], cfg["rows"],
                             cfg["n_x"], cfg["chi"])
    frame = ScaleFrame(n=cfg["n"], N=cfg["N"], L=cfg["L"], m=0,
                       rows=cfg["rows"], n_x=cfg["n_x"])
    n_neg_master = int(np.ceil(2.25 * cfg["rows"]))
    vals = restrict_rows(th.values, n_neg_master, frame)
    n0 = frame.n_neg
    base = np.arange(n0, frame.n_rows - cfg["max_rt"])
    covs = []
    for (rt, rx) in cfg["lag_idx"]:
        prod = vals[base, :, :] * np.roll(vals[base + rt, :, :], -rx, axis=1)
        covs.append(np.mean(prod))
    chi = SMOOTHERSTEP if cfg["chi"] == "smootherstep" else SMOOTHERSTEP_NARROW
    M = CouplingTensor.identity()
    sig = [sigma_bilocal(vals, M, frame, chi, z, zp)[0, 0]
           for (z, zp) in cfg["sigma_pairs"]]
    return np.array(covs + sig)


def battery_prop_covariance(chi=SMOOTHERSTEP, L=2, n=0, gap=2, rows=128,
                            n_x=32, ensemble=1000, jobs=1,
                            rho_gaps=(2, 3, 4), rho_ensemble=250):
    """theta covariance vs quadrature, the bilocal expectation vs frak_m J,
    and stability of the smoothed second moment of the quadratic field."""
    from .kernels import J_product
    from .verify import _jackknife

    res = BatteryResult("prop-covariance", True)
    N = n + gap
    frame = ScaleFrame(n=n, N=N, L=L, m=0, rows=rows, n_x=n_x)
    dt, dx = frame.dt, frame.dx
    lag_idx = [(0, 0), (0, 8), (8, 0), (16, 4), (64, 16)]
    r0 = frame.n_neg + rows // 2
    sigma_pairs = [((r0, 4), (r0 - 4, 2)), ((r0, 8), (r0 - 16, 8)),
                   ((r0, 1), (r0 - 32, 0))]
    cfg = {"n": n, "N": N, "L": L, "rows": rows, "n_x": n_x, "chi": chi.name,
           "lag_idx": lag_idx, "max_rt": max(r for r, _ in lag_idx),
           "sigma_pairs": sigma_pairs}
    per_seed = np.array(_pmap(_theta_stats, list(range(ensemble)), cfg, jobs))
    mean, se = _jackknife(per_seed)

    # theta covariance at 5 lags: each component contributes; the estimator
    # above averaged over components inside the product mean, so rescale
    ok_all, details = True, []
    for li, (rt, rx) in enumerate(lag_idx):
        cv, _ = covariance_C(n, N, L, chi, rt * dt, rx * dx)
        ok = abs(mean[li] - cv) <= 4.0 * se[li]
        ok_all &= ok
        details.append(f"lag({rt * dt:.3f},{rx * dx:.3f}): mc={mean[li]:.5f} "
                       f"quad={cv:.5f} se={se[li]:.5f} "
                       f"[{'ok' if ok else 'FAIL'}]")
    res.add("theta-covariance-4sigma", ok_all, "; ".join(details))

    fm = contract(CouplingTensor.identity()).frak_m
    ok_all, details = True, []
    for si, (z, zp) in enumerate(sigma_pairs):
        t_lag = (z[0] - zp[0]) * dt
        x_lag = ((z[1] - zp[1]) % n_x) * dx
        target = fm[0, 0] * float(J_product(n, N, L, chi, t_lag, x_lag))
        m_v, s_v = mean[len(lag_idx) + si], se[len(lag_idx) + si]
        ok = abs(m_v - target) <= 4.0 * max(s_v, 1e-12)
        ok_all &= ok
        details.append(f"lag({t_lag:.3f},{x_lag:.3f}): mc={m_v:.4f} "
                       f"kernel={target:.4f} se={s_v:.4f} "
                       f"[{'ok' if ok else 'FAIL'}]")
    res.add("sigma-expectation-4sigma", ok_all, "; ".join(details))

    # smoothed second moment of the quadratic field, stable in the gap
    vals, ses = [], []
    c_chi, _ = m1_scalar_factor(chi)
    M = CouplingTensor.identity()
    for g in rho_gaps:
        fr = ScaleFrame(n=n, N=n + g, L=L, m=0, rows=rows, n_x=n_x)
        cfg_g = {"n": n, "N": n + g, "L": L, "rows": rows, "n_x": n_x,
                 "chi": chi.name,
                 "wick": contract(M).trace_vector * float(L) ** g * c_chi,
                 "frame_rows": fr.n_rows}
        pts = [(0.25 * fr.tau, 0.0), (0.5 * fr.tau, 0.25)]
        per = np.array(_pmap(_z1_rho, list(range(rho_ensemble)), cfg_g, jobs))
        v, s = _jackknife(per)
        vals.append(float(np.mean(v)))
        ses.append(float(np.mean(s)))
    ok = all(abs(a - b) <= 3.0 * np.hypot(sa, sb)
             for (a, sa), (b, sb) in zip(zip(vals, ses), zip(vals[1:], ses[1:])))
    res.add("rho-z1-stable-in-N", ok,
            f"gaps {list(rho_gaps)}: E||rho||^2 = "
            f"{['%.4f+-%.4f' % (v, s) for v, s in zip(vals, ses)]}")
    return res


BATTERIES = {
    "lemma-heatkernel": battery_lemma_heatkernel,
    "lemma-greg": battery_lemma_greg,
    "lemma-deco": battery_lemma_deco,
    "prop-covariance": battery_prop_covariance,
}


def run_battery(name, **kwargs):
    if name not in BATTERIES:
        raise KeyError(f"unknown battery {name!r}; have {sorted(BATTERIES)}")
    return BATTERIES[name](**kwargs)
