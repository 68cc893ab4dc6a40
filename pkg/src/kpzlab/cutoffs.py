"""Smooth time cutoffs.

A cutoff is a C^1 bump chi with chi = 1 on [0, 1], chi = 0 on [2, inf),
0 <= chi <= 1.  Two built-ins share the quintic smootherstep transition
(exactly integrable moments, vanishing first and second derivatives at the
transition endpoints); an external sampled table is also accepted.
"""

from dataclasses import dataclass, field

import numpy as np


def _smootherstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (6.0 * u - 15.0))


def _smootherstep_d(u):
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    v = np.where(inside, 30.0 * u * u * (u - 1.0) * (u - 1.0), 0.0)
    return v


@dataclass(frozen=True)
class CutoffFunction:
    """Evaluator pair (chi, chi') with the transition interval recorded.

    transition: (lo, hi) with 1 <= lo < hi <= 2; chi == 1 on [0, lo],
    chi == 0 on [hi, inf).
    """

    name: str
    transition: tuple = (1.0, 2.0)
    c1_bound: float = field(default=0.0)

    def __post_init__(self):
        lo, hi = self.transition
        if not (1.0 <= lo < hi <= 2.0):
            raise ValueError(f"transition {self.transition} must sit inside [1, 2]")
        if self.c1_bound == 0.0:
            object.__setattr__(self, "c1_bound", 1.0 + 1.875 / (hi - lo))

    def __call__(self, s):
        lo, hi = self.transition
        s = np.asarray(s, dtype=float)
        u = (s - lo) / (hi - lo)
        out = 1.0 - _smootherstep(u)
        return out if out.ndim else float(out)

    def derivative(self, s):
        lo, hi = self.transition
        s = np.asarray(s, dtype=float)
        u = (s - lo) / (hi - lo)
        out = -_smootherstep_d(u) / (hi - lo)
        return out if out.ndim else float(out)

    @property
    def support_end(self):
        return self.transition[1]


class TabulatedCutoff(CutoffFunction):
    """Cutoff built from (s, chi(s)) samples via monotone C^1 interpolation."""

    def __new__(cls, *args, **kwargs):
        return object.__new__(cls)

    def __init__(self, s, values, name="external"):
        from scipy.interpolate import PchipInterpolator

        s = np.asarray(s, dtype=float)
        values = np.asarray(values, dtype=float)
        order = np.argsort(s)
        s, values = s[order], values[order]
        if s[0] > 1.0 or s[-1] < 2.0:
            raise ValueError("sample table must cover [1, 2]")
        if np.any(values < -1e-12) or np.any(values > 1 + 1e-12):
            raise ValueError("cutoff samples must lie in [0, 1]")
        lo_ok = values[s <= 1.0 + 1e-12]
        if lo_ok.size == 0 or np.any(np.abs(lo_ok - 1.0) > 1e-12):
            raise ValueError("cutoff must equal 1 on [0, 1]")
        hi_ok = values[s >= 2.0 - 1e-12]
        if hi_ok.size == 0 or np.any(np.abs(hi_ok) > 1e-12):
            raise ValueError("cutoff must vanish at s >= 2")
        self._interp = PchipInterpolator(s, values, extrapolate=False)
        self._deriv = self._interp.derivative()
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "transition", (1.0, 2.0))
        grid = np.linspace(1.0, 2.0, 2001)
        object.__setattr__(self, "c1_bound",
                           1.0 + float(np.max(np.abs(self._deriv(grid)))))

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.where(s <= 1.0, 1.0,
                       np.where(s >= 2.0, 0.0,
                                np.nan_to_num(self._interp(np.clip(s, 1.0, 2.0)))))
        return out if out.ndim else float(out)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        inside = (s > 1.0) & (s < 2.0)
        out = np.where(inside,
                       np.nan_to_num(self._deriv(np.clip(s, 1.0, 2.0))), 0.0)
        return out if out.ndim else float(out)


SMOOTHERSTEP = CutoffFunction("smootherstep", transition=(1.0, 2.0))
SMOOTHERSTEP_NARROW = CutoffFunction("smootherstep-narrow", transition=(1.0, 1.5))

_BUILTINS = {
    "smootherstep": SMOOTHERSTEP,
    "smootherstep-narrow": SMOOTHERSTEP_NARROW,
}


def get_cutoff(name):
    """Look up a built-in cutoff or load an external sample table by path."""
    if name in _BUILTINS:
        return _BUILTINS[name]
    try:
        data = np.loadtxt(name, delimiter=",")
    except OSError as exc:
        raise KeyError(f"unknown cutoff {name!r} (not built-in, not a file)") from exc
    return TabulatedCutoff(data[:, 0], data[:, 1], name=name)


def chi_m(chi, m, L, s):
    """Scale-window indicator chi(s) - chi(L^{2m} s); support [L^{-2m}, 2]."""
    if m < 0:
        raise ValueError("m must be >= 0")
    if L < 2:
        raise ValueError("L must be >= 2")
    s = np.asarray(s, dtype=float)
    out = chi(s) - chi((float(L) ** (2 * m)) * s)
    return out if np.ndim(out) else float(out)


def chi_m_mixed(chi, chi_lower, m, L, s):
    """chi(s) - chi_lower(L^{2m} s): the lower cutoff replaced by another bump."""
    if m < 0:
        raise ValueError("m must be >= 0")
    s = np.asarray(s, dtype=float)
    out = chi(s) - chi_lower((float(L) ** (2 * m)) * s)
    return out if np.ndim(out) else float(out)
