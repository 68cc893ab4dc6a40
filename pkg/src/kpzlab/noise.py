"""Random inputs: white noise in spectral form, the stationary initial
condition, and the windowed gradient fields driving the RG tower.

All sampling runs through counter-based Philox streams keyed by
(seed, mode, component, time-direction), so enlarging the mode range or the
time horizon never perturbs increments that were already drawn.  Negative
mode increments are the conjugates of positive ones (real fields); the zero
mode is absent (noise with vanishing spatial average).
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .cutoffs import chi_m

_MAGIC = b"KPZN0001"


def _philox(seed, mode, component, backward=False):
    key = np.array([np.uint64(seed),
                    np.uint64((int(backward) << 48) | (component << 40) | mode)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_complex(seed, mode, component, n, dt, backward=False):
    """n complex increments with E|db|^2 = dt (dt/2 per real part)."""
    g = _philox(seed, mode, component, backward)
    z = g.standard_normal(2 * n)
    return np.sqrt(dt / 2.0) * (z[0::2] + 1j * z[1::2])


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_j = j * dt for j in [-n_neg, n_pos]."""

    dt: float
    n_neg: int
    n_pos: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_pos < 1 or self.n_neg < 0:
            raise ValueError("invalid time grid")

    @property
    def n_steps(self):
        return self.n_neg + self.n_pos

    @property
    def t_min(self):
        return -self.n_neg * self.dt

    @property
    def t_max(self):
        return self.n_pos * self.dt

    def times(self):
        return (np.arange(-self.n_neg, self.n_pos + 1)) * self.dt

    def compatible(self, other):
        return (abs(self.dt - other.dt) < 1e-15 * self.dt
                and self.n_neg == other.n_neg and self.n_pos == other.n_pos)


@dataclass(frozen=True)
class NoiseRealization:
    """Spectral white-noise increments on a master time grid.

    increments[c, k-1, j] is the mode-k (k = 1..k_max) increment of component
    c over [t_j, t_j + dt]; mode -k is the conjugate; E|db|^2 = dt.
    """

    seed: int
    k_max: int
    grid: TimeGrid
    increments: np.ndarray = field(repr=False)

    @property
    def dt(self):
        return self.grid.dt

    def mode(self, k, component):
        """Increment series for signed mode k != 0."""
        if k == 0:
            raise ValueError("the zero mode is absent by construction")
        ser = self.increments[component, abs(k) - 1]
        return ser if k > 0 else np.conj(ser)

    def field_increments(self, n_x):
        """Real-space noise increments on n_x grid points (times dx missing:
        this is the spectral sum  sum_k e^{2 pi i k x} db_k, per time row)."""
        n_t = self.grid.n_steps
        spec = np.zeros((3, n_t, n_x), dtype=complex)
        for c in range(3):
            spec[c, :, 1:self.k_max + 1] = self.increments[c].T
            spec[c, :, n_x - self.k_max:] = np.conj(self.increments[c].T[:, ::-1])
        return np.fft.ifft(spec, axis=2).real * n_x

    def save(self, path):
        with open(path, "wb") as f:
            f.write(_MAGIC)
            f.write(struct.pack("<QqqdQ", self.seed, self.grid.n_neg,
                                self.grid.n_pos, self.grid.dt, self.k_max))
            data = np.ascontiguousarray(
                np.stack([self.increments.real, self.increments.imag]))
            f.write(data.astype("<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            if f.read(8) != _MAGIC:
                raise ValueError("not a noise record")
            seed, n_neg, n_pos, dt, k_max = struct.unpack("<QqqdQ", f.read(40))
            grid = TimeGrid(dt=dt, n_neg=n_neg, n_pos=n_pos)
            raw = np.frombuffer(f.read(), dtype="<f8")
        raw = raw.reshape(2, 3, k_max, grid.n_steps)
        return cls(seed=seed, k_max=k_max, grid=grid,
                   increments=raw[0] + 1j * raw[1])


def sample_white_noise(seed, grid: TimeGrid, k_max) -> NoiseRealization:
    """Independent complex Gaussian increments per (component, mode, step)."""
    if k_max < 1:
        raise ValueError("k_max >= 1 required")
    inc = np.empty((3, k_max, grid.n_steps), dtype=complex)
    for c in range(3):
        for k in range(1, k_max + 1):
            fwd = _draw_complex(seed, k, c, grid.n_pos, grid.dt)
            if grid.n_neg:
                bwd = _draw_complex(seed, k, c, grid.n_neg, grid.dt,
                                    backward=True)
                inc[c, k - 1] = np.concatenate([bwd[::-1], fwd])
            else:
                inc[c, k - 1] = fwd
    return NoiseRealization(seed=seed, k_max=k_max, grid=grid, increments=inc)


def coupled_noise_family(seed, eps_list, grid: TimeGrid, k_max):
    """One realization per eps sharing the identical Brownian increments."""
    if len(set(float(e) for e in eps_list)) != len(list(eps_list)):
        raise ValueError("eps values must be distinct")
    base = sample_white_noise(seed, grid, k_max)
    return [base] * len(list(eps_list))


def sample_initial_condition(seed, k_max, n_x=None):
    """Stationary linear-equation field: mode-k variance 1/(2 (2 pi k)^2).

    Returns (modes, field): modes[c, k-1] for k = 1..k_max and, when n_x is
    given, the real field on n_x uniform points.
    """
    if k_max < 1:
        raise ValueError("k_max >= 1 required")
    modes = np.empty((3, k_max), dtype=complex)
    for c in range(3):
        for k in range(1, k_max + 1):
            g = _philox(seed, k, c + 8)       # separate stream family from noise
            z = g.standard_normal(2)
            p = 2.0 * np.pi * k
            sd = np.sqrt(1.0 / (2.0 * p * p) / 2.0)
            modes[c, k - 1] = sd * (z[0] + 1j * z[1])
    if n_x is None:
        return modes, None
    spec = np.zeros((3, n_x), dtype=complex)
    spec[:, 1:k_max + 1] = modes
    spec[:, n_x - k_max:] = np.conj(modes[:, ::-1])
    return modes, np.fft.ifft(spec, axis=1).real * n_x


def initial_condition_variance(k_max):
    """Closed-form per-component variance sum_{0<|k|<=K} 1/(2 (2 pi k)^2)."""
    k = np.arange(1, k_max + 1)
    return float(np.sum(1.0 / (2.0 * (2.0 * np.pi * k) ** 2)) * 2.0)


@dataclass(frozen=True)
class ThetaField:
    """Scale-n windowed gradient field sampled from a noise realization."""

    n: int
    N: int
    L: int
    frame_scale: int          # base scale m of the master grid
    grid: TimeGrid
    n_x: int
    values: np.ndarray = field(repr=False)   # (n_t+1, n_x, 3)
    seed: int = 0

    @property
    def circumference(self):
        return float(self.L) ** self.n


def theta_mode_kernel(n, N, L, chi, p, lags):
    """Convolution weights (i p) e^{-tau p^2} chi_{N-n}(tau) at the given lags."""
    w = np.where(lags > 0, chi_m(chi, N - n, L, np.maximum(lags, 1e-300)), 0.0)
    return 1j * p * np.exp(-np.clip(lags, 0.0, None) * p * p) * w


def sample_theta(noise: NoiseRealization, n, N, L, chi, n_x, m=0) -> ThetaField:
    """theta_n = Y * xi_n by left-point spectral convolution.

    The master realization lives at base scale m: scale-n increments are
    L^{n/2} times the master rows read on the scale-n clock.  The noise grid
    must resolve the window lower end L^{-2(N-n)} by at least 8 steps and
    reach 2 (plus one step) into negative times.
    """
    if N < n:
        raise ValueError("need N >= n")
    Lf = float(L)
    dt_n = noise.grid.dt * Lf ** (2 * (n - m))
    sup_lo = Lf ** (-2 * (N - n))
    if N > n and dt_n > sup_lo / 8.0:
        raise ValueError(
            f"grid too coarse: dt={dt_n:g} exceeds {sup_lo / 8.0:g} "
            "(window under-resolved)")
    if noise.grid.n_neg * dt_n < 2.0:
        raise ValueError("noise grid must reach 2 time units into the past")
    if noise.k_max > n_x // 2:
        raise ValueError("n_x too small for the noise mode range")
    circ = Lf ** n
    n_rows = noise.grid.n_steps + 1
    amp = Lf ** (0.5 * n)
    window = int(np.ceil(2.0 / dt_n)) + 1
    lags = np.arange(1, window + 1) * dt_n      # left-point: lag from row start
    spec = np.zeros((3, n_rows, n_x), dtype=complex)
    for k in range(1, noise.k_max + 1):
        p = 2.0 * np.pi * k / circ
        ker = theta_mode_kernel(n, N, L, chi, p, lags)
        if not np.any(ker):
            continue
        for c in range(3):
            inc = amp * noise.increments[c, k - 1]
            conv = np.convolve(inc, ker)[:noise.grid.n_steps]
            spec[c, 1:, k] = conv
            spec[c, 1:, n_x - k] = np.conj(conv)
    out = np.fft.ifft(spec, axis=2).real * n_x
    # rows before t = 0 miss part of the kernel history; the tower never
    # reads them, so they are zeroed rather than left partially summed
    out[:, :noise.grid.n_neg, :] = 0.0
    return ThetaField(n=n, N=N, L=L, frame_scale=m, grid=noise.grid, n_x=n_x,
                      values=np.moveaxis(out, 0, 2), seed=noise.seed)
