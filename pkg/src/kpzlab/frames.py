"""Scale frames and discrete fields of the RG tower.

A frame at scale n covers [0, tau_n] x T_n, tau_n = L^{2(n-m)}, torus
circumference L^n, with a fixed number of time rows per window and a fixed
number of spatial points.  Keeping those counts constant across scales makes
the space-time dilation an exact index remap: row j at scale n and row j at
scale n-1 refer to the same master time L^{-2n} t, so scaling a field is a
slice and a prefactor, never an interpolation.

Rows extend 2 + margin time units into the past (kernel memory); fields
produced by the tower vanish on negative rows.
"""

from dataclasses import dataclass

import numpy as np

from .cutoffs import CutoffFunction

NEG_MARGIN = 2.25


@dataclass(frozen=True)
class ScaleFrame:
    """Grid bookkeeping for scale n inside a tower (m <= n <= N)."""

    n: int
    N: int
    L: int
    m: int
    rows: int        # time steps covering [0, tau_n]
    n_x: int

    def __post_init__(self):
        if not (self.m <= self.n <= self.N):
            raise ValueError("need m <= n <= N")
        if self.L < 2:
            raise ValueError("need L >= 2")

    @property
    def tau(self):
        return float(self.L) ** (2 * (self.n - self.m))

    @property
    def dt(self):
        return self.tau / self.rows

    @property
    def n_neg(self):
        return int(np.ceil(NEG_MARGIN / self.dt))

    @property
    def n_rows(self):
        return self.n_neg + self.rows + 1

    @property
    def circumference(self):
        return float(self.L) ** self.n

    @property
    def dx(self):
        return self.circumference / self.n_x

    @property
    def k_cut(self):
        return self.n_x // 3

    def times(self):
        return (np.arange(self.n_rows) - self.n_neg) * self.dt

    def x_points(self):
        return np.arange(self.n_x) * self.dx

    def wavenumbers(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.n_x, d=1.0 / self.n_x) \
            / self.circumference

    def child(self):
        """Frame one scale down (n - 1); same row/point counts."""
        return ScaleFrame(n=self.n - 1, N=self.N, L=self.L, m=self.m,
                          rows=self.rows, n_x=self.n_x)

    def at_scale(self, n):
        return ScaleFrame(n=n, N=self.N, L=self.L, m=self.m,
                          rows=self.rows, n_x=self.n_x)

    def zero_field(self):
        return np.zeros((self.n_rows, self.n_x, 3))

    def time_indicator(self, profile=None):
        """Smooth cap h_n: 1 up to tau - 1/L^2, 0 beyond tau - 1/(2 L^2)."""
        lo = self.tau - self.L ** -2.0
        hi = self.tau - 0.5 * self.L ** -2.0
        t = self.times()
        u = np.clip((t - lo) / (hi - lo), 0.0, 1.0)
        ramp = 1.0 - u * u * u * (10.0 + u * (6.0 * u - 15.0))
        return ramp


@dataclass(frozen=True)
class BoxGrid:
    """Minimal space-time grid (solver output box): same interface surface
    as ScaleFrame where norms are concerned."""

    dt: float
    rows: int
    n_x: int
    circumference: float = 1.0
    n_neg: int = 0

    @property
    def tau(self):
        return self.rows * self.dt

    @property
    def dx(self):
        return self.circumference / self.n_x

    @property
    def n_rows(self):
        return self.n_neg + self.rows + 1

    def times(self):
        return (np.arange(self.n_rows) - self.n_neg) * self.dt

    def time_indicator(self):
        return np.ones(self.n_rows)


def scale_field(values, frame_from: ScaleFrame, L=None):
    """Dilation to the next frame up: (s phi)(t, x) = L^{-1/2} phi(t/L^2, x/L).

    Exact index remap on compatible frames.  Returns (values', frame')
    with frame' at scale n + 1.
    """
    fr_to = frame_from.at_scale(frame_from.n + 1)
    if L is not None and L != frame_from.L:
        raise ValueError("incompatible grids: frame built for a different L")
    out = fr_to.zero_field()
    # target row j (time index j - n_neg') reads source row with the same
    # time index; the source has at least as many negative rows
    shift = frame_from.n_neg - fr_to.n_neg
    out[:, :, :] = values[shift:shift + fr_to.n_rows] * frame_from.L ** -0.5
    return out, fr_to


def unscale_field(values, frame_from: ScaleFrame):
    """Inverse dilation, one frame down; deep-past rows (absent at the finer
    scale) are zero-filled — tower fields vanish there."""
    fr_to = frame_from.at_scale(frame_from.n - 1)
    out = fr_to.zero_field()
    shift = fr_to.n_neg - frame_from.n_neg
    out[shift:shift + frame_from.n_rows] = values * frame_from.L ** 0.5
    return out, fr_to


def restrict_rows(values, n_neg_from, frame_to: ScaleFrame):
    """Slice a row-aligned array with n_neg_from negative rows onto a frame."""
    shift = n_neg_from - frame_to.n_neg
    if shift < 0:
        raise ValueError("source has fewer negative rows than the frame needs")
    return values[shift:shift + frame_to.n_rows]


def truncate_modes(values, k_cut):
    """Zero all spatial modes with |k| > k_cut (applied after products)."""
    n_x = values.shape[1]
    spec = np.fft.fft(values, axis=1)
    k = np.abs(np.fft.fftfreq(n_x, d=1.0 / n_x))
    spec[:, k > k_cut, :] = 0.0
    return np.fft.ifft(spec, axis=1).real


def quadratic_pair(M_entries, a, b, k_cut=None):
    """(a, M^(i) b) pointwise, optionally mode-truncated."""
    out = np.einsum("ibc,...b,...c->...i", M_entries, a, b)
    if k_cut is not None:
        out = truncate_modes(out, k_cut)
    return out


def convolve_time_spectral(frame: ScaleFrame, values, mode_kernel,
                           k_max=None):
    """Causal convolution int ds ker(t - s) v(s) ds, spectral in space.

    mode_kernel(p, lags) returns complex weights at positive lags
    (left-point rule: lag_j = j dt, j = 1..window).  values: (rows, n_x, 3).
    """
    n_x = frame.n_x
    if k_max is None:
        k_max = frame.k_cut
    dt = frame.dt
    window = int(np.ceil(2.0 / dt)) + 1
    lags = np.arange(1, window + 1) * dt
    spec = np.fft.fft(values, axis=1)
    out = np.zeros_like(spec)
    p_all = frame.wavenumbers()
    for k in range(1, k_max + 1):
        ker = mode_kernel(p_all[k], lags) * dt
        if not np.any(ker):
            continue
        for c in range(3):
            conv = np.convolve(spec[:, k, c], ker)[:frame.n_rows - 1]
            out[1:, k, c] = conv
            out[1:, n_x - k, c] = np.conj(conv)
    return np.fft.ifft(out, axis=1).real


def convolve_increments_spectral(frame: ScaleFrame, increments, amp,
                                 mode_kernel, k_max):
    """Convolution of a kernel against noise increments (Ito left point).

    increments[c, k-1, i] are master-grid rows aligned with frame rows
    (increment i spans [t_i, t_i + dt] with t_i = (i - n_neg) dt); amp scales
    them to the frame's scale.  Output rows: field at all frame times.
    """
    n_x = frame.n_x
    dt = frame.dt
    n_inc = increments.shape[2]
    window = int(np.ceil(2.0 / dt)) + 1
    lags = np.arange(1, window + 1) * dt
    spec = np.zeros((frame.n_rows, n_x, 3), dtype=complex)
    p_all = frame.wavenumbers()
    for k in range(1, min(k_max, n_x // 2) + 1):
        ker = mode_kernel(p_all[k], lags)
        if not np.any(ker):
            continue
        for c in range(3):
            conv = np.convolve(amp * increments[c, k - 1], ker)[:n_inc]
            spec[1:, k, c] = conv[:frame.n_rows - 1]
            spec[1:, n_x - k, c] = np.conj(conv[:frame.n_rows - 1])
    # spec holds bare mode amplitudes: sum_k A_k e^{ipx} = n_x * ifft
    return np.fft.ifft(spec, axis=1).real * n_x


def positive_time_mask(frame: ScaleFrame):
    mask = np.zeros((frame.n_rows, 1, 1))
    mask[frame.n_neg:] = 1.0
    return mask
