"""Pseudospectral mild-solution integrator for the regularized equation.

The solution is advanced through the Duhamel sum u(t) = sum_s g(t - s, p)
[V^(u(s)) dt + dXi(s)] with the cut heat multiplier g(tau, p) = e^{-tau p^2}
(1 - chi(tau / eps^2)).  The exponential part of the sum is carried
recursively; only the cutoff window (lags below 2 eps^2) is re-summed, so a
step costs O(window * modes).
"""

from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTensor, apply_nonlinearity
from .noise import _draw_complex, sample_initial_condition

BLOWUP_THRESHOLD = 1e6


class ResolutionError(ValueError):
    pass


@dataclass
class SpectralField:
    """Three-component real field stored as one-sided spectral coefficients.

    modes[c, k] for k = 0..k_max; mode -k is the conjugate.  The zero mode is
    present (solutions develop a spatial mean); noise never populates it.
    """

    k_max: int
    time: float
    modes: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.modes.shape != (3, self.k_max + 1):
            raise ValueError("modes must have shape (3, k_max + 1)")
        if np.max(np.abs(self.modes[:, 0].imag)) > 1e-12 * max(
                1.0, np.max(np.abs(self.modes))):
            raise ValueError("zero mode must be real (Hermitian symmetry)")

    def real_space(self, n_x):
        spec = np.zeros((3, n_x), dtype=complex)
        spec[:, :self.k_max + 1] = self.modes
        spec[:, n_x - self.k_max:] = np.conj(self.modes[:, 1:][:, ::-1])
        return np.fft.ifft(spec, axis=1).real * n_x

    def spatial_mean(self):
        return self.modes[:, 0].real.copy()


@dataclass
class Trajectory:
    eps: float
    seed: int
    chi_id: str
    counterterm: np.ndarray
    k_max: int
    dt: float
    snapshots: list
    blowup: bool = False
    blowup_time: float = None

    def __post_init__(self):
        times = [s.time for s in self.snapshots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("snapshot times must be strictly increasing")

    def times(self):
        return np.array([s.time for s in self.snapshots])

    def field_table(self, n_x):
        """(n_snapshots, n_x, 3) real-space table."""
        return np.stack([np.moveaxis(s.real_space(n_x), 0, 1)
                         for s in self.snapshots])


def required_resolution(eps):
    """(k_max, dt) bounds: grid spacing <= eps/4, step <= eps^2/8."""
    return int(np.ceil(2.0 / eps)), eps * eps / 8.0


def _check_resolution(eps, k_max, dt):
    k_need, dt_need = required_resolution(eps)
    if k_max < k_need:
        raise ResolutionError(
            f"k_max={k_max} resolves only dx={1.0 / (2 * k_max):g} > eps/4; "
            f"need k_max >= {k_need}")
    if dt > dt_need * (1 + 1e-12):
        raise ResolutionError(f"dt={dt:g} exceeds eps^2/8 = {dt_need:g}")


def _fft_size(k_max):
    n = 1
    while n < 3 * k_max + 2:
        n *= 2
    return n


class DuhamelStepper:
    """Carries the recursive Duhamel state between steps."""

    def __init__(self, eps, chi, M: CouplingTensor, c_eps, k_max, dt):
        _check_resolution(eps, k_max, dt)
        self.eps = float(eps)
        self.chi = chi
        self.M = M
        self.c_eps = np.asarray(c_eps, dtype=float)
        self.k_max = k_max
        self.dt = float(dt)
        self.n_fft = _fft_size(k_max)
        self.k_cut = (2 * k_max) // 3
        k = np.arange(k_max + 1)
        self.p = 2.0 * np.pi * k
        self.p2 = self.p ** 2
        self.decay = np.exp(-self.dt * self.p2)
        # window: lags where the multiplier differs from the pure exponential
        self.window = int(np.ceil(2.0 * eps ** 2 / dt)) + 1
        lags = np.arange(1, self.window + 1) * dt
        self.g_window = (np.exp(-np.outer(lags, self.p2))
                         * (1.0 - chi(lags / eps ** 2))[:, None])
        self.tail_decay = np.exp(-(self.window + 1) * dt * self.p2)
        self.tail = np.zeros((3, k_max + 1), dtype=complex)
        self.ring = [np.zeros((3, k_max + 1), dtype=complex)
                     for _ in range(self.window)]
        self.step_index = 0

    def nonlinearity_hat(self, u_hat):
        """Spectral nonlinearity with the additive constant, mode-truncated."""
        du = (1j * self.p)[None, :] * u_hat
        spec = np.zeros((3, self.n_fft), dtype=complex)
        spec[:, :self.k_max + 1] = du
        spec[:, self.n_fft - self.k_max:] = np.conj(du[:, 1:][:, ::-1])
        grad = np.fft.ifft(spec, axis=1).real * self.n_fft
        v_phys = apply_nonlinearity(self.M, np.moveaxis(grad, 0, 1))
        v_phys = v_phys + self.c_eps[None, :]
        v_hat_full = np.fft.fft(np.moveaxis(v_phys, 0, 1), axis=1) / self.n_fft
        v_hat = v_hat_full[:, :self.k_max + 1].copy()
        v_hat[:, self.k_cut + 1:] = 0.0
        return v_hat

    def push(self, forcing_hat):
        """Append one source increment F = V^ dt + dXi and roll the state."""
        oldest = self.ring[self.step_index % self.window]
        self.tail = self.decay * self.tail + self.tail_decay * oldest
        self.ring[self.step_index % self.window] = forcing_hat
        self.step_index += 1

    def current(self):
        """Duhamel sum at the current time (after the last push)."""
        out = self.tail.copy()
        for j in range(1, min(self.step_index, self.window) + 1):
            src = self.ring[(self.step_index - j) % self.window]
            out = out + self.g_window[j - 1][None, :] * src
        return out


def duhamel_step(stepper: DuhamelStepper, u_hat, noise_hat):
    """One mild step: push V^(u) dt + dXi, return the new Duhamel sum.

    The heat evolution of any explicit initial condition is handled by the
    caller (it is not part of the forced sum).
    """
    v_hat = stepper.nonlinearity_hat(u_hat)
    stepper.push(v_hat * stepper.dt + noise_hat)
    return stepper.current()


class NoiseStream:
    """Chunked access to the keyed mode increments of the master noise."""

    def __init__(self, seed, k_max, dt, n_steps, n_neg=0):
        self.seed = seed
        self.k_max = k_max
        self.dt = dt
        inc = np.zeros((3, k_max + 1, n_neg + n_steps), dtype=complex)
        for c in range(3):
            for k in range(1, k_max + 1):
                fwd = _draw_complex(seed, k, c, n_steps, dt)
                if n_neg:
                    bwd = _draw_complex(seed, k, c, n_neg, dt, backward=True)
                    inc[c, k] = np.concatenate([bwd[::-1], fwd])
                else:
                    inc[c, k] = fwd
        self.increments = inc
        self.n_neg = n_neg

    def at(self, step):
        """Increment over [t_step, t_step + dt]; step counted from -n_neg."""
        return self.increments[:, :, step + self.n_neg]


def solve(eps, T, seed, M: CouplingTensor, chi, chi_id, c_eps, k_max=None,
          dt=None, out_every=None, init="sampled", t_neg=0.5,
          noise=None) -> Trajectory:
    """Integrate the regularized equation on [0, T].

    init: "sampled" starts from the stationary initial condition evolved by
    the exact heat flow; "stationary-noise" drives the noise from -t_neg with
    the nonlinearity off for t < 0, which couples the initial condition to
    the same noise path (used for matched-noise comparisons); "zero" starts
    from rest.
    """
    if k_max is None or dt is None:
        k_need, dt_need = required_resolution(eps)
        k_max = k_max or k_need
        dt = dt or dt_need
    stepper = DuhamelStepper(eps, chi, M, c_eps, k_max, dt)
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ValueError("T must be a multiple of dt")
    out_every = out_every or max(1, n_steps // 32)
    n_neg = int(round(t_neg / dt)) if init == "stationary-noise" else 0
    if noise is None:
        noise = NoiseStream(seed, k_max, dt, n_steps, n_neg=n_neg)
    heat_ic = np.zeros((3, k_max + 1), dtype=complex)
    if init == "sampled":
        modes, _ = sample_initial_condition(seed, k_max)
        heat_ic[:, 1:] = modes
    u_hat = heat_ic.copy()
    snapshots = [SpectralField(k_max=k_max, time=0.0, modes=u_hat.copy())]
    blowup, blowup_time = False, None
    full_heat = np.exp(-dt * stepper.p2)

    # burn-in: noise-only steps establish the pre-t=0 stochastic convolution
    for step in range(-n_neg, 0):
        stepper.push(noise.at(step))
    if init == "stationary-noise":
        u_hat = stepper.current()
        snapshots = [SpectralField(k_max=k_max, time=0.0, modes=u_hat.copy())]

    heat_power = heat_ic.copy()
    for step in range(n_steps):
        new = duhamel_step(stepper, u_hat, noise.at(step))
        heat_power = heat_power * full_heat[None, :]
        u_hat = new + heat_power
        t_now = (step + 1) * dt
        amp = np.max(np.abs(u_hat))
        if not np.isfinite(amp) or amp > BLOWUP_THRESHOLD:
            blowup, blowup_time = True, t_now
            break
        if (step + 1) % out_every == 0:
            snapshots.append(SpectralField(k_max=k_max, time=t_now,
                                           modes=u_hat.copy()))
    return Trajectory(eps=eps, seed=seed, chi_id=chi_id,
                      counterterm=np.asarray(c_eps, float), k_max=k_max,
                      dt=dt, snapshots=snapshots, blowup=blowup,
                      blowup_time=blowup_time)


def linear_mode_variance(eps, chi, p, rtol=1e-10):
    """Stationary variance of one stochastic-convolution mode:
    int_0^inf e^{-2 s p^2} (1 - chi(s / eps^2))^2 ds."""
    from .quadrature import adaptive_quad
    e2 = eps * eps
    upper = max(40.0 / (2 * p * p), 3 * e2) if p > 0 else np.inf
    if not np.isfinite(upper):
        raise ValueError("zero mode has no stationary variance")
    val, _ = adaptive_quad(
        lambda s: np.exp(-2 * s * p * p) * (1.0 - chi(s / e2)) ** 2,
        e2, upper, rtol=rtol)
    return val


def convergence_study(eps_list, seed, M: CouplingTensor, chi, chi_id, rc,
                      T, counterterm_mode="full", k_max=None, dt=None,
                      out_every=None):
    """Solve along a decreasing eps list with one shared noise path.

    counterterm_mode: "full" | "m1-only" | "off".  Returns a report with the
    trajectories, spatial means at T, and consecutive difference norms in the
    cube norm on the common snapshot grid.
    """
    from .frames import BoxGrid
    from .renorm import counterterm
    from .verify import vn_norm

    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    eps_min = eps_list[-1]
    k_need, dt_need = required_resolution(eps_min)
    k_max = k_max or k_need
    dt = dt or dt_need
    n_steps = int(round(T / dt))
    out_every = out_every or max(1, n_steps // 16)
    noise = NoiseStream(seed, k_max, dt, n_steps,
                        n_neg=int(round(0.5 / dt)))
    trajs = []
    for eps in eps_list:
        if counterterm_mode == "full":
            c = -counterterm(rc, eps)
        elif counterterm_mode == "m1-only":
            c = -rc.m1 / eps
        elif counterterm_mode == "off":
            c = np.zeros(3)
        else:
            raise ValueError(f"unknown counterterm mode {counterterm_mode!r}")
        trajs.append(solve(eps, T, seed, M, chi, chi_id, c, k_max=k_max,
                           dt=dt, out_every=out_every,
                           init="stationary-noise", noise=noise))
    n_x = _fft_size(k_max)
    diffs, means = [], []
    grid = None
    for tr in trajs:
        means.append(tr.snapshots[-1].spatial_mean() if not tr.blowup
                     else np.full(3, np.nan))
    for a, b in zip(trajs[:-1], trajs[1:]):
        if a.blowup or b.blowup:
            diffs.append(np.nan)
            continue
        rows = min(len(a.snapshots), len(b.snapshots)) - 1
        grid = BoxGrid(dt=dt * out_every, rows=rows, n_x=n_x)
        table = (b.field_table(n_x)[:rows + 1] - a.field_table(n_x)[:rows + 1])
        diffs.append(vn_norm(table, grid).value)
    return {
        "eps_list": eps_list,
        "mode": counterterm_mode,
        "trajectories": trajs,
        "final_means": np.array(means),
        "consecutive_vn_diffs": np.array(diffs),
        "blowups": [tr.blowup for tr in trajs],
    }
