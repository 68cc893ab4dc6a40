"""Discrete renormalization-group tower.

The effective potential at scale n is kept as tabulated perturbative orders
(quadratic, second, third in the coupling strength L^{-n/2}) plus a remainder
realized operationally: a closure that re-solves the one-step fixed point at
whatever test field it is evaluated on.  One step of the tower solves

    w'(phi) = S w(phi + Ups * (xi + w'(phi)))

by Picard iteration in the cube norm, then splits off the freshly built
perturbative orders of the coarser scale.
"""

from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTensor, contract
from .cutoffs import chi_m
from .frames import (ScaleFrame, convolve_increments_spectral,
                     convolve_time_spectral, positive_time_mask,
                     quadratic_pair, restrict_rows, scale_field,
                     truncate_modes, unscale_field)
from .noise import NoiseRealization, sample_theta
from .verify import vn_norm


class PicardError(RuntimeError):
    def __init__(self, message, residuals):
        super().__init__(message)
        self.residuals = residuals


# ---------------------------------------------------------------------------
# scaling operators

def scale_S_constant(k, L):
    """Eigenvalue of the potential-scaling operator on degree-k monomials."""
    return float(L) ** (0.5 * (3 - k))


def scale_S(evaluator, frame_coarse: ScaleFrame):
    """Wrap a scale-n evaluator into the scale-(n-1) evaluator S v.

    (S v)(phi) = L s^{-1} v(s phi): dilate the argument up to scale n, apply
    v, dilate the value back down; on compatible frames both dilations are
    index remaps with L-power prefactors.
    """
    L = frame_coarse.L

    def wrapped(phi_values):
        up, fr_n = scale_field(phi_values, frame_coarse)
        val = evaluator(up)
        down, _ = unscale_field(val, fr_n)
        return L * down

    return wrapped


# ---------------------------------------------------------------------------
# kernels in spectral form

def _y_mode_kernel(n, N, L, chi):
    def kernel(p, lags):
        w = chi_m(chi, N - n, L, lags)
        return 1j * p * np.exp(-lags * p * p) * w
    return kernel


def _upsilon_mode_kernel(L, chi):
    def kernel(p, lags):
        w = chi_m(chi, 1, L, lags)
        return 1j * p * np.exp(-lags * p * p) * w
    return kernel


def upsilon_conv_field(frame: ScaleFrame, values, chi):
    """Ups * v for a field on the frame (one-scale window kernel)."""
    return convolve_time_spectral(frame, values, _upsilon_mode_kernel(frame.L, chi))


def upsilon_conv_noise(frame: ScaleFrame, noise: NoiseRealization, chi):
    """Ups * xi at the frame scale from the master realization."""
    shift = noise.grid.n_neg - frame.n_neg
    if shift < 0:
        raise ValueError("master noise grid lacks the frame's past rows")
    inc = noise.increments[:, :, shift:]
    amp = float(frame.L) ** (0.5 * frame.n)
    return convolve_increments_spectral(
        frame, inc, amp, _upsilon_mode_kernel(frame.L, chi),
        k_max=min(noise.k_max, frame.k_cut))


def theta_on_frame(noise: NoiseRealization, frame: ScaleFrame, chi):
    """Windowed gradient field theta_n restricted to the frame rows."""
    th = sample_theta(noise, frame.n, frame.N, frame.L, chi, frame.n_x,
                      m=frame.m)
    return restrict_rows(th.values, noise.grid.n_neg, frame)


# ---------------------------------------------------------------------------
# effective potential

@dataclass
class EffectivePotential:
    """Perturbative split u1 + u2 + u3 + remainder at one scale."""

    frame: ScaleFrame
    M: CouplingTensor
    theta: np.ndarray = field(repr=False)
    chi: object = None
    wick: np.ndarray = None          # L^{N-n} m1 subtraction of the quadratic
    log_const: np.ndarray = None     # m2 log L^N + m3 subtraction of the cubic
    remainder: object = None         # closure phi -> field, or None
    picard_iterations: int = 0
    picard_residual: float = 0.0

    def __post_init__(self):
        self._mask = positive_time_mask(self.frame)
        self._lam = float(self.frame.L) ** (-0.5 * self.frame.n)
        self._ykernel = _y_mode_kernel(self.frame.n, self.frame.N,
                                       self.frame.L, self.chi)

    def y_conv(self, values):
        return convolve_time_spectral(self.frame, values, self._ykernel)

    def u1(self, phi):
        s = phi + self.theta
        quad = quadratic_pair(self.M.entries, s, s, self.frame.k_cut)
        return self._lam * (quad - self.wick) * self._mask

    def du1_zero(self, phi):
        """Frechet derivative of u1 at 0 applied to phi (pointwise linear)."""
        return 2.0 * self._lam * quadratic_pair(self.M.entries, phi,
                                                self.theta,
                                                self.frame.k_cut) * self._mask

    def u2(self, phi, u1_val=None):
        # u1 already carries one power of the coupling scale, so the single
        # explicit lambda makes u2 second order overall
        if u1_val is None:
            u1_val = self.u1(phi)
        conv = self.y_conv(u1_val)
        pair = quadratic_pair(self.M.entries, phi + self.theta, conv,
                              self.frame.k_cut)
        return 2.0 * self._lam * pair * self._mask

    def du2_zero(self, phi):
        """Derivative of u2 at 0: the explicit slot plus the bilocal part."""
        u1_0 = self.u1(np.zeros_like(phi))
        conv0 = self.y_conv(u1_0)
        term1 = quadratic_pair(self.M.entries, phi, conv0, self.frame.k_cut)
        conv1 = self.y_conv(self.du1_zero(phi))
        term2 = quadratic_pair(self.M.entries, self.theta, conv1,
                               self.frame.k_cut)
        return 2.0 * self._lam * (term1 + term2) * self._mask

    def u3(self, phi, u1_val=None, u2_val=None):
        if u1_val is None:
            u1_val = self.u1(phi)
        if u2_val is None:
            u2_val = self.u2(phi, u1_val)
        yu1 = self.y_conv(u1_val)
        yu2 = self.y_conv(u2_val)
        pair11 = quadratic_pair(self.M.entries, yu1, yu1, self.frame.k_cut)
        pair2 = quadratic_pair(self.M.entries, phi + self.theta, yu2,
                               self.frame.k_cut)
        return (self._lam * (pair11 + 2.0 * pair2)
                - self._lam ** 3 * self.log_const) * self._mask

    def perturbative(self, phi):
        u1_val = self.u1(phi)
        u2_val = self.u2(phi, u1_val)
        return u1_val + u2_val + self.u3(phi, u1_val, u2_val)

    def __call__(self, phi):
        out = self.perturbative(phi)
        if self.remainder is not None:
            out = out + self.remainder(phi)
        return out

    def parts_at_zero(self):
        z = self.frame.zero_field()
        u1_val = self.u1(z)
        u2_val = self.u2(z, u1_val)
        u3_val = self.u3(z, u1_val, u2_val)
        r_val = self.remainder(z) if self.remainder is not None else z
        return u1_val, u2_val, u3_val, r_val


def sigma_bilocal(theta, M: CouplingTensor, frame: ScaleFrame, chi,
                  z, z_prime):
    """Bilocal second-order kernel at one pair of grid points.

    sigma_{ab}(z, z') = Y(z - z') sum_{gdl} theta_g(z) M^(a)_{gd} M^(d)_{lb}
    theta_l(z'); its expectation is frak_m_{ab} J(z - z').
    """
    (r1, c1), (r2, c2) = z, z_prime
    t_lag = (r1 - r2) * frame.dt
    x_lag = ((c1 - c2) % frame.n_x) * frame.dx
    if t_lag <= 0:
        y = 0.0
    else:
        w = chi_m(chi, frame.N - frame.n, frame.L, t_lag)
        from .kernels import heat_kernel_torus_dx
        y = heat_kernel_torus_dx(frame.n, frame.L, t_lag, x_lag) * w \
            if w != 0.0 else 0.0
    mm = np.einsum("agd,dlb->aglb", M.entries, M.entries)
    return y * np.einsum("aglb,g,l->ab", mm, theta[r1, c1], theta[r2, c2])


# ---------------------------------------------------------------------------
# tower construction

def top_potential(frame_N: ScaleFrame, M: CouplingTensor, chi, rc):
    """Exact quadratic potential at the smallest scale n = N."""
    if frame_N.n != frame_N.N:
        raise ValueError("top potential lives at n = N")
    theta = frame_N.zero_field()
    logLN = frame_N.N * np.log(frame_N.L)
    return EffectivePotential(
        frame=frame_N, M=M, theta=theta, chi=chi,
        wick=np.asarray(rc.m1, float),
        log_const=np.asarray(rc.m2, float) * logLN + np.asarray(rc.m3, float),
        remainder=None)


def picard_solve(w: EffectivePotential, frame_c: ScaleFrame, phi, ups_xi,
                 chi, tol=1e-8, max_iter=50, feedback=True):
    """Solve w'(phi) = S w(phi + Ups*(xi + w'(phi))) at one test field.

    Returns (w_prime_values, iterations, residual_norm).
    """
    Sw = scale_S(w, frame_c)
    wp = frame_c.zero_field()
    residuals = []
    for it in range(1, max_iter + 1):
        shift = ups_xi + (upsilon_conv_field(frame_c, wp, chi)
                          if feedback else 0.0)
        new = Sw(phi + shift)
        delta = vn_norm(new - wp, frame_c).value
        residuals.append(delta)
        wp = new
        if delta < tol:
            return wp, it, delta
        if not feedback:
            return wp, it, 0.0
    raise PicardError(
        f"Picard iteration did not reach tol={tol} in {max_iter} steps",
        residuals)


def rg_step(w: EffectivePotential, noise: NoiseRealization, rc,
            test_fields=(), tol=1e-8, max_iter=50, feedback=True):
    """One tower step: the effective potential one scale down.

    test_fields: fields on the coarser frame used to certify convergence;
    the returned potential's remainder re-solves the fixed point on demand.
    """
    frame_c = w.frame.child()
    chi = w.chi
    ups_xi = upsilon_conv_noise(frame_c, noise, chi)
    theta_c = theta_on_frame(noise, frame_c, chi)
    logLN = frame_c.N * np.log(frame_c.L)
    wick = np.asarray(rc.m1, float) * float(frame_c.L) ** (frame_c.N - frame_c.n)
    w_next = EffectivePotential(
        frame=frame_c, M=w.M, theta=theta_c, chi=chi, wick=wick,
        log_const=np.asarray(rc.m2, float) * logLN + np.asarray(rc.m3, float),
        remainder=None)

    def remainder(phi):
        solved, _, _ = picard_solve(w, frame_c, phi, ups_xi, chi,
                                    tol=tol, max_iter=max_iter,
                                    feedback=feedback)
        return solved - w_next.perturbative(phi)

    w_next.remainder = remainder

    iters, resid = 0, 0.0
    for phi in test_fields:
        solved, it, res = picard_solve(w, frame_c, phi, ups_xi, chi,
                                       tol=tol, max_iter=max_iter,
                                       feedback=feedback)
        # defining-equation residual: plug the solution back in once more
        shift = ups_xi + (upsilon_conv_field(frame_c, solved, chi)
                          if feedback else 0.0)
        back = scale_S(w, frame_c)(phi + shift)
        res_eq = vn_norm(back - solved, frame_c).value
        iters = max(iters, it)
        resid = max(resid, res_eq)
    w_next.picard_iterations = iters
    w_next.picard_residual = resid
    return w_next


def f_step(f_evaluator, w_prev: EffectivePotential, noise: NoiseRealization,
           chi):
    """Solution-map step: f'(phi) = L^{-1} S f(phi + Ups*(w_prev(phi) + xi)).

    f_evaluator acts at the finer scale; the result acts at w_prev's scale
    and carries the time cap of that frame.
    """
    frame_c = w_prev.frame
    ups_xi = upsilon_conv_noise(frame_c, noise, chi)
    cap = frame_c.time_indicator()[:, None, None]
    Sf = scale_S(f_evaluator, frame_c)

    def f_next(phi):
        shift = ups_xi + upsilon_conv_field(frame_c, w_prev(phi), chi)
        return cap * Sf(phi + shift) / frame_c.L

    return f_next


def identity_map(phi):
    return phi


def phi_recursion(potentials, noise: NoiseRealization, chi):
    """Iterate phi_n = s(phi_{n-1} + Ups*(w_{n-1}(phi_{n-1}) + xi_{n-1})).

    potentials: dict scale -> EffectivePotential for n = m..N-1 (the solved
    tower).  Starts from phi_m = 0, returns the list [phi_m, ..., phi_N]
    (each on its own frame).
    """
    scales = sorted(potentials)
    m = scales[0]
    frame_m = potentials[m].frame
    if frame_m.n != m:
        raise ValueError("potentials must be keyed by their scale")
    phis = {m: frame_m.zero_field()}
    for n in scales:
        w_here = potentials[n]
        fr = w_here.frame
        ups_xi = upsilon_conv_noise(fr, noise, chi)
        inner = phis[n] + ups_xi + upsilon_conv_field(fr, w_here(phis[n]), chi)
        phis[n + 1], _ = scale_field(inner, fr)
    return phis


def reconstruct_gradient(phis, frame_m: ScaleFrame):
    """h_m s^{-(N-m)} phi_N: the gradient of the solution on the base window."""
    N = max(phis)
    vals = phis[N]
    fr = frame_m.at_scale(N)
    for _ in range(N - frame_m.m):
        vals, fr = unscale_field(vals, fr)
    return frame_m.time_indicator()[:, None, None] * vals


def run_tower(chi, M: CouplingTensor, rc, noise: NoiseRealization,
              frame_N: ScaleFrame, steps, test_fields_fn=None, tol=1e-8,
              max_iter=50):
    """Run `steps` tower steps down from scale N; returns (potentials, report).

    test_fields_fn(frame) supplies the certification fields per scale;
    report rows: scale, norms of the split at phi = 0, Picard data.
    """
    potentials = {frame_N.n: top_potential(frame_N, M, chi, rc)}
    report = []
    w = potentials[frame_N.n]
    for _ in range(steps):
        fields = test_fields_fn(w.frame.child()) if test_fields_fn else ()
        w = rg_step(w, noise, rc, test_fields=fields, tol=tol,
                    max_iter=max_iter)
        potentials[w.frame.n] = w
        u1_0, u2_0, u3_0, r_0 = w.parts_at_zero()
        report.append({
            "n": w.frame.n,
            "u1_norm": vn_norm(u1_0, w.frame).value,
            "u2_norm": vn_norm(u2_0, w.frame).value,
            "u3_norm": vn_norm(u3_0, w.frame).value,
            "r_norm": vn_norm(r_0, w.frame).value,
            "picard_iterations": w.picard_iterations,
            "picard_residual": w.picard_residual,
        })
    return potentials, report


def default_test_fields(frame: ScaleFrame, gamma=0.05, count=3, seed=7):
    """Smooth deterministic fields inside the amplitude ball L^{2 gamma n}."""
    radius = float(frame.L) ** (2.0 * gamma * frame.n)
    t = frame.times()[:, None, None]
    x = frame.x_points()[None, :, None]
    tau, circ = frame.tau, frame.circumference
    ramp = np.clip(t / max(tau * 0.25, 1e-9), 0.0, 1.0) ** 3
    fields = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        kx = 1 + i % 3
        phase = rng.uniform(0, 2 * np.pi, size=3)[None, None, :]
        f = np.sin(2 * np.pi * kx * x / circ + phase) \
            * np.cos(np.pi * t / (2 * tau + 1e-9)) * ramp
        amp = 0.5 * radius * (0.4 + 0.6 * rng.uniform())
        fields.append(amp * f * positive_time_mask(frame))
    return fields
