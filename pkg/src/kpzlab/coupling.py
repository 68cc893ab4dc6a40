"""Coupling tensor of the vector KPZ nonlinearity and its index contractions.

The nonlinearity is V_i(u) = (d_x u, M^(i) d_x u) with three symmetric 3x3
matrices M^(1..3).  All renormalization constants reduce to a handful of
explicit contractions of M computed here by plain index summation.
"""

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class CouplingTensor:
    """Dense tensor M[a, b, c] = M^(a)_{bc}, symmetric in (b, c)."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=float)
        if m.shape != (3, 3, 3):
            raise ValueError(f"coupling tensor must be 3x3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("coupling tensor entries must be finite")
        asym = np.max(np.abs(m - np.swapaxes(m, 1, 2)))
        if asym > SYMMETRY_TOL:
            raise ValueError(
                f"matrices M^(a) must be symmetric; max asymmetry {asym:.3e}")
        object.__setattr__(self, "entries", m.copy())
        self.entries.setflags(write=False)

    @classmethod
    def from_matrices(cls, m1, m2, m3):
        return cls(np.stack([np.asarray(m1, float), np.asarray(m2, float),
                             np.asarray(m3, float)]))

    @classmethod
    def identity(cls):
        return cls(np.stack([np.eye(3)] * 3))

    @classmethod
    def ones(cls):
        return cls(np.ones((3, 3, 3)))

    @classmethod
    def zero(cls):
        return cls(np.zeros((3, 3, 3)))

    def scaled(self, lam):
        return CouplingTensor(lam * self.entries)


@dataclass(frozen=True)
class ContractionSet:
    """The four contractions feeding m1, m2 and the bilocal kernel."""

    frak_m: np.ndarray      # m_{ab} = sum_{g,d} M^(a)_{gd} M^(d)_{gb}
    calM1: np.ndarray       # third-order chain contraction
    calM2: np.ndarray       # third-order pair contraction
    trace_vector: np.ndarray  # tr M^(a)


def contract(M: CouplingTensor) -> ContractionSet:
    """All contractions by explicit index summation (einsum over 3^k tuples)."""
    m = M.entries
    frak_m = np.einsum("agd,dgb->ab", m, m)
    calM1 = np.einsum("aij,jkl,lik->a", m, m, m)
    calM2 = np.einsum("aij,jkl,ikl->a", m, m, m)
    trace_vector = np.einsum("abb->a", m)
    return ContractionSet(frak_m=frak_m, calM1=calM1, calM2=calM2,
                          trace_vector=trace_vector)


def is_totally_symmetric(M: CouplingTensor, tol: float = SYMMETRY_TOL) -> bool:
    """True iff entries are invariant under all six permutations of (a, b, c)."""
    m = M.entries
    for perm in [(0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]:
        if np.max(np.abs(m - np.transpose(m, perm))) > tol:
            return False
    return True


def apply_nonlinearity(M: CouplingTensor, phi):
    """Pointwise (phi, M^(i) phi) for a field of 3-vectors.

    phi: array with the component axis last (shape (..., 3)); returns the same
    leading shape with components i = (phi, M^(i) phi).
    """
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != 3:
        raise ValueError("component axis of size 3 expected last")
    return np.einsum("ibc,...b,...c->...i", M.entries, phi, phi)
