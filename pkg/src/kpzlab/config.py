"""Run configuration: plain-text sections of key-value pairs, one file per run.

Every numeric field is validated against the preconditions of the operations
it will reach before any computation starts.
"""

import configparser
from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTensor
from .cutoffs import get_cutoff


class ConfigError(ValueError):
    pass


_PRESETS = {
    "identity": CouplingTensor.identity,
    "ones": CouplingTensor.ones,
    "zero": CouplingTensor.zero,
}


@dataclass
class RunConfig:
    command: str
    seed: int
    coupling: CouplingTensor
    chi_id: str
    chi: object
    L: int = 2
    N: int = 3
    m: int = 0
    eps: float = None
    eps_list: list = None
    T: float = 0.25
    k_max: int = None
    dt: float = None
    rows: int = 512
    n_x: int = 64
    steps: int = 3
    counterterm_mode: str = "full"
    batteries: list = field(default_factory=list)
    ensemble: int = 1000
    picard_tol: float = 1e-8
    max_iter: int = 50
    jobs: int = 1
    out_dir: str = None
    raw_text: str = ""


def _floats(s):
    return [float(v) for v in s.replace(",", " ").split()]


def _parse_matrix(s):
    rows = [r for r in s.split(";") if r.strip()]
    if len(rows) != 3:
        raise ConfigError(f"matrix needs 3 rows, got {len(rows)}")
    mat = [_floats(r) for r in rows]
    if any(len(r) != 3 for r in mat):
        raise ConfigError("matrix rows must have 3 entries")
    return np.array(mat)


def parse_config(path, command=None, seed_override=None, out_override=None,
                 jobs_override=None):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        raw = f.read()
    cp.read_string(raw)

    def get(section, key, fallback=None):
        return cp.get(section, key, fallback=fallback) if cp.has_section(
            section) else fallback

    cmd = command or get("run", "command")
    if cmd not in {"renorm", "simulate", "convergence", "rg-flow", "verify"}:
        raise ConfigError(f"unknown or missing command {cmd!r}")

    seed = seed_override if seed_override is not None else int(
        get("run", "seed", "0"))
    if not (0 <= seed < 2 ** 64):
        raise ConfigError("seed must fit in 64 bits")

    preset = get("coupling", "preset")
    if preset:
        if preset not in _PRESETS:
            raise ConfigError(f"unknown coupling preset {preset!r}")
        M = _PRESETS[preset]()
    else:
        mats = [get("coupling", f"m{i}") for i in (1, 2, 3)]
        if any(m is None for m in mats):
            raise ConfigError("coupling needs preset or m1, m2, m3 matrices")
        try:
            M = CouplingTensor.from_matrices(*[_parse_matrix(m) for m in mats])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    scale = get("coupling", "scale")
    if scale:
        M = M.scaled(float(scale))

    chi_id = get("cutoff", "name", "smootherstep")
    try:
        chi = get_cutoff(chi_id)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    L = int(get("scales", "L", "2"))
    N = int(get("scales", "N", "3"))
    m = int(get("scales", "m", "0"))
    if L < 2:
        raise ConfigError("L must be >= 2")
    if not (m <= N):
        raise ConfigError("need m <= N")

    cfg = RunConfig(
        command=cmd, seed=seed, coupling=M, chi_id=chi_id, chi=chi,
        L=L, N=N, m=m, raw_text=raw,
        out_dir=out_override or get("run", "out"),
        jobs=jobs_override or int(get("run", "jobs", "1")),
    )

    eps = get("simulate", "eps")
    cfg.eps = float(eps) if eps else None
    if cfg.eps is not None and not (0 < cfg.eps < 1):
        raise ConfigError("eps must lie in (0, 1)")
    lst = get("convergence", "eps_list") or get("renorm", "eps_sequence")
    if lst:
        cfg.eps_list = _floats(lst)
        if any(b >= a for a, b in zip(cfg.eps_list, cfg.eps_list[1:])):
            raise ConfigError("eps list must be strictly decreasing")
        if any(not (0 < e < 1) for e in cfg.eps_list):
            raise ConfigError("eps values must lie in (0, 1)")
    cfg.T = float(get("simulate", "T", get("convergence", "T", "0.25")))
    if cfg.T <= 0:
        raise ConfigError("T must be positive")
    k_max = get("simulate", "k_max") or get("convergence", "k_max")
    cfg.k_max = int(k_max) if k_max else None
    dt = get("simulate", "dt") or get("convergence", "dt")
    cfg.dt = float(dt) if dt else None
    if cfg.dt is not None and cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    cfg.counterterm_mode = get("simulate", "counterterm",
                               get("convergence", "counterterm", "full"))
    if cfg.counterterm_mode not in {"full", "m1-only", "off"}:
        raise ConfigError(f"bad counterterm mode {cfg.counterterm_mode!r}")

    cfg.rows = int(get("rgflow", "rows", "512"))
    cfg.n_x = int(get("rgflow", "n_x", "64"))
    cfg.steps = int(get("rgflow", "steps", str(N - m)))
    if cfg.steps > N - m:
        raise ConfigError("steps cannot exceed N - m")
    if cfg.rows < 8 * L ** (2 * (N - m)):
        raise ConfigError(
            f"rows={cfg.rows} under-resolves the tower; need >= "
            f"{8 * L ** (2 * (N - m))}")
    cfg.picard_tol = float(get("tolerances", "picard_tol", "1e-8"))
    cfg.max_iter = int(get("tolerances", "max_iter", "50"))

    bats = get("verify", "battery", "")
    cfg.batteries = bats.split() if bats else []
    cfg.ensemble = int(get("verify", "ensemble", "1000"))
    if cfg.ensemble < 100:
        raise ConfigError("ensemble must be >= 100")
    return cfg
