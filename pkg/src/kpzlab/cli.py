"""Command-line orchestrator: parses one run configuration, dispatches, and
writes CSV artifacts plus a reproducibility manifest.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification battery failure.
"""

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .batteries import run_battery
from .config import ConfigError, parse_config
from .coupling import is_totally_symmetric
from .frames import ScaleFrame
from .noise import TimeGrid, sample_white_noise
from .quadrature import QuadratureError
from .renorm import NonCauchyError, compute_constants, compute_mu_eps
from .rgflow import PicardError, default_test_fields, run_tower
from .solver import convergence_study, solve


def _fmt(x):
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(str(v) if isinstance(v, (str, int))
                             else _fmt(v) for v in row) + "\n")


def _prepare_out(out_dir):
    if out_dir is None:
        raise ConfigError("no output directory (run.out or --out)")
    if os.path.exists(out_dir) and os.listdir(out_dir):
        raise ConfigError(f"output directory {out_dir!r} exists and is not "
                          "empty; refusing to overwrite a previous run")
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def _manifest(out_dir, cfg, t0, files):
    hashes = {}
    for name in sorted(files):
        with open(os.path.join(out_dir, name), "rb") as f:
            hashes[name] = hashlib.sha256(f.read()).hexdigest()
    doc = {
        "config": cfg.raw_text,
        "command": cfg.command,
        "seed": cfg.seed,
        "outputs": hashes,
        "wall_clock_s": time.time() - t0,
        "versions": {
            "kpzlab": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def _cmd_renorm(cfg, out_dir):
    rc = compute_constants(cfg.chi, cfg.chi_id, cfg.coupling,
                           eps_sequence=cfg.eps_list)
    rows = [[cfg.chi_id] + [rc.m1[i] for i in range(3)]
            + [rc.m2[i] for i in range(3)] + [rc.m3[i] for i in range(3)]
            + [rc.quadrature_error, rc.m3_extrapolation_residual]]
    _write_csv(os.path.join(out_dir, "renorm.csv"),
               ["chi_id", "m1_1", "m1_2", "m1_3", "m2_1", "m2_2", "m2_3",
                "m3_1", "m3_2", "m3_3", "quadrature_error", "m3_residual"],
               rows)
    mu, _ = compute_mu_eps(cfg.chi, cfg.eps_list[-1] if cfg.eps_list
                           else 2.0 ** -6)
    sym = is_totally_symmetric(cfg.coupling)
    print(f"cutoff {cfg.chi_id}  totally_symmetric={sym}")
    print(f"  m1 = {rc.m1}")
    print(f"  m2 = {rc.m2}")
    print(f"  m3 = {rc.m3}  (residual {rc.m3_extrapolation_residual:.2e})")
    print(f"  mu_eps at finest eps: {mu:.6f}")
    return ["renorm.csv"], 0


def _cmd_simulate(cfg, out_dir):
    from .renorm import counterterm

    if cfg.eps is None:
        raise ConfigError("simulate needs [simulate] eps")
    rc = compute_constants(cfg.chi, cfg.chi_id, cfg.coupling, skip_m3=True)
    if cfg.counterterm_mode == "full":
        rc = compute_constants(cfg.chi, cfg.chi_id, cfg.coupling,
                               eps_sequence=cfg.eps_list)
        c = -counterterm(rc, cfg.eps)
    elif cfg.counterterm_mode == "m1-only":
        c = -rc.m1 / cfg.eps
    else:
        c = np.zeros(3)
    tr = solve(cfg.eps, cfg.T, cfg.seed, cfg.coupling, cfg.chi, cfg.chi_id,
               c, k_max=cfg.k_max, dt=cfg.dt)
    n_x = 2 * tr.k_max + 2
    rows = []
    for snap in tr.snapshots:
        f = snap.real_space(n_x)
        for j in range(n_x):
            rows.append([snap.time, j / n_x, f[0, j], f[1, j], f[2, j]])
    _write_csv(os.path.join(out_dir, "trajectory.csv"),
               ["t", "x", "u1", "u2", "u3"], rows)
    spec_path = os.path.join(out_dir, "trajectory.spec")
    with open(spec_path, "wb") as f:
        header = np.array([tr.eps, tr.seed, tr.k_max, tr.dt,
                           len(tr.snapshots)], dtype="<f8")
        f.write(header.tobytes())
        for snap in tr.snapshots:
            f.write(np.asarray([snap.time], dtype="<f8").tobytes())
            f.write(snap.modes.astype("<c16").tobytes())
    print(f"eps={cfg.eps} T={cfg.T} blowup={tr.blowup} "
          f"(t={tr.blowup_time})  snapshots={len(tr.snapshots)}")
    return ["trajectory.csv", "trajectory.spec"], 0


def _cmd_convergence(cfg, out_dir):
    if not cfg.eps_list:
        raise ConfigError("convergence needs [convergence] eps_list")
    rc = compute_constants(cfg.chi, cfg.chi_id, cfg.coupling,
                           eps_sequence=None)
    rows = []
    for mode in ("full", "m1-only", "off"):
        rep = convergence_study(cfg.eps_list, cfg.seed, cfg.coupling, cfg.chi,
                                cfg.chi_id, rc, cfg.T, counterterm_mode=mode,
                                k_max=cfg.k_max, dt=cfg.dt)
        for i, eps in enumerate(cfg.eps_list):
            mean = rep["final_means"][i]
            diff = rep["consecutive_vn_diffs"][i - 1] if i > 0 else np.nan
            rows.append([mode, eps, mean[0], mean[1], mean[2], diff,
                         int(rep["blowups"][i])])
        print(f"mode={mode}: means={rep['final_means'][:, 0]} "
              f"diffs={rep['consecutive_vn_diffs']}")
    _write_csv(os.path.join(out_dir, "convergence.csv"),
               ["mode", "eps", "mean_u1", "mean_u2", "mean_u3",
                "vn_diff_prev", "blowup"], rows)
    return ["convergence.csv"], 0


def _cmd_rgflow(cfg, out_dir):
    rc = compute_constants(cfg.chi, cfg.chi_id, cfg.coupling,
                           eps_sequence=cfg.eps_list)
    frame_N = ScaleFrame(n=cfg.N, N=cfg.N, L=cfg.L, m=cfg.m, rows=cfg.rows,
                         n_x=cfg.n_x)
    master = TimeGrid(dt=1.0 / cfg.rows,
                      n_neg=int(np.ceil(2.25 * cfg.rows)), n_pos=cfg.rows)
    noise = sample_white_noise(cfg.seed, master, cfg.n_x // 3)
    _, report = run_tower(cfg.chi, cfg.coupling, rc, noise, frame_N,
                          cfg.steps, test_fields_fn=default_test_fields,
                          tol=cfg.picard_tol, max_iter=cfg.max_iter)
    rows = [[r["n"], r["u1_norm"], r["u2_norm"], r["u3_norm"], r["r_norm"],
             r["picard_iterations"], r["picard_residual"]] for r in report]
    _write_csv(os.path.join(out_dir, "flow.csv"),
               ["n", "u1_norm", "u2_norm", "u3_norm", "r_norm",
                "picard_iterations", "picard_residual"], rows)
    for r in report:
        print(f"n={r['n']}: |u1|={r['u1_norm']:.4g} |u2|={r['u2_norm']:.4g} "
              f"|u3|={r['u3_norm']:.4g} |r|={r['r_norm']:.4g} "
              f"picard={r['picard_iterations']} res={r['picard_residual']:.2e}")
    return ["flow.csv"], 0


def _cmd_verify(cfg, out_dir):
    names = cfg.batteries or ["lemma-heatkernel", "lemma-greg", "lemma-deco",
                              "prop-covariance"]
    rows, all_ok = [], True
    for name in names:
        kwargs = {}
        if name == "prop-covariance":
            kwargs = {"ensemble": cfg.ensemble, "jobs": cfg.jobs}
        result = run_battery(name, **kwargs)
        all_ok &= result.passed
        for row in result.rows():
            rows.append([row["battery"], row["check"], row["passed"],
                         row["detail"].replace(",", ";")])
            status = "PASS" if row["passed"] else "FAIL"
            print(f"[{status}] {row['battery']}/{row['check']}")
    _write_csv(os.path.join(out_dir, "verify.csv"),
               ["battery", "check", "passed", "detail"], rows)
    return ["verify.csv"], (0 if all_ok else 3)


_COMMANDS = {
    "renorm": _cmd_renorm,
    "simulate": _cmd_simulate,
    "convergence": _cmd_convergence,
    "rg-flow": _cmd_rgflow,
    "verify": _cmd_verify,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="kpzlab",
        description="renormalization-group laboratory for the vector KPZ "
                    "equation")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    t0 = time.time()
    jobs = args.jobs or (int(os.environ["KPZLAB_JOBS"])
                         if "KPZLAB_JOBS" in os.environ else None)
    try:
        cfg = parse_config(args.config, command=args.command,
                           seed_override=args.seed, out_override=args.out,
                           jobs_override=jobs)
        out_dir = _prepare_out(cfg.out_dir or os.environ.get("KPZLAB_OUT"))
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    try:
        files, status = _COMMANDS[cfg.command](cfg, out_dir)
    except (QuadratureError, NonCauchyError, PicardError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    _manifest(out_dir, cfg, t0, files)
    return status


if __name__ == "__main__":
    sys.exit(main())
