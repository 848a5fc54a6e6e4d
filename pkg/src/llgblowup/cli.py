"""Command-line entry point.

    llg-blowup verify [--seed N]
    llg-blowup moments
    llg-blowup spectrum --modes 0,1 --radii 50,100,200,400
    llg-blowup correction --history FILE [--a A --b B]
    llg-blowup reduce --T T --kappa K
    llg-blowup evolve --config FILE
    llg-blowup fit --series FILE
    llg-blowup params check FILE

Exit status: 0 when every check passes, 1 on a tolerance failure, 2 on a
usage error or a missing file.  Tables go to stdout unless --out is given;
files written by ``evolve`` land in --out, else $LLG_OUT, else the cwd.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config files

def parse_config_text(text: str) -> dict:
    """JSON object, or ``key = value`` lines ('#' comments, ``section.key`` nesting)."""
    s = text.strip()
    if s.startswith("{"):
        return json.loads(s)
    out: dict = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"line {n}: expected key=value, got {line!r}")
        key, val = (x.strip() for x in line.split("=", 1))
        node = out
        *sections, leaf = key.split(".")
        for sec in sections:
            node = node.setdefault(sec, {})
        node[leaf] = _scalar(val)
    return out


def _scalar(v: str):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    return v


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(path))
    return parse_config_text(p.read_text())


def out_dir(arg) -> Path:
    d = Path(arg) if arg else Path(os.environ.get("LLG_OUT", "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(text: str, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _floats(s: str):
    try:
        return [float(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {s!r}") from None


# --------------------------------------------------------------------------
# subcommands

def cmd_moments(args) -> int:
    from .reduced import moment_table
    rows = [(name, val, exact, abs(val - exact)) for name, val, exact in moment_table()]
    _emit(_csv(rows, ["name", "computed", "expected", "abs_err"]), args.out)
    return EXIT_OK if all(r[3] <= 1e-8 for r in rows) else EXIT_FAIL


def cmd_spectrum(args) -> int:
    from .spectral import SpectralProblem, principal_eigenvalue
    modes = [int(k) for k in _floats(args.modes)]
    radii = _floats(args.radii)
    rows, ok, lines = [], True, []
    for k in modes:
        lams = []
        for R in radii:
            est = principal_eigenvalue(SpectralProblem(k, R, args.n))
            rows.append((k, R, est.lambda_min, est.residual))
            lams.append(est.lambda_min)
            ok &= est.lambda_min >= -1e-10
        if len(radii) >= 2:
            lr, ll = np.log(radii), np.log(np.maximum(lams, 1e-300))
            slope = float(np.polyfit(lr, ll, 1)[0])
            # slope of lambda ln R, which removes the logarithmic factor of mode 0
            slope_ln = float(np.polyfit(lr, ll + np.log(np.log(radii)), 1)[0])
            lines.append(f"# mode {k}: slope {slope:.4f}, ln-corrected slope {slope_ln:.4f}")
    text = _csv(rows, ["k", "R", "lambda", "residual"]) + "".join(s + "\n" for s in lines)
    _emit(text, args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_correction(args) -> int:
    from .correction import ParamHistory, phi0_eval
    from .geometry import PhysParams
    if not Path(args.history).is_file():
        raise FileNotFoundError(args.history)
    try:
        hist = ParamHistory.from_csv(args.history)
    except (KeyError, ValueError) as e:
        raise UsageError(f"bad history file: {e}") from None
    pp = PhysParams(args.a, args.b)
    times = hist.t[1:-1] if args.times is None else np.array(_floats(args.times))
    if len(times) > args.max_times:
        times = times[np.linspace(0, len(times) - 1, args.max_times).astype(int)]
    rows = []
    ok = True
    for t in times:
        lam = abs(complex(hist.p_at(t)))
        z = np.geomspace(lam, args.z_max, args.nz)
        cs = phi0_eval(z, float(t), hist, pp)
        for zi, v, d1, d2 in zip(z, cs.Phi0, cs.dz, cs.dzz):
            rows.append((float(t), float(zi), v.real, v.imag, d1.real, d1.imag, d2.real, d2.imag))
            ok &= bool(np.isfinite([v, d1, d2]).all())
    _emit(_csv(rows, ["t", "z", "re_phi0", "im_phi0", "re_dz", "im_dz", "re_dzz", "im_dzz"]),
          args.out)
    return EXIT_OK if ok else EXIT_FAIL


def cmd_reduce(args) -> int:
    from .reduced import b0_relative_error, p0_profile
    prof = p0_profile(args.T, args.kappa, args.n)
    rows = list(zip(prof.t.tolist(), prof.p.tolist(), prof.pdot.tolist()))
    text = _csv(rows, ["t", "p0", "p0_dot"])
    ok = True
    for frac in (0.5, 0.9, 0.99):
        err, tol, _ = b0_relative_error(args.T, frac, args.kappa)
        ok &= err <= tol
        text += f"# B0 check at t = {frac} T: rel_err {err:.3e} tol {tol:.3e} {'PASS' if err <= tol else 'FAIL'}\n"
    _emit(text, args.out)
    return EXIT_OK if ok else EXIT_FAIL


_INIT_KEYS = {"lam0", "twist", "gamma", "azimuth", "shoot"}


def _sim_from_config(cfg: dict):
    """Build (SimConfig, initial state, shooting history) from a config dict.

    ``init.shoot = "lo,hi"`` tunes ``azimuth`` by ``shoot_phase`` on that
    bracket before the run; the history is None otherwise.
    """
    from .evolve import Mesh, SimConfig, initial_state, shoot_phase
    sim = dict(cfg.get("sim", {}))
    init = dict(cfg.get("init", {}))
    for k, v in cfg.items():
        if not isinstance(v, dict):
            (init if k in _INIT_KEYS else sim)[k] = v
    sc = SimConfig.from_dict(sim)
    mesh = Mesh.sinh(sc.r_outer, sc.n_nodes, sc.grading)
    unknown = set(init) - _INIT_KEYS
    if unknown:
        raise KeyError(f"unknown init keys: {sorted(unknown)}")
    lam0 = float(init.get("lam0", 0.1))
    twist = float(init.get("twist", 1.0))
    gamma = float(init.get("gamma", 0.0))

    def make(az):
        return initial_state(mesh, lam0, twist, gamma, az)

    az, hist = float(init.get("azimuth", 0.0)), None
    if "shoot" in init:
        sh = init["shoot"]
        lo, hi = _floats(sh) if isinstance(sh, str) else map(float, sh)
        az, hist = shoot_phase(sc, make, lo, hi)
    return sc, make(az), hist


def cmd_evolve(args) -> int:
    from .evolve import run_and_fit
    cfg = load_config(args.config)
    try:
        sc, st, shots = _sim_from_config(cfg)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(f"bad config: {e}") from None
    diag = run_and_fit(sc, st)
    d = out_dir(args.out)
    stem = args.name or Path(args.config).stem
    diag.to_csv(d / f"{stem}_series.csv")
    summary = {"reason": diag.reason, "wall_s": round(diag.wall, 3), "fit": diag.fit,
               "lambda_final": float(diag.lam[-1]), "t_final": float(diag.t[-1])}
    if shots is not None:
        summary["shooting"] = [{"azimuth": float(x), "winding": float(w), "reason": r} for x, w, r in shots]
    (d / f"{stem}_fit.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_fit(args) -> int:
    from .evolve import fit_rate
    if not Path(args.series).is_file():
        raise FileNotFoundError(args.series)
    arr = np.genfromtxt(args.series, delimiter=",", names=True)
    if "t" not in arr.dtype.names or "lambda_est" not in arr.dtype.names:
        raise UsageError("series needs columns t and lambda_est")
    fit = fit_rate(np.asarray(arr["t"]), np.asarray(arr["lambda_est"]))
    _emit(json.dumps(fit, indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK if fit is not None else EXIT_FAIL


def cmd_params(args) -> int:
    from .reduced import GluingParams, constraints, param_feasible
    if args.action != "check":
        raise UsageError("usage: params check FILE")
    cfg = load_config(args.file)
    try:
        g = GluingParams.from_dict(cfg)
    except (KeyError, TypeError, ValueError) as e:
        raise UsageError(str(e)) from None
    ok, bad = param_feasible(g)
    for label, slack in constraints(g):
        print(f"{'ok  ' if slack > 0 else 'FAIL'} {slack:+.6e}  {label}")
    print("feasible" if ok else f"infeasible: {len(bad)} violated")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_verify(args) -> int:
    from .verify import run_suite
    lines, ok = run_suite(args.seed)
    _emit("".join(s + "\n" for s in lines), args.out)
    return EXIT_OK if ok else EXIT_FAIL


# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="llg-blowup", description="LLG blow-up toolkit")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("verify", help="run the invariant suites")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("moments", help="orthogonality moment table (CSV)")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_moments)

    s = sub.add_parser("spectrum", help="principal eigenvalues of Q_{R,k}")
    s.add_argument("--modes", required=True)
    s.add_argument("--radii", required=True)
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_spectrum)

    s = sub.add_parser("correction", help="evaluate Phi0 along a parameter history")
    s.add_argument("--history", required=True)
    s.add_argument("--a", type=float, default=1.0)
    s.add_argument("--b", type=float, default=0.0)
    s.add_argument("--times")
    s.add_argument("--max-times", type=int, default=20)
    s.add_argument("--nz", type=int, default=20)
    s.add_argument("--z-max", type=float, default=1.0)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_correction)

    s = sub.add_parser("reduce", help="leading rate profile p0 and the B0 check")
    s.add_argument("--T", type=float, required=True)
    s.add_argument("--kappa", type=float, default=1.0)
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_reduce)

    s = sub.add_parser("evolve", help="equivariant blow-up run from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--name")
    s.set_defaults(fn=cmd_evolve)

    s = sub.add_parser("fit", help="fit lambda ~ (T - t)^alpha to a time series")
    s.add_argument("--series", required=True)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_fit)

    s = sub.add_parser("params", help="gluing-parameter feasibility")
    s.add_argument("action")
    s.add_argument("file")
    s.set_defaults(fn=cmd_params)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        sys.stderr.write(str(e).rstrip() + "\n")
        return EXIT_USAGE
    except FileNotFoundError as e:
        sys.stderr.write(f"file not found: {e}\n")
        return EXIT_USAGE
    except json.JSONDecodeError as e:
        sys.stderr.write(f"bad JSON: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
