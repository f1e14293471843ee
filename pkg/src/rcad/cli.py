"""Command-line front end.

Subcommands: ``predict``, ``mc``, ``landscape``, ``optimize``, ``sweep`` and
``reproduce {table1,fig2,fig3,fig5}``.  Human-readable output uses 6
significant digits; ``--format json`` prints full precision.  With
``--out DIR`` every result file is written as ``<command>-<run id>.<ext>``
next to ``<command>-<run id>.manifest.json``; the run id is a hash of the
resolved configuration, so identical flags give identical file names.

Exit codes: 0 success, 2 validation error, 3 failed reproduction tolerance.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from . import __version__
from .analytics import SchemeParams, conditional_rates, secret_key_ratio
from .channel import (derived_variances, devetak_winter, distance_to_transmission,
                      operating_point, plob_cv)
from .montecarlo import TrialConfig, run_batch
from .optimizer import (CSV_COLUMNS, SWEEP_COLUMNS, SearchSpace, distance_sweep, landscape,
                        optimize, rows_to_csv)
from .reconciliation import threshold
from .reproduce import RECIPES

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_REPRODUCTION = 3
# below this probability of a positive threshold the run is flagged as all-reject
_REJECT_WARN = 1e-6
DEFAULT_DISTANCES = (45.0, 136.0, 273.0, 364.0)


class ValidationError(ValueError):
    pass


@dataclass
class RunManifest:
    """Provenance record written next to every output file."""

    command: str
    parameters: dict
    seed: int | None
    version: str
    outputs: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def run_id(self) -> str:
        doc = json.dumps({"command": self.command, "parameters": self.parameters,
                          "seed": self.seed, "version": self.version},
                         sort_keys=True, default=_json_default)
        return hashlib.sha256(doc.encode()).hexdigest()[:12]


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _human(pairs) -> str:
    width = max(len(k) for k, _ in pairs)
    return "\n".join(f"{k:<{width}}  {_fmt(v)}" for k, v in pairs)


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _distances(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad distance list {text!r}") from None


def _m_value(text):
    return text if text == "n" else float(text)


def _common(p):
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker threads (default: all cores); results do not depend on it")
    p.add_argument("--out", type=Path, default=None, help="directory for result files")
    p.add_argument("--format", choices=("csv", "json"), default=None,
                   help="machine-readable stdout instead of the human summary")


def _link(p, q_default=1024):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--T", type=float, default=None, help="channel transmission")
    g.add_argument("--distance-km", type=float, default=None,
                   help="fibre length; converted at 0.22 dB/km")
    p.add_argument("--q", type=int, default=q_default, help="codebook size")
    p.add_argument("--xi", type=float, default=None,
                   help="excess noise (default 0.01 sigma_X^2)")


def _scheme(p):
    p.add_argument("--alpha", type=float, required=True, help="threshold offset")
    p.add_argument("--gamma", type=float, required=True, help="rate ratio")
    p.add_argument("--sigma-x2", type=float, required=True, help="modulation variance")
    p.add_argument("--n", type=int, default=None, help="pin the blocklength")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcad", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="analytic rates at one operating point")
    _link(p)
    _scheme(p)
    _common(p)

    p = sub.add_parser("mc", help="Monte Carlo protocol trials against the analytic rates")
    _link(p)
    _scheme(p)
    _common(p)
    p.add_argument("--trials", type=_positive_int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--m", type=_m_value, default=None,
                   help="fix the block energy m (a number, or 'n' for m = n)")

    p = sub.add_parser("landscape", help="key rate over the (alpha, gamma) grid")
    _link(p)
    _common(p)
    p.add_argument("--sigma-x2", type=float, required=True)

    p = sub.add_parser("optimize", help="maximize the key rate at fixed (T, q)")
    _link(p)
    _common(p)

    p = sub.add_parser("sweep", help="optimized key rate against distance")
    p.add_argument("--q", type=int, default=1024)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--distances", type=_distances, default=DEFAULT_DISTANCES,
                   help="comma-separated distances in km")
    _common(p)

    p = sub.add_parser("reproduce", help="run a reference recipe and report pass/fail")
    p.add_argument("target", choices=sorted(RECIPES))
    p.add_argument("--q", type=int, default=1024, help="codebook size for fig2/fig3")
    p.add_argument("--distances", type=_distances, default=DEFAULT_DISTANCES)
    _common(p)
    return ap


# ---------------------------------------------------------------------------
# resolution helpers


def _transmission(args) -> tuple[float, float | None]:
    if args.T is not None:
        return args.T, None
    if args.distance_km is not None:
        return distance_to_transmission(args.distance_km), args.distance_km
    raise ValidationError("T: one of --T or --distance-km is required")


def _point(args):
    T, d = _transmission(args)
    ch, mod = operating_point(T, args.sigma_x2, args.xi)
    params = SchemeParams(args.q, args.gamma, args.alpha, n=args.n)
    n = params.resolve_n(ch, mod)
    cfg = {"T": T, "distance_km": d, "q": args.q, "alpha": args.alpha, "gamma": args.gamma,
           "sigma_x2": args.sigma_x2, "xi": ch.excess_noise, "n": n, "n_pinned": args.n is not None,
           "threshold_rule": params.threshold_rule, "rounding": params.rounding}
    return params.with_n(n), ch, mod, cfg


def threshold_positive_probability(n: int, alpha: float, ch, mod, rule: str = "mean") -> float:
    """P(theta(m) > 0) for m ~ chi-square(n); theta is increasing in m."""
    v = derived_variances(ch, mod)
    s2, snr = v.sigma_y_given_x2, ch.transmission * mod.sigma_x2
    base = s2 * n + n * alpha if rule == "mean" else n * alpha
    if base > 0:
        return 1.0
    return float(chi2.sf(-base * snr / s2 ** 2, n))


def _warn_rejects(params, ch, mod, m=None):
    if m is not None:
        if threshold(m, params.n, params.alpha, ch, mod, params.threshold_rule) <= 0:
            print(f"warning: alpha={params.alpha:g} gives a non-positive threshold at m={m:g}; "
                  "every block will be rejected", file=sys.stderr)
        return
    p = threshold_positive_probability(params.n, params.alpha, ch, mod, params.threshold_rule)
    if p < _REJECT_WARN:
        print(f"warning: alpha={params.alpha:g} leaves a positive threshold with probability "
              f"{p:.3g}; essentially every block will be rejected", file=sys.stderr)


class Output:
    """Collects result documents and tables, then prints and writes them."""

    def __init__(self, args, command, parameters, seed=None):
        self.args = args
        self.manifest = RunManifest(command, parameters, seed, __version__)
        self.doc = {"command": command, "config": parameters, "version": __version__}
        if seed is not None:
            self.doc["seed"] = seed
        self.tables = {}
        self.human = []
        self._t0 = getattr(args, "_started", time.perf_counter())

    def table(self, name, columns, rows):
        self.tables[name] = (tuple(columns), list(rows))

    def emit(self):
        fmt = self.args.format
        if fmt == "json":
            print(dumps(self.doc))
        elif fmt == "csv":
            if self.tables:
                for i, (cols, rows) in enumerate(self.tables.values()):
                    print(("\n" if i else "") + rows_to_csv(rows, cols), end="")
            else:
                flat = _flatten(self.doc)
                print(rows_to_csv([flat], list(flat)), end="")
        else:
            print("\n\n".join(self.human))
        if self.args.out is not None:
            self._write(Path(self.args.out))

    def _write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{self.manifest.command}-{self.manifest.run_id}"
        manifest_name = f"{stem}.manifest.json"
        files = {f"{stem}.json": dumps({**self.doc, "manifest": manifest_name}) + "\n"}
        for name, (cols, rows) in self.tables.items():
            suffix = "" if name == self.manifest.command else f"-{name}"
            files[f"{stem}{suffix}.csv"] = rows_to_csv(rows, cols)
        for name, text in files.items():
            (out / name).write_text(text)
        self.manifest.outputs = sorted(files)
        self.manifest.wall_clock_s = time.perf_counter() - self._t0
        doc = asdict(self.manifest)
        doc["run_id"] = self.manifest.run_id
        (out / manifest_name).write_text(dumps(doc) + "\n")


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif not isinstance(v, (list, tuple)):
            out[key] = v
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_predict(args) -> int:
    params, ch, mod, cfg = _point(args)
    _warn_rejects(params, ch, mod)
    rate = secret_key_ratio(params, ch, mod)
    dw, plob = devetak_winter(ch, mod), plob_cv(ch.transmission)
    out = Output(args, "predict", cfg)
    out.doc["rate"] = rate.as_dict()
    out.doc["devetak_winter"], out.doc["plob_cv"] = dw, plob
    out.human.append(_human([("n", rate.n), ("P_TA", rate.p_ta_av), ("P_FA", rate.p_fa_av),
                             ("SER", rate.ser_av), ("SKR", rate.skr), ("I_XY", rate.i_xy),
                             ("I_EY", rate.i_ey), ("DW", dw), ("PLOB", plob)]))
    out.emit()
    return EXIT_OK


def _z(emp, ana, total):
    if total == 0:
        return None
    if ana <= 0.0 or ana >= 1.0:
        return 0.0 if emp == ana else math.copysign(math.inf, emp - ana)
    return (emp - ana) / math.sqrt(ana * (1.0 - ana) / total)


def cmd_mc(args) -> int:
    params, ch, mod, cfg = _point(args)
    m = None
    if args.m is not None:
        m = float(params.n) if args.m == "n" else float(args.m)
        if m < 0:
            raise ValidationError("m: must be nonnegative")
    cfg = {**cfg, "trials": args.trials, "mode": "free" if m is None else "fixed-m", "m": m}
    _warn_rejects(params, ch, mod, m)
    config = TrialConfig(args.trials, args.seed, params, ch, mod,
                         mode="free" if m is None else "fixed-m", m_value=m)
    tally = run_batch(config, workers=args.threads)
    if m is None:
        r = secret_key_ratio(params, ch, mod)
        ana = {"p_ta": r.p_ta_av, "p_fa": r.p_fa_av, "ser": r.ser_ratio}
    else:
        r = conditional_rates(m, params, ch, mod)
        ana = {"p_ta": r.p_ta, "p_fa": r.p_fa, "ser": r.ser}
    emp = tally.summary()
    z = {"p_ta": _z(tally.p_ta, ana["p_ta"], tally.trials),
         "p_fa": _z(tally.p_fa, ana["p_fa"], tally.trials),
         "ser": _z(tally.ser, ana["ser"], tally.accepts)}
    out = Output(args, "mc", cfg, seed=args.seed)
    out.doc.update({"tally": emp, "analytic": ana, "z": z})
    rows = [("trials", tally.trials), ("accepts", tally.accepts)]
    for k in ("p_ta", "p_fa", "ser"):
        zk = z[k]
        rows.append((k.upper(), f"{_fmt(emp[k])}  analytic {_fmt(ana[k])}  "
                                f"z {'n/a' if zk is None else _fmt(zk)}"))
    out.human.append(_human(rows))
    out.emit()
    return EXIT_OK


def _space(args) -> SearchSpace:
    return SearchSpace(xi=args.xi)


def cmd_landscape(args) -> int:
    T, d = _transmission(args)
    space = _space(args)
    land = landscape(T, args.q, args.sigma_x2, space=space, workers=args.threads)
    a, g, best = land.argmax()
    cfg = {"T": T, "distance_km": d, "q": args.q, "sigma_x2": args.sigma_x2, "xi": land.xi,
           "alpha_range": space.alpha_range, "gamma_range": space.gamma_range}
    out = Output(args, "landscape", cfg)
    out.table("landscape", CSV_COLUMNS, land.rows())
    out.doc["argmax"] = {"alpha": a, "gamma": g, "skr": best}
    out.doc["cells"] = int(land.skr.size)
    out.human.append(_human([("cells", land.skr.size), ("best alpha", a), ("best gamma", g),
                             ("best SKR", best)]))
    out.emit()
    return EXIT_OK


def cmd_optimize(args) -> int:
    T, d = _transmission(args)
    space = _space(args)
    opt = optimize(T, args.q, space, workers=args.threads)
    cfg = {"T": T, "distance_km": d, "q": args.q, "xi": args.xi, "space": asdict(space)}
    out = Output(args, "optimize", cfg)
    out.doc["optimum"] = opt.summary()
    out.doc["plob_cv"] = plob_cv(T)
    if opt.all_negative:
        print("warning: every evaluated point has a negative key rate", file=sys.stderr)
    out.human.append(_human([("SKR*", opt.skr), ("alpha", opt.alpha), ("gamma", opt.gamma),
                             ("sigma_x2", opt.sigma_x2), ("xi", opt.xi), ("n", opt.n),
                             ("P_TA", opt.rate.p_ta_av), ("P_FA", opt.rate.p_fa_av),
                             ("SER", opt.rate.ser_av), ("PLOB", plob_cv(T))]))
    out.emit()
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.distances:
        raise ValidationError("distances: at least one distance is required")
    space = SearchSpace(xi=args.xi)
    rows = [asdict(r) for r in distance_sweep(args.distances, args.q, space, args.threads)]
    out = Output(args, "sweep", {"q": args.q, "xi": args.xi, "distances_km": list(args.distances)})
    out.table("sweep", SWEEP_COLUMNS, rows)
    out.doc["rows"] = rows
    out.human.append("\n".join(
        f"d={_fmt(r['distance_km'])} km  T={_fmt(r['T'])}  SKR*={_fmt(r['skr_opt'])}  "
        f"plob={_fmt(r['plob_cv'])}  max_dw={_fmt(r['max_dw'])}" for r in rows))
    out.emit()
    return EXIT_OK


def cmd_reproduce(args) -> int:
    kw = {}
    if args.target == "fig2":
        kw = {"q": args.q, "distances": args.distances, "workers": args.threads}
    elif args.target == "fig3":
        kw = {"q": args.q, "workers": args.threads}
    bundle = RECIPES[args.target](**kw)
    cfg = {"target": args.target, **{k: v for k, v in kw.items() if k != "workers"}}
    out = Output(args, f"reproduce-{args.target}", cfg)
    for name, (cols, rows) in bundle.tables.items():
        out.table(name, cols, rows)
    out.doc["report"] = bundle.summary()
    out.human.append("\n".join(
        f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {_fmt(c.value)} "
        f"(target {_fmt(c.target)}, {c.tolerance})" for c in bundle.checks))
    out.emit()
    return EXIT_OK if bundle.passed else EXIT_REPRODUCTION


COMMANDS = {"predict": cmd_predict, "mc": cmd_mc, "landscape": cmd_landscape,
            "optimize": cmd_optimize, "sweep": cmd_sweep, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    args._started = time.perf_counter()
    try:
        return COMMANDS[args.command](args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
