"""Command-line entry point: ``nlskam {validate, kam run, measure, synthesize, report}``.

Configuration files are YAML mappings; the accepted keys are documented in
the README and checked by :class:`RunConfig`.  Every CSV written here ends
with a ``# sha256=<hex>`` comment over the preceding bytes.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O error.
``NLSKAM_OUT`` overrides the output directory of any command.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import hamops
from .hamops import ActionVector, f_radius_norm
from .homological import FrequencyVector, HomologicalError
from .kamflow import KamAbort, Schedules, effective_V, nls_problem, run_kam
from .sites import SiteSchedule, gen_sites, validate_admissible
from .smalldiv import DiophParams, check_diophantine, enumerate_A, measure_complement_mc, sample_frequencies
from .spaces import jjap

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
OUT_ENV = "NLSKAM_OUT"


class ConfigError(ValueError):
    """Invalid or unparsable configuration."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Validated run configuration (see the README for the file layout)."""

    J: int = 4
    D: int = 3
    nz_max: Optional[int] = 4
    schedule: Dict = field(default_factory=lambda: {"kind": "power2"})
    fcoeffs: Dict[int, float] = field(default_factory=dict)
    R: float = 1.0
    gamma: float = 0.1
    tau: float = 1.5
    r0: float = 1.5
    p0: float = 2.0
    rho: float = 0.25
    delta: float = 0.1
    actions: Dict = field(default_factory=lambda: {"rule": "power", "a": 0.5})
    frequencies: Dict = field(default_factory=lambda: {"seed": 0, "samples": 500, "lmax": 6})
    tol: float = 1e-12
    max_steps: int = 6
    output: str = "out"

    def __post_init__(self):
        self.validate()

    # -- checks
    def validate(self):
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name}: {msg}")

        need(isinstance(self.J, int) and self.J >= 1, "J", "must be a positive integer")
        need(isinstance(self.D, int) and self.D >= 1, "D", "must be a positive integer")
        need(self.nz_max is None or (isinstance(self.nz_max, int) and self.nz_max >= 2), "nz_max", "must be >= 2")
        need(self.gamma > 0, "gamma", "must be positive")
        need(self.tau > 0, "tau", "must be positive")
        need(self.r0 > 0, "r0", "must be positive")
        need(0 < self.rho < self.r0, "rho", "must lie in (0, r0)")
        need(0 < self.delta < 1, "delta", "must lie in (0, 1)")
        need(self.p0 >= 0, "p0", "must be non-negative")
        need(self.R > 0, "R", "must be positive")
        need(self.tol > 0, "tol", "must be positive")
        need(isinstance(self.max_steps, int) and self.max_steps >= 0, "max_steps", "must be a non-negative integer")
        for d in self.fcoeffs:
            need(int(d) >= 1, "fcoeffs", f"degree {d} must be >= 1")
        need(math.isfinite(f_radius_norm(self.fcoeff_list, self.R)), "fcoeffs", "|f|_R must be finite")
        try:
            self.site_schedule
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"schedule: {exc}") from None
        rule = self.actions.get("rule", "power")
        need(rule in ("power", "values"), "actions.rule", "must be 'power' or 'values'")
        try:
            I = self.action_vector
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"actions: {exc}") from None
        sites = self.sites
        need(set(I.values) <= set(sites), "actions", f"support must lie in the sites {sites}")
        need(I.radius(self.p0) <= self.r0 - self.rho, "actions",
             f"radius {I.radius(self.p0):.4g} exceeds r0 - rho = {self.r0 - self.rho:.4g}")
        fr = self.frequencies
        if "values" in fr:
            try:
                self.frequency_vector()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"frequencies.values: {exc}") from None
        else:
            need(int(fr.get("samples", 500)) >= 1, "frequencies.samples", "must be positive")
            need(int(fr.get("lmax", 6)) >= 2, "frequencies.lmax", "must be >= 2")

    # -- derived objects
    @property
    def site_schedule(self) -> SiteSchedule:
        s = dict(self.schedule)
        if "S0" in s:
            s["S0"] = tuple(s["S0"])
        if isinstance(s.get("second"), dict):
            s["second"] = SiteSchedule(**s["second"])
        return SiteSchedule(**s)

    @property
    def sites(self) -> List[int]:
        return gen_sites(self.site_schedule, self.J)

    @property
    def action_vector(self) -> ActionVector:
        a = self.actions
        if a.get("rule", "power") == "values":
            return ActionVector({int(k): float(v) for k, v in a["values"].items()})
        amp, p = float(a.get("a", 0.5)), float(a.get("p", self.p0))
        return ActionVector({s: (amp * float(jjap(s)) ** -p) ** 2 for s in self.sites})

    @property
    def fcoeff_list(self):
        return sorted((int(d), float(v)) for d, v in self.fcoeffs.items() if float(v) != 0.0)

    def frequency_vector(self) -> FrequencyVector:
        """Explicit values, or the first Diophantine sample of the seeded stream."""
        fr = self.frequencies
        sched = self.site_schedule
        if "values" in fr:
            return FrequencyVector(np.asarray(fr["values"], dtype=float), self.J, sched)
        A = enumerate_A(self.J, int(fr.get("lmax", 6)), sched)
        W = sample_frequencies(sched, self.J, int(fr.get("samples", 500)), int(fr.get("seed", 0)))
        par = DiophParams(self.gamma, self.tau, sched)
        for w in W:
            if check_diophantine(w, par, A, self.J).passed:
                return FrequencyVector(w, self.J, sched)
        raise KamAbort("no Diophantine frequency among the sampled points")

    def schedules(self) -> Schedules:
        return Schedules(self.r0, self.p0, self.rho, self.delta, self.site_schedule.eta)

    def normalized(self) -> dict:
        d = asdict(self)
        d["fcoeffs"] = {int(k): float(v) for k, v in self.fcoeffs.items()}
        return d


_FIELDS = {f for f in RunConfig.__dataclass_fields__}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{source}: parse error{where}: {getattr(exc, 'problem', exc)}") from None
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    flat = {}
    for k, v in raw.items():
        if k == "truncation" and isinstance(v, dict):
            flat.update(v)
        elif k == "norms" and isinstance(v, dict):
            flat.update(v)
        elif k == "kam" and isinstance(v, dict):
            flat.update(v)
        elif k == "nonlinearity" and isinstance(v, dict):
            flat["fcoeffs"] = v.get("coeffs", {}) or {}
            if "R" in v:
                flat["R"] = v["R"]
        else:
            flat[k] = v
    unknown = set(flat) - _FIELDS
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {sorted(unknown)}")
    for key in ("gamma", "tau", "r0", "p0", "rho", "delta", "tol", "R"):
        if key in flat:
            try:
                flat[key] = float(flat[key])
            except (TypeError, ValueError):
                raise ConfigError(f"{key}: expected a number, got {flat[key]!r}") from None
    try:
        return RunConfig(**flat)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror}") from None
    return parse_config(text, str(p))


# ---------------------------------------------------------------------------
# CSV with checksum


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: Sequence[str], rows) -> str:
    body = io.StringIO()
    body.write(",".join(header) + "\n")
    for row in rows:
        body.write(",".join(fmt(v) for v in row) + "\n")
    text = body.getvalue()
    return text + f"# sha256={hashlib.sha256(text.encode()).hexdigest()}\n"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows))
    return path


def read_csv(path, verify: bool = True):
    """``(header, rows)`` with string cells; checks the trailing checksum."""
    text = Path(path).read_text()
    lines = text.splitlines(keepends=True)
    if not lines or not lines[-1].startswith("# sha256="):
        raise ValueError(f"{path}: missing checksum line")
    body = "".join(lines[:-1])
    if verify and hashlib.sha256(body.encode()).hexdigest() != lines[-1].strip().split("=", 1)[1]:
        raise ValueError(f"{path}: checksum mismatch")
    rows = [ln.rstrip("\n").split(",") for ln in lines[:-1]]
    return rows[0], rows[1:]


def out_dir(flag: Optional[str], default: str) -> Path:
    return Path(os.environ.get(OUT_ENV) or flag or default)


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    sched = cfg.site_schedule
    rep = validate_admissible(sched, sched.i_star + args.i_span)
    print(yaml.safe_dump(cfg.normalized(), sort_keys=True), end="")
    for ln in rep.lines():
        print(ln)
    if not rep.ok:
        print("schedule is not admissible", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def run_from_config(cfg: RunConfig):
    omega = cfg.frequency_vector()
    I = cfg.action_vector
    H, N0 = nls_problem(omega, cfg.fcoeff_list, cfg.D, cfg.r0, cfg.p0, cfg.nz_max)
    res = run_kam(H, N0, omega, I, cfg.schedules(), cfg.gamma, cfg.max_steps, cfg.tol, cfg.tau)
    return omega, I, H, res


def cmd_kam(args) -> int:
    cfg = load_config(args.config)
    out = out_dir(args.out, cfg.output)
    omega, I, H, res = run_from_config(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "trace.csv", ["n", "eps", "theta", "lambda_sup", "dropped_mass"],
              [(r["n"], r["eps"], r["theta"], r["lambda_sup"], r["dropped_mass"]) for r in res.trace])
    write_csv(out / "lambda.csv", ["j", "lambda"],
              [(j, float(np.real(res.lam.get(j, 0.0)))) for j in range(-cfg.J, cfg.J + 1)])
    (out / "N.ham").write_text(hamops.dumps(res.N))
    for k, S in enumerate(res.Psi):
        (out / f"S_{k}.ham").write_text(hamops.dumps(S))
    meta = dict(config=cfg.normalized(), omega=[float(v) for v in omega.values], steps=len(res.Psi),
                converged=bool(res.converged), floor_hit=bool(res.floor_hit))
    (out / "run.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    print(f"eps: {' '.join(f'{e:.3e}' for e in res.eps)}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_measure(args) -> int:
    sched = SiteSchedule(kind=args.schedule, eta=args.eta)
    A = enumerate_A(args.J, args.lmax, sched)
    rows = []
    for g in args.gamma:
        if g <= 0:
            raise ConfigError("gamma: must be positive")
        m = measure_complement_mc(DiophParams(g, args.tau, sched), args.J, args.lmax, args.samples, args.seed, A=A)
        rows.append((m.gamma, m.fraction, m.ci_lo, m.ci_hi, m.coperta_sum))
    text = csv_text(["gamma", "fraction", "ci_lo", "ci_hi", "coperta_sum"], rows)
    if args.out or os.environ.get(OUT_ENV):
        out = out_dir(args.out, ".")
        out.mkdir(parents=True, exist_ok=True)
        (out / "measure.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def load_run(path):
    """``(cfg, omega, I, gens, lam)`` from a ``kam run`` output directory."""
    path = Path(path)
    meta = json.loads((path / "run.json").read_text())
    cfg = RunConfig(**meta["config"])
    cfg.fcoeffs = {int(k): v for k, v in cfg.fcoeffs.items()}
    omega = FrequencyVector(np.asarray(meta["omega"]), cfg.J, cfg.site_schedule)
    gens = [hamops.loads((path / f"S_{k}.ham").read_text(), sites=cfg.sites, nz_max=cfg.nz_max)
            for k in range(meta["steps"])]
    _, rows = read_csv(path / "lambda.csv")
    lam = {int(j): float(v) for j, v in rows}
    return cfg, omega, cfg.action_vector, gens, lam


def cmd_synthesize(args) -> int:
    from .synth import TestFunction, pde_field, weak_residual

    cfg, omega, I, gens, lam = load_run(args.run)
    out = out_dir(args.out, args.run)
    sites = sorted(I.values)
    nu = {s: float(omega.values[s + cfg.J]) for s in sites}
    t = np.linspace(args.t0, args.t1, args.nt)
    x = np.arange(args.nx) * 2 * math.pi / args.nx
    u = pde_field(gens, I, nu, t, x, cfg.J)
    T, X = np.meshgrid(t, x, indexing="ij")
    write_csv(out / "field.csv", ["t", "x", "re", "im"],
              zip(T.ravel(), X.ravel(), u.real.ravel(), u.imag.ravel()))
    chi = TestFunction(args.t0, args.t1, {s: 1.0 for s in sites})
    V = effective_V(omega, lam)
    nt_q = args.nt if args.nt % 2 else args.nt + 1
    res = weak_residual(lambda tt, xx: pde_field(gens, I, nu, tt, xx, cfg.J), V, cfg.fcoeff_list, chi, nt_q, args.nx)
    write_csv(out / "residual.csv", ["J", "D", "nt", "nx", "residual"], [(cfg.J, cfg.D, nt_q, args.nx, abs(res))])
    print(f"weak residual {abs(res):.3e}")
    return EXIT_OK


def _find(dirs, name):
    for d in dirs:
        for p in sorted(Path(d).rglob(name)):
            yield p


def cmd_report(args) -> int:
    out = out_dir(args.out, "report")
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    # measure-vs-gamma
    meas = []
    for p in _find(args.dirs, "measure.csv"):
        _, rows = read_csv(p)
        meas.extend((float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4])) for r in rows)
    meas.sort(key=lambda r: -r[0])
    if meas:
        write_csv(out / "measure_vs_gamma.csv", ["gamma", "fraction"], [(g, f) for g, f, *_ in meas])
        for g, f, lo, hi, cs in meas:
            summary.append(("measure", g, f, lo, hi, cs))
    # eps decay
    eps_rows = []
    for k, p in enumerate(_find(args.dirs, "trace.csv")):
        _, rows = read_csv(p)
        eps_rows.extend((k, int(r[0]), float(r[1])) for r in rows)
        summary.append(("kam", k, float(rows[-1][1]), len(rows) - 1, "", ""))
    if eps_rows:
        write_csv(out / "eps_decay.csv", ["run", "n", "eps"], eps_rows)
    # residual vs truncation
    res_rows = []
    for p in _find(args.dirs, "residual.csv"):
        _, rows = read_csv(p)
        res_rows.extend((int(r[0]), int(r[1]), float(r[4])) for r in rows)
    res_rows.sort()
    if res_rows:
        write_csv(out / "residual_vs_truncation.csv", ["J", "D", "residual"], res_rows)
        summary.extend(("residual", J, D, r, "", "") for J, D, r in res_rows)
    write_csv(out / "summary.csv", ["kind", "a", "b", "c", "d", "e"], summary)
    sys.stdout.write(csv_text(["kind", "a", "b", "c", "d", "e"], summary))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlskam", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a run configuration")
    p.add_argument("config")
    p.add_argument("--i-span", type=int, default=30, help="indices past i_star checked for admissibility")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("kam", help="KAM iteration")
    ksub = p.add_subparsers(dest="kam_command", required=True)
    k = ksub.add_parser("run")
    k.add_argument("--config", required=True)
    k.add_argument("--out")
    k.set_defaults(func=cmd_kam)

    p = sub.add_parser("measure", help="Monte Carlo measure of the resonant set")
    p.add_argument("--gamma", type=float, nargs="+", required=True)
    p.add_argument("--J", type=int, default=8)
    p.add_argument("--lmax", type=int, default=6)
    p.add_argument("--samples", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=1.5)
    p.add_argument("--schedule", default="power2")
    p.add_argument("--eta", type=float, default=1.2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("synthesize", help="field and weak residual from a KAM run")
    p.add_argument("--run", required=True)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float, default=2.0)
    p.add_argument("--nt", type=int, default=257)
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("report", help="aggregate CSV outputs")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KamAbort, HomologicalError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        if isinstance(exc, OSError):
            print(f"i/o error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
