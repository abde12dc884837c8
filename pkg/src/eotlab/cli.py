"""Command-line front end.

    eotlab build  --config cfg.json --out DIR
    eotlab solve  --config cfg.json --out DIR --eps 0.5
    eotlab verify --config cfg.json --out DIR
    eotlab ldp    --config cfg.json --out DIR

Exit codes: 0 pass, 2 config error, 3 solver nonconvergence, 4 hard-invariant failure.
Data files carry no timestamps; run metadata goes to ``manifest.json``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .blockmodel import (
    InvalidOverride, InvalidParams, ModelParams, SequenceOverride, TruncatedModel, build_model,
    entropy_H, sequence_asymptotics_report,
)
from .diagnostics import (
    ExplicitEps, Geometric, Harmonic, InvalidDelta, beta_estimate, block_estimates_check,
    closed_set_violation_report, exp_tightness_witness, exponent_sweep,
    no_ldp_contradiction_report, superlevel_tail_check, tv_trace,
)
from .lift import build_geometry, kl_chain_check, tv_isometry_check, uniform_conditionals
from .rate import rate_csv_rows
from .schrodinger import (
    NonConvergence, SolverConfig, cross_ratio_residual, diagonal_coupling,
    factorization_residual, od_log_residuals, solve, swap_residuals, tv_to_diagonal,
)
from .sets import OffDiagonalHigh, SinglePair

EXIT_OK, EXIT_CONFIG, EXIT_NONCONV, EXIT_FAIL = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Margins:
    violation: float = 0.15
    rect: float = 0.1
    F: float = 0.15


@dataclass(frozen=True)
class ExperimentConfig:
    params: ModelParams
    override: SequenceOverride | None = None
    schedule: dict = field(default_factory=lambda: {"kind": "harmonic"})
    solver: SolverConfig = field(default_factory=SolverConfig)
    kmax: int = 2
    R_list: tuple[int, ...] = ()
    delta: float | None = None
    eps_rect: float = 0.02
    margins: Margins = field(default_factory=Margins)
    out: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"params", "override", "schedule", "solver", "kmax", "R_list", "delta",
                 "eps_rect", "margins", "out"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        if "params" not in d:
            raise ConfigError("config needs a 'params' object")
        try:
            params = ModelParams(**d["params"])
            ov = d.get("override")
            override = SequenceOverride(**ov) if ov else None
            solver = SolverConfig(**d.get("solver", {}))
            margins = Margins(**d.get("margins", {}))
            cfg = cls(
                params=params, override=override,
                schedule=dict(d.get("schedule", {"kind": "harmonic"})),
                solver=solver, kmax=int(d.get("kmax", 2)),
                R_list=tuple(d.get("R_list", ())), delta=d.get("delta"),
                eps_rect=float(d.get("eps_rect", 0.02)), margins=margins, out=d.get("out"),
            )
        except (InvalidParams, InvalidOverride):
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def validate(self):
        model = self.model()  # params and override checks
        self.make_schedule()
        if not 2 <= self.kmax <= 6:
            raise ConfigError("kmax must lie in 2..6")
        R = list(self.R_list)
        if any(int(r) != r for r in R) or any(u >= v for u, v in zip(R, R[1:])):
            raise ConfigError("R_list must be strictly increasing integers")
        if R and not (0 <= R[0] and R[-1] < model.N):
            raise ConfigError(f"R_list entries must lie in 0..N-1 = 0..{model.N - 1}")
        a, b, kappa = self.params.a, self.params.b, self.params.kappa
        if self.delta is not None and not (b - kappa < self.delta < b - 2 * a):
            raise InvalidDelta(f"delta must lie in the open interval ({b - kappa}, {b - 2 * a})")
        if not self.eps_rect > 0:
            raise ConfigError("eps_rect must be positive")

    def model(self) -> TruncatedModel:
        return build_model(self.params, self.override)

    def make_schedule(self):
        s = dict(self.schedule)
        kind = s.pop("kind", "harmonic")
        try:
            if kind == "harmonic":
                sched = Harmonic(n_max=int(s.pop("n_max", self.params.N)),
                                 n_min=int(s.pop("n_min", 1)))
            elif kind == "geometric":
                sched = Geometric(float(s.pop("start")), float(s.pop("ratio")), int(s.pop("num")))
            elif kind == "explicit":
                sched = ExplicitEps(tuple(float(v) for v in s.pop("values")))
            else:
                raise ConfigError(f"unknown schedule kind {kind!r}")
            if s:
                raise ConfigError(f"unknown schedule keys: {sorted(s)}")
            sched.eps_values()
        except (KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad schedule: {exc}") from exc
        return sched

    def resolved_delta(self) -> float:
        if self.delta is not None:
            return self.delta
        a, b, kappa = self.params.a, self.params.b, self.params.kappa
        return 0.5 * ((b - kappa) + (b - 2 * a))

    def resolved_R_list(self) -> list[int]:
        if self.R_list:
            return list(self.R_list)
        N = self.params.N
        return sorted({max(0, N // 4), N // 2, max(0, N - 2)} - {N}) or [0]

    def to_dict(self) -> dict:
        return {
            "params": asdict(self.params),
            "override": self.override.to_dict() if self.override else None,
            "schedule": self.schedule, "solver": asdict(self.solver), "kmax": self.kmax,
            "R_list": list(self.R_list), "delta": self.delta, "eps_rect": self.eps_rect,
            "margins": asdict(self.margins),
        }


# ---------------------------------------------------------------------------
# serialization helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("-inf" if v < 0 else ("inf" if v > 0 else "nan"))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_outputs(out: Path, files: dict[str, str], command: str, cfg: ExperimentConfig,
                  started: float):
    out.mkdir(parents=True, exist_ok=True)
    for name, text in sorted(files.items()):
        (out / name).write_text(text)
    manifest = {
        "command": command, "version": __version__, "python": platform.python_version(),
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_s": round(time.time() - started, 3), "files": sorted(files),
        "config": cfg.to_dict(),
    }
    (out / "manifest.json").write_text(dumps(manifest))


# ---------------------------------------------------------------------------
# commands; each returns (files, exit code, summary line)


def cmd_build(cfg: ExperimentConfig, args):
    model = cfg.model()
    report = sequence_asymptotics_report(cfg.params)
    doc = model.to_dict()
    doc["entropy_H"] = entropy_H(model)
    return {"model.json": dumps(doc), "asymptotics.json": dumps(report.to_dict())}, EXIT_OK, \
        f"model N={model.N} m={list(model.m)[:6]}... H={doc['entropy_H']:.6f}"


def _spot_quadruples(model: TruncatedModel):
    N = model.N
    quads = [((N, 1), (N, 2), (N, 1), (N, 2)), ((1, 0), (1, 1), (1, 2), (1, 0))]
    if N >= 2:
        quads.append(((1, 1), (2, 1), (2, 0), (1, 2)))
    return quads


def solve_summary(coupling, marginal_tol: float = 1e-12) -> dict:
    model = coupling.model
    od = od_log_residuals(coupling)
    sw = swap_residuals(coupling)
    cr = [cross_ratio_residual(coupling, *q) for q in _spot_quadruples(model)]
    s = {
        "eps": coupling.eps, "iterations": coupling.iterations,
        "marginal_defect": coupling.marginal_defect(),
        "od_residual_max": float(np.max(np.abs(od))),
        "swap_residual_max": float(np.max(np.abs(sw))),
        "cross_ratio_max": max(cr),
        "factorization_residual": factorization_residual(coupling),
        "tv_to_diagonal": tv_to_diagonal(coupling),
    }
    s["checks"] = {
        "marginal": s["marginal_defect"] <= marginal_tol,
        "od": s["od_residual_max"] <= 1e-9,
        "swap": s["swap_residual_max"] <= 1e-9,
        "cross_ratio": s["cross_ratio_max"] <= 1e-8,
        "factorization": s["factorization_residual"] <= 1e-12,
    }
    return s


def cmd_solve(cfg: ExperimentConfig, args):
    if args.eps is None or not args.eps > 0:
        raise ConfigError("solve needs --eps > 0")
    model = cfg.model()
    coupling, _ = solve(model, args.eps, cfg.solver)
    summary = solve_summary(coupling, cfg.solver.marginal_tol)
    ok = all(summary["checks"].values())
    files = {
        "coupling.json": dumps(coupling.to_dict()),
        "coupling.csv": csv_text(["class", "count", "cost", "logmass"], coupling.csv_rows()),
        "summary.json": dumps(summary),
    }
    line = (f"eps={args.eps} iters={coupling.iterations} defect={summary['marginal_defect']:.2e}"
            f" od={summary['od_residual_max']:.2e} {'PASS' if ok else 'FAIL'}")
    return files, EXIT_OK if ok else EXIT_FAIL, line


def cmd_verify(cfg: ExperimentConfig, args):
    model = cfg.model()
    sched = cfg.make_schedule()
    sols: dict = {}
    blocks = block_estimates_check(model, config=cfg.solver, solutions=sols)
    reports = list(blocks.reports)
    reports += [exp_tightness_witness(model, R, sched, cfg.solver, sols)
                for R in cfg.resolved_R_list()]

    geom = build_geometry(model)
    eps_min = min(sched.eps_values())
    sol = sols.get(eps_min) or solve(model, eps_min, cfg.solver)[0]
    diag = diagonal_coupling(model)
    lhs, rhs, res = tv_isometry_check(sol, diag, geom)
    kl_lhs, kl_dec, kl_res = kl_chain_check(sol, uniform_conditionals(sol))
    tv = tv_trace(model, sched, cfg.solver, sols)
    lift_checks = {
        "tv_isometry": {"lhs": lhs, "rhs": rhs, "residual": res, "pass": res <= 1e-12},
        "kl_chain": {"lhs": kl_lhs, "decomposed": kl_dec, "residual": kl_res,
                     "pass": kl_res <= 1e-10},
        "tv_trace": {"rows": tv.rows, "bound_ok": tv.bound_ok, "decreasing": tv.decreasing()},
    }
    hard = [r for r in reports if r.hard]
    ok = (all(r.passed for r in hard) and lift_checks["tv_isometry"]["pass"]
          and lift_checks["kl_chain"]["pass"] and tv.bound_ok)
    doc = {
        "reports": [r.to_dict() for r in reports],
        "n0_b": blocks.n0_b, "n0_c": blocks.n0_c,
        "lift": lift_checks,
        "summary": {"hard_total": len(hard), "hard_failed": sum(not r.passed for r in hard),
                    "soft_failed": sum(not r.passed for r in reports if not r.hard),
                    "pass": ok},
    }
    line = (f"verify: {doc['summary']['hard_failed']}/{len(hard)} hard failures, "
            f"n0_b={blocks.n0_b} n0_c={blocks.n0_c} {'PASS' if ok else 'FAIL'}")
    return {"report.json": dumps(doc)}, EXIT_OK if ok else EXIT_FAIL, line


def cmd_ldp(cfg: ExperimentConfig, args):
    model = cfg.model()
    sched = cfg.make_schedule()
    sols: dict = {}
    mg = cfg.margins
    viol = closed_set_violation_report(model, sched, cfg.kmax, mg.violation, cfg.solver, sols)
    R_list = cfg.resolved_R_list()
    beta = beta_estimate(model, OffDiagonalHigh(), R_list, sched, cfg.solver, sols)
    sup = superlevel_tail_check(model, cfg.resolved_delta(), R_list, sched, cfg.kmax,
                                mg.violation, cfg.solver, sols)
    contra = no_ldp_contradiction_report(model, sched, cfg.eps_rect, mg.rect, mg.F,
                                         config=cfg.solver, solutions=sols)
    N = model.N
    traces = {
        "F": viol.trace,
        "rect_N_1_2": exponent_sweep(model, SinglePair((N, 1), (N, 2)), sched, cfg.solver, sols),
    }
    for R, tr in zip(R_list, beta.traces):
        traces[f"F_minus_K{R}"] = tr
    header = ["eps", "logmass", "eps_logmass"]
    files = {f"trace_{name}.csv": csv_text(header, tr.csv_rows()) for name, tr in traces.items()}
    files["rate_F.csv"] = csv_text(["class", "x", "y", "lo", "hi"],
                                   rate_csv_rows(model, OffDiagonalHigh(), cfg.kmax))
    doc = {
        "violation": viol.to_dict(),
        "beta": {"rows": beta.rows, "final": beta.final, "monotone": beta.monotone()},
        "superlevel": sup.to_dict(),
        "contradiction": contra.to_dict(),
    }
    files["ldp.json"] = dumps(doc)
    ok = beta.monotone() and viol.control_consistent
    line = (f"F exponent {viol.measured:.4f} (rate floor -{viol.inf_rate_lo:.4f}): {viol.verdict}; "
            f"beta final {beta.final:.4f}")
    return files, EXIT_OK if ok else EXIT_FAIL, line


COMMANDS = {"build": cmd_build, "solve": cmd_solve, "verify": cmd_verify, "ldp": cmd_ldp}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eotlab", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="experiment config (JSON)")
    p.add_argument("--out", help="output directory (overrides config 'out')")
    p.add_argument("--eps", type=float, help="regularization for 'solve'")
    p.add_argument("--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        cfg = ExperimentConfig.load(args.config)
        out = args.out or cfg.out
        if not out:
            raise ConfigError("no output directory (use --out or 'out' in the config)")
        files, code, line = COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidParams, InvalidOverride, InvalidDelta) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergence as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONV
    write_outputs(Path(out), files, args.command, cfg, started)
    if not args.quiet:
        print(line)
    return code


if __name__ == "__main__":
    sys.exit(main())
