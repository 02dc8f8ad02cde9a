"""Command-line front end.

    chanceocp solve    [--config FILE] [--problem P] [--kernel K] [--seed S] [--out DIR]
    chanceocp batch    [--config FILE] [--kernel K|all] [--runs N] [--seed S] [--out DIR]
    chanceocp sample   [--config FILE] [--distribution D] [-n N] [--seed S] [--out DIR]
    chanceocp validate SOLUTION_JSON [--mc N] [--seed S] [--out DIR]

Flags override keys of the YAML config file. Exit codes: 0 success,
1 usage or configuration error, 2 when a solve does not converge or a
validation fails.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import typing
from pathlib import Path
from typing import Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, create_model

from . import hmc
from .benchmarks import (BatchError, LunarParams, RunRecord, batch_table_csv,
                         lunar_ccocp, lunar_deterministic, lunar_xi, monte_carlo_validate,
                         run_batch)
from .kernels import KernelKind
from .lgr import Mesh
from .ocp import SolveConfig, solve_ccocp
from .prob_model import RandomVectorSpec
from .transcription import Layout, Trajectory

EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2

PROBLEMS = ("lunar-cc", "lunar-det")
DISTRIBUTIONS = ("lunar-xi", "lunar-xi1", "lunar-xi2")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


_hints = typing.get_type_hints(LunarParams)
LunarParamsModel = create_model(
    "LunarParamsModel", __base__=_Strict,
    **{f.name: (_hints[f.name], f.default) for f in dataclasses.fields(LunarParams)})


class ProblemModel(_Strict):
    name: Literal["lunar-cc", "lunar-det"] = "lunar-cc"
    params: LunarParamsModel = Field(default_factory=LunarParamsModel)


class BandwidthModel(_Strict):
    mode: Literal["auto", "fixed", "scheduled"] = "scheduled"
    value: float | dict[str, float] | None = None
    start: float | dict[str, float] | None = None
    start_factor: float | None = Field(default=None, gt=0)
    growth: float = Field(default=1.5, gt=1)
    growth_tries: int = Field(default=3, ge=0)


class HmcModel(_Strict):
    n_samples: int = Field(default=50_000, ge=1)
    step_size: float | None = Field(default=None, gt=0)
    n_leapfrog: int = Field(default=10, ge=1)
    burn_in: int = Field(default=1_000, ge=0)


class MeshModel(_Strict):
    intervals: int = Field(default=10, ge=1)
    degree: int = Field(default=4, ge=1, le=64)
    tol: float = Field(default=1e-6, gt=0)
    max_refinements: int = Field(default=8, ge=0)
    probe_refinements: int = Field(default=4, ge=0)
    max_degree: int = Field(default=14, ge=2, le=64)
    min_degree: int = Field(default=4, ge=2, le=64)


class NlpModel(_Strict):
    tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=500, ge=1)
    derivative: Literal["fd", "analytic"] = "fd"


class RunConfig(_Strict):
    problem: ProblemModel = Field(default_factory=ProblemModel)
    kernel: str = "split-bernstein"
    bandwidth: BandwidthModel = Field(default_factory=BandwidthModel)
    hmc: HmcModel = Field(default_factory=HmcModel)
    mesh: MeshModel = Field(default_factory=MeshModel)
    nlp: NlpModel = Field(default_factory=NlpModel)
    seed: int = 0
    runs: int = Field(default=20, ge=1)
    workers: int = Field(default=1, ge=1)
    out: str = "results"


class UsageError(Exception):
    pass


# --- config ------------------------------------------------------------------------

def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        key = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{key}: {e['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a config file (or defaults), then apply flag overrides."""
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as err:
            raise UsageError(f"cannot read config {path}: {err}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as err:
            raise UsageError(f"config {path} is not valid YAML: {err}") from None
        if not isinstance(data, dict):
            raise UsageError(f"config {path} must be a mapping at the top level")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "problem":
            data.setdefault("problem", {})
            if not isinstance(data["problem"], dict):
                raise UsageError("problem must be a mapping")
            data["problem"]["name"] = value
        else:
            data[key] = value
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        raise UsageError(_format_validation(err)) from None


def _kernel(name: str) -> KernelKind:
    try:
        return KernelKind.parse(name)
    except ValueError as err:
        raise UsageError(str(err)) from None


def _params(cfg: RunConfig) -> LunarParams:
    return LunarParams(**cfg.problem.params.model_dump())


def _problem(cfg: RunConfig):
    p = _params(cfg)
    return lunar_ccocp(p) if cfg.problem.name == "lunar-cc" else lunar_deterministic(p)


def solve_config(cfg: RunConfig, kernel: KernelKind | None = None, seed: int | None = None,
                 ) -> SolveConfig:
    """Translate a validated run config into :class:`SolveConfig` keywords."""
    return SolveConfig(**_solve_kwargs(cfg), kernel=kernel or _kernel(cfg.kernel),
                       seed=cfg.seed if seed is None else seed)


def _solve_kwargs(cfg: RunConfig) -> dict:
    bw, m, n, h = cfg.bandwidth, cfg.mesh, cfg.nlp, cfg.hmc
    try:
        Mesh.uniform(m.intervals, m.degree)
    except ValueError as err:
        raise UsageError(f"mesh: {err}") from None
    return dict(
        bandwidth_mode=bw.mode, bandwidth=bw.value, start_bandwidth=bw.start,
        start_factor=bw.start_factor, growth=bw.growth, growth_tries=bw.growth_tries,
        hmc=hmc.HmcConfig(n_samples=h.n_samples, step_size=h.step_size,
                          n_leapfrog=h.n_leapfrog, burn_in=h.burn_in),
        mesh=Mesh.uniform(m.intervals, m.degree), mesh_tol=m.tol,
        max_refinements=m.max_refinements, probe_refinements=m.probe_refinements,
        max_degree=m.max_degree, min_degree=m.min_degree,
        nlp_tol=n.tol, nlp_max_iter=n.max_iter, derivative=n.derivative)


def _checked_solve_config(cfg, kernel=None, seed=None) -> SolveConfig:
    try:
        return solve_config(cfg, kernel, seed)
    except ValueError as err:
        raise UsageError(str(err)) from None


# --- output helpers ------------------------------------------------------------------

def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_solution(sol, cfg: RunConfig, out: Path) -> None:
    """``trajectory.csv``, ``solution.json`` and ``iterations.csv`` in ``out``."""
    _write(out / "trajectory.csv", sol.trajectory.to_csv())
    meta = json.loads(sol.to_json())
    meta["config"] = cfg.model_dump(mode="json")
    _write(out / "solution.json", _dump_json(meta))
    _write(out / "iterations.csv", sol.nlp_solution.history_csv())


def trajectory_from_solution_json(meta: dict) -> Trajectory:
    """Rebuild the trajectory stored in a ``solution.json`` document."""
    mesh = Mesh.from_dict(meta["mesh"])
    n_y = len(meta["final_state"])
    x = np.asarray(meta["decision_vector"], dtype=float)
    n_u = (x.size - 2 - n_y * mesh.n_nodes) // mesh.n_colloc
    lay = Layout(n_y, n_u, mesh.n_nodes, mesh.n_colloc)
    if lay.n != x.size:
        raise UsageError("decision vector does not match the stored mesh")
    Y, U, t0, tf = lay.unpack(x)
    return Trajectory(mesh, float(t0), float(tf), Y, U)


# --- commands ------------------------------------------------------------------------

def cmd_solve(args) -> int:
    cfg = load_config(args.config, {"problem": args.problem, "kernel": args.kernel,
                                    "seed": args.seed, "out": args.out})
    scfg = _checked_solve_config(cfg)
    sol = solve_ccocp(_problem(cfg), scfg)
    out = Path(cfg.out)
    write_solution(sol, cfg, out)
    print(f"{cfg.problem.name}: status={sol.status.value} J*={sol.objective:.10g} "
          f"tf={sol.trajectory.tf:.6g} -> {out}")
    return EXIT_OK if sol.converged else EXIT_FAILED


def _run_key(cfg: RunConfig, kernel: str) -> str:
    # runs are interchangeable across invocations only when every setting
    # except seeds and bookkeeping matches
    d = cfg.model_dump(mode="json")
    for k in ("seed", "runs", "workers", "out"):
        d.pop(k)
    d["kernel"] = kernel
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def _load_manifest(path: Path, key: str) -> RunRecord | None:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    if doc.get("key") != key:
        return None
    try:
        return RunRecord(**doc["record"])
    except (KeyError, TypeError):
        return None


def cmd_batch(args) -> int:
    cfg = load_config(args.config, {"problem": args.problem, "kernel": args.kernel,
                                    "seed": args.seed, "runs": args.runs, "out": args.out,
                                    "workers": args.workers})
    if cfg.problem.name != "lunar-cc":
        raise UsageError("batch runs the chance-constrained problem (lunar-cc) only")
    kinds = list(KernelKind) if cfg.kernel == "all" else [_kernel(cfg.kernel)]
    kwargs = _solve_kwargs(cfg)
    _checked_solve_config(cfg, kinds[0])
    out = Path(cfg.out)
    params = _params(cfg)
    stats, failed = [], 0
    for kind in kinds:
        key = _run_key(cfg, kind.value)
        kdir = out / kind.value
        done = {}
        for i in range(cfg.runs):
            seed = cfg.seed + i
            rec = _load_manifest(kdir / f"run-{seed}" / "record.json", key)
            if rec is not None:
                done[seed] = rec

        def on_run(rec, sol, kdir=kdir, key=key, kind=kind):
            rdir = kdir / f"run-{rec.seed}"
            run_cfg = cfg.model_copy(update={"kernel": kind.value, "seed": rec.seed,
                                             "runs": 1, "out": str(rdir)})
            write_solution(sol, run_cfg, rdir)
            # the manifest goes last so an interrupted run is redone
            _write(rdir / "record.json",
                   _dump_json({"key": key, "record": dataclasses.asdict(rec)}))
            print(f"  {kind.value} seed={rec.seed} {rec.status} J*={rec.objective:.6f} "
                  f"T={rec.time:.2f}s", flush=True)

        if done:
            print(f"{kind.value}: resuming, {len(done)} of {cfg.runs} runs already complete")
        try:
            st = run_batch(kind, cfg.runs, cfg.seed, params, cfg.workers, kwargs,
                           on_run=on_run, completed=done)
        except BatchError as err:
            print(f"error: {err}", file=sys.stderr)
            failed += cfg.runs
            continue
        failed += st.n_runs - st.n_converged
        stats.append(st)
        print(f"{kind.value}: mu_J={st.mean_cost:.6f} sigma_J={st.std_cost:.2e} "
              f"converged {st.n_converged}/{st.n_runs}"
              + (" (degenerate spread)" if st.degenerate else ""))
    if stats:
        _write(out / "stats.csv", batch_table_csv(stats))
    return EXIT_OK if failed == 0 else EXIT_FAILED


def distribution(name: str, params: LunarParams = LunarParams()) -> RandomVectorSpec:
    xi = lunar_xi(params)
    if name == "lunar-xi":
        return xi
    if name == "lunar-xi1":
        return RandomVectorSpec((xi.components[0],), name=name)
    if name == "lunar-xi2":
        return RandomVectorSpec((xi.components[1],), name=name)
    raise UsageError(f"unknown distribution {name!r}; allowed: {', '.join(DISTRIBUTIONS)}")


def cmd_sample(args) -> int:
    overrides = {"seed": args.seed, "out": args.out}
    cfg = load_config(args.config, overrides)
    h = cfg.hmc
    n = h.n_samples if args.n is None else args.n
    if n < 1:
        raise UsageError("-n must be positive")
    target = distribution(args.distribution, _params(cfg))
    hc = hmc.HmcConfig(n_samples=n, step_size=h.step_size, n_leapfrog=h.n_leapfrog,
                       burn_in=h.burn_in, seed=cfg.seed)
    s = hmc.sample(target, hc)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    hmc.save_samples_csv(s, out / "samples.csv")
    diag = {"distribution": args.distribution, "n_samples": n, "seed": cfg.seed,
            "acceptance_rate": s.acceptance_rate, **s.diagnostics}
    _write(out / "diagnostics.json", _dump_json(diag))
    print(f"{args.distribution}: {n} draws, acceptance {s.acceptance_rate:.3f}, "
          f"split-half {'ok' if diag.get('split_half_passed') else 'FAILED'} -> {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.solution)
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as err:
        raise UsageError(f"cannot read solution {path}: {err}") from None
    if "config" not in meta or "decision_vector" not in meta:
        raise UsageError(f"{path} is not a solution.json written by this tool")
    try:
        cfg = RunConfig.model_validate(meta["config"])
    except ValidationError as err:
        raise UsageError(_format_validation(err)) from None
    traj = trajectory_from_solution_json(meta)
    # both lunar variants are checked against the chance constraints
    ocp = lunar_ccocp(_params(cfg))
    if args.mc < 1:
        raise UsageError("--mc must be positive")
    report = monte_carlo_validate(traj, ocp, n_mc=args.mc, seed=args.seed)
    out = Path(args.out) if args.out else path.parent
    doc = report.to_dict()
    doc["solution"] = str(path)
    _write(out / "validation.json", _dump_json(doc))
    for c in report.checks:
        print(f"{c.name}: frequency {c.frequency:.5f} (limit {c.limit:.5f}) "
              f"{'pass' if c.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_FAILED


# --- entry point ---------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chanceocp", description="Chance-constrained optimal control toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_help="random seed"):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help=seed_help)
        sp.add_argument("--out", help="output directory")

    s = sub.add_parser("solve", help="solve one problem instance")
    common(s)
    s.add_argument("--problem", help=f"one of {', '.join(PROBLEMS)}")
    s.add_argument("--kernel", help="split-bernstein, epanechnikov or gaussian")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("batch", help="repeated solves with summary statistics")
    common(b, "seed of the first run")
    b.add_argument("--problem", help="lunar-cc")
    b.add_argument("--kernel", help="a kernel name or 'all'")
    b.add_argument("--runs", type=int, help="runs per kernel")
    b.add_argument("--workers", type=int, help="parallel worker processes")
    b.set_defaults(func=cmd_batch)

    sm = sub.add_parser("sample", help="draw HMC samples")
    common(sm)
    sm.add_argument("--distribution", default="lunar-xi",
                    help=f"one of {', '.join(DISTRIBUTIONS)}")
    sm.add_argument("-n", type=int, help="number of draws")
    sm.set_defaults(func=cmd_sample)

    v = sub.add_parser("validate", help="Monte-Carlo check of a solved trajectory")
    v.add_argument("solution", help="solution.json written by solve or batch")
    v.add_argument("--mc", type=int, default=100_000, help="fresh draws")
    v.add_argument("--seed", type=int, default=12345)
    v.add_argument("--out", help="output directory (default: next to the solution)")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
