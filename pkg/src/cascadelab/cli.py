"""Command-line driver: config parsing, dispatch, seed ledger and manifests.

Every subcommand reads an optional JSON config (``--config``), applies the
flags on top, runs, and either prints its result or, with ``--out DIR``,
writes data files plus one manifest ``<subcommand>.manifest.json`` that
lists them. Exit status is 0 on success, 1 on validation failure
(malformed input, a failed check) and 2 when a run aborts.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt_
import hashlib
import io
import json
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__, acceptance, cascade, hypotheses, noise, shell, spde
from .torus import SpectralField, random_divergence_free

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_ABORT = 2

SUBCOMMANDS = (
    "shell-run",
    "spde-run",
    "corrector-limit",
    "hypotheses",
    "cancellation-test",
    "acceptance",
    "validate-constants",
)

# --out tokens that select a stdout format instead of naming a directory
STDOUT_FORMATS = ("json", "csv")


class ConfigError(ValueError):
    """Invalid configuration, reported with line or field diagnostics."""


# ---------------------------------------------------------------------------
# configuration schema


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ShellBlock(_Block):
    n_min: int = 0
    nshells: int = Field(30, ge=1)
    n0: int = 0
    amplitude: float = 1.0
    initial: list[float] | None = None
    lam: float = Field(2.0, gt=1.0)
    a: float = 0.0
    nu_d: float = Field(0.0, ge=0.0)
    nonlinear: bool = True
    T: float = Field(10.0, ge=0.0)
    dt: float = Field(1e-3, gt=0.0)
    proxy_order: float = 2.1
    proxy_threshold: float | None = 1e12
    record_every: float | None = None


class ThetaBlock(_Block):
    N: int = Field(1, ge=1)
    lambda_exp: float = 1.0


class CascadeBlock(_Block):
    m: int = Field(1, ge=1, le=3)
    n_min: int = 0
    n_top: int = 2
    eps0: float = Field(0.95, gt=0.0, lt=1.0)
    rho: float = Field(0.0, ge=0.0)


class InitialBlock(_Block):
    kind: Literal["random", "mode", "wavelet"] = "random"
    radius: float | None = 1.5
    decay: float = 0.0
    scale: float = 1.0
    mode: list[int] | None = None
    wavelet_amplitudes: list[list[float]] | None = None


class SpdeBlock(_Block):
    alpha: float = Field(1.0, gt=0.0)
    nu: float = Field(0.0, ge=0.0)
    theta: ThetaBlock | None = None
    cutoff_R: float | None = None
    cascade: CascadeBlock | None = None
    dt: float = Field(1e-3, gt=0.0)
    T: float = Field(0.1, ge=0.0)
    galerkin_N: float | None = None
    state_cutoff: int | None = 4
    nonlinear_scale: float = 1.0
    corrector: bool = True
    initial: InitialBlock = InitialBlock()
    trajectories: int = Field(1, ge=1)
    record_every: int = Field(1, ge=1)
    stop_threshold: float | None = None
    deterministic: bool = False


class CorrectorBlock(_Block):
    N: list[int] = [4, 8, 16, 32]
    lambda_exp: float = 1.0
    nu: float = Field(1.0, gt=0.0)
    mode: list[int] = [1, 0, 0]


class HypothesesBlock(_Block):
    which: list[str] = list(hypotheses.HYPOTHESES)
    rho: str = "0..1:0.005"
    delta: str = "1/1000"


class CancellationBlock(_Block):
    m: int = Field(3, ge=1, le=3)
    n_min: int = 0
    n_top: int = 3
    seeds: int = Field(100, ge=1)


class AcceptanceBlock(_Block):
    suite: Literal["fast", "full"] = "fast"
    criteria: list[int] | None = None


class ConstantsBlock(_Block):
    path: str | None = None
    m: int = Field(1, ge=1, le=3)
    tol: float = Field(0.0, ge=0.0)


class ExperimentConfig(_Block):
    schema_version: Literal[1] = 1
    master_seed: int = Field(0, ge=0, lt=2**64)
    out: str | None = None
    shell: ShellBlock = ShellBlock()
    spde: SpdeBlock = SpdeBlock()
    corrector: CorrectorBlock = CorrectorBlock()
    hypotheses: HypothesesBlock = HypothesesBlock()
    cancellation: CancellationBlock = CancellationBlock()
    acceptance: AcceptanceBlock = AcceptanceBlock()
    constants: ConstantsBlock = ConstantsBlock()


def _line_of(text: str, loc: tuple) -> int | None:
    """Line of the last key of ``loc`` in the raw config text, if it occurs."""
    keys = [k for k in loc if isinstance(k, str)]
    if not keys:
        return None
    needle = json.dumps(keys[-1]) + ":"
    flat = text.replace('" :', '":')
    pos = flat.find(needle)
    return flat.count("\n", 0, pos) + 1 if pos >= 0 else None


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        return ExperimentConfig.model_validate(doc)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            field = ".".join(str(p) for p in err["loc"]) or "<root>"
            line = _line_of(text, err["loc"])
            where = f"{path}:{line}" if line else path
            lines.append(f"{where}: field {field}: {err['msg']}")
        raise ConfigError("\n".join(lines)) from exc


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical config; the output location is not part of it."""
    text = json.dumps(cfg.model_dump(mode="json", exclude={"out"}), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def code_revision() -> str:
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], cwd=here, capture_output=True, text=True, timeout=10, check=True
        )
        rev = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = "unknown"
    return f"{__version__}+{rev}"


def thread_count(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("CASCADE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"CASCADE_THREADS must be an integer, got {env!r}") from exc
    return 1


def sub_seed(master_seed: int, label: str) -> int:
    """Deterministic 63-bit seed for a named stream of the run."""
    words = [int(master_seed) & 0xFFFFFFFF, int(master_seed) >> 32] + list(label.encode())
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0] >> 1)


# ---------------------------------------------------------------------------
# output


def _utc_now() -> str:
    return dt_.datetime.now(dt_.timezone.utc).isoformat(timespec="seconds")


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return buf.getvalue()


def json_text(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


class RunWriter:
    """Collects the outputs of one run and writes them with a single manifest."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: str | None, fmt: str):
        self.command = command
        self.cfg = cfg
        self.out = Path(out) if out is not None else None
        self.fmt = fmt
        self.started = _utc_now()
        self.files: dict[str, str] = {}
        self.seeds: list[int] = []
        self.truncation_loss = 0.0
        self.summary: dict = {}

    def add(self, name: str, text: str):
        self.files[f"{self.command}.{name}"] = text

    def finish(self, stdout_doc, stdout_csv: tuple[list[str], list[list]] | None = None):
        if self.out is None:
            if self.fmt == "csv" and stdout_csv is not None:
                sys.stdout.write(csv_text(*stdout_csv))
            else:
                sys.stdout.write(json_text(stdout_doc))
            return
        self.out.mkdir(parents=True, exist_ok=True)
        outputs = {}
        for name, text in sorted(self.files.items()):
            (self.out / name).write_text(text)
            outputs[name] = hashlib.sha256(text.encode()).hexdigest()
        manifest = {
            "command": self.command,
            "config_hash": config_hash(self.cfg),
            "config": self.cfg.model_dump(mode="json"),
            "code_revision": code_revision(),
            "master_seed": self.cfg.master_seed,
            "started": self.started,
            "finished": _utc_now(),
            "seeds": self.seeds,
            "truncation_loss_total": self.truncation_loss,
            "outputs": outputs,
            "summary": self.summary,
        }
        (self.out / f"{self.command}.manifest.json").write_text(json_text(manifest))
        sys.stdout.write(json_text({"out": str(self.out), "outputs": sorted(outputs), **self.summary}))


# ---------------------------------------------------------------------------
# subcommands


def run_shell(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.shell
    kw = dict(lam=b.lam, diss_exp=b.a, nu_d=b.nu_d, nonlinear=b.nonlinear)
    if b.initial is not None:
        st = shell.ShellState(b.n_min, np.asarray(b.initial, dtype=float), **kw)
    else:
        st = shell.ShellState.single_shell(b.n_min, b.nshells, b.n0, b.amplitude, **kw)
    tr = shell.integrate(
        st, b.T, b.dt, proxy_order=b.proxy_order, proxy_threshold=b.proxy_threshold, record_every=b.record_every
    )
    header, rows = tr.to_rows(b.n_min)
    w.add("csv", csv_text(header, rows))
    e0 = float(tr.energy[0])
    w.summary = {
        "blowup": tr.blowup,
        "decay": tr.decay,
        "reason": tr.reason,
        "final_time": float(tr.times[-1]),
        "proxy_growth": float(tr.proxy[-1] / tr.proxy[0]) if tr.proxy[0] > 0 else None,
        "energy_relative_drift": float(abs(tr.energy[-1] - e0) / e0) if e0 > 0 else 0.0,
        "accepted_steps": tr.accepted_steps,
        "rejected_steps": tr.rejected_steps,
    }
    w.finish(w.summary, (header, rows))
    return EXIT_OK


def spde_config(b: SpdeBlock) -> spde.SpdeConfig:
    casc = None
    if b.cascade is not None:
        c = b.cascade
        casc = cascade.default_config(m=c.m, n_min=c.n_min, n_top=c.n_top, eps0=c.eps0, rho=c.rho)
    theta = noise.theta_shell(b.theta.N, b.theta.lambda_exp, 3) if b.theta is not None else None
    return spde.SpdeConfig(
        alpha=b.alpha,
        nu=b.nu,
        theta=theta,
        cutoff=spde.CutoffFn(b.cutoff_R) if b.cutoff_R is not None else None,
        cascade=casc,
        dt=b.dt,
        T=b.T,
        galerkin_N=b.galerkin_N,
        state_cutoff=casc.cutoff if casc is not None else b.state_cutoff,
        nonlinear_scale=b.nonlinear_scale,
        corrector=b.corrector,
    )


def initial_field(b: SpdeBlock, cfg: spde.SpdeConfig, master_seed: int) -> SpectralField:
    ini = b.initial
    box = cfg.box_cutoff
    if ini.kind == "random":
        radius = ini.radius
        if cfg.galerkin_N is not None:
            radius = cfg.galerkin_N if radius is None else min(radius, cfg.galerkin_N)
        rng = np.random.default_rng(sub_seed(master_seed, "initial"))
        u0 = random_divergence_free(rng, 3, box, radius=radius, decay=ini.decay)
    elif ini.kind == "mode":
        if ini.mode is None:
            raise ConfigError("field spde.initial.mode: required when kind is 'mode'")
        u0 = noise.single_mode(ini.mode, box)
    else:
        if cfg.cascade is None or ini.wavelet_amplitudes is None:
            raise ConfigError("field spde.initial: 'wavelet' needs spde.cascade and wavelet_amplitudes")
        x = np.asarray(ini.wavelet_amplitudes, dtype=float)
        if x.shape != (cfg.cascade.family.m, cfg.cascade.nscales):
            raise ConfigError(
                f"field spde.initial.wavelet_amplitudes: expected shape "
                f"({cfg.cascade.family.m}, {cfg.cascade.nscales}), got {x.shape}"
            )
        u0 = cascade.synthesize(cfg.cascade, x)
    return u0 * ini.scale


def run_spde(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.spde
    try:
        scfg = spde_config(b)
    except ValueError as exc:
        raise ConfigError(f"field spde: {exc}") from exc
    u0 = initial_field(b, scfg, cfg.master_seed)
    if b.deterministic or not scfg.noisy:
        recs = [spde.run_deterministic_limit(scfg, u0, record_every=b.record_every)]
        seeds = [None]
    else:
        seeds = [spde.trajectory_seed(cfg.master_seed, j) for j in range(b.trajectories)]

        def one(seed):
            return spde.simulate(
                scfg, u0, seed, record_every=b.record_every, raise_on_blowup=False, stop_threshold=b.stop_threshold
            )

        with ThreadPoolExecutor(max_workers=threads) as pool:
            recs = list(pool.map(one, seeds))
    w.seeds = [s for s in seeds if s is not None]
    rows_all = None
    traj = []
    for j, rec in enumerate(recs):
        header, rows = rec.rows()
        if rows_all is None:
            rows_all = (header, rows)
        w.add(f"traj{j:05d}.csv", csv_text(header, rows))
        loss = float(np.sum(rec.truncation_loss)) if rec.truncation_loss is not None else 0.0
        w.truncation_loss += loss
        traj.append(
            {
                "index": j,
                "seed": seeds[j],
                "final_l2": float(rec.l2[-1]),
                "blowup_time": rec.blowup_time,
                "truncation_loss": loss,
                "divergence_residual": rec.divergence_residual,
                "reality_residual": rec.reality_residual,
            }
        )
    w.add("summary.json", json_text({"trajectories": traj}))
    w.summary = {
        "trajectories": len(recs),
        "blowups": sum(1 for t in traj if t["blowup_time"] is not None),
        "truncation_loss_total": w.truncation_loss,
    }
    w.finish({"trajectories": traj}, rows_all)
    return EXIT_OK


def run_corrector(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.corrector
    phi = noise.single_mode(b.mode)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        errs = list(pool.map(lambda N: noise.corrector_limit_error(N, b.lambda_exp, b.nu, phi, relative=True), b.N))
    header = ["N", "relative_error"]
    rows = [[N, e] for N, e in zip(b.N, errs)]
    w.add("csv", csv_text(header, rows))
    decreasing = all(y < x for x, y in zip(errs, errs[1:]))
    w.summary = {"strictly_decreasing": decreasing, "final_error": errs[-1] if errs else None}
    w.finish({"N": b.N, "relative_error": errs, "strictly_decreasing": decreasing}, (header, rows))
    return EXIT_OK


def run_hypotheses(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.hypotheses
    try:
        which = [hypotheses.canonical_name(h) for h in b.which]
        rhos = hypotheses.parse_rho_range(b.rho)
        delta = hypotheses.as_fraction(b.delta)
    except ValueError as exc:
        raise ConfigError(f"field hypotheses: {exc}") from exc
    verdicts = [hypotheses.check_at(h, r, delta).to_json_dict() for h in which for r in rhos]
    header = ["hypothesis", "rho", "pass", "slack"]
    rows = [[v["hypothesis"], v["rho"], v["pass"], v.get("slack", "")] for v in verdicts]
    w.add("json", json_text(verdicts))
    w.summary = {"verdicts": len(verdicts), "passed": sum(v["pass"] for v in verdicts)}
    w.finish(verdicts, (header, rows))
    return EXIT_OK


def run_cancellation(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.cancellation
    casc = cascade.default_config(m=b.m, n_min=b.n_min, n_top=b.n_top)
    rng = np.random.default_rng(sub_seed(cfg.master_seed, "cancellation"))
    rows = []
    for j in range(b.seeds):
        u = cascade.random_span_field(casc, rng)
        val = abs(cascade.apply(casc, u, u).inner(u))
        rows.append([j, val, cascade.cancellation_tolerance(casc, u.norm())])
    worst = max(r[1] for r in rows)
    ok = all(r[1] <= r[2] for r in rows)
    header = ["field", "abs_cancellation", "tolerance"]
    w.add("csv", csv_text(header, rows))
    w.summary = {"max_abs_cancellation": worst, "max_ratio_to_tolerance": max(r[1] / r[2] for r in rows), "pass": ok}
    w.finish(w.summary, (header, rows))
    return EXIT_OK if ok else EXIT_INVALID


def run_acceptance(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.acceptance
    echo = (lambda line: print(line, file=sys.stderr))
    summary = acceptance.run_suite(b.suite, cfg.master_seed, only=b.criteria, echo=echo)
    doc = summary.to_json_dict()
    w.add("json", json_text(doc))
    w.summary = {"pass": summary.passed, "hash": summary.hash, "rerun_hash": summary.rerun_hash,
                 "failed": [r.number for r in summary.results if not r.passed]}
    w.finish(doc)
    return EXIT_OK if summary.passed else EXIT_INVALID


def run_constants(cfg: ExperimentConfig, w: RunWriter, threads: int) -> int:
    b = cfg.constants
    if b.path is None:
        consts = cascade.dyadic_default(b.m)
    else:
        try:
            consts = cascade.StructureConstants.from_json(Path(b.path).read_text())
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{b.path}: cannot load structure constants: {exc}") from exc
    rep = cascade.validate(consts, b.tol)
    doc = {
        "m": consts.m,
        "ok": rep.ok,
        "violations": [{"kind": v.kind, "key": list(v.key), "residual": v.residual} for v in rep.violations],
    }
    w.add("json", json_text(doc))
    w.summary = {"ok": rep.ok, "violations": len(rep.violations)}
    w.finish(doc)
    return EXIT_OK if rep.ok else EXIT_INVALID


HANDLERS = {
    "shell-run": run_shell,
    "spde-run": run_spde,
    "corrector-limit": run_corrector,
    "hypotheses": run_hypotheses,
    "cancellation-test": run_cancellation,
    "acceptance": run_acceptance,
    "validate-constants": run_constants,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """Usage errors count as validation failures (exit 1), keeping 2 for aborted runs."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--out", help="output directory, or 'json'/'csv' to print in that format")
    common.add_argument("--master-seed", type=int, help="unsigned 64-bit master seed")
    common.add_argument("--threads", type=int, help="worker threads (default: CASCADE_THREADS or 1)")

    p = _Parser(prog="cascadelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("shell-run", parents=[common], help="integrate the dyadic shell model")
    s.add_argument("--nshells", type=int)
    s.add_argument("--a", type=float, dest="a", help="dissipation exponent")
    s.add_argument("--nu-d", type=float, dest="nu_d")
    s.add_argument("--amplitude", type=float)
    s.add_argument("--n0", type=int)
    s.add_argument("--T", type=float, dest="T")
    s.add_argument("--dt", type=float)

    s = sub.add_parser("spde-run", parents=[common], help="Galerkin SPDE trajectories")
    s.add_argument("--trajectories", type=int)
    s.add_argument("--nu", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--T", type=float, dest="T")
    s.add_argument("--deterministic", action="store_true", default=None)

    s = sub.add_parser("corrector-limit", parents=[common], help="relative error of the corrector limit")
    s.add_argument("--N", type=lambda t: [int(x) for x in t.split(",")], dest="N", help="comma list")
    s.add_argument("--nu", type=float)

    s = sub.add_parser("hypotheses", parents=[common], help="feasibility of the exponent systems")
    s.add_argument("--which", type=lambda t: [x.strip() for x in t.split(",") if x.strip()])
    s.add_argument("--rho", help="value or range a..b:step")
    s.add_argument("--delta")

    s = sub.add_parser("cancellation-test", parents=[common], help="<C(u,u),u> on random span fields")
    s.add_argument("--seeds", type=int)
    s.add_argument("--m", type=int)

    s = sub.add_parser("acceptance", parents=[common], help="run the acceptance criteria")
    s.add_argument("--suite", choices=acceptance.SUITES)
    s.add_argument("--criteria", type=lambda t: [int(x) for x in t.split(",")], help="comma list")

    s = sub.add_parser("validate-constants", parents=[common], help="check symmetry and cancellation of alpha")
    s.add_argument("--constants", dest="path", help="JSON structure constants")
    s.add_argument("--m", type=int)
    s.add_argument("--tol", type=float)
    return p


_BLOCK_OF = {
    "shell-run": "shell",
    "spde-run": "spde",
    "corrector-limit": "corrector",
    "hypotheses": "hypotheses",
    "cancellation-test": "cancellation",
    "acceptance": "acceptance",
    "validate-constants": "constants",
}
_COMMON = {"command", "config", "out", "master_seed", "threads"}


def resolve_config(args: argparse.Namespace) -> tuple[ExperimentConfig, str]:
    """Config file values overridden by explicit flags; returns the config and stdout format."""
    cfg = load_config(args.config)
    block = _BLOCK_OF[args.command]
    overrides = {k: v for k, v in vars(args).items() if k not in _COMMON and v is not None}
    doc = cfg.model_dump()
    doc[block].update(overrides)
    fmt = "json"
    if args.out is not None:
        if args.out in STDOUT_FORMATS:
            fmt = args.out
            doc["out"] = None
        else:
            doc["out"] = args.out
    if args.master_seed is not None:
        doc["master_seed"] = args.master_seed
    try:
        return ExperimentConfig.model_validate(doc), fmt
    except ValidationError as exc:
        msgs = [f"field {'.'.join(map(str, e['loc']))}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("\n".join(msgs)) from exc


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, fmt = resolve_config(args)
        threads = thread_count(args.threads)
        writer = RunWriter(args.command, cfg, cfg.out, fmt)
        return HANDLERS[args.command](cfg, writer, threads)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure aborts the run
        print(f"{args.command}: aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    raise SystemExit(main())
