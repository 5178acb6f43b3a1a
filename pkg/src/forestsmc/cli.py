"""Benchmark harness and command line interface.

The bundled test model is deliberately tiny: transitions ignore the current
state and redraw from the standard normal initial law, and the potential is
the time-homogeneous ``g(x) = exp(sigma * x - sigma^2 / 2)``, so ``g(X)`` is
lognormal with mean 1 and variance ``exp(sigma^2) - 1``.  That makes the
normalizing-constant estimate an exact martingale (its expectation is 1 at
every step) and gives the one-step variance identity

    Var(Z_n / Z_{n-1} | past) = (exp(sigma^2) - 1) / ess(W_{n-1})

both of which the ``verify-*`` subcommands check by direct Monte Carlo.

Subcommands
-----------
run                   grid of (strategy, tau, sigma) runs; writes a per-step
                      CSV (replicate,n,strategy,tau,sigma,ess,degree,
                      z_estimate) and a summary CSV.
verify-variance       frozen-weight one-step replication against the
                      variance identity.
verify-unbiased       replicate full runs and compare mean Z against 1.
sweep-fixed-product   hold N*tau fixed while growing N; reports how the mean
                      interaction degree falls.

Configuration comes from flags, optionally layered over a flat TOML file
(``--config``); explicit flags win.  All outputs are reproducible from the
seed: rows are sorted deterministically and every random draw flows through
the stream scheme described in `forestsmc.engine`.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys as _sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .engine import (
    CH_VERIFY,
    RESAMPLE_MODES,
    ess_current,
    estimate_z,
    rng_for,
    run_filter,
)
from .selection import STRATEGIES
from .tree import default_branching

__all__ = [
    "ToyModel",
    "toy_model",
    "ExperimentConfig",
    "SummaryRow",
    "VarianceReport",
    "UnbiasednessReport",
    "run_experiment",
    "verify_variance",
    "verify_unbiased",
    "fixed_product_sweep",
    "load_config",
    "main",
]

DEFAULT_TAUS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 224 / 225)
DEFAULT_SIGMAS = (0.5, 1.0)
DEFAULT_STRATEGIES = ("pairing", "matching", "arpf")
DEFAULT_BRANCHING = (4, 4, 16)
DEFAULT_SWEEP_GRID = (512, 1024, 2048, 4096)

STEP_COLUMNS = ("replicate", "n", "strategy", "tau", "sigma", "ess", "degree", "z_estimate")
SUMMARY_COLUMNS = ("strategy", "tau", "sigma", "d_bar", "ess_bar", "z_mean", "z_var", "runtime")


@dataclass(frozen=True)
class ToyModel:
    """Normal states with multiplicative lognormal potentials.

    ``sample_transition`` discards the parent state, so every step draws a
    fresh standard normal; ``potential`` ignores the step index.
    """

    sigma: float

    def sample_initial(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(n)

    def sample_transition(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal(x.shape[0])

    def potential(self, n: int, x: np.ndarray) -> np.ndarray:
        return np.exp(self.sigma * x - 0.5 * self.sigma * self.sigma)

    def log_potential(self, n: int, x: np.ndarray) -> np.ndarray:
        return self.sigma * x - 0.5 * self.sigma * self.sigma


def toy_model(sigma: float) -> ToyModel:
    """The benchmark model at noise scale ``sigma > 0``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return ToyModel(float(sigma))


@dataclass(frozen=True)
class ExperimentConfig:
    """A grid of benchmark runs plus output and reproducibility settings."""

    n_particles: int = 256
    steps: int = 200
    taus: tuple[float, ...] = DEFAULT_TAUS
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    branching: tuple[int, ...] | None = DEFAULT_BRANCHING
    seed: int = 0
    replicates: int = 1
    out: str = "results"
    resample_mode: str = "categorical"
    permute: bool = True
    log_space: bool = False

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.replicates < 1:
            raise ValueError("replicates must be positive")
        if not self.taus or any(not 0.0 <= t <= 1.0 for t in self.taus):
            raise ValueError("every tau must lie in [0, 1]")
        if not self.sigmas or any(s <= 0 for s in self.sigmas):
            raise ValueError("every sigma must be positive")
        if not self.strategies or any(s not in STRATEGIES for s in self.strategies):
            raise ValueError(f"strategies must come from {STRATEGIES}")
        if self.resample_mode not in RESAMPLE_MODES:
            raise ValueError(f"resample_mode must come from {RESAMPLE_MODES}")
        if self.branching is not None and math.prod(self.branching) != self.n_particles:
            raise ValueError("product of branching factors must equal n_particles")

    def branching_for(self, n_particles: int | None = None) -> tuple[int, ...]:
        n = self.n_particles if n_particles is None else n_particles
        if self.branching is not None and math.prod(self.branching) == n:
            return self.branching
        return default_branching(n)


@dataclass(frozen=True)
class SummaryRow:
    """Aggregates of one (strategy, tau, sigma) grid cell."""

    strategy: str
    tau: float
    sigma: float
    d_bar: float
    ess_bar: float
    z_mean: float
    z_var: float
    runtime: float


def run_experiment(cfg: ExperimentConfig) -> tuple[Path, Path]:
    """Run the whole grid and write ``steps.csv`` and ``summary.csv``.

    The per-step CSV has columns ``replicate,n,strategy,tau,sigma,ess,
    degree,z_estimate`` and is byte-identical across runs with equal
    configuration.  The summary aggregates each grid cell: ``d_bar`` and
    ``ess_bar`` average the degree and ESS over all steps and replicates,
    ``z_mean``/``z_var`` are moments of the final-step estimate across
    replicates, and ``runtime`` is the wall-clock time of the cell (the one
    column that varies between repeated invocations).
    """
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    step_rows: list[tuple] = []
    summaries: list[SummaryRow] = []
    branching = cfg.branching_for()
    for s_i, strat in enumerate(cfg.strategies):
        for t_i, tau in enumerate(cfg.taus):
            for g_i, sigma in enumerate(cfg.sigmas):
                model = toy_model(sigma)
                degrees: list[float] = []
                esses: list[float] = []
                finals: list[float] = []
                started = time.perf_counter()
                for rep in range(cfg.replicates):
                    sys_, records = run_filter(
                        model,
                        cfg.n_particles,
                        cfg.steps,
                        tau,
                        strat,
                        branching=branching,
                        seed=cfg.seed,
                        stream=(s_i, t_i, g_i, rep),
                        resample_mode=cfg.resample_mode,
                        log_space=cfg.log_space,
                        permute=cfg.permute,
                    )
                    for r in records:
                        step_rows.append(
                            (rep, r.n, strat, tau, sigma, r.ess, r.degree, r.z_estimate)
                        )
                        degrees.append(r.degree)
                        esses.append(r.ess)
                    finals.append(estimate_z(sys_))
                elapsed = time.perf_counter() - started
                fin = np.asarray(finals)
                summaries.append(
                    SummaryRow(
                        strategy=strat,
                        tau=tau,
                        sigma=sigma,
                        d_bar=float(np.mean(degrees)) if degrees else float("nan"),
                        ess_bar=float(np.mean(esses)) if esses else float("nan"),
                        z_mean=float(fin.mean()),
                        z_var=float(fin.var(ddof=1)) if fin.size > 1 else 0.0,
                        runtime=elapsed,
                    )
                )
    step_rows.sort(key=lambda row: (row[2], row[3], row[4], row[0], row[1]))
    steps_path = out_dir / "steps.csv"
    with steps_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STEP_COLUMNS)
        writer.writerows(step_rows)
    summary_path = out_dir / "summary.csv"
    with summary_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            writer.writerow(
                (s.strategy, s.tau, s.sigma, s.d_bar, s.ess_bar, s.z_mean, s.z_var, s.runtime)
            )
    return steps_path, summary_path


@dataclass(frozen=True)
class VarianceReport:
    """Outcome of the one-step conditional variance check."""

    sigma: float
    tau: float
    strategy: str
    pilot_steps: int
    m_replicates: int
    ess_prev: float
    target_variance: float
    sample_variance: float
    std_error: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"frozen weights after {self.pilot_steps} pilot steps "
            f"(strategy={self.strategy}, tau={self.tau}, sigma={self.sigma})",
            f"previous-step ESS: {self.ess_prev:.6g}",
            f"target variance (exp(sigma^2)-1)/ESS: {self.target_variance:.6g}",
            f"sample variance over {self.m_replicates} replicates: {self.sample_variance:.6g}"
            f" (std error {self.std_error:.3g})",
            f"verdict: {'PASS' if self.passed else 'FAIL'} at 3 standard errors",
        ]


def verify_variance(
    cfg: ExperimentConfig,
    m_replicates: int = 100_000,
    pilot_steps: int | None = None,
) -> VarianceReport:
    """Check the one-step variance identity by frozen-weight replication.

    A pilot run produces weights ``W``; the next-step estimate ratio
    ``sum(W * g(X)) / sum(W)`` with fresh initial-law states ``X`` is then
    replicated ``m_replicates`` times, and its sample variance is compared
    against ``(exp(sigma^2) - 1) / ess(W)`` at 3 standard errors of the
    variance estimator.  Uses the first tau/sigma/strategy of the grid.
    """
    if m_replicates < 2:
        raise ValueError("need at least two replicates")
    tau, sigma, strat = cfg.taus[0], cfg.sigmas[0], cfg.strategies[0]
    pilot = cfg.steps if pilot_steps is None else int(pilot_steps)
    model = toy_model(sigma)
    sys_, _ = run_filter(
        model,
        cfg.n_particles,
        pilot,
        tau,
        strat,
        branching=cfg.branching_for(),
        seed=cfg.seed,
        resample_mode=cfg.resample_mode,
        log_space=cfg.log_space,
        permute=cfg.permute,
    )
    if sys_.log_space:
        w = np.exp(sys_.log_weights - sys_.log_weights.max())
    else:
        w = sys_.weights
    ess_prev = ess_current(sys_)
    target = math.expm1(sigma * sigma) / ess_prev
    w_norm = w / w.sum()
    rng = rng_for(cfg.seed, CH_VERIFY, 0)
    ratios = np.empty(m_replicates)
    chunk = max(1, min(m_replicates, 8_388_608 // cfg.n_particles))
    done = 0
    while done < m_replicates:
        take = min(chunk, m_replicates - done)
        x = rng.standard_normal((take, cfg.n_particles))
        g = np.exp(sigma * x - 0.5 * sigma * sigma)
        ratios[done : done + take] = g @ w_norm
        done += take
    s2 = float(ratios.var(ddof=1))
    centered = ratios - ratios.mean()
    m4 = float(np.mean(centered**4))
    se = math.sqrt(max(m4 - s2 * s2, 0.0) / m_replicates)
    passed = abs(s2 - target) <= 3.0 * se
    return VarianceReport(
        sigma=sigma,
        tau=tau,
        strategy=strat,
        pilot_steps=pilot,
        m_replicates=m_replicates,
        ess_prev=ess_prev,
        target_variance=target,
        sample_variance=s2,
        std_error=se,
        passed=passed,
    )


@dataclass(frozen=True)
class UnbiasednessReport:
    """Outcome of the normalizing-constant unbiasedness check."""

    sigma: float
    tau: float
    strategy: str
    steps: int
    replicates: int
    z_mean: float
    std_error: float
    passed: bool

    def lines(self) -> list[str]:
        return [
            f"{self.replicates} replicates of {self.steps} steps "
            f"(strategy={self.strategy}, tau={self.tau}, sigma={self.sigma})",
            f"mean final Z estimate: {self.z_mean:.6g} (std error {self.std_error:.3g})",
            f"verdict: {'PASS' if self.passed else 'FAIL'} against 1 at 3 standard errors",
        ]


def verify_unbiased(cfg: ExperimentConfig, replicates: int | None = None) -> UnbiasednessReport:
    """Replicate full runs and compare the mean final Z estimate against 1.

    Uses the first tau/sigma/strategy of the grid; each replicate is an
    independent stream of the configured seed.
    """
    r = cfg.replicates if replicates is None else int(replicates)
    tau, sigma, strat = cfg.taus[0], cfg.sigmas[0], cfg.strategies[0]
    model = toy_model(sigma)
    finals = np.empty(r)
    for rep in range(r):
        sys_, _ = run_filter(
            model,
            cfg.n_particles,
            cfg.steps,
            tau,
            strat,
            branching=cfg.branching_for(),
            seed=cfg.seed,
            stream=(rep,),
            resample_mode=cfg.resample_mode,
            log_space=cfg.log_space,
            permute=cfg.permute,
        )
        finals[rep] = estimate_z(sys_)
    mean = float(finals.mean())
    se = float(finals.std(ddof=1) / math.sqrt(r)) if r > 1 else 0.0
    passed = abs(mean - 1.0) <= 3.0 * se if se > 0 else mean == 1.0
    return UnbiasednessReport(
        sigma=sigma,
        tau=tau,
        strategy=strat,
        steps=cfg.steps,
        replicates=r,
        z_mean=mean,
        std_error=se,
        passed=passed,
    )


def fixed_product_sweep(
    cfg: ExperimentConfig,
    target: float,
    n_grid=DEFAULT_SWEEP_GRID,
) -> tuple[Path, list[SummaryRow]]:
    """Sweep the particle count at a fixed ESS floor ``N * tau = target``.

    Runs the matching strategy with ``tau = target / N`` for every N in the
    grid (tau must not exceed 1, i.e. the target may not exceed any N) and
    writes ``sweep.csv`` with the mean degree per N.
    """
    n_grid = tuple(int(n) for n in n_grid)
    if not n_grid:
        raise ValueError("empty particle-count grid")
    bad = [n for n in n_grid if target > n]
    if bad:
        raise ValueError(f"target {target} exceeds particle counts {bad}")
    sigma = cfg.sigmas[0]
    model = toy_model(sigma)
    rows: list[SummaryRow] = []
    for n_i, n in enumerate(n_grid):
        tau = target / n
        degrees: list[float] = []
        esses: list[float] = []
        finals: list[float] = []
        started = time.perf_counter()
        for rep in range(cfg.replicates):
            sys_, records = run_filter(
                model,
                n,
                cfg.steps,
                tau,
                "matching",
                branching=cfg.branching_for(n),
                seed=cfg.seed,
                stream=(n_i, rep),
                resample_mode=cfg.resample_mode,
                log_space=cfg.log_space,
                permute=cfg.permute,
            )
            degrees.extend(r.degree for r in records)
            esses.extend(r.ess for r in records)
            finals.append(estimate_z(sys_))
        fin = np.asarray(finals)
        rows.append(
            SummaryRow(
                strategy="matching",
                tau=tau,
                sigma=sigma,
                d_bar=float(np.mean(degrees)),
                ess_bar=float(np.mean(esses)),
                z_mean=float(fin.mean()),
                z_var=float(fin.var(ddof=1)) if fin.size > 1 else 0.0,
                runtime=time.perf_counter() - started,
            )
        )
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "sweep.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("n_particles",) + SUMMARY_COLUMNS[1:])
        for n, s in zip(n_grid, rows):
            writer.writerow((n, s.tau, s.sigma, s.d_bar, s.ess_bar, s.z_mean, s.z_var, s.runtime))
    return path, rows


# -- configuration loading and flag parsing --------------------------------


def _parse_fraction(token: str) -> float:
    token = token.strip()
    if "/" in token:
        num, den = token.split("/", 1)
        return float(num) / float(den)
    return float(token)


def _float_list(value) -> tuple[float, ...]:
    if isinstance(value, str):
        return tuple(_parse_fraction(t) for t in value.split(",") if t.strip())
    if isinstance(value, (int, float)):
        return (float(value),)
    return tuple(float(v) for v in value)


def _int_list(value) -> tuple[int, ...]:
    if isinstance(value, str):
        return tuple(int(t) for t in value.split(",") if t.strip())
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def _str_list(value) -> tuple[str, ...]:
    if isinstance(value, str):
        return tuple(t.strip() for t in value.split(",") if t.strip())
    return tuple(str(v) for v in value)


_CONFIG_KEYS = {
    "n_particles": int,
    "steps": int,
    "tau": _float_list,
    "sigma": _float_list,
    "strategy": _str_list,
    "branching": _int_list,
    "seed": int,
    "replicates": int,
    "out": str,
    "resample_mode": str,
    "permute": bool,
    "log_space": bool,
    "m_replicates": int,
    "pilot_steps": int,
    "target": float,
    "n_grid": _int_list,
}


def load_config(path) -> dict:
    """Read a flat TOML key-value file of run settings.

    Keys mirror the command line flags with underscores (``n_particles``,
    ``tau``, ...).  List-valued settings accept TOML arrays or
    comma-separated strings; ``tau`` entries may be fractions like
    ``"224/225"``.
    """
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    out = {}
    for key, value in raw.items():
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        conv = _CONFIG_KEYS[key]
        out[key] = conv(value) if conv is not bool else bool(value)
    return out


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="flat TOML settings file; flags win")
    parser.add_argument("--n-particles", type=int, default=None, help="particle count N")
    parser.add_argument("--steps", type=int, default=None, help="number of filter steps")
    parser.add_argument("--tau", type=str, default=None, help="comma list of ESS floors in [0,1]; fractions like 224/225 allowed")
    parser.add_argument("--sigma", type=str, default=None, help="comma list of potential noise scales")
    parser.add_argument("--strategy", type=str, default=None, help=f"comma list from {', '.join(STRATEGIES)}")
    parser.add_argument("--branching", type=str, default=None, help="comma list of per-level child counts, product = N")
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--replicates", type=int, default=None, help="independent replicates per grid cell")
    parser.add_argument("--out", type=str, default=None, help="output directory for CSV files")
    parser.add_argument("--resample-mode", type=str, default=None, choices=RESAMPLE_MODES, help="ancestor draw mechanism")
    parser.add_argument("--log-space", action="store_true", default=None, help="store weights in log space")
    parser.add_argument("--no-permute", action="store_true", default=None, help="keep the identity particle-to-leaf assignment every step")


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    settings: dict = {}
    if args.config:
        settings.update(load_config(args.config))
    if args.n_particles is not None:
        settings["n_particles"] = args.n_particles
    if args.steps is not None:
        settings["steps"] = args.steps
    if args.tau is not None:
        settings["tau"] = _float_list(args.tau)
    if args.sigma is not None:
        settings["sigma"] = _float_list(args.sigma)
    if args.strategy is not None:
        settings["strategy"] = _str_list(args.strategy)
    if args.branching is not None:
        settings["branching"] = _int_list(args.branching)
    if args.seed is not None:
        settings["seed"] = args.seed
    if args.replicates is not None:
        settings["replicates"] = args.replicates
    if args.out is not None:
        settings["out"] = args.out
    if args.resample_mode is not None:
        settings["resample_mode"] = args.resample_mode
    if args.log_space is not None:
        settings["log_space"] = True
    if args.no_permute is not None:
        settings["permute"] = False

    n_particles = settings.get("n_particles", 256)
    branching = settings.get("branching")
    if branching is None:
        branching = DEFAULT_BRANCHING if n_particles == 256 else default_branching(n_particles)
    return ExperimentConfig(
        n_particles=n_particles,
        steps=settings.get("steps", 200),
        taus=tuple(settings.get("tau", DEFAULT_TAUS)),
        sigmas=tuple(settings.get("sigma", DEFAULT_SIGMAS)),
        strategies=tuple(settings.get("strategy", DEFAULT_STRATEGIES)),
        branching=tuple(branching),
        seed=settings.get("seed", 0),
        replicates=settings.get("replicates", 1),
        out=settings.get("out", "results"),
        resample_mode=settings.get("resample_mode", "categorical"),
        permute=settings.get("permute", True),
        log_space=settings.get("log_space", False),
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="forestsmc",
        description="Benchmark harness for adaptive forest-structured particle interaction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the (strategy, tau, sigma) grid and write CSVs")
    _add_common_flags(p_run)

    p_var = sub.add_parser("verify-variance", help="check the one-step conditional variance identity")
    _add_common_flags(p_var)
    p_var.add_argument("--m-replicates", type=int, default=None, help="one-step replications (default 100000)")
    p_var.add_argument("--pilot-steps", type=int, default=None, help="steps before freezing weights (default: --steps)")

    p_unb = sub.add_parser("verify-unbiased", help="check mean Z against 1 over replicate runs")
    _add_common_flags(p_unb)

    p_sweep = sub.add_parser("sweep-fixed-product", help="grow N at fixed N*tau and record the mean degree")
    _add_common_flags(p_sweep)
    p_sweep.add_argument("--target", type=float, default=None, help="fixed value of N*tau (default 512)")
    p_sweep.add_argument("--n-grid", type=str, default=None, help="comma list of particle counts")

    args = parser.parse_args(argv)
    cfg = _build_config(args)

    if args.command == "run":
        steps_path, summary_path = run_experiment(cfg)
        print(f"wrote {steps_path}")
        print(f"wrote {summary_path}")
        return 0

    if args.command == "verify-variance":
        file_cfg = load_config(args.config) if args.config else {}
        m = args.m_replicates or file_cfg.get("m_replicates", 100_000)
        pilot = args.pilot_steps if args.pilot_steps is not None else file_cfg.get("pilot_steps")
        report = verify_variance(cfg, m_replicates=m, pilot_steps=pilot)
        print("\n".join(report.lines()))
        return 0 if report.passed else 1

    if args.command == "verify-unbiased":
        report = verify_unbiased(cfg)
        print("\n".join(report.lines()))
        return 0 if report.passed else 1

    if args.command == "sweep-fixed-product":
        file_cfg = load_config(args.config) if args.config else {}
        target = args.target if args.target is not None else file_cfg.get("target", 512.0)
        grid = _int_list(args.n_grid) if args.n_grid else file_cfg.get("n_grid", DEFAULT_SWEEP_GRID)
        path, rows = fixed_product_sweep(cfg, target, grid)
        for n, row in zip(grid, rows):
            print(f"N={n:6d}  tau={row.tau:.6g}  mean degree={row.d_bar:.4f}")
        print(f"wrote {path}")
        return 0

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    _sys.exit(main())
