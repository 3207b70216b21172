"""Experiment harness: convergence curves, breakdown sweep, slope fits.

Every experiment is a grid of independent cells. A cell owns one corrupted
data stream and runs every requested estimator on it, so estimators are
compared under common random numbers. Cells can execute in parallel; the
aggregation step is a pure reduction over the returned records and can be
re-run on stored records without changing a single byte of output.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .core import (
    CONSTANT,
    Huber,
    Identity,
    INV_SQRT,
    L1,
    L2,
    RegressionModel,
    RunRecord,
    Spectrum,
    StepSchedule,
    derive_seed,
    no_outliers,
    short_digest,
    substream,
)
from .datagen import inject_outliers, multi_pass_stream, sample_stream, tiered_contamination
from .optimizer import default_checkpoints, default_gamma0, oracle_ls_run, run

CONVERGENCE_LOSSES = ("l1", "l2", "huber", "oracle")
BREAKDOWN_ESTIMATORS = ("l1", "l2", "huber", "huber_x30", "oracle")
COVARIANCE_NAMES = ("identity", "spectrum")
PRESETS = ("tiered", "point")

DEFAULT_ETA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8)


@dataclass(frozen=True)
class ConvergenceConfig:
    """Grid definition for the convergence-rate experiment."""

    n_samples: int = 100000
    dim: int = 10
    sigma: float = 1.0
    eta: float = 0.2
    passes: int = 5
    replications: int = 5
    losses: Tuple[str, ...] = CONVERGENCE_LOSSES
    covariances: Tuple[str, ...] = COVARIANCE_NAMES
    preset: str = "tiered"
    outlier_value: float = 1000.0
    huber_tau: float = 1.0
    gamma0: Optional[float] = None  # None: 1 / trace(H) per covariance
    seed: int = 0


@dataclass(frozen=True)
class BreakdownConfig:
    """Grid definition for the breakdown sweep over corruption levels."""

    n_samples: int = 100000
    dim: int = 10
    sigma: float = 1.0
    eta_grid: Tuple[float, ...] = DEFAULT_ETA_GRID
    passes: int = 1
    replications: int = 5
    estimators: Tuple[str, ...] = BREAKDOWN_ESTIMATORS
    covariance: str = "identity"
    preset: str = "tiered"
    outlier_value: float = 1000.0
    huber_tau: float = 1.0
    gamma0: Optional[float] = None
    seed: int = 0


# ---------------------------------------------------------------------------
# config parsing


def _want_int(mapping, key, default, errors, minimum=1):
    raw = mapping.get(key)
    if raw is None:
        return default
    try:
        value = int(str(raw).strip())
    except ValueError:
        errors.append(f"{key}: expected an integer, got {raw!r}")
        return default
    if value < minimum:
        errors.append(f"{key}: must be >= {minimum}, got {value}")
        return default
    return value


def _want_float(mapping, key, default, errors, low=None, high=None, low_open=False, high_open=False):
    raw = mapping.get(key)
    if raw is None:
        return default
    try:
        value = float(str(raw).strip())
    except ValueError:
        errors.append(f"{key}: expected a number, got {raw!r}")
        return default
    if not math.isfinite(value):
        errors.append(f"{key}: must be finite, got {value!r}")
        return default
    if low is not None and (value < low or (low_open and value == low)):
        errors.append(f"{key}: must be {'>' if low_open else '>='} {low}, got {value!r}")
        return default
    if high is not None and (value > high or (high_open and value == high)):
        errors.append(f"{key}: must be {'<' if high_open else '<='} {high}, got {value!r}")
        return default
    return value


def _want_names(mapping, key, default, errors, allowed):
    raw = mapping.get(key)
    if raw is None:
        return default
    names = tuple(part.strip() for part in str(raw).split(",") if part.strip())
    if not names:
        errors.append(f"{key}: empty list")
        return default
    bad = [n for n in names if n not in allowed]
    if bad:
        errors.append(f"{key}: unknown entries {bad}, allowed {sorted(allowed)}")
        return default
    if len(set(names)) != len(names):
        errors.append(f"{key}: duplicate entries in {names}")
        return default
    return names


def convergence_config_from_mapping(mapping: Mapping[str, str]):
    """Parse a flat key/value mapping; returns (config, error list)."""
    errors: List[str] = []
    known = {
        "n_samples", "dim", "sigma", "eta", "passes", "replications",
        "losses", "covariances", "preset", "outlier_value", "huber_tau",
        "gamma0", "seed",
    }
    for key in mapping:
        if key not in known:
            errors.append(f"{key}: unknown key")
    cfg = ConvergenceConfig(
        n_samples=_want_int(mapping, "n_samples", 100000, errors, minimum=4),
        dim=_want_int(mapping, "dim", 10, errors),
        sigma=_want_float(mapping, "sigma", 1.0, errors, low=0.0, low_open=True),
        eta=_want_float(mapping, "eta", 0.2, errors, low=0.0, high=1.0, high_open=True),
        passes=_want_int(mapping, "passes", 5, errors),
        replications=_want_int(mapping, "replications", 5, errors),
        losses=_want_names(mapping, "losses", CONVERGENCE_LOSSES, errors, set(CONVERGENCE_LOSSES)),
        covariances=_want_names(
            mapping, "covariances", COVARIANCE_NAMES, errors, set(COVARIANCE_NAMES)
        ),
        preset=str(mapping.get("preset", "tiered")).strip(),
        outlier_value=_want_float(mapping, "outlier_value", 1000.0, errors),
        huber_tau=_want_float(mapping, "huber_tau", 1.0, errors, low=0.0, low_open=True),
        gamma0=_want_float(mapping, "gamma0", None, errors, low=0.0, low_open=True),
        seed=_want_int(mapping, "seed", 0, errors, minimum=0),
    )
    if cfg.preset not in PRESETS:
        errors.append(f"preset: unknown preset {cfg.preset!r}, allowed {list(PRESETS)}")
    return (None if errors else cfg), errors


def breakdown_config_from_mapping(mapping: Mapping[str, str]):
    """Parse a flat key/value mapping; returns (config, error list)."""
    errors: List[str] = []
    known = {
        "n_samples", "dim", "sigma", "eta_grid", "passes", "replications",
        "estimators", "covariance", "preset", "outlier_value", "huber_tau",
        "gamma0", "seed",
    }
    for key in mapping:
        if key not in known:
            errors.append(f"{key}: unknown key")

    eta_grid: Tuple[float, ...] = DEFAULT_ETA_GRID
    raw = mapping.get("eta_grid")
    if raw is not None:
        parts = [p.strip() for p in str(raw).split(",") if p.strip()]
        if not parts:
            errors.append("eta_grid: empty grid")
        else:
            values = []
            for p in parts:
                try:
                    v = float(p)
                except ValueError:
                    errors.append(f"eta_grid: expected a number, got {p!r}")
                    continue
                if not (0.0 <= v < 1.0):
                    errors.append(f"eta_grid: entries must lie in [0, 1), got {v!r}")
                    continue
                values.append(v)
            if values and values != sorted(values):
                errors.append(f"eta_grid: must be ascending, got {values}")
            if len(set(values)) != len(values):
                errors.append(f"eta_grid: duplicate entries in {values}")
            if values:
                eta_grid = tuple(values)

    covariance = str(mapping.get("covariance", "identity")).strip()
    if covariance not in COVARIANCE_NAMES:
        errors.append(f"covariance: unknown name {covariance!r}, allowed {list(COVARIANCE_NAMES)}")
    cfg = BreakdownConfig(
        n_samples=_want_int(mapping, "n_samples", 100000, errors, minimum=4),
        dim=_want_int(mapping, "dim", 10, errors),
        sigma=_want_float(mapping, "sigma", 1.0, errors, low=0.0, low_open=True),
        eta_grid=eta_grid,
        passes=_want_int(mapping, "passes", 1, errors),
        replications=_want_int(mapping, "replications", 5, errors),
        estimators=_want_names(
            mapping, "estimators", BREAKDOWN_ESTIMATORS, errors, set(BREAKDOWN_ESTIMATORS)
        ),
        covariance=covariance if covariance in COVARIANCE_NAMES else "identity",
        preset=str(mapping.get("preset", "tiered")).strip(),
        outlier_value=_want_float(mapping, "outlier_value", 1000.0, errors),
        huber_tau=_want_float(mapping, "huber_tau", 1.0, errors, low=0.0, low_open=True),
        gamma0=_want_float(mapping, "gamma0", None, errors, low=0.0, low_open=True),
        seed=_want_int(mapping, "seed", 0, errors, minimum=0),
    )
    return (None if errors else cfg), errors


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class Table:
    """Delimited numeric table with `#` comment lines above the header."""

    name: str
    columns: Tuple[str, ...]
    rows: Tuple[Tuple[object, ...], ...]
    comments: Tuple[str, ...] = ()

    def to_lines(self) -> List[str]:
        lines = [f"# {c}" for c in self.comments]
        lines.append(",".join(self.columns))
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"row width {len(row)} != header width {len(self.columns)}")
            lines.append(",".join(repr(v) for v in row))
        return lines

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")


def mean_run_record(records: Sequence[RunRecord]) -> RunRecord:
    """Average the error curves of runs sharing a checkpoint grid."""
    if not records:
        raise ValueError("no records to average")
    steps = records[0].steps
    for rec in records[1:]:
        if not np.array_equal(rec.steps, steps):
            raise ValueError("records disagree on checkpoint steps")
    return RunRecord(
        steps=steps.copy(),
        err_h=np.mean([r.err_h for r in records], axis=0),
        err_2=np.mean([r.err_2 for r in records], axis=0),
        err_last_h=np.mean([r.err_last_h for r in records], axis=0),
        config_digest=short_digest(["mean", len(records)] + [r.config_digest for r in records]),
        seed=records[0].seed,
        theta_bar=np.mean([r.theta_bar for r in records], axis=0),
        theta_last=np.mean([r.theta_last for r in records], axis=0),
        min_abs_residual=min(r.min_abs_residual for r in records),
    )


def convergence_table(name: str, records: Sequence[RunRecord], comments=()) -> Table:
    mean = mean_run_record(records)
    rows = tuple(
        (int(mean.steps[i]), float(mean.err_h[i]), float(mean.err_2[i]), float(mean.err_last_h[i]))
        for i in range(mean.steps.size)
    )
    extra = (f"records={len(records)}", f"digest={mean.config_digest}")
    return Table(name, ("n", "err_H", "err_2", "err_last_H"), rows, tuple(comments) + extra)


# ---------------------------------------------------------------------------
# experiment cells


def _covariance_spec(name: str, dim: int, master_seed: int):
    if name == "identity":
        return Identity(dim)
    if name == "spectrum":
        eigs = tuple(1.0 / k for k in range(1, dim + 1))
        return Spectrum(eigs, basis_seed=derive_seed(master_seed, "basis", name))
    raise ValueError(f"unknown covariance name {name!r}")


def _clean_model(dim: int, sigma: float, cov_name: str, master_seed: int) -> RegressionModel:
    theta_star = np.ones(dim) / math.sqrt(dim)
    return RegressionModel(theta_star, _covariance_spec(cov_name, dim, master_seed), sigma, no_outliers())


def _contamination(n: int, eta: float, preset: str, value: float, seed: int) -> np.ndarray:
    if eta == 0.0:
        return np.zeros(n)
    if preset == "tiered":
        return tiered_contamination(n, eta, seed)
    if preset == "point":
        flags = substream(seed, "flags").random(n) < eta
        return np.where(flags, value, 0.0)
    raise ValueError(f"unknown preset {preset!r}")


def _corrupted_stream(model, n, eta, preset, value, passes, seed):
    clean = sample_stream(model, n, derive_seed(seed, "data"))
    b = _contamination(n, eta, preset, value, derive_seed(seed, "contam"))
    corrupted = inject_outliers(clean, b)
    return multi_pass_stream(corrupted, passes, derive_seed(seed, "order"))


def _loss_for(name: str, tau: float):
    if name == "l1":
        return L1()
    if name == "l2":
        return L2()
    if name == "huber":
        return Huber(tau)
    if name == "huber_x30":
        return Huber(30.0 * tau)
    raise ValueError(f"unknown estimator {name!r}")


def _run_estimators(names, stream, model, gamma0, tau, n_steps, cell_seed) -> Dict[str, RunRecord]:
    g0 = default_gamma0(model) if gamma0 is None else gamma0
    out = {}
    for name in names:
        if name == "oracle":
            out[name] = oracle_ls_run(stream, 0.5 * g0, model=model)
        else:
            out[name] = run(
                iter(stream),
                _loss_for(name, tau),
                StepSchedule(g0, INV_SQRT),
                n_steps,
                model=model,
                seed=cell_seed,
            )
    return out


def _convergence_cell(args):
    cfg, cov_name, rep = args
    cell_seed = derive_seed(cfg.seed, "cell", cov_name, rep)
    model = _clean_model(cfg.dim, cfg.sigma, cov_name, cfg.seed)
    stream = _corrupted_stream(
        model, cfg.n_samples, cfg.eta, cfg.preset, cfg.outlier_value, cfg.passes, cell_seed
    )
    records = _run_estimators(
        cfg.losses, stream, model, cfg.gamma0, cfg.huber_tau,
        cfg.n_samples * cfg.passes, cell_seed,
    )
    return cov_name, rep, records


def _breakdown_cell(args):
    cfg, eta, rep = args
    cell_seed = derive_seed(cfg.seed, "cell", repr(eta), rep)
    model = _clean_model(cfg.dim, cfg.sigma, cfg.covariance, cfg.seed)
    stream = _corrupted_stream(
        model, cfg.n_samples, eta, cfg.preset, cfg.outlier_value, cfg.passes, cell_seed
    )
    records = _run_estimators(
        cfg.estimators, stream, model, cfg.gamma0, cfg.huber_tau,
        cfg.n_samples * cfg.passes, cell_seed,
    )
    return eta, rep, records


def _run_cells(worker, cells, jobs):
    if jobs is not None and jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
            done = list(pool.map(worker, cells))
    else:
        done = [worker(cell) for cell in cells]
    return done


@dataclass(frozen=True)
class ExperimentResult:
    """Aggregated tables plus the raw records and seeds behind them."""

    tables: Tuple[Table, ...]
    records: Mapping[str, Tuple[RunRecord, ...]]
    cell_seeds: Tuple[Tuple[str, int], ...]
    config_digest: str


def _config_digest(cfg) -> str:
    fields = [f"{k}={v!r}" for k, v in sorted(vars(cfg).items())]
    return short_digest([type(cfg).__name__] + fields)


def convergence_experiment(config: ConvergenceConfig, jobs: int = 1) -> ExperimentResult:
    """Mean error curves for each (loss, covariance) pair of the config."""
    cells = [(config, cov, rep) for cov in config.covariances for rep in range(config.replications)]
    done = _run_cells(_convergence_cell, cells, jobs)
    by_cell = {(cov, rep): recs for cov, rep, recs in done}

    digest = _config_digest(config)
    tables = []
    records: Dict[str, Tuple[RunRecord, ...]] = {}
    for cov in config.covariances:
        for loss in config.losses:
            cell_records = tuple(by_cell[(cov, rep)][loss] for rep in range(config.replications))
            key = f"{loss}@{cov}"
            records[key] = cell_records
            comments = (
                f"experiment=convergence loss={loss} covariance={cov}",
                f"config={digest} seed={config.seed}",
            )
            tables.append(convergence_table(key, cell_records, comments))
    seeds = tuple(
        (f"{cov}/rep{rep}", derive_seed(config.seed, "cell", cov, rep))
        for cov in config.covariances
        for rep in range(config.replications)
    )
    return ExperimentResult(tuple(tables), records, seeds, digest)


def breakdown_experiment(config: BreakdownConfig, jobs: int = 1) -> ExperimentResult:
    """Final mean errors per corruption level, one row per eta."""
    cells = [(config, eta, rep) for eta in config.eta_grid for rep in range(config.replications)]
    done = _run_cells(_breakdown_cell, cells, jobs)
    by_cell = {(eta, rep): recs for eta, rep, recs in done}

    digest = _config_digest(config)
    rows = []
    records: Dict[str, Tuple[RunRecord, ...]] = {}
    for eta in config.eta_grid:
        row = [float(eta)]
        for est in config.estimators:
            cell_records = tuple(by_cell[(eta, rep)][est] for rep in range(config.replications))
            records[f"{est}@eta={eta!r}"] = cell_records
            row.append(float(np.mean([rec.final_err_h for rec in cell_records])))
        rows.append(tuple(row))
    table = Table(
        "breakdown",
        ("eta",) + tuple(config.estimators),
        tuple(rows),
        (
            f"experiment=breakdown covariance={config.covariance} preset={config.preset}",
            f"config={digest} seed={config.seed}",
        ),
    )
    seeds = tuple(
        (f"eta={eta!r}/rep{rep}", derive_seed(config.seed, "cell", repr(eta), rep))
        for eta in config.eta_grid
        for rep in range(config.replications)
    )
    return ExperimentResult((table,), records, seeds, digest)


# ---------------------------------------------------------------------------
# analysis helpers


def fit_rate_slope(record: RunRecord, window: float = 0.5):
    """Least-squares slope of log(err_H) against log(n) on trailing checkpoints."""
    if not (0.0 < window <= 1.0):
        raise ValueError(f"window must lie in (0, 1], got {window!r}")
    count = math.ceil(window * record.steps.size)
    if count < 5:
        raise ValueError(f"need at least 5 checkpoints in the trailing window, got {count}")
    steps = record.steps[-count:].astype(float)
    errs = record.err_h[-count:]
    if np.any(errs <= 0.0):
        raise ValueError("err_H must be positive to fit a log-log slope")
    log_n = np.log(steps)
    if float(np.ptp(log_n)) == 0.0:
        raise ValueError("checkpoint steps are constant, slope is undefined")
    log_e = np.log(errs)
    slope, intercept = np.polyfit(log_n, log_e, 1)
    fitted = slope * log_n + intercept
    ss_res = float(np.sum((log_e - fitted) ** 2))
    ss_tot = float(np.sum((log_e - log_e.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2


def tune_huber_tau(config: ConvergenceConfig, tau_grid: Sequence[float], jobs: int = 1) -> float:
    """Grid-search the Huber threshold; ties go to the smaller value."""
    grid = [float(t) for t in tau_grid]
    if not grid:
        raise ValueError("tau grid is empty")
    if any(t <= 0 for t in grid):
        raise ValueError(f"tau grid must be positive, got {grid}")
    if grid != sorted(grid) or len(set(grid)) != len(grid):
        raise ValueError(f"tau grid must be strictly ascending, got {grid}")
    base = replace(config, losses=("huber",), covariances=config.covariances[:1])
    best_tau = grid[0]
    best_err = math.inf
    for tau in grid:
        result = convergence_experiment(replace(base, huber_tau=tau), jobs=jobs)
        (key,) = result.records.keys()
        err = float(np.mean([rec.final_err_h for rec in result.records[key]]))
        if err < best_err:
            best_err = err
            best_tau = tau
    return best_tau


# ---------------------------------------------------------------------------
# SVG chart


_SVG_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_loglog_svg(title: str, curves: Mapping[str, Tuple[Sequence[float], Sequence[float]]]) -> str:
    """Tiny dependency-free log-log line chart. Curves map name -> (x, y)."""
    width, height = 640.0, 440.0
    left, right, top, bottom = 70.0, 20.0, 40.0, 50.0
    xs = np.concatenate([np.asarray(x, dtype=float) for x, _ in curves.values()])
    ys = np.concatenate([np.asarray(y, dtype=float) for _, y in curves.values()])
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("log-log chart needs positive coordinates")
    lx0, lx1 = math.floor(np.log10(xs.min())), math.ceil(np.log10(xs.max()))
    ly0, ly1 = math.floor(np.log10(ys.min())), math.ceil(np.log10(ys.max()))
    lx1 = max(lx1, lx0 + 1)
    ly1 = max(ly1, ly0 + 1)

    def px(v: float) -> float:
        return left + (math.log10(v) - lx0) / (lx1 - lx0) * (width - left - right)

    def py(v: float) -> float:
        return height - bottom - (math.log10(v) - ly0) / (ly1 - ly0) * (height - top - bottom)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:g} {height:g}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect width="{width:g}" height="{height:g}" fill="white"/>',
        f'<text x="{width / 2:g}" y="20" text-anchor="middle" font-size="14">{title}</text>',
    ]
    for exp in range(lx0, lx1 + 1):
        x = px(10.0**exp)
        parts.append(
            f'<line x1="{x:.1f}" y1="{top:g}" x2="{x:.1f}" y2="{height - bottom:g}" stroke="#ddd"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{height - bottom + 16:g}" text-anchor="middle">1e{exp}</text>'
        )
    for exp in range(ly0, ly1 + 1):
        y = py(10.0**exp)
        parts.append(
            f'<line x1="{left:g}" y1="{y:.1f}" x2="{width - right:g}" y2="{y:.1f}" stroke="#ddd"/>'
        )
        parts.append(f'<text x="{left - 6:g}" y="{y + 4:.1f}" text-anchor="end">1e{exp}</text>')
    for k, (name, (x, y)) in enumerate(curves.items()):
        color = _SVG_PALETTE[k % len(_SVG_PALETTE)]
        pts = " ".join(f"{px(float(a)):.1f},{py(float(b)):.1f}" for a, b in zip(x, y))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{width - right - 4:g}" y="{top + 14 * (k + 1):g}" '
            f'text-anchor="end" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


def table_svg(table: Table) -> str:
    """Render a convergence table's error columns against step count."""
    steps = [row[0] for row in table.rows]
    curves = {}
    for col in range(1, len(table.columns)):
        ys = [row[col] for row in table.rows]
        if all(isinstance(v, float) and v > 0 for v in ys):
            curves[table.columns[col]] = (steps, ys)
    if not curves:
        raise ValueError(f"table {table.name!r} has no positive series to plot")
    return render_loglog_svg(table.name, curves)
