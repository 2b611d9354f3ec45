"""Seeded replication sweeps over penalty-parameter grids.

Every (setting, replication) cell gets its own seed::

    blake2b(json.dumps([base_seed, k, alpha, beta, rho, g, rep]), digest_size=8)

read as a little-endian unsigned 64-bit integer.  Sub-seeds for the split,
the factor initialisation and the test projection are derived the same way
from ``[cell_seed, "split" | "init" | "project"]``.  Adding grid points
therefore never changes the numbers produced by existing cells, and results
are identical whatever order or worker the cells run on.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParameterError, PlanError
from .factorization import (
    ALGORITHMS,
    FAMILIES,
    NONE,
    TOEPLITZ,
    ZELLNER,
    PenaltyConfig,
    SolverConfig,
    make_rng,
    run,
)
from .recognition import (
    METRICS,
    GrayImage,
    ImageDataset,
    SplitSpec,
    accuracy,
    build_matrix,
    classify,
    load_dataset,
    project,
    split,
)
from .toeplitz import GEOMETRIC

logger = logging.getLogger(__name__)

RESULT_FIELDS = (
    "dataset", "algorithm", "k", "alpha", "beta", "rho", "g", "replication",
    "seed", "accuracy", "final_cost", "iterations", "clamp_warnings", "wall_time_s",
)


def family_of(algorithm: str) -> str:
    """Map a CLI algorithm name (or a family name) to a penalty family."""
    if algorithm in ALGORITHMS:
        return ALGORITHMS[algorithm]
    if algorithm in FAMILIES:
        return algorithm
    raise ParameterError(
        f"unknown algorithm {algorithm!r}; expected one of {sorted(ALGORITHMS)}"
    )


def derive_seed(*parts) -> int:
    payload = json.dumps(list(parts), separators=(",", ":")).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def frange(start: float, stop: float, step: float) -> list[float]:
    """Inclusive arithmetic grid, rounded to 10 decimals to kill drift."""
    if step <= 0:
        raise ParameterError(f"grid step must be positive, got {step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(max(count, 0))]


@dataclass
class ExperimentPlan:
    dataset_path: str = ""
    dataset_name: str = "dataset"
    algorithm: str = "nmf"
    ranks: tuple[int, ...] = (16, 25, 36, 49, 64, 81, 100)
    alpha_grid: tuple[float, ...] = (0.0,)
    # Only consulted when link_alpha_beta is false.
    beta_grid: tuple[float, ...] = (0.0,)
    rho_grid: tuple[float, ...] = (0.0,)
    g_grid: tuple[float, ...] = (1.0,)
    link_alpha_beta: bool = True
    replications: int = 5
    base_seed: int = 0
    train_per_subject: int = 5
    target_resolution: tuple[int, int] | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    metric: str = "cosine"
    output_path: str | None = None
    toeplitz_kind: str = GEOMETRIC
    nu: float = 1.0

    def __post_init__(self):
        self.family = family_of(self.algorithm)
        if self.replications < 1:
            raise ParameterError(f"replications must be >= 1, got {self.replications}")
        if not self.ranks:
            raise ParameterError("ranks must be nonempty")
        if self.metric not in METRICS:
            raise ParameterError(f"unknown metric {self.metric!r}")
        needed = {"alpha_grid": self.family != NONE,
                  "beta_grid": self.family != NONE and not self.link_alpha_beta,
                  "rho_grid": self.family == TOEPLITZ,
                  "g_grid": self.family == ZELLNER}
        for name, active in needed.items():
            if active and not getattr(self, name):
                raise ParameterError(f"{name} must be nonempty for {self.algorithm}")


@dataclass(frozen=True)
class Setting:
    k: int
    alpha: float = 0.0
    beta: float = 0.0
    rho: float | None = None
    g: float | None = None

    def key(self) -> tuple:
        return (self.k, self.alpha, self.beta,
                -1.0 if self.rho is None else self.rho,
                -1.0 if self.g is None else self.g)


@dataclass
class ResultRecord:
    dataset: str
    algorithm: str
    k: int
    alpha: float
    beta: float
    rho: float | None
    g: float | None
    replication: int
    seed: int
    accuracy: float
    final_cost: float
    iterations: int
    clamp_warnings: int
    wall_time_s: float

    @property
    def failed(self) -> bool:
        return self.accuracy is None or math.isnan(self.accuracy)

    def setting(self) -> Setting:
        return Setting(self.k, self.alpha, self.beta, self.rho, self.g)


@dataclass
class SummaryRow:
    dataset: str
    algorithm: str
    k: int
    alpha: float
    beta: float
    rho: float | None
    g: float | None
    mean_accuracy: float
    sd_accuracy: float | None
    replications: int
    mean_wall_time_s: float


def settings(plan: ExperimentPlan) -> list[Setting]:
    """All grid points for the plan's family, in sorted order."""
    fam = plan.family
    if fam == NONE:
        ab = [(0.0, 0.0)]
    elif plan.link_alpha_beta:
        ab = [(a, 1.0 - a) for a in plan.alpha_grid]
    else:
        ab = list(itertools.product(plan.alpha_grid, plan.beta_grid))
    extra: list[tuple] = [(None, None)]
    if fam == TOEPLITZ:
        extra = [(r, None) for r in plan.rho_grid]
    elif fam == ZELLNER:
        extra = [(None, g) for g in plan.g_grid]
    out = {
        Setting(int(k), float(a), float(b), r, g)
        for k in plan.ranks for a, b in ab for r, g in extra
    }
    return sorted(out, key=Setting.key)


def cell_seed(plan: ExperimentPlan, setting: Setting, rep: int) -> int:
    return derive_seed(plan.base_seed, setting.k, setting.alpha, setting.beta,
                       setting.rho, setting.g, rep)


def penalty_for(plan: ExperimentPlan, setting: Setting) -> PenaltyConfig:
    return PenaltyConfig(
        family=plan.family,
        alpha=setting.alpha,
        beta=setting.beta,
        g=setting.g,
        toeplitz_kind=plan.toeplitz_kind,
        rho=setting.rho if setting.rho is not None else 0.0,
        nu=plan.nu,
    )


def load_plan_dataset(plan: ExperimentPlan) -> ImageDataset:
    return load_dataset(plan.dataset_path, plan.dataset_name, plan.target_resolution)


def run_replication(
    plan: ExperimentPlan,
    setting: Setting,
    rep: int,
    dataset: ImageDataset | None = None,
) -> ResultRecord:
    """Split, train, project and score one cell of the sweep."""
    start = time.perf_counter()
    if dataset is None:
        dataset = load_plan_dataset(plan)
    seed = cell_seed(plan, setting, rep)
    train, test = split(dataset, SplitSpec(plan.train_per_subject, derive_seed(seed, "split")))
    x_train = build_matrix(train)
    x_test = build_matrix(test)
    solver = dataclasses.replace(plan.solver, seed=derive_seed(seed, "init"))
    model = run(x_train, setting.k, penalty_for(plan, setting), solver)
    h_test = project(model.w, x_test,
                     dataclasses.replace(plan.solver, seed=derive_seed(seed, "project")))
    predicted = classify(h_test, model.h, train.labels, plan.metric)
    return ResultRecord(
        dataset=plan.dataset_name,
        algorithm=plan.algorithm,
        k=setting.k,
        alpha=setting.alpha,
        beta=setting.beta,
        rho=setting.rho,
        g=setting.g,
        replication=rep,
        seed=seed,
        accuracy=accuracy(predicted, test.labels),
        final_cost=model.cost_history[-1],
        iterations=model.iterations_run,
        clamp_warnings=model.clamp_count,
        wall_time_s=time.perf_counter() - start,
    )


def _failed_record(plan, setting, rep, wall) -> ResultRecord:
    return ResultRecord(plan.dataset_name, plan.algorithm, setting.k, setting.alpha,
                        setting.beta, setting.rho, setting.g, rep,
                        cell_seed(plan, setting, rep), math.nan, math.nan, 0, 0, wall)


def _run_cell(plan, dataset, setting, rep) -> ResultRecord:
    start = time.perf_counter()
    try:
        return run_replication(plan, setting, rep, dataset)
    except Exception as e:  # one bad cell must not sink the sweep
        logger.error("cell k=%s %s rep=%d failed: %s", setting.k, setting, rep, e)
        return _failed_record(plan, setting, rep, time.perf_counter() - start)


_WORKER: dict = {}


def _init_worker(plan, dataset):
    _WORKER["plan"] = plan
    _WORKER["dataset"] = dataset


def _worker_cell(setting, rep):
    return _run_cell(_WORKER["plan"], _WORKER["dataset"], setting, rep)


def run_grid(
    plan: ExperimentPlan,
    dataset: ImageDataset | None = None,
    jobs: int = 1,
) -> list[ResultRecord]:
    """Run every (setting, replication) cell once.

    Failed cells yield records with NaN accuracy and cost; see
    :func:`count_failures`.  Output is sorted by (k, parameters, replication).
    """
    if dataset is None:
        dataset = load_plan_dataset(plan)
    cells = [(s, r) for s in settings(plan) for r in range(plan.replications)]
    if jobs <= 1:
        records = [_run_cell(plan, dataset, s, r) for s, r in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(plan, dataset)) as pool:
            futures = [pool.submit(_worker_cell, s, r) for s, r in cells]
            records = [f.result() for f in futures]
    records.sort(key=lambda rec: (rec.setting().key(), rec.replication))
    failures = count_failures(records)
    if failures:
        logger.warning("%d of %d cells failed", failures, len(records))
    return records


def count_failures(records: Iterable[ResultRecord]) -> int:
    return sum(1 for r in records if r.failed)


def aggregate(records: Sequence[ResultRecord]) -> tuple[list[SummaryRow], list[SummaryRow]]:
    """Per-setting means plus the best setting for each (dataset, algorithm, k).

    Failed cells are ignored.  The sample standard deviation is ``None`` when
    a setting has a single replication.
    """
    groups: dict[tuple, list[ResultRecord]] = {}
    for r in records:
        if r.failed:
            continue
        groups.setdefault((r.dataset, r.algorithm) + r.setting().key(), []).append(r)
    summary = []
    for key in sorted(groups):
        recs = groups[key]
        first = recs[0]
        accs = [r.accuracy for r in recs]
        summary.append(SummaryRow(
            dataset=first.dataset,
            algorithm=first.algorithm,
            k=first.k,
            alpha=first.alpha,
            beta=first.beta,
            rho=first.rho,
            g=first.g,
            mean_accuracy=statistics.fmean(accs),
            sd_accuracy=statistics.stdev(accs) if len(accs) > 1 else None,
            replications=len(accs),
            mean_wall_time_s=statistics.fmean(r.wall_time_s for r in recs),
        ))
    best: dict[tuple, SummaryRow] = {}
    for row in summary:
        key = (row.dataset, row.algorithm, row.k)
        if key not in best or row.mean_accuracy > best[key].mean_accuracy:
            best[key] = row
    return summary, [best[k] for k in sorted(best)]


# -- persistence -------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        return None if math.isnan(value) else float(f"{value:.6g}")
    return value


def _fields_of(rows, fields):
    if fields is not None:
        return tuple(fields)
    if rows:
        return tuple(f.name for f in dataclasses.fields(rows[0]))
    return RESULT_FIELDS


def emit(rows: Sequence, path=None, format: str | None = None, fields=None) -> None:
    """Write records or summary rows as CSV or JSON.

    ``path`` of ``None`` or ``"-"`` means stdout.  The format defaults to the
    file extension (``.json`` or CSV otherwise).  Floats carry 6 significant
    digits in both formats; missing values are empty in CSV and null in JSON.
    """
    rows = list(rows)
    to_stdout = path is None or str(path) == "-"
    if format is None:
        format = "json" if not to_stdout and str(path).endswith(".json") else "csv"
    if format not in ("csv", "json"):
        raise ParameterError(f"unknown output format {format!r}")
    names = _fields_of(rows, fields)

    def write(fh):
        if format == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(names)
            for row in rows:
                writer.writerow([_fmt(getattr(row, n)) for n in names])
        else:
            payload = [{n: _json_value(getattr(row, n)) for n in names} for row in rows]
            json.dump(payload, fh, indent=1)
            fh.write("\n")

    if to_stdout:
        write(sys.stdout)
        return
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            write(fh)
    except OSError as e:
        raise OSError(f"cannot write {path}: {e.strerror or e}") from e


_INT_FIELDS = {"k", "replication", "seed", "iterations", "clamp_warnings", "replications"}
_NULLABLE = {"rho", "g", "sd_accuracy"}
_STR_FIELDS = {"dataset", "algorithm"}


def _convert(name: str, value):
    if name in _STR_FIELDS:
        return value
    if value is None or value == "":
        return None if name in _NULLABLE else (0 if name in _INT_FIELDS else math.nan)
    if name in _INT_FIELDS:
        return int(value)
    return float(value)


def read_records(path) -> list[ResultRecord]:
    """Parse a results file written by :func:`emit` (CSV or JSON)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        raw = json.loads(text)
    else:
        reader = csv.DictReader(text.splitlines())
        missing = set(RESULT_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ParameterError(f"{path}: missing result columns {sorted(missing)}")
        raw = list(reader)
    return [ResultRecord(**{n: _convert(n, row.get(n)) for n in RESULT_FIELDS}) for row in raw]


# -- plan files --------------------------------------------------------------


def _parse_list(text: str, cast) -> tuple:
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            start, stop, step = (float(v) for v in part.split(":"))
            items.extend(cast(v) for v in frange(start, stop, step))
        else:
            items.append(cast(part))
    return tuple(items)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ParameterError(f"not a boolean: {text!r}")


def parse_resolution(text: str) -> tuple[int, int]:
    """Parse ``"WxH"`` (or ``"W,H"``) into ``(width, height)``."""
    parts = text.lower().replace(",", "x").split("x")
    if len(parts) != 2:
        raise ParameterError(f"resolution must look like WxH, got {text!r}")
    return int(parts[0]), int(parts[1])




def load_plan(path) -> ExperimentPlan:
    """Read an INI-style plan file with a single ``[plan]`` section.

    Keys are ExperimentPlan field names; grids are comma-separated and may use
    ``start:stop:step`` ranges (stop inclusive).  The solver fields
    ``max_iters``, ``rel_tol``, ``eps`` and ``check_every`` appear as top-level
    keys.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise PlanError(f"{path}: {e}") from e
    if "plan" not in parser:
        raise PlanError(f"{path}: missing [plan] section")
    try:
        return _plan_from_section(parser["plan"], path)
    except (ParameterError, ValueError, TypeError) as e:
        raise PlanError(f"{path}: {e}") from e


def _plan_from_section(section, path: Path) -> ExperimentPlan:
    kwargs: dict = {}
    solver_kwargs: dict = {}
    plan_fields = {f.name for f in dataclasses.fields(ExperimentPlan)}
    for key, value in section.items():
        if key in ("max_iters", "check_every"):
            solver_kwargs[key] = int(value)
        elif key in ("rel_tol", "eps"):
            solver_kwargs[key] = float(value)
        elif key == "ranks":
            kwargs[key] = _parse_list(value, int)
        elif key in ("alpha_grid", "beta_grid", "rho_grid", "g_grid"):
            kwargs[key] = _parse_list(value, float)
        elif key == "link_alpha_beta":
            kwargs[key] = _parse_bool(value)
        elif key in ("replications", "base_seed", "train_per_subject"):
            kwargs[key] = int(value)
        elif key == "nu":
            kwargs[key] = float(value)
        elif key == "target_resolution":
            kwargs[key] = parse_resolution(value) if value.strip() else None
        elif key in plan_fields and key != "solver":
            kwargs[key] = value.strip() or None
        else:
            raise ParameterError(f"unknown plan key {key!r}")
    kwargs["solver"] = SolverConfig(**solver_kwargs)
    # relative paths are taken from the plan file's directory
    for key in ("dataset_path", "output_path"):
        if kwargs.get(key) and not Path(kwargs[key]).is_absolute():
            kwargs[key] = str(path.parent / kwargs[key])
    return ExperimentPlan(**kwargs)


# -- synthetic data ----------------------------------------------------------


def generate_synthetic_parts(
    n_parts: int,
    part_size: int,
    subjects: int,
    images_per_subject: int,
    noise: float = 0.0,
    seed: int = 0,
) -> ImageDataset:
    """Dataset whose subjects are sparse nonnegative mixtures of fixed parts.

    Images are ``n_parts`` rows by ``part_size`` columns; part ``j`` occupies
    row ``j`` with a random profile in [0.5, 1].  Subject ``s`` always uses
    part ``s`` (weight in [0.6, 1]) plus ``n_parts // 4 - 1`` other random
    parts (weights in [0.2, 0.6]).  Each image adds uniform noise in
    ``[-noise, noise]`` and is clipped to [0, 1].  At ``noise = 0`` the data
    matrix is exactly a rank-``n_parts`` nonnegative product.
    """
    if not n_parts >= subjects >= 2:
        raise ParameterError(f"need n_parts >= subjects >= 2, got {n_parts}, {subjects}")
    if part_size < 1 or images_per_subject < 1:
        raise ParameterError("part_size and images_per_subject must be positive")
    if noise < 0:
        raise ParameterError(f"noise must be nonnegative, got {noise}")
    rng = make_rng(seed)
    profiles = rng.uniform(0.5, 1.0, size=(n_parts, part_size))
    n_extra = max(n_parts // 4 - 1, 0)
    images, labels = [], []
    for s in range(subjects):
        weights = np.zeros(n_parts)
        weights[s] = rng.uniform(0.6, 1.0)
        others = [j for j in range(n_parts) if j != s]
        if n_extra:
            extra = rng.choice(others, size=n_extra, replace=False)
            weights[extra] = rng.uniform(0.2, 0.6, size=n_extra)
        template = weights[:, None] * profiles
        for _ in range(images_per_subject):
            px = template
            if noise > 0:
                px = np.clip(template + rng.uniform(-noise, noise, size=template.shape), 0.0, 1.0)
            images.append(GrayImage(px.copy()))
            labels.append(f"s{s + 1:02d}")
    return ImageDataset(tuple(images), tuple(labels), "synthetic")
