"""Grid sweeps over scenario parameters.

A sweep is the cartesian product of its axes times a number of seeds.  Seed
``k`` of every cell runs with ``base.seed + k``, so cells are compared on
common random numbers.  Records come back sorted by (cell, seed index) no
matter how many workers ran them, and finished cells can be checkpointed to a
manifest so an interrupted sweep picks up where it stopped.
"""

from __future__ import annotations

import dataclasses
import hashlib
import itertools
import json
import os
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import tomli

from fgpe.harness.config import _decode, _encode, serialize_scenario
from fgpe.sim import EpisodeAborted, Scenario, ValidationError, run_episode

__all__ = ["SweepSpec", "RunRecord", "BudgetExceeded", "DEFAULT_BUDGET", "run_sweep", "apply_parameter",
           "parse_value", "effective_budget", "record_for", "run_jobs", "failed"]

DEFAULT_BUDGET = 10_000
SCHEMA_VERSION = 1


class BudgetExceeded(ValueError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    base: Scenario
    # (parameter path, values); paths are dotted field names, tuple elements by index or "*"
    axes: tuple[tuple[str, tuple[Any, ...]], ...] = ()
    seeds: int = 1
    workers: int = 1
    budget: int = DEFAULT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple((p, tuple(v)) for p, v in self.axes))
        if self.seeds < 1:
            raise ValueError("seeds per cell must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for p, v in self.axes:
            if not v:
                raise ValueError(f"axis {p} has no values")

    @property
    def n_cells(self) -> int:
        n = 1
        for _, v in self.axes:
            n *= len(v)
        return n

    def cells(self) -> list[tuple[tuple[str, Any], ...]]:
        names = [p for p, _ in self.axes]
        return [tuple(zip(names, combo)) for combo in itertools.product(*(v for _, v in self.axes))]

    def fingerprint(self) -> str:
        doc = json.dumps({"base": serialize_scenario(self.base), "axes": _encode(self.axes), "seeds": self.seeds},
                         sort_keys=True)
        return hashlib.sha256(doc.encode()).hexdigest()


@dataclass(frozen=True)
class RunRecord:
    """One episode of a sweep; field order is the CSV column order."""

    cell: int
    seed_index: int
    seed: int
    params: str                       # JSON object of this cell's axis values
    status: str                       # ok | aborted | error
    error: str
    strategy: str
    n_pursuers: int
    n_obstacles: int
    capture_radius: float
    dt: float
    max_steps: int
    measurement_frequency: float
    drop_fraction: float
    evader_v_max: float
    pursuer_v_max: float
    speed_ratio: float
    sigma_dx: float
    sigma_dy: float
    sigma_dtheta: float
    sigma_range: float
    sigma_bearing: float
    sigma_cpx: float
    sigma_cpy: float
    sigma_opx: float
    sigma_opy: float
    sensor_sigma_range: float
    sensor_sigma_bearing: float
    captured: bool | None = None
    capture_step: int | None = None
    capture_time: float | None = None
    escaped: bool | None = None
    steps: int | None = None
    mean_path_length: float | None = None
    total_path_length: float | None = None
    mean_ellipse_area: float | None = None
    final_ellipse_area: float | None = None
    estimate_rmse: float | None = None
    dropped_messages: int | None = None
    delivered_messages: int | None = None
    solver_iterations: int | None = None
    solver_mean_iterations: float | None = None
    min_pursuer_separation: float | None = None
    schema_version: int = field(default=SCHEMA_VERSION)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def effective_budget(spec: SweepSpec) -> int:
    env = os.environ.get("FGPE_BUDGET")
    if env is None or env.strip() == "":
        return spec.budget
    try:
        return int(env)
    except ValueError:
        raise ValueError(f"FGPE_BUDGET must be an integer, got {env!r}") from None


# ------------------------------------------------------------------ parameter paths


def parse_value(text: str) -> Any:
    """A TOML literal (``1.5``, ``true``, ``[1, 2]``, ``"x"``); bare words stay strings."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_parameter(sc: Scenario, path: str, value: Any) -> Scenario:
    """Copy of ``sc`` with the field at ``path`` set; the value is checked against the field type."""
    return _set(sc, path.split("."), value, "")


def _set(obj, parts: list[str], value, done: str):
    head, rest = parts[0], parts[1:]
    here = f"{done}.{head}" if done else head
    if isinstance(obj, tuple):
        if head == "*":
            idx = range(len(obj))
        else:
            try:
                i = int(head)
            except ValueError:
                raise ValidationError(f"{here}: expected an index or '*'") from None
            if not 0 <= i < len(obj):
                raise ValidationError(f"{here}: index out of range (length {len(obj)})")
            idx = [i]
        items = list(obj)
        for i in idx:
            if not rest:
                raise ValidationError(f"{here}: cannot replace a whole element")
            items[i] = _set(items[i], rest, value, f"{done}.{i}" if done else str(i))
        return tuple(items)
    if not dataclasses.is_dataclass(obj):
        raise ValidationError(f"{done}: not a structured field")
    names = {f.name for f in dataclasses.fields(obj)}
    if head not in names:
        raise ValidationError(f"unknown parameter '{here}'")
    if rest:
        return replace(obj, **{head: _set(getattr(obj, head), rest, value, here)})
    hint = typing.get_type_hints(type(obj))[head]
    new = _decode(_encode(value), hint, here)
    try:
        return replace(obj, **{head: new})
    except ValidationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"{here}: {exc}") from None


# ------------------------------------------------------------------ execution


def _summary(sc: Scenario) -> dict:
    w = sc.weights
    v_p = sum(p.v_max for p in sc.pursuers) / len(sc.pursuers)
    return dict(
        strategy=sc.strategy.value, n_pursuers=sc.n_pursuers, n_obstacles=len(sc.obstacles),
        capture_radius=sc.capture_radius, dt=sc.dt, max_steps=sc.max_steps,
        measurement_frequency=sc.measurement_frequency, drop_fraction=sc.drop_fraction,
        evader_v_max=sc.evader.v_max, pursuer_v_max=v_p, speed_ratio=v_p / sc.evader.v_max,
        **{f.name: getattr(w, f.name) for f in dataclasses.fields(w)},
        sensor_sigma_range=sc.sensor.sigma_range, sensor_sigma_bearing=sc.sensor.sigma_bearing,
    )


def record_for(sc: Scenario, cell: int = 0, seed_index: int = 0, params: str = "{}") -> RunRecord:
    """Run one episode and flatten it; failures become records instead of exceptions."""
    head = dict(cell=cell, seed_index=seed_index, seed=sc.seed, params=params, **_summary(sc))
    try:
        r = run_episode(sc, record_trace=False)
    except EpisodeAborted as exc:
        return RunRecord(status="aborted", error=str(exc), **head)
    except Exception as exc:  # noqa: BLE001 - a sweep reports failures per episode
        return RunRecord(status="error", error=f"{type(exc).__name__}: {exc}", **head)
    paths = r.path_lengths
    return RunRecord(
        status="ok", error="", **head,
        captured=r.captured, capture_step=r.capture_step, capture_time=r.capture_time, escaped=r.escaped,
        steps=r.steps, mean_path_length=sum(paths) / len(paths), total_path_length=sum(paths),
        mean_ellipse_area=r.mean_ellipse_area, final_ellipse_area=r.final_ellipse_area,
        estimate_rmse=r.estimate_rmse, dropped_messages=r.dropped_messages,
        delivered_messages=r.delivered_messages, solver_iterations=r.solver_iterations,
        solver_mean_iterations=r.solver_mean_iterations, min_pursuer_separation=r.min_pursuer_separation,
    )


def _job(args) -> RunRecord:
    return record_for(*args)


def run_jobs(jobs: Sequence[tuple[Scenario, int, int, str]], workers: int = 1):
    """Yield one record per (scenario, cell, seed index, params) job, in job order."""
    if workers == 1 or len(jobs) <= 1:
        for a in jobs:
            yield _job(a)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_job, jobs)


def _cell_scenarios(spec: SweepSpec) -> list[tuple[str, list[Scenario]]]:
    out = []
    for cell in spec.cells():
        sc = spec.base
        for path, value in cell:
            sc = apply_parameter(sc, path, value)
        params = json.dumps({p: _encode(v) for p, v in cell}, separators=(",", ":"))
        out.append((params, [replace(sc, seed=(spec.base.seed + k) % 2**64) for k in range(spec.seeds)]))
    return out


def _load_manifest(path: Path, fingerprint: str) -> dict[int, list[RunRecord]]:
    done: dict[int, list[RunRecord]] = {}
    if not path.exists():
        return done
    with path.open(encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip()]
    if not lines:
        return done
    header = json.loads(lines[0])
    if header.get("fingerprint") != fingerprint:
        raise ValueError(f"{path}: manifest belongs to a different sweep")
    for ln in lines[1:]:
        try:
            entry = json.loads(ln)
        except json.JSONDecodeError:
            break  # a cell interrupted mid-write is simply rerun
        done[entry["cell"]] = [RunRecord(**r) for r in entry["records"]]
    return done


def run_sweep(spec: SweepSpec, manifest: str | os.PathLike | None = None) -> list[RunRecord]:
    """Run every cell and seed; returns records sorted by (cell, seed index).

    Raises :class:`BudgetExceeded` before running anything when the sweep is
    larger than the budget.  With ``manifest`` set, cells already recorded
    there are reused and each newly finished cell is appended.
    """
    budget = effective_budget(spec)
    total = spec.n_cells * spec.seeds
    if total > budget:
        raise BudgetExceeded(f"sweep needs {total} episodes but the budget is {budget}")
    cells = _cell_scenarios(spec)
    fp = spec.fingerprint()
    mpath = Path(manifest) if manifest is not None else None
    done = _load_manifest(mpath, fp) if mpath is not None else {}
    if mpath is not None and not mpath.exists():
        mpath.parent.mkdir(parents=True, exist_ok=True)
        mpath.write_text(json.dumps({"fingerprint": fp, "schema_version": SCHEMA_VERSION}) + "\n", encoding="utf-8")

    todo = [(c, k, sc, params) for c, (params, scs) in enumerate(cells) if c not in done
            for k, sc in enumerate(scs)]
    pending: dict[int, dict[int, RunRecord]] = {}

    def finish(rec: RunRecord):
        got = pending.setdefault(rec.cell, {})
        got[rec.seed_index] = rec
        if len(got) == spec.seeds:
            recs = [got[k] for k in range(spec.seeds)]
            done[rec.cell] = recs
            del pending[rec.cell]
            if mpath is not None:
                with mpath.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"cell": rec.cell, "records": [dataclasses.asdict(r) for r in recs]}) + "\n")

    for rec in run_jobs([(sc, c, k, params) for c, k, sc, params in todo], spec.workers):
        finish(rec)
    return [r for c in sorted(done) for r in sorted(done[c], key=lambda r: r.seed_index)]


def failed(records: Sequence[RunRecord]) -> list[RunRecord]:
    return [r for r in records if not r.ok]
