from dataclasses import dataclass
from enum import Enum
from pathlib import Path
import asyncio
import csv
import json
import logging
import re

import numpy as np
from pydantic import BaseModel, Field

from errors import ContractViolation
from logical_clock import (
    TickModel,
    ma_phase_ticks,
    ma_ticks,
    migration_rounds,
    pmsam_phase_ticks,
    pmsam_ticks,
)
from membrane_engine import PmsamConfig, check_config, run_pmsam
from monkey_core import MaParams, RunReport, run_ma
from objective import ObjectiveDescriptor, get_objective

logger = logging.getLogger("pmsam.harness")

REPORT_VERSION = 1


class Algorithm(str, Enum):
    MA = "ma"
    PMSAM = "pmsam"
    BOTH = "both"


@dataclass(frozen=True)
class PublishedSetting:
    membranes: int
    n: int
    climb_number: int
    pmsam_mean: float
    ma_mean: float


# Published per-function settings (m, n, P_c) and 20-run means.
PUBLISHED_SETTINGS: dict[str, PublishedSetting] = {
    "f1": PublishedSetting(10, 60, 50, 1.65013e-2, 3.617e-2),
    "f2": PublishedSetting(20, 100, 50, 2.741e-4, 4.921e-4),
    "f3": PublishedSetting(5, 100, 50, 4.027e-3, 1.371e-4),
    "f4": PublishedSetting(20, 60, 30, 1.5407e-2, 4.568e-2),
    "f5": PublishedSetting(10, 60, 30, 0.02601, 0.5381),
    "f6": PublishedSetting(5, 100, 100, -396.045, -403.14),
    "f7": PublishedSetting(5, 60, 50, 1.6010e-2, 3.022e-3),
    "f8": PublishedSetting(20, 60, 50, 0.0127, 0.0703),
    "f9": PublishedSetting(20, 60, 50, 0.2504, 0.0532),
    "f10": PublishedSetting(10, 100, 100, 1.0071, 1.0933),
    "f11": PublishedSetting(10, 100, 30, 1.3701e-3, 1.706e-2),
    "f12": PublishedSetting(20, 100, 100, 0.00474, 0.0721),
}


class ExperimentSpec(BaseModel):
    function_ids: list[str] = Field(default_factory=lambda: ["f1"])
    algorithm: Algorithm = Algorithm.BOTH
    config: PmsamConfig = Field(default_factory=PmsamConfig)
    runs: int = Field(20, ge=1)
    base_seed: int = Field(0, ge=0)
    equalize_budget: bool = True


class SummaryRow(BaseModel):
    function_id: str
    algorithm: str
    m: int
    n: int
    climb_number: int
    mean: float
    variance: float
    reference_mean: float | None = None


class TimingRow(BaseModel):
    n: int
    m: int
    ma_ticks: int
    pmsam_ticks: int
    ma_climb_ticks: int
    pmsam_climb_ticks: int
    measured_ma_ticks: int | None = None
    measured_pmsam_ticks: int | None = None


def function_order(function_id: str) -> tuple[str, int, str]:
    """Sort key putting f2 before f10."""
    match = re.fullmatch(r"(\D*)(\d+)", function_id)
    if match:
        return (match.group(1), int(match.group(2)), function_id)
    return (function_id, -1, function_id)


def preset_config(
    function_id: str, base: PmsamConfig, explicit: set[str] | frozenset[str] = frozenset()
) -> PmsamConfig:
    """Apply the published (m, n, P_c) for a function unless the caller set those keys."""
    row = PUBLISHED_SETTINGS.get(function_id)
    if row is None:
        return base
    ma_update = {}
    if "n" not in explicit:
        ma_update["n"] = row.n
    if "climb_number" not in explicit:
        ma_update["climb_number"] = row.climb_number
    update = {"ma": base.ma.model_copy(update=ma_update)}
    if "m" not in explicit:
        update["membranes"] = row.membranes
    return base.model_copy(update=update)


def ma_budget(config: PmsamConfig, equalize: bool) -> MaParams:
    """
    MA parameters for a comparison against PMSAM. When equalizing, the MA climb
    number is scaled so both spend the same number of climb passes per monkey.
    """
    if not equalize:
        return config.ma
    passes = 1 + migration_rounds(config.membranes)
    scaled = round(config.ma.climb_number * passes / 2)
    return config.ma.model_copy(update={"climb_number": scaled})


def summarize(values: list[float]) -> tuple[float, float]:
    """Sample mean and unbiased sample variance; a single run has variance 0."""
    data = np.asarray(values, dtype=float)
    mean = float(np.mean(data))
    variance = float(np.var(data, ddof=1)) if data.size > 1 else 0.0
    return mean, variance


def _reference(function_id: str, algorithm: str, config: PmsamConfig) -> float | None:
    row = PUBLISHED_SETTINGS.get(function_id)
    if row is None:
        return None
    if (row.membranes, row.n, row.climb_number) != (
        config.membranes,
        config.ma.n,
        config.ma.climb_number,
    ):
        return None
    return row.pmsam_mean if algorithm == Algorithm.PMSAM.value else row.ma_mean


async def run_experiment(
    spec: ExperimentSpec, workers: int = 1
) -> tuple[list[SummaryRow], list[RunReport]]:
    """
    `runs` independent runs per function and algorithm with seeds base_seed + k.
    Runs fan out over `workers`; results do not depend on the fan-out.
    """
    config = check_config(spec.config)
    descs = [get_objective(fid, config.ma.d) for fid in spec.function_ids]
    algorithms = (
        [Algorithm.MA, Algorithm.PMSAM] if spec.algorithm is Algorithm.BOTH else [spec.algorithm]
    )
    ma_params = ma_budget(config, spec.equalize_budget)
    gate = asyncio.Semaphore(max(1, workers))
    logger.info(
        f"Starting experiment: functions={spec.function_ids} "
        f"algorithms={[a.value for a in algorithms]} runs={spec.runs}"
    )

    async def one(desc: ObjectiveDescriptor, algorithm: Algorithm, seed: int) -> RunReport:
        async with gate:
            if algorithm is Algorithm.PMSAM:
                return await run_pmsam(desc, config.model_copy(update={"seed": seed}))
            return await asyncio.to_thread(run_ma, desc, ma_params, seed)

    jobs = [
        one(desc, algorithm, spec.base_seed + k)
        for desc in descs
        for algorithm in algorithms
        for k in range(spec.runs)
    ]
    reports = sorted(
        await asyncio.gather(*jobs),
        key=lambda r: (function_order(r.function_id), r.algorithm, r.seed),
    )

    rows: list[SummaryRow] = []
    for desc in descs:
        for algorithm in algorithms:
            values = [
                r.best_value
                for r in reports
                if r.function_id == desc.id and r.algorithm == algorithm.value
            ]
            mean, variance = summarize(values)
            climb_number = (
                ma_params.climb_number if algorithm is Algorithm.MA else config.ma.climb_number
            )
            rows.append(
                SummaryRow(
                    function_id=desc.id,
                    algorithm=algorithm.value,
                    m=config.membranes,
                    n=config.ma.n,
                    climb_number=climb_number,
                    mean=mean,
                    variance=variance,
                    reference_mean=_reference(desc.id, algorithm.value, config),
                )
            )
            logger.info(
                f"[{desc.id}:{algorithm.value}] mean={mean:.6g} variance={variance:.6g} "
                f"over {len(values)} runs"
            )
    return rows, reports


async def compare_time(
    n_values: list[int],
    m: int,
    params: MaParams,
    model: TickModel | None = None,
    measure: bool = True,
) -> list[TimingRow]:
    """Modelled (and optionally measured) ticks of one MA cycle vs one PMSAM iteration."""
    if not n_values:
        raise ContractViolation("compare_time needs at least one population size")
    model = model or TickModel()
    rows: list[TimingRow] = []
    for n in n_values:
        if n < m:
            raise ContractViolation(f"population n={n} is smaller than m={m}")
        sized = params.model_copy(update={"n": n, "cyclic_number": 1})
        row = TimingRow(
            n=n,
            m=m,
            ma_ticks=ma_ticks(n, sized, model),
            pmsam_ticks=pmsam_ticks(n, m, sized, model),
            ma_climb_ticks=ma_phase_ticks(n, sized, model)["climb"],
            pmsam_climb_ticks=pmsam_phase_ticks(n, m, sized, model)["climb"],
        )
        if measure:
            desc = get_objective("f1", sized.d)
            ma_report = await asyncio.to_thread(run_ma, desc, sized, 0, model)
            pmsam_report = await run_pmsam(
                desc, PmsamConfig(ma=sized, membranes=m, seed=0), model=model
            )
            row.measured_ma_ticks = ma_report.ticks
            row.measured_pmsam_ticks = pmsam_report.ticks
        logger.info(f"[Timing n={n} m={m}] ma={row.ma_ticks} pmsam={row.pmsam_ticks}")
        rows.append(row)
    return rows


# --- Emitters ---


def emit_convergence_csv(reports: list[RunReport], path: str | Path) -> Path:
    if not reports:
        raise ContractViolation("no run reports to emit")
    path = Path(path)
    ordered = sorted(
        reports, key=lambda r: (function_order(r.function_id), r.algorithm, r.seed)
    )
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["function", "algorithm", "seed", "iteration", "best_value"])
        for report in ordered:
            for iteration, value in sorted(report.trace):
                writer.writerow([report.function_id, report.algorithm, report.seed, iteration, value])
    logger.info(f"Wrote convergence trace to {path}")
    return path


def emit_summary_csv(rows: list[SummaryRow], path: str | Path) -> Path:
    path = Path(path)
    fields = list(SummaryRow.model_fields)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["function" if f == "function_id" else f for f in fields])
        for row in rows:
            writer.writerow(["" if v is None else v for v in row.model_dump().values()])
    logger.info(f"Wrote summary to {path}")
    return path


def emit_timing_csv(rows: list[TimingRow], path: str | Path) -> Path:
    path = Path(path)
    fields = list(TimingRow.model_fields)
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(fields)
        for row in rows:
            writer.writerow(["" if v is None else v for v in row.model_dump().values()])
    logger.info(f"Wrote timing table to {path}")
    return path


def report_document(
    rows: list[SummaryRow],
    reports: list[RunReport],
    specs: list[ExperimentSpec] | None = None,
) -> dict:
    return {
        "report_version": REPORT_VERSION,
        "spec": [spec.model_dump(mode="json") for spec in specs or []],
        "summary": [row.model_dump(mode="json") for row in rows],
        "runs": [
            report.model_dump(mode="json", exclude={"trace", "wall_seconds"})
            for report in sorted(
                reports, key=lambda r: (function_order(r.function_id), r.algorithm, r.seed)
            )
        ],
    }


def emit_report_json(
    rows: list[SummaryRow],
    reports: list[RunReport],
    path: str | Path,
    specs: list[ExperimentSpec] | None = None,
) -> Path:
    """Write the report document with sorted keys; wall time is left out so bytes are stable."""
    path = Path(path)
    text = json.dumps(report_document(rows, reports, specs), indent=2, sort_keys=True)
    path.write_text(text + "\n")
    logger.info(f"Wrote report to {path}")
    return path


def load_report_json(path: str | Path) -> list[SummaryRow]:
    document = json.loads(Path(path).read_text())
    if document.get("report_version") != REPORT_VERSION:
        raise ContractViolation(f"unsupported report version {document.get('report_version')}")
    return [SummaryRow(**row) for row in document["summary"]]
