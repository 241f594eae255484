"""Per-(method, region) jobs: fit or train, forecast, and persist results."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import nets
from .baselines import sir_forecast
from .config import ExperimentConfig
from .data import RegionSeries
from .pinn import Forecast, TrainingError, build_model, forecast, train
from .sir import fit_baseline

log = logging.getLogger(__name__)


@dataclass
class JobOutcome:
    method: str
    region: str
    status: str  # "done", "skipped" or "failed"
    error: Optional[str] = None
    kind: Optional[str] = None  # "data" or "training" for failures


def job_paths(out_dir, method: str, region: str) -> Dict[str, Path]:
    out = Path(out_dir)
    return {
        "forecast": out / "forecasts" / method / f"{region}.csv",
        "checkpoint": out / "checkpoints" / method / f"{region}.nets",
        "sidecar": out / "checkpoints" / method / f"{region}.json",
    }


def run_method(method: str, series: RegionSeries, cfg: ExperimentConfig):
    """Returns (forecast, sidecar dict, trained model or None)."""
    fit = fit_baseline(series, cfg.t0, config=cfg.fit_config())
    info = {
        "method": method,
        "region": series.region_id,
        "sir_fit": {
            "beta": fit.params.beta,
            "gamma": fit.params.gamma,
            "n": fit.params.n,
            "objective": fit.objective,
            "converged": fit.converged,
        },
    }
    if method == "sir":
        return sir_forecast(fit, series, cfg.horizon), info, None

    physics = method != "mlp"
    lam = cfg.lam if physics else 0.0
    model = build_model(
        fit.params,
        series.infected[: cfg.t0],
        cfg.schedule(method),
        lam=lam,
        seed=cfg.seed,
        horizon=cfg.horizon,
        physics=physics,
    )
    result = train(model, series, cfg.train_config(lam))
    info["estimates"] = result.model.estimates()
    info["phase_starts"] = list(result.model.schedule.phase_starts) if physics else []
    info["loss_history"] = [float(v) for v in result.history]
    return forecast(result.model, np.arange(1, cfg.horizon + 1)), info, result.model


def write_forecast(path: Path, series: RegionSeries, fc: Forecast) -> None:
    dates = [d.isoformat() for d in series.dates[: len(fc.days)]]
    dates += [""] * (len(fc.days) - len(dates))
    frame = pd.DataFrame(
        {"day_index": fc.days, "date": dates, "S": fc.s, "I": fc.i, "R": fc.r}
    )
    tmp = path.with_suffix(".tmp")
    frame.to_csv(tmp, index=False, float_format="%.17g", lineterminator="\n")
    os.replace(tmp, path)


def read_forecast(out_dir, method: str, region: str) -> pd.DataFrame:
    return pd.read_csv(job_paths(out_dir, method, region)["forecast"], float_precision="round_trip")


def is_complete(out_dir, method: str, region: str, fingerprint: str) -> bool:
    paths = job_paths(out_dir, method, region)
    if not paths["forecast"].exists() or not paths["sidecar"].exists():
        return False
    try:
        meta = json.loads(paths["sidecar"].read_text())
    except json.JSONDecodeError:
        return False
    return meta.get("fingerprint") == fingerprint


def execute_job(method: str, series: RegionSeries, cfg: ExperimentConfig, resume: bool = True) -> JobOutcome:
    region = series.region_id
    fingerprint = cfg.job_fingerprint(method)
    if resume and is_complete(cfg.out_dir, method, region, fingerprint):
        log.info("skip %s/%s (already complete)", method, region)
        return JobOutcome(method, region, "skipped")
    paths = job_paths(cfg.out_dir, method, region)
    for p in paths.values():
        p.parent.mkdir(parents=True, exist_ok=True)
    log.info("start %s/%s", method, region)
    try:
        fc, info, model = run_method(method, series, cfg)
    except TrainingError as exc:
        log.error("%s/%s: %s", method, region, exc)
        return JobOutcome(method, region, "failed", str(exc), "training")
    except ValueError as exc:
        log.error("%s/%s: %s", method, region, exc)
        return JobOutcome(method, region, "failed", str(exc), "data")
    info["fingerprint"] = fingerprint
    if model is not None:
        nets.save_nets(paths["checkpoint"], model.nets(), {"method": method, "region": region})
    paths["sidecar"].write_text(json.dumps(info, indent=1, sort_keys=True) + "\n")
    # the forecast goes last: its presence marks the job as finished
    write_forecast(paths["forecast"], series, fc)
    log.info("done %s/%s", method, region)
    return JobOutcome(method, region, "done")


def _execute(args):
    return execute_job(*args)


def run_jobs(
    plan: Sequence[Tuple[str, str]],
    dataset: Mapping[str, RegionSeries],
    cfg: ExperimentConfig,
    jobs: int = 1,
    resume: bool = True,
) -> List[JobOutcome]:
    """Run every (method, region) pair; outcomes come back sorted by that key."""
    tasks = [(m, dataset[r], cfg, resume) for m, r in sorted(plan)]
    if jobs <= 1 or len(tasks) <= 1:
        outcomes = [_execute(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_execute, tasks))
    return sorted(outcomes, key=lambda o: (o.method, o.region))


def make_plan(methods: Iterable[str], regions: Iterable[str]) -> List[Tuple[str, str]]:
    return sorted((m, r) for m in methods for r in regions)
