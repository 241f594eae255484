"""Regional COVID-19 series: DPC feed ingestion, canonical storage, splits and synthetic waves."""
from __future__ import annotations

import datetime as dt
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .sir import SirParams, SirState, integrate

log = logging.getLogger(__name__)

WINDOW_START = dt.date(2020, 3, 5)
WINDOW_END = dt.date(2020, 7, 14)
WINDOW_DAYS = 132

# resident population on 1 January 2020 (ISTAT), keyed by the DPC region name
CENSUS_2020: Dict[str, int] = {
    "Abruzzo": 1293941,
    "Basilicata": 553254,
    "Calabria": 1894110,
    "Campania": 5712143,
    "Emilia-Romagna": 4464119,
    "Friuli Venezia Giulia": 1206216,
    "Lazio": 5755700,
    "Liguria": 1524826,
    "Lombardia": 10027602,
    "Marche": 1512672,
    "Molise": 300516,
    "P.A. Bolzano": 532644,
    "P.A. Trento": 545425,
    "Piemonte": 4311217,
    "Puglia": 3953305,
    "Sardegna": 1611621,
    "Sicilia": 4875290,
    "Toscana": 3692555,
    "Umbria": 870165,
    "Valle d'Aosta": 125034,
    "Veneto": 4879133,
}

DPC_COLUMNS = {
    "date": "data",
    "region": "denominazione_regione",
    "positives": "totale_positivi",
    "recovered": "dimessi_guariti",
    "deceased": "deceduti",
}


class DataError(ValueError):
    """Input data violates the expected schema or invariants."""


def region_slug(name: str) -> str:
    slug = re.sub(r"[^0-9a-z]+", "_", name.lower().replace("'", "")).strip("_")
    return slug


@dataclass
class RegionSeries:
    region_id: str
    name: str
    dates: List[dt.date]
    infected: np.ndarray
    recovered_removed: np.ndarray
    census_population: float

    def __post_init__(self):
        self.infected = np.asarray(self.infected, dtype=np.float64)
        self.recovered_removed = np.asarray(self.recovered_removed, dtype=np.float64)
        n = len(self.dates)
        if self.infected.shape != (n,) or self.recovered_removed.shape != (n,):
            raise DataError(f"{self.region_id}: series lengths disagree with {n} dates")
        if np.any(self.infected < 0) or np.any(self.recovered_removed < 0):
            raise DataError(f"{self.region_id}: negative counts")
        for a, b in zip(self.dates, self.dates[1:]):
            if (b - a).days != 1:
                raise DataError(f"{self.region_id}: dates not contiguous between {a} and {b}")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def days(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    def slice(self, start: int, stop: int) -> "RegionSeries":
        return RegionSeries(
            self.region_id,
            self.name,
            self.dates[start:stop],
            self.infected[start:stop],
            self.recovered_removed[start:stop],
            self.census_population,
        )

    def equals(self, other: "RegionSeries") -> bool:
        return (
            self.region_id == other.region_id
            and self.name == other.name
            and list(self.dates) == list(other.dates)
            and np.array_equal(self.infected, other.infected)
            and np.array_equal(self.recovered_removed, other.recovered_removed)
            and float(self.census_population) == float(other.census_population)
        )


@dataclass(frozen=True)
class SplitSpec:
    t0: int = 35
    test_len: int = 97

    @property
    def total(self) -> int:
        return self.t0 + self.test_len


def split(series: RegionSeries, spec: SplitSpec = SplitSpec()) -> Tuple[RegionSeries, RegionSeries]:
    if len(series) < spec.total:
        raise DataError(f"{series.region_id}: {len(series)} days, need {spec.total}")
    return series.slice(0, spec.t0), series.slice(spec.t0, spec.total)


# --------------------------------------------------------------------------
# DPC feed


def ingest_dpc_csv(
    path,
    start: dt.date = WINDOW_START,
    end: dt.date = WINDOW_END,
    census: Mapping[str, float] = CENSUS_2020,
) -> Dict[str, RegionSeries]:
    """Read the per-region daily DPC CSV and crop every region to ``[start, end]``."""
    try:
        frame = pd.read_csv(path, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    for col in DPC_COLUMNS.values():
        if col not in frame.columns:
            raise DataError(f"{path}: missing column {col!r}")

    frame = frame[list(DPC_COLUMNS.values())].copy()
    frame["day"] = pd.to_datetime(frame[DPC_COLUMNS["date"]].astype(str).str[:10]).dt.date
    wanted = [start + dt.timedelta(days=k) for k in range((end - start).days + 1)]
    out: Dict[str, RegionSeries] = {}
    for name, rows in frame.groupby(DPC_COLUMNS["region"], sort=True):
        rows = rows[(rows["day"] >= start) & (rows["day"] <= end)]
        if rows["day"].duplicated().any():
            dup = rows.loc[rows["day"].duplicated(), "day"].iloc[0]
            raise DataError(f"{name}: duplicate rows for {dup}")
        rows = rows.set_index("day")
        missing = [d for d in wanted if d not in rows.index]
        if missing:
            raise DataError(f"{name}: missing day {missing[0].isoformat()}")
        rows = rows.loc[wanted]
        positives = rows[DPC_COLUMNS["positives"]].to_numpy(dtype=np.float64)
        if np.any(positives < 0):
            bad = rows.index[np.argmax(positives < 0)]
            raise DataError(f"{name}: negative current positives on {bad.isoformat()}")
        removed = (rows[DPC_COLUMNS["recovered"]] + rows[DPC_COLUMNS["deceased"]]).to_numpy(dtype=np.float64)
        if np.any(np.diff(removed) < 0):
            log.warning("%s: recovered+deceased decreases on %d day(s)", name, int(np.sum(np.diff(removed) < 0)))
        if positives[0] <= 0:
            log.warning("%s: no infected persons on the first day", name)
        if name not in census:
            raise DataError(f"{name}: no census population available")
        series = RegionSeries(region_slug(name), name, wanted, positives, removed, float(census[name]))
        out[series.region_id] = series
    return out


def to_dpc_csv(series_map: Mapping[str, RegionSeries], path) -> None:
    """Write series in the DPC column layout (only the columns ingestion uses)."""
    rows = []
    for s in series_map.values():
        for d, i, r in zip(s.dates, s.infected, s.recovered_removed):
            rows.append(
                {
                    "data": f"{d.isoformat()}T18:00:00",
                    "stato": "ITA",
                    "denominazione_regione": s.name,
                    "totale_positivi": int(round(i)),
                    "dimessi_guariti": int(round(r)),
                    "deceduti": 0,
                }
            )
    pd.DataFrame(rows).to_csv(path, index=False)


# --------------------------------------------------------------------------
# canonical dataset directory


def write_dataset(out_dir, series_map: Mapping[str, RegionSeries], extra: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    (out / "regions").mkdir(parents=True, exist_ok=True)
    regions = []
    for rid in sorted(series_map):
        s = series_map[rid]
        frame = pd.DataFrame(
            {
                "day_index": np.arange(1, len(s) + 1),
                "date": [d.isoformat() for d in s.dates],
                "infected": s.infected,
                "recovered_removed": s.recovered_removed,
            }
        )
        frame.to_csv(out / "regions" / f"{rid}.csv", index=False, float_format="%.17g", lineterminator="\n")
        regions.append({"id": rid, "name": s.name, "census_population": s.census_population})
    windows = {(s.dates[0].isoformat(), s.dates[-1].isoformat()) for s in series_map.values()}
    manifest = {
        "regions": regions,
        "window": [list(w) for w in sorted(windows)],
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / "manifest.json"
    if not path.exists():
        raise DataError(f"{data_dir}: no manifest.json (run the ingest command first)")
    return json.loads(path.read_text())


def read_dataset(data_dir) -> Dict[str, RegionSeries]:
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    out = {}
    for entry in manifest["regions"]:
        frame = pd.read_csv(data_dir / "regions" / f"{entry['id']}.csv", float_precision="round_trip")
        out[entry["id"]] = RegionSeries(
            entry["id"],
            entry["name"],
            [dt.date.fromisoformat(d) for d in frame["date"]],
            frame["infected"].to_numpy(dtype=np.float64),
            frame["recovered_removed"].to_numpy(dtype=np.float64),
            float(entry["census_population"]),
        )
    return out


# --------------------------------------------------------------------------
# synthetic waves


@dataclass(frozen=True)
class SyntheticSpec:
    """Piecewise-constant SIR wave; every phase shares the population ``n``."""

    phases: Tuple[Tuple[int, SirParams], ...]
    i0: float
    r0: float = 0.0
    noise: float = 0.0
    total_days: int = WINDOW_DAYS
    seed: int = 0
    region_id: str = "synthetic"
    start_date: dt.date = WINDOW_START
    census_population: Optional[float] = None

    def __post_init__(self):
        starts = [p[0] for p in self.phases]
        if not starts or starts[0] != 1:
            raise ValueError("the first phase must start on day 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"phase starts must increase strictly: {starts}")
        if starts[-1] > self.total_days:
            raise ValueError("a phase starts after the last day")
        if len({p[1].n for p in self.phases}) != 1:
            raise ValueError("all phases must share the same population n")


@dataclass(frozen=True)
class SyntheticTruth:
    phases: Tuple[Tuple[int, SirParams], ...]
    days: np.ndarray
    states: np.ndarray  # noiseless, unrounded S, I, R


def integrate_phases(phases: Sequence[Tuple[int, SirParams]], init: SirState, total_days: int) -> np.ndarray:
    """Integrate phase by phase; the end state of one phase seeds the next."""
    states = np.empty((total_days, 3))
    state = init
    stops = [p[0] for p in phases[1:]] + [total_days + 1]
    for (start, params), stop in zip(phases, stops):
        # the grid runs onto the next phase's first day so the switch lands exactly there
        grid = np.arange(start, min(stop, total_days) + 1, dtype=np.float64)
        traj = integrate(params, state, grid)
        n_own = stop - start
        states[start - 1 : start - 1 + n_own] = traj.states[:n_own]
        state = traj.state_at(len(traj) - 1)
    return states


def generate_synthetic(spec: SyntheticSpec) -> Tuple[RegionSeries, SyntheticTruth]:
    n = spec.phases[0][1].n
    init = SirState(n - spec.i0 - spec.r0, spec.i0, spec.r0)
    states = integrate_phases(spec.phases, init, spec.total_days)
    infected = states[:, 1].copy()
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        infected = infected * rng.lognormal(0.0, spec.noise, size=infected.size)
    dates = [spec.start_date + dt.timedelta(days=k) for k in range(spec.total_days)]
    census = spec.census_population if spec.census_population is not None else 10.0 * n
    series = RegionSeries(
        spec.region_id,
        spec.region_id,
        dates,
        np.round(infected),
        np.round(states[:, 2]),
        census,
    )
    truth = SyntheticTruth(spec.phases, np.arange(1, spec.total_days + 1), states)
    return series, truth


def single_phase_wave(seed: int = 0, noise: float = 0.0) -> SyntheticSpec:
    """Reference single-phase wave used by the synthetic experiments."""
    return SyntheticSpec(
        phases=((1, SirParams(0.12, 0.04, 100_000.0)),),
        i0=2_000.0,
        noise=noise,
        seed=seed,
        region_id="synthetic_1phase",
    )


def two_phase_wave(seed: int = 0, noise: float = 0.0, switch_day: int = 65) -> SyntheticSpec:
    """Reference wave whose recovery rate doubles at ``switch_day``."""
    return SyntheticSpec(
        phases=(
            (1, SirParams(0.12, 0.04, 100_000.0)),
            (switch_day, SirParams(0.12, 0.08, 100_000.0)),
        ),
        i0=2_000.0,
        noise=noise,
        seed=seed,
        region_id="synthetic_2phase",
    )
