"""Command-line entry point: ingest, run, evaluate and reproduce."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import data as data_mod
from .config import METHODS, ExperimentConfig
from .experiment import job_paths, make_plan, read_forecast, run_jobs
from .metrics import MetricConfig, emit_report, evaluate

log = logging.getLogger("phasepinn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps subcommand defaults from clobbering values given before the subcommand
    p = argparse.ArgumentParser(add_help=False)
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="JSON experiment config; flags override its values")
    p.add_argument("--print-config", action="store_true", default=s, help="print the effective config and exit")
    p.add_argument("--data", default=s, help="canonical dataset directory")
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--epochs", type=int, default=s)
    p.add_argument("--jobs", type=int, default=s, help="worker processes")
    p.add_argument("--verbose", "-v", action="store_true", default=s)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = _Parser(prog="phasepinn", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="build the canonical dataset")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="regional DPC CSV")
    src.add_argument("--synthetic", action="store_true", help="write the synthetic reference waves")
    p.add_argument("--out", help="dataset directory (default: the config's data_dir)")

    p = sub.add_parser("run", parents=[common], help="fit or train one method")
    p.add_argument("--method", choices=METHODS, help="required unless --print-config")
    p.add_argument("--region", default="all", help="region id, region name, or 'all'")
    p.add_argument("--out", help="results directory")

    p = sub.add_parser("evaluate", parents=[common], help="score forecasts and write the report")
    p.add_argument("--methods", "--method", dest="methods", action="append", help="method(s), comma separated")
    p.add_argument("--synthetic", action="store_true", help="score against the noiseless synthetic truth")
    p.add_argument("--out", help="results directory")

    p = sub.add_parser("reproduce", parents=[common], help="ingest, run every job, evaluate")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--input", help="regional DPC CSV (ingested first)")
    src.add_argument("--synthetic", action="store_true", help="use the synthetic reference waves")
    p.add_argument("--dry-run", action="store_true", help="print the job plan only")
    p.add_argument("--out", help="results directory")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if getattr(args, "config", None) else ExperimentConfig()
    updates = {}
    for flag, key in (("seed", "seed"), ("epochs", "epochs"), ("jobs", "jobs"), ("data", "data_dir")):
        value = getattr(args, flag, None)
        if value is not None:
            updates[key] = value
    if getattr(args, "command", None) != "ingest" and getattr(args, "out", None):
        updates["out_dir"] = args.out
    if getattr(args, "input", None):
        updates["input_csv"] = args.input
    if updates:
        merged = cfg.to_dict()
        merged.update(updates)
        cfg = ExperimentConfig.from_dict(merged)
    if cfg.epochs < 0:
        raise UsageError("epochs must be >= 0")
    return cfg


def resolve_regions(spec, dataset: Dict[str, data_mod.RegionSeries]) -> List[str]:
    if spec == "all":
        return sorted(dataset)
    wanted = [spec] if isinstance(spec, str) else list(spec)
    out = []
    for w in wanted:
        key = w.strip()
        match = [rid for rid, s in dataset.items() if key in (rid, s.name) or data_mod.region_slug(key) == rid]
        if not match:
            raise UsageError(f"unknown region {w!r}; known: {', '.join(sorted(dataset))}")
        out.extend(match)
    return sorted(set(out))


def _synthetic_dataset(cfg: ExperimentConfig):
    series, truths = {}, {}
    for spec in (data_mod.single_phase_wave(cfg.seed, cfg.synthetic_noise), data_mod.two_phase_wave(cfg.seed, cfg.synthetic_noise)):
        s, truth = data_mod.generate_synthetic(spec)
        series[s.region_id] = s
        truths[s.region_id] = truth
    return series, truths


def do_ingest(cfg: ExperimentConfig, out_dir, synthetic: bool) -> Path:
    out_dir = Path(out_dir)
    if synthetic:
        series, truths = _synthetic_dataset(cfg)
        data_mod.write_dataset(out_dir, series, {"synthetic": True})
        (out_dir / "truth").mkdir(exist_ok=True)
        for rid, truth in sorted(truths.items()):
            frame = pd.DataFrame({"day_index": truth.days, "S": truth.states[:, 0], "I": truth.states[:, 1], "R": truth.states[:, 2]})
            frame.to_csv(out_dir / "truth" / f"{rid}.csv", index=False, float_format="%.17g", lineterminator="\n")
        log.info("wrote %d synthetic regions to %s", len(series), out_dir)
        return out_dir
    if not cfg.input_csv:
        raise UsageError("ingest needs --input or --synthetic")
    if not Path(cfg.input_csv).exists():
        raise data_mod.DataError(f"{cfg.input_csv}: no such file")
    series = data_mod.ingest_dpc_csv(cfg.input_csv)
    data_mod.write_dataset(out_dir, series, {"synthetic": False})
    log.info("wrote %d regions to %s", len(series), out_dir)
    return out_dir


def _load_dataset(cfg: ExperimentConfig):
    dataset = data_mod.read_dataset(cfg.data_dir)
    needed = cfg.horizon
    short = [rid for rid, s in dataset.items() if len(s) < needed]
    if short:
        raise data_mod.DataError(f"regions shorter than {needed} days: {', '.join(sorted(short))}")
    return dataset


def _report_outcomes(outcomes) -> int:
    failed = [o for o in outcomes if o.status == "failed"]
    for o in outcomes:
        print(f"{o.method:8s} {o.region:24s} {o.status}" + (f": {o.error}" if o.error else ""))
    if not failed:
        return EXIT_OK
    print(f"{len(failed)} of {len(outcomes)} job(s) failed", file=sys.stderr)
    return EXIT_TRAINING if any(o.kind == "training" for o in failed) else EXIT_DATA


def do_run(cfg: ExperimentConfig, method: str, region_spec) -> int:
    dataset = _load_dataset(cfg)
    regions = resolve_regions(region_spec, dataset)
    outcomes = run_jobs(make_plan([method], regions), dataset, cfg, jobs=cfg.jobs)
    return _report_outcomes(outcomes)


def _truth_infected(data_dir, region: str) -> np.ndarray:
    path = Path(data_dir) / "truth" / f"{region}.csv"
    if not path.exists():
        raise data_mod.DataError(f"{path}: no synthetic ground truth")
    return pd.read_csv(path, float_precision="round_trip")["I"].to_numpy(dtype=np.float64)


def do_evaluate(cfg: ExperimentConfig, methods: Sequence[str], synthetic: bool) -> int:
    dataset = _load_dataset(cfg)
    regions = sorted(dataset)
    missing = [(m, r) for m in methods for r in regions if not job_paths(cfg.out_dir, m, r)["forecast"].exists()]
    if missing:
        listing = "\n".join(f"  {m} {r}" for m, r in missing)
        print(f"missing forecasts for {len(missing)} (method, region) pair(s):\n{listing}", file=sys.stderr)
        return EXIT_DATA
    if synthetic:
        observed = {r: _truth_infected(cfg.data_dir, r)[: cfg.horizon] for r in regions}
    else:
        observed = {r: dataset[r].infected[: cfg.horizon] for r in regions}
    forecasts = {
        m: {r: read_forecast(cfg.out_dir, m, r)["I"].to_numpy(dtype=np.float64) for r in regions} for m in methods
    }
    report = evaluate(observed, forecasts, MetricConfig(), cfg.t0)
    written = emit_report(report, cfg.out_dir)
    print(written["results"].read_text(), end="")
    return EXIT_OK


def do_reproduce(cfg: ExperimentConfig, synthetic: bool, dry_run: bool) -> int:
    if synthetic or cfg.input_csv:
        if dry_run and synthetic:
            regions = sorted(_synthetic_dataset(cfg)[0])
        else:
            do_ingest(cfg, cfg.data_dir, synthetic)
    if not (dry_run and synthetic):
        regions = resolve_regions(cfg.regions, _load_dataset(cfg))
    plan = make_plan(cfg.methods, regions)
    if dry_run:
        for method, region in plan:
            print(f"{method} {region}")
        print(f"{len(plan)} jobs ({len(cfg.methods)} methods x {len(regions)} regions)")
        return EXIT_OK
    dataset = _load_dataset(cfg)
    code = _report_outcomes(run_jobs(plan, dataset, cfg, jobs=cfg.jobs))
    if code != EXIT_OK:
        return code
    return do_evaluate(cfg, list(cfg.methods), synthetic)


def _split_methods(values) -> List[str]:
    if not values:
        return []
    out = [m.strip() for v in values for m in v.split(",") if m.strip()]
    unknown = [m for m in out if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s): {', '.join(unknown)}; choose from {', '.join(METHODS)}")
    return out


def _setup_logging(verbose: bool, log_dir: Optional[Path]) -> None:
    root = logging.getLogger("phasepinn")
    root.setLevel(logging.INFO)
    root.handlers.clear()
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.INFO if verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    root.addHandler(console)
    if log_dir is not None:
        log_dir.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(log_dir / "phasepinn.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s %(message)s"))
        root.addHandler(handler)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if getattr(args, "print_config", False):
            print(cfg.to_json(), end="")
            return EXIT_OK
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        log_dir = None if args.command in ("ingest",) or getattr(args, "dry_run", False) else Path(cfg.out_dir) / "logs"
        _setup_logging(getattr(args, "verbose", False), log_dir)

        if args.command == "ingest":
            do_ingest(cfg, args.out or cfg.data_dir, args.synthetic)
            return EXIT_OK
        if args.command == "run":
            if args.method is None:
                raise UsageError("run needs --method")
            return do_run(cfg, args.method, args.region)
        if args.command == "evaluate":
            methods = _split_methods(args.methods) or list(cfg.methods)
            return do_evaluate(cfg, methods, args.synthetic)
        if args.command == "reproduce":
            return do_reproduce(cfg, args.synthetic, args.dry_run)
    except UsageError as exc:
        print(f"phasepinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (data_mod.DataError, FileNotFoundError, KeyError) as exc:
        print(f"phasepinn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid config values
        print(f"phasepinn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
