"""Command-line front end.

Exit codes: 0 suite passed, 1 a check failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import suites, tensor as tz
from .config import (
    ConfigError,
    RunConfig,
    ablation_base_config,
    load_config,
    micro_config,
    toy_overfit_config,
)
from .model import init_model_params, load_checkpoint, save_checkpoint
from .report import Report
from .synth import gen_synthetic_batch, load_identity_fixture, save_identity_fixture

_DEFAULTS = {
    "gradcheck": micro_config,
    "invariants": micro_config,
    "overfit": toy_overfit_config,
    "ablate": ablation_base_config,
    "dump": toy_overfit_config,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moca", description=__doc__)
    parser.add_argument("--config", type=Path, help="run config JSON")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--precision", choices=("f32", "f64"), help="override precision")
    parser.add_argument("--out", type=Path, help="output directory for reports")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gradcheck", "invariants", "overfit", "dump"):
        sub.add_parser(name)
    ablate = sub.add_parser("ablate")
    ablate.add_argument("--axis", choices=("experts", "pools"), default="experts")
    return parser


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else _DEFAULTS[args.command]()
    if args.seed is not None:
        model_cfg = dataclasses.replace(cfg.model, seed=args.seed)
        cfg = dataclasses.replace(cfg, model=model_cfg, seed=args.seed)
    if args.precision is not None:
        cfg = dataclasses.replace(cfg, precision=args.precision)
    if args.out is not None:
        cfg = dataclasses.replace(cfg, out_dir=str(args.out))
    return cfg.validate()


def _run_dump(cfg: RunConfig, out: Path) -> Report:
    """Write every default fixture and a fresh checkpoint, re-read both,
    and verify the round trips bit-exactly."""
    tz.set_precision(cfg.precision)
    report = Report(suite="dump", config=suites._echo_config(cfg))
    model_cfg = cfg.model.resolved()
    batch = gen_synthetic_batch(model_cfg, cfg.seed)

    fixture_dir = out / "fixtures" / f"identity_{batch.identity_id:03d}"
    save_identity_fixture(fixture_dir, batch)
    arrays, sidecar = load_identity_fixture(fixture_dir)
    fixtures_ok = (
        np.array_equal(arrays["z0"], batch.z0)
        and np.array_equal(arrays["text"], batch.text)
        and np.array_equal(arrays["pixel_mask"], batch.pixel_mask)
        and all(
            np.array_equal(arrays[f"pool.{i}"], entry)
            for i, entry in enumerate(batch.pool.entries)
        )
        and sidecar["pool_size"] == len(batch.pool)
    )
    report.add(
        "fixture_roundtrip_bit_exact",
        fixtures_ok,
        measured=0.0 if fixtures_ok else 1.0,
        tolerance=0.0,
        detail=str(fixture_dir),
    )

    ckpt_dir = out / "checkpoint"
    params = init_model_params(model_cfg)
    save_checkpoint(ckpt_dir, params, model_cfg)
    loaded, loaded_cfg = load_checkpoint(ckpt_dir)
    from .params import named_parameters

    stored = dict(named_parameters(params))
    ckpt_ok = loaded_cfg == model_cfg and all(
        np.array_equal(t.data, stored[name].data) for name, t in named_parameters(loaded)
    )
    report.add(
        "checkpoint_roundtrip_bit_exact",
        ckpt_ok,
        measured=0.0 if ckpt_ok else 1.0,
        tolerance=0.0,
        detail=str(ckpt_dir),
    )
    return report


def cli_entry(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code else 0
    try:
        cfg = _resolve_config(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "gradcheck":
            report = suites.run_gradcheck(cfg)
        elif args.command == "invariants":
            report = suites.run_invariants(cfg)
        elif args.command == "overfit":
            report = suites.run_overfit(cfg, log_path=out / "train_log.jsonl")
        elif args.command == "ablate":
            report = suites.run_ablation(cfg, args.axis)
        else:
            report = _run_dump(cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    path = report.write(out / f"{report.suite}_report.json")
    report.print_summary()
    print(f"report: {path}")
    return 0 if report.passed else 1


def main() -> None:
    sys.exit(cli_entry())


if __name__ == "__main__":
    main()
