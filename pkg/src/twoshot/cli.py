"""Command-line entry point wiring config, stages, and the annotation service.

Exit codes: 0 success, 1 validation or configuration failure, 2 missing
prerequisite (the error names the stage to run first).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import modmath, pipeline, synthetic
from .annosvc import LabelStore, make_app
from .config import PipelineConfig, apply_override, load_config
from .errors import PrerequisiteError, TwoshotError

log = logging.getLogger("twoshot")

# flag name -> dotted config key; every tunable is overridable on any subcommand
TUNABLE_FLAGS = {
    "max-gap": "segmenter.max_gap",
    "min-len": "segmenter.min_len",
    "min-confidence": "segmenter.min_confidence",
    "tail": "hostid.tail",
    "n-boot": "hostid.n_boot",
    "theta-new": "hostid.theta_new",
    "vote-fraction": "hostid.vote_fraction",
    "vote-mode": "hostid.vote_mode",
    "max-merge-gap-s": "hostid.max_merge_gap_s",
    "tau": "hostid.tau_override",
    "seed": "hostid.seed",
    "guest-coverage": "cropper.guest_coverage",
    "host-coverage": "cropper.host_coverage",
    "area-ratio": "cropper.area_ratio",
    "area-source": "cropper.area_source",
    "expand-factor": "cropper.expand_factor",
    "down-shift": "cropper.down_shift",
    "iqr-k": "cropper.iqr_k",
    "split-ratios": "split.ratios",
    "split-by": "split.by",
    "sample-fraction": "annotation.sample_fraction",
    "lease-seconds": "annotation.lease_seconds",
    "output-dir": "output_dir",
    "workers": "workers",
}

GUIDANCE_SWEEP = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0)


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", help="pipeline config file (YAML)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key, e.g. --set hostid.tail=0.02",
    )
    for flag, dotted in TUNABLE_FLAGS.items():
        parser.add_argument(f"--{flag}", dest=f"tunable_{flag.replace('-', '_')}", metavar=dotted)


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    for flag, dotted in TUNABLE_FLAGS.items():
        value = getattr(args, f"tunable_{flag.replace('-', '_')}", None)
        if value is not None:
            apply_override(cfg, dotted, value)
    for item in args.overrides:
        if "=" not in item:
            raise TwoshotError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        apply_override(cfg, key, value)
    cfg.validate()
    return cfg


def _print_result(result: pipeline.StageResult) -> None:
    if result.skipped:
        print(f"stage {result.stage}: up to date")
    else:
        print(f"stage {result.stage}: {json.dumps(result.counts, sort_keys=True)} ({result.wall_s:.2f}s)")


def _cmd_stage(name: str):
    def handler(args: argparse.Namespace) -> int:
        cfg = _resolve_config(args)
        _print_result(pipeline.run_stage(name, cfg, force=args.force))
        if name == "stats":
            stats_path = cfg.out_path("stats", "stats.txt")
            print(stats_path.read_text(encoding="utf-8"), end="")
        if name == "plan-renders" and getattr(args, "execute", False):
            from .cropper import run_render_commands

            commands = [
                line
                for line in cfg.out_path("renders", "commands.sh")
                .read_text(encoding="utf-8")
                .splitlines()
                if line.strip()
            ]
            codes = run_render_commands(commands, workers=cfg.workers)
            failed = sum(1 for code in codes if code != 0)
            print(f"executed {len(codes)} encode commands, {failed} failed")
            return 0 if failed == 0 else 1
        return 0

    return handler


def _cmd_run_all(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    for result in pipeline.run_all(cfg, force=args.force):
        _print_result(result)
    return 0


def _cmd_make_tasks(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    counts = pipeline.make_tasks(cfg, args.stage)
    print(f"make-tasks {args.stage}: {json.dumps(counts, sort_keys=True)}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    cfg = _resolve_config(args)
    data_dir = args.data_dir or cfg.labels.store_dir or str(cfg.out_path("anno"))
    store = LabelStore(data_dir, lease_seconds=cfg.annotation.lease_seconds)
    ui_dir = args.ui_dir if args.ui_dir and Path(args.ui_dir).is_dir() else None
    app = make_app(store, media_root=args.media_root or cfg.inputs.media_root, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_mod_sweep(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((args.tokens, args.features))
    triple = modmath.ModulationTriple(
        shift=rng.standard_normal(args.features) * 0.1,
        scale=rng.standard_normal(args.features) * 0.1,
        gate=rng.standard_normal(args.features) * 0.1,
    )
    uncond = x.copy()
    cond = modmath.apply_video_modulation(x, triple)
    print("guidance\tdelta_vs_uncond\tdelta_vs_cond\toutput_rms")
    for guidance in GUIDANCE_SWEEP:
        out = modmath.cfg_combine(uncond, cond, guidance)
        d_un = float(np.mean(np.abs(out - uncond)))
        d_co = float(np.mean(np.abs(out - cond)))
        rms = float(np.sqrt(np.mean(out**2)))
        print(f"{guidance:.2f}\t{d_un:.6f}\t{d_co:.6f}\t{rms:.6f}")
    return 0


def _cmd_make_fixture(args: argparse.Namespace) -> int:
    truth = synthetic.generate(args.dir, seed=args.seed)
    print(f"fixture written to {args.dir} (clip {truth['clip_id']})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twoshot",
        description="Curate two-person interview footage into paired, aligned clips.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    stage_names = list(pipeline.RUN_ALL_ORDER)
    for name in stage_names:
        p = sub.add_parser(name, help=f"run the {name} stage")
        _add_config_arguments(p)
        p.add_argument("--force", action="store_true", help="rerun even if up to date")
        if name == "plan-renders":
            p.add_argument(
                "--execute",
                action="store_true",
                help="shell out to the external encoder with the plan's exact parameters",
            )
        p.set_defaults(handler=_cmd_stage(name))

    p = sub.add_parser("run-all", help="run every stage in order")
    _add_config_arguments(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=_cmd_run_all)

    p = sub.add_parser("make-tasks", help="create annotation tasks for a checkpoint")
    _add_config_arguments(p)
    p.add_argument("--stage", choices=["host_speech", "host_face"], required=True)
    p.set_defaults(handler=_cmd_make_tasks)

    p = sub.add_parser("serve-annotations", help="serve the annotation API and UI")
    _add_config_arguments(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--data-dir", help="label store directory")
    p.add_argument("--media-root", help="directory served under /media")
    p.add_argument("--ui-dir", default="frontend/dist", help="built UI assets")
    p.set_defaults(handler=_cmd_serve)

    p = sub.add_parser("mod-sweep", help="print a guidance sweep over fixture tensors")
    p.add_argument("--tokens", type=int, default=16)
    p.add_argument("--features", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=_cmd_mod_sweep)

    p = sub.add_parser("make-fixture", help="generate the bundled synthetic mini-episode")
    p.add_argument("dir")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(handler=_cmd_make_fixture)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except PrerequisiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TwoshotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
