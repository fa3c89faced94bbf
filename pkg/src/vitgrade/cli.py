"""Command-line interface.

Subcommands: gen-synth, probe, finetune, eval, attn, export-features.
Every subcommand accepts --config (flat key=value file) plus the override
flags --data, --manifest, --ckpt, --out, --seed, --mass. On failure the
process exits nonzero after printing a single line
``error: <category>: <message>`` to stderr.
"""

import argparse
import sys
from pathlib import Path

from .configfile import (
    build_run_config,
    build_synthetic_spec,
    parse_config_file,
    synth_per_level,
)
from .errors import ConfigError, VitgradeError
from .pipeline import export_features, run_attention, run_eval, run_finetune, run_probe
from .synth import gen_synthetic


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--data", help="data directory (its manifest.csv is used) "
                                    "or, for attn, the input image")
    sub.add_argument("--manifest", help="manifest CSV override")
    sub.add_argument("--ckpt", help="checkpoint path override")
    sub.add_argument("--out", help="output directory or file override")
    sub.add_argument("--seed", type=int, help="seed override")
    sub.add_argument("--mass", type=float, help="attention mass threshold override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vitgrade",
                                     description="ViT tortuosity-grading engine")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("gen-synth", "generate a synthetic ordinal fiber dataset"),
        ("probe", "train a linear probe on a frozen backbone"),
        ("finetune", "fine-tune with freeze/warmup/cosine/layerwise recipe"),
        ("eval", "evaluate a checkpoint on a manifest"),
        ("attn", "render an attention-mass mask for one image"),
        ("export-features", "write CLS features for a manifest to CSV"),
    ):
        _add_common(subs.add_parser(name, help=helptext))
    return parser


def _config_values(args) -> dict[str, str]:
    return parse_config_file(args.config) if args.config else {}


def _manifest_path(args, values) -> str:
    if args.manifest:
        return args.manifest
    if args.data:
        return str(Path(args.data) / "manifest.csv")
    if "manifest" in values:
        return values["manifest"]
    raise ConfigError("no manifest given (use --manifest, --data or the config file)")


def _run(args) -> int:
    values = _config_values(args)

    if args.command == "gen-synth":
        spec = build_synthetic_spec(values, seed=args.seed)
        out = args.out or args.data or values.get("out_dir")
        if not out:
            raise ConfigError("gen-synth needs --out (or out_dir in the config)")
        manifest = gen_synthetic(spec, synth_per_level(values), out)
        counts = manifest.level_counts()
        print(f"wrote {len(manifest)} images to {out} (per level: {counts})")
        return 0

    if args.command in ("probe", "finetune"):
        overrides = {"seed": args.seed, "out_dir": args.out, "init_ckpt": args.ckpt,
                     "mode": args.command}
        if args.manifest or args.data:
            overrides["manifest"] = _manifest_path(args, values)
        cfg = build_run_config(values, overrides)
        result = run_probe(cfg) if args.command == "probe" else run_finetune(cfg)
        print(result.report.format_table())
        print(f"checkpoint: {result.checkpoint_path}")
        print(f"report: {Path(cfg.out_dir) / 'report.json'}")
        return 0

    if args.command == "eval":
        ckpt = args.ckpt or values.get("init_ckpt")
        if not ckpt:
            raise ConfigError("eval needs --ckpt")
        report = run_eval(ckpt, _manifest_path(args, values), args.out)
        print(report.to_json() if args.out is None else f"report: {args.out}")
        return 0

    if args.command == "attn":
        ckpt = args.ckpt or values.get("init_ckpt")
        if not ckpt:
            raise ConfigError("attn needs --ckpt")
        image = args.data or values.get("image")
        if not image:
            raise ConfigError("attn needs an input image (--data or image= in config)")
        mass = args.mass if args.mass is not None else float(values.get("mass", 0.6))
        out = args.out or "mask.pgm"
        _, kept, fraction = run_attention(ckpt, image, mass, out)
        print(f"kept {kept} patches covering {fraction:.4f} of the attention mass")
        print(f"mask: {out}")
        return 0

    if args.command == "export-features":
        ckpt = args.ckpt or values.get("init_ckpt")
        if not ckpt:
            raise ConfigError("export-features needs --ckpt")
        out = args.out or "features.csv"
        rows = export_features(ckpt, _manifest_path(args, values), out)
        print(f"wrote {rows} feature rows to {out}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except VitgradeError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
