"""Command-line interface.

Subcommands:
    gen-data <specfile> -o <file>   write a synthetic dataset container
    train -c <config>               run training, metrics + checkpoint
    eval -c <config> --ckpt <file>  one evaluation record for a checkpoint
    gradcheck [--module ...]        finite-difference gradient verification
    sweep -c <base> --vary k=v1,v2  one run and one CSV row per value
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from . import checkpoint as ckpt
from .config import RunConfig, config_overrides, load_config, parse_kv_text
from .data import SyntheticSpec, gen_synthetic
from .errors import ConfigError, GclabError, InvalidSpecError, NonFiniteGradientError
from .gradcheck import run_gradcheck
from .run import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, eval_record, init_state, load_run_dataset, run

_SPEC_KEYS = {
    "n": int, "classes": int, "d_latent": int, "d_raw_image": int,
    "d_raw_text": int, "noise": float, "seed": int,
}


def _load_spec(path) -> SyntheticSpec:
    pairs = parse_kv_text(Path(path).read_text(encoding="utf-8"))
    values = {}
    for key, raw in pairs.items():
        if key not in _SPEC_KEYS:
            raise ConfigError(f"unknown key {key!r} in dataset spec")
        try:
            values[key] = _SPEC_KEYS[key](raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: bad value {raw!r}") from exc
    missing = sorted(set(_SPEC_KEYS) - set(values))
    if missing:
        raise ConfigError(f"dataset spec missing keys: {', '.join(missing)}")
    return SyntheticSpec(**values)


def cmd_gen_data(args) -> int:
    spec = _load_spec(args.spec)
    data = gen_synthetic(spec)
    ckpt.save_dataset(args.output, data)
    print(f"wrote {data.n} pairs to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    return run(cfg)


def cmd_eval(args) -> int:
    cfg = load_config(args.config, need_out_dir=False)
    data = load_run_dataset(cfg)
    state = init_state(cfg, data)
    ckpt.load_state(args.ckpt, state)
    record = eval_record(state, time.monotonic())
    print(json.dumps(record, separators=(",", ":")))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_gradcheck(module=args.module, n_seeds=args.seeds)
    bad = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        bad += 0 if r.ok else 1
        print(f"{status} {r.name}  max_rel_err={r.rel_err:.3e}")
    return EXIT_OK if bad == 0 else EXIT_NUMERIC


_SWEEP_FIELDS = ("key", "value", "step", "samples_seen", "gcl_value_on_eval_pool",
                 "recall@1", "recall@5", "estimation_error", "tau")


def cmd_sweep(args) -> int:
    base = load_config(args.config)
    if "=" not in args.vary:
        raise ConfigError("--vary expects key=v1,v2,...")
    key, joined = args.vary.split("=", 1)
    key = key.strip()
    values = [v.strip() for v in joined.split(",") if v.strip()]
    if not values:
        raise ConfigError("--vary lists no values")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_SWEEP_FIELDS)
    writer.writeheader()
    for value in values:
        cfg = config_overrides(base, {key: value})
        tag = f"{key}={value}".replace("/", "_")
        cfg.out_dir = str(Path(base.out_dir) / tag)
        code = run(cfg)
        if code != EXIT_OK:
            return code
        last = _read_last_record(Path(cfg.out_dir) / "metrics.jsonl")
        row = {"key": key, "value": value}
        row.update({k: last[k] for k in _SWEEP_FIELDS if k in last})
        writer.writerow(row)
    text = buf.getvalue()
    out_csv = Path(base.out_dir) / "sweep.csv"
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    out_csv.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _read_last_record(path) -> dict:
    last = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                last = json.loads(line)
    if last is None:
        raise GclabError(f"{path}: empty metric log")
    return last


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gclab")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("spec", help="flat key=value spec file")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="run a training configuration")
    t.add_argument("-c", "--config", required=True)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("-c", "--config", required=True)
    e.add_argument("--ckpt", required=True)
    e.set_defaults(fn=cmd_eval)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    gc.add_argument("--module", default="all",
                    choices=["all", "objective", "npn", "encoders"])
    gc.add_argument("--seeds", type=int, default=20)
    gc.set_defaults(fn=cmd_gradcheck)

    s = sub.add_parser("sweep", help="run one config per varied value")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("--vary", required=True, metavar="key=v1,v2,...")
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidSpecError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteGradientError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
