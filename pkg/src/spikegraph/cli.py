"""Command line: gen, train, infer, profile, dump.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Every output CSV has a header row and no timestamps, so reruns
with the same config, seed and data produce identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, parse_assignments
from .datasets import (MODALITIES, Dataset, derive_modality, generate_synthetic, load_dataset,
                       resample_frames, write_bin, write_jsonl)
from .diagnostics import DUMP_KINDS, dump
from .errors import ConfigError, DataError, SpikeGraphError
from .model import TINY_CHANNELS, build_model
from .profiler import profile_model
from .train import ensemble_logits, evaluate, predict, train

CKPT_NAME = "checkpoint.npz"
_CONFIG_KEY = "__run_config__"


def _num(x) -> str:
    return f"{float(x):.8g}"


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _run_config(args, extra: dict | None = None) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = parse_assignments(getattr(args, "set", None))
    if getattr(args, "tiny", False):
        overrides["profile"] = "tiny"
    overrides.update({k: v for k, v in (extra or {}).items() if v is not None})
    cfg = cfg.merged(overrides)
    if cfg["profile"] == "tiny" and "channels" not in cfg._explicit:
        cfg.set("channels", TINY_CHANNELS)
    return cfg


def _prepare(ds: Dataset, cfg: RunConfig, modality: str, graph) -> np.ndarray:
    x = ds.x if ds.x.shape[1] == cfg["T"] else resample_frames(ds.x, cfg["T"])
    return derive_modality(x, modality, graph).astype(np.float32)


def save_checkpoint(path: Path, model, cfg: RunConfig):
    state = model.state_dict()
    state[_CONFIG_KEY] = np.array(cfg.to_text())
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with path.open("wb") as fh:
            np.savez(fh, **state)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def load_checkpoint(path):
    """Returns (model, run_config). ``path`` may be the file or its directory."""
    path = Path(path)
    if path.is_dir():
        path = path / CKPT_NAME
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            state = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise DataError(f"{path}: unreadable checkpoint ({exc})") from exc
    if _CONFIG_KEY not in state:
        raise DataError(f"{path}: checkpoint carries no run config")
    cfg = RunConfig.parse(str(state.pop(_CONFIG_KEY)), f"{path}:config")
    model = build_model(cfg.model_config())
    model.load_state_dict(state)
    model.eval()
    return model, cfg


# commands

def cmd_gen(args) -> int:
    ds = generate_synthetic(args.classes, args.per_class, args.joints, args.frames, args.seed)
    out = Path(args.out)
    formats = ("jsonl", "bin") if args.format == "both" else (args.format,)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{out}: {exc.strerror}") from exc
    for fmt in formats:
        path = out / f"{args.name}.{fmt}"
        (write_jsonl if fmt == "jsonl" else write_bin)(ds, path)
        print(f"wrote {len(ds)} samples to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args, {"modality": args.modality, "epochs": args.epochs, "seed": args.seed,
                             "lr": args.lr})
    ds = load_dataset(args.data)
    if "num_classes" not in cfg._explicit:
        cfg.set("num_classes", int(ds.num_classes))
    if args.test_data:
        tr, te = ds, load_dataset(args.test_data)
    else:
        tr, te = ds.split(cfg["test_fraction"], cfg["seed"])
    model = build_model(cfg.model_config())
    modality = cfg["modality"]
    tr = Dataset(_prepare(tr, cfg, modality, model.graph), tr.y)
    te = Dataset(_prepare(te, cfg, modality, model.graph), te.y) if len(te) else None
    out = Path(args.out)
    _write(out / "config.txt", cfg.to_text())
    log = None if args.quiet else (lambda msg: print(msg, flush=True))
    hist = train(model, tr, cfg.train_config(), test=te, log=log)
    save_checkpoint(out / CKPT_NAME, model, cfg)
    rows = [[e, _num(lr), _num(loss), _num(acc), "" if test == "" else _num(test)]
            for e, lr, loss, acc, test in hist.rows()]
    _write(out / "metrics.csv", _csv(["epoch", "lr", "loss", "train_accuracy", "test_accuracy"], rows))
    print(f"parameters={model.num_parameters()}")
    if te is not None:
        print(f"test_accuracy={evaluate(model, te)[1]:.4f}")
    return 0


def _ensemble_paths(root: Path, kinds):
    paths = []
    for kind in kinds:
        for candidate in (root / kind / CKPT_NAME, root / f"{kind}.npz"):
            if candidate.is_file():
                paths.append(candidate)
                break
        else:
            raise ConfigError(f"no checkpoint for stream {kind!r} under {root}")
    return paths


def cmd_infer(args) -> int:
    ds = load_dataset(args.data)
    if args.ensemble:
        kinds = [k.strip() for k in args.ensemble.split(",") if k.strip()]
        for k in kinds:
            if k not in MODALITIES:
                raise ConfigError(f"unknown modality {k!r}")
        paths = _ensemble_paths(Path(args.checkpoint), kinds)
    else:
        kinds, paths = [None], [Path(args.checkpoint)]
    stream_logits = []
    for kind, path in zip(kinds, paths):
        model, cfg = load_checkpoint(path)
        if kind is not None and cfg["modality"] != kind:
            raise ConfigError(f"{path} was trained on {cfg['modality']!r}, not {kind!r}")
        stream_logits.append(predict(model, _prepare(ds, cfg, cfg["modality"], model.graph)))
    logits = ensemble_logits(stream_logits)
    pred = logits.argmax(axis=1)
    header = ["sample", "label", "pred"] + [f"logit_{c}" for c in range(logits.shape[1])]
    rows = [[i, int(y), int(p)] + [_num(v) for v in row]
            for i, (y, p, row) in enumerate(zip(ds.y, pred, logits))]
    _write(Path(args.out), _csv(header, rows))
    print(f"accuracy={float(np.mean(pred == ds.y)):.4f}")
    return 0


def _model_and_input(args):
    if args.checkpoint:
        model, cfg = load_checkpoint(args.checkpoint)
    else:
        cfg = _run_config(args)
        model = build_model(cfg.model_config())
        model.eval()
    if args.data:
        ds = load_dataset(args.data)
    else:
        ds = generate_synthetic(5, 2, model.V, cfg["T"], cfg["seed"])
    return model, cfg, _prepare(ds, cfg, cfg["modality"], model.graph)


def cmd_profile(args) -> int:
    model, cfg, x = _model_and_input(args)
    report = profile_model(model, x[:args.batch])
    print(report.to_text())
    print(f"parameters={model.num_parameters()}")
    if args.out:
        _write(Path(args.out), report.to_csv())
    return 0


def cmd_dump(args) -> int:
    model, cfg, x = _model_and_input(args)
    if not 0 <= args.sample < len(x):
        raise ConfigError(f"sample index {args.sample} outside [0, {len(x)})")
    files = dump(model, args.what, x[args.sample])
    out = Path(args.out)
    for name, text in files.items():
        _write(out / name, text)
        print(f"wrote {out / name}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikegraph", description="Spiking graph network for skeleton sequences.")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--tiny", action="store_true", help="use the small channel profile")

    g = sub.add_parser("gen", help="write a synthetic dataset")
    g.add_argument("--out", default=".")
    g.add_argument("--name", default="synthetic")
    g.add_argument("--classes", type=int, default=5)
    g.add_argument("--per-class", type=int, default=100)
    g.add_argument("--joints", type=int, default=25)
    g.add_argument("--frames", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--format", choices=("jsonl", "bin", "both"), default="both")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one stream")
    t.add_argument("--data", required=True)
    t.add_argument("--test-data")
    t.add_argument("--out", required=True)
    t.add_argument("--modality", choices=MODALITIES)
    t.add_argument("--epochs")
    t.add_argument("--seed")
    t.add_argument("--lr")
    t.add_argument("--quiet", action="store_true")
    with_config(t)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="per-sample logits and accuracy")
    i.add_argument("--checkpoint", required=True, help="checkpoint file, or stream root with --ensemble")
    i.add_argument("--data", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--ensemble", help="comma-separated modalities, e.g. joint,bone")
    i.set_defaults(func=cmd_infer)

    pr = sub.add_parser("profile", help="FLOPs, SOPs and energy per layer")
    pr.add_argument("--checkpoint")
    pr.add_argument("--data")
    pr.add_argument("--batch", type=int, default=8)
    pr.add_argument("--out")
    with_config(pr)
    pr.set_defaults(func=cmd_profile)

    d = sub.add_parser("dump", help="diagnostic CSVs")
    d.add_argument("--what", choices=DUMP_KINDS, required=True)
    d.add_argument("--checkpoint")
    d.add_argument("--data")
    d.add_argument("--sample", type=int, default=0)
    d.add_argument("--out", required=True)
    with_config(d)
    d.set_defaults(func=cmd_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else ConfigError.exit_code
    try:
        return args.func(args)
    except SpikeGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
