"""Command-line entry point: ``svfpredict <command> ...``.

Every command reads one YAML/JSON config (``--config``), applies
``--set section.key=value`` overrides, and can print the effective config
with ``--dump-config``. Outputs are staged in a temporary sibling and moved
into place only on success.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
import warnings
from contextlib import contextmanager
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import mff
from .attributes import AttributeVector
from .baselines import (
    OptimizerConfig,
    identity_baseline,
    mean_velocity_baseline,
    oracle_register,
    predict_with_velocity,
)
from .datagen import VENTRICLE, PhantomConfig, PhantomConfigError, generate, load_dataset, save_dataset
from .experiments import gain_rank_correlation, volume_ordered_rows, volume_ordered_table
from .fields import GridMismatchError, LabelMap, ScalarImage
from .integrate import IntegrationConfig
from .loss import LossConfig
from .metrics import dice, evaluate, format_table, summarize
from .network import NetConfig, TrainConfig, TrainingDivergedError, load_checkpoint, predict, save_checkpoint, train
from .warp import warp_labels

log = logging.getLogger("svfpredict")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(EXIT_USAGE)


# config handling -----------------------------------------------------------

_SECTIONS = {
    "gen-data": {"phantom": PhantomConfig, "dataset": None},
    "train": {"net": NetConfig, "train": TrainConfig},
    "predict": {"integration": IntegrationConfig},
    "register": {"loss": LossConfig, "integration": IntegrationConfig, "optimizer": OptimizerConfig},
    "baseline": {"loss": LossConfig, "integration": IntegrationConfig, "optimizer": OptimizerConfig},
    "evaluate": {"evaluate": None},
}
_EXTRA_DEFAULTS = {
    "dataset": {"train_fraction": 0.8},
    "evaluate": {"reference": "identity", "split": "test"},
}


def _defaults(command: str) -> dict:
    out = {}
    for name, cls in _SECTIONS[command].items():
        out[name] = asdict(cls()) if cls is not None else dict(_EXTRA_DEFAULTS[name])
    return out


def _jsonable(obj):
    if isinstance(obj, tuple):
        return [_jsonable(x) for x in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_jsonable(x) for x in obj]
    return obj


def _merge(base: dict, update: dict, where: str = ""):
    for k, v in update.items():
        if k not in base:
            raise ValueError(f"unknown config key {where}{k!r}")
        if isinstance(base[k], dict) and isinstance(v, dict):
            _merge(base[k], v, f"{where}{k}.")
        elif isinstance(base[k], float) and isinstance(v, str):
            # YAML 1.1 reads exponent literals such as 1e-3 as strings
            try:
                base[k] = float(v)
            except ValueError:
                raise ValueError(f"config key {where}{k!r} expects a number, got {v!r}") from None
        else:
            base[k] = v


def load_config(command: str, path: str | None, overrides: list[str]) -> dict:
    cfg = _jsonable(_defaults(command))
    if path:
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        _merge(cfg, data)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise UsageError(f"--set expects section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        _merge(cfg, {section: {name: yaml.safe_load(raw)}})
    return cfg


def _build(cls, d: dict):
    kwargs = {}
    for f in fields(cls):
        if f.name in d:
            val = d[f.name]
            kwargs[f.name] = tuple(val) if isinstance(val, list) else val
    return cls(**kwargs)


def _sections(command: str, cfg: dict) -> dict:
    return {name: _build(cls, cfg[name]) if cls is not None else cfg[name]
            for name, cls in _SECTIONS[command].items()}


# output staging ---------------------------------------------------------

@contextmanager
def staged(out: Path):
    """Yield a temporary path next to ``out``; it replaces ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    root = Path(tempfile.mkdtemp(prefix=".stage-", dir=out.parent))
    try:
        stage = root / out.name
        yield stage
        if out.is_dir():
            shutil.rmtree(out)
        elif out.exists():
            out.unlink()
        os.replace(stage, out)
    finally:
        shutil.rmtree(root, ignore_errors=True)


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_pgm(path: Path, image: np.ndarray):
    """8-bit binary PGM of a 2D array (middle slice for 3D) scaled from [0, 1]."""
    a = np.asarray(image, dtype=float)
    while a.ndim > 2:
        a = a[a.shape[0] // 2]
    a = np.clip(np.round(a * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode())
        fh.write(a.tobytes())


def _write_prediction(out: Path, sid: str, x0: ScalarImage, xhat, phi, v, labels0: LabelMap | None,
                      summary: dict, pgm: bool):
    d = out / sid
    d.mkdir(parents=True)
    prov = {"subject": sid}
    mff.save(d / "xhat.mff", xhat, prov)
    mff.save(d / "phi.mff", phi.displacement, {**prov, "field": "displacement"})
    if v is not None:
        mff.save(d / "v.mff", v, prov)
    if labels0 is not None:
        mff.save(d / "labels.mff", warp_labels(labels0, phi), prov)
    _write_json(d / "summary.json", {"subject": sid, **summary})
    if pgm:
        write_pgm(d / "x0.pgm", x0.values)
        write_pgm(d / "xhat.pgm", xhat.values)


def _loss_summary(loss: float, x0: ScalarImage) -> dict:
    return {"loss": loss, "loss_per_voxel": loss / x0.values.size}


def _select(manifest_path, split_name: str | None, subject: str | None):
    samples = load_dataset(manifest_path, None if split_name in (None, "all") else split_name)
    if subject is not None:
        samples = [s for s in samples if s.subject_id == subject]
        if not samples:
            raise ValueError(f"subject {subject!r} not found in {manifest_path}")
    return samples


# commands -----------------------------------------------------------------

def cmd_gen_data(args, cfg):
    sec = _sections("gen-data", cfg)
    samples = generate(sec["phantom"])
    with staged(Path(args.out)) as stage:
        save_dataset(samples, stage, {"phantom": cfg["phantom"], "dataset": cfg["dataset"]},
                     sec["dataset"]["train_fraction"])
    print(f"wrote {len(samples)} subjects to {args.out}")


def cmd_train(args, cfg):
    sec = _sections("train", cfg)
    train_set = load_dataset(args.manifest, "train")
    net, train_log = train(train_set, sec["net"], sec["train"])
    out = Path(args.out)
    with staged(out) as stage:
        save_checkpoint(stage, net, {"manifest": str(args.manifest), "config": cfg,
                                     "grid_dims": list(train_set[0].x0.grid.dims)})
    log_path = Path(args.log) if args.log else out.with_suffix(".log.json")
    with staged(log_path) as stage:
        _write_json(stage, train_log)
    print(f"final train loss {train_log['epochs'][-1]['train_loss']:.6g}; checkpoint {out}")


def cmd_predict(args, cfg):
    icfg = _sections("predict", cfg)["integration"]
    net, manifest = load_checkpoint(args.checkpoint)
    dims = manifest["extra"].get("grid_dims")
    trained_dims = tuple(dims) if dims else None
    if args.manifest:
        samples = _select(args.manifest, args.split, args.subject)
        items = [(s.subject_id, s.x0, s.attrs, s.labels0, s.t if args.t is None else args.t) for s in samples]
    else:
        if args.x0 is None or args.t is None:
            raise UsageError("predict needs --manifest, or --x0 with --t")
        x0 = mff.load(args.x0)
        attrs = AttributeVector.from_dict(json.loads(Path(args.attributes).read_text())) if args.attributes else None
        labels0 = mff.load(args.labels) if args.labels else None
        items = [(Path(args.x0).stem, x0, attrs, labels0, args.t)]
    with staged(Path(args.out)) as stage:
        stage.mkdir()
        for sid, x0, attrs, labels0, t in items:
            if trained_dims is not None and tuple(x0.grid.dims) != trained_dims:
                raise GridMismatchError(f"{sid}: grid {x0.grid.dims} does not match the checkpoint's {trained_dims}")
            xhat, phi, v = predict(net, x0, attrs, t, icfg)
            _write_prediction(stage, sid, x0, xhat, phi, v, labels0, {"method": "learned", "t": t}, args.pgm)
    print(f"wrote {len(items)} prediction(s) to {args.out}")


def cmd_register(args, cfg):
    sec = _sections("register", cfg)
    if args.manifest:
        samples = _select(args.manifest, args.split, args.subject)
        items = [(s.subject_id, s.x0, s.xt, s.labels0, s.t) for s in samples]
    else:
        if args.x0 is None or args.xt is None:
            raise UsageError("register needs --manifest, or --x0 with --xt")
        labels0 = mff.load(args.labels) if args.labels else None
        items = [(Path(args.x0).stem, mff.load(args.x0), mff.load(args.xt), labels0, args.t or 1.0)]
    with staged(Path(args.out)) as stage:
        stage.mkdir()
        for sid, x0, xt, labels0, t in items:
            res = oracle_register(x0, xt, sec["loss"], sec["integration"], sec["optimizer"], t=t)
            xhat, phi = predict_with_velocity(x0, res.v, t, sec["integration"])
            _write_prediction(stage, sid, x0, xhat, phi, res.v, labels0,
                              {"method": "oracle", "t": t, **_loss_summary(res.loss, x0), "iterations": res.iterations,
                               "converged": res.converged}, args.pgm)
    print(f"registered {len(items)} pair(s) into {args.out}")


def cmd_baseline(args, cfg):
    sec = _sections("baseline", cfg)
    targets = _select(args.manifest, args.split, args.subject)
    with staged(Path(args.out)) as stage:
        stage.mkdir()
        if args.kind == "identity":
            for s in targets:
                xhat, phi = identity_baseline(s.x0)
                _write_prediction(stage, s.subject_id, s.x0, xhat, phi, None, s.labels0,
                                  {"method": "identity", "t": s.t}, args.pgm)
        elif args.kind == "mean":
            train_set = load_dataset(args.manifest, "train")
            v_mean = mean_velocity_baseline(train_set, sec["loss"], sec["integration"], sec["optimizer"],
                                            threads=args.threads)
            mff.save(stage / "mean_velocity.mff", v_mean, {"n_train": len(train_set)})
            for s in targets:
                xhat, phi = predict_with_velocity(s.x0, v_mean, s.t, sec["integration"])
                _write_prediction(stage, s.subject_id, s.x0, xhat, phi, v_mean, s.labels0,
                                  {"method": "mean", "t": s.t}, args.pgm)
        else:
            for s in targets:
                res = oracle_register(s.x0, s.xt, sec["loss"], sec["integration"], sec["optimizer"], t=s.t)
                xhat, phi = predict_with_velocity(s.x0, res.v, s.t, sec["integration"])
                _write_prediction(stage, s.subject_id, s.x0, xhat, phi, res.v, s.labels0,
                                  {"method": "oracle", "t": s.t, **_loss_summary(res.loss, s.x0)}, args.pgm)
    print(f"{args.kind} baseline: {len(targets)} prediction(s) in {args.out}")


def _parse_pred(spec: str) -> tuple[str, Path]:
    name, sep, path = spec.partition("=")
    if not sep:
        return Path(spec).name, Path(spec)
    return name, Path(path)


def cmd_evaluate(args, cfg):
    ecfg = cfg["evaluate"]
    samples = _select(args.manifest, ecfg["split"], None)
    preds = [_parse_pred(p) for p in args.pred]
    reference = ecfg["reference"]
    report = {"methods": {}, "missing": {}}
    ventricle = {}
    for name, pdir in preds:
        rows, missing, vd = [], [], {}
        for s in samples:
            path = pdir / s.subject_id / "labels.mff"
            if not path.exists():
                missing.append(s.subject_id)
                continue
            pred = mff.load(path)
            if pred.grid.dims != s.labelst.grid.dims:
                raise GridMismatchError(f"{path}: grid {pred.grid.dims} vs truth {s.labelst.grid.dims}")
            structs = evaluate(pred, s.labelst, s.labels0)
            rows.append({"subject": s.subject_id, "structures": [asdict(r) for r in structs],
                         "summary": summarize(structs)})
            vd[s.subject_id] = next(r.dice for r in structs if r.label == VENTRICLE)
        if missing:
            warnings.warn(f"{name}: missing predictions for {len(missing)} subject(s): {', '.join(missing)}")
            report["missing"][name] = missing
        per_structure = {}
        for r in (x for row in rows for x in row["structures"]):
            per_structure.setdefault(r["structure"], []).append(r)
        report["methods"][name] = {
            "subjects": rows,
            "per_structure": {k: {"dice": float(np.mean([x["dice"] for x in v])),
                                  "mean_surface_dist": _nanmean([x["mean_surface_dist"] for x in v]),
                                  "hd95": _nanmean([x["hd95"] for x in v])}
                              for k, v in per_structure.items()},
        }
        ventricle[name] = vd

    have = [s for s in samples if all(s.subject_id in vd for vd in ventricle.values())]
    ids = [s.subject_id for s in have]
    vol = [s.truth["ventricle_volume_change"] for s in have]
    dice_by = {name: [vd[i] for i in ids] for name, vd in ventricle.items()}
    dice_by.setdefault("identity", [_identity_dice(s) for s in have])
    rows = volume_ordered_rows(ids, vol, dice_by, reference)
    report["volume_ordered"] = rows
    report["gain_rank_correlation"] = {
        name: gain_rank_correlation(vol, d, dice_by[reference])
        for name, d in dice_by.items() if name != reference and len(ids) > 2
    }

    text = []
    for name, m in report["methods"].items():
        text.append(f"== {name} ==")
        table = [[k, v["dice"], v["mean_surface_dist"], v["hd95"]] for k, v in m["per_structure"].items()]
        text.append(format_table(["structure", "dice", "msd", "hd95"], table))
        text.append("")
    text.append("== subjects ordered by true ventricle volume change ==")
    text.append(volume_ordered_table(rows))
    out = Path(args.out)
    with staged(out) as stage:
        _write_json(stage, report)
    with staged(out.with_suffix(".txt")) as stage:
        stage.write_text("\n".join(text) + "\n")
    print("\n".join(text))


def _identity_dice(s) -> float:
    return dice(s.labels0, s.labelst, VENTRICLE)


def _nanmean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


# parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svfpredict", description="Predict follow-up anatomy from a baseline scan with stationary velocity fields.")
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads (BLAS and per-pair loops)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="YAML or JSON config file")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
        sp.add_argument("--dump-config", action="store_true", help="print the effective config and exit")

    sp = sub.add_parser("gen-data", help="generate a synthetic longitudinal cohort")
    common(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("train", help="train the velocity network on a dataset's training split")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="training log JSON (default: <out>.log.json)")

    def subject_args(sp):
        sp.add_argument("--manifest")
        sp.add_argument("--split", default="test", choices=("train", "test", "all"))
        sp.add_argument("--subject", help="restrict to one subject id")
        sp.add_argument("--pgm", action="store_true", help="also dump PGM images")

    sp = sub.add_parser("predict", help="predict follow-up images with a trained network")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    subject_args(sp)
    sp.add_argument("--x0", help="baseline image (MFF) when not using a manifest")
    sp.add_argument("--labels", help="baseline labels (MFF) to propagate")
    sp.add_argument("--attributes", help="attribute JSON object")
    sp.add_argument("--t", type=float, help="time gap (default: the subject's)")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("register", help="pairwise registration of baseline to follow-up")
    common(sp)
    subject_args(sp)
    sp.add_argument("--x0")
    sp.add_argument("--xt")
    sp.add_argument("--labels")
    sp.add_argument("--t", type=float)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("baseline", help="identity, mean-velocity or oracle predictions")
    common(sp)
    sp.add_argument("kind", choices=("identity", "mean", "oracle"))
    subject_args(sp)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("evaluate", help="Dice/surface-distance report against ground truth")
    common(sp)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--pred", action="append", required=True, metavar="[NAME=]DIR",
                    help="prediction directory (repeatable)")
    sp.add_argument("--out", required=True, help="report JSON (text table alongside)")
    return p


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "register": cmd_register,
    "baseline": cmd_baseline,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("svfpredict: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.command, args.config, args.set)
        if args.dump_config:
            sys.stdout.write(yaml.safe_dump(cfg, sort_keys=False))
            return EXIT_OK
        if args.command == "baseline" and not args.manifest:
            raise UsageError("baseline needs --manifest")
        with threadpool_limits(limits=args.threads):
            _COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"svfpredict: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDivergedError, FloatingPointError) as exc:
        print(f"svfpredict: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, TypeError, KeyError, OSError, PhantomConfigError, GridMismatchError, mff.MFFError) as exc:
        print(f"svfpredict: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
