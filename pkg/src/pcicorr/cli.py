"""``pci-corr`` command line: gen, fit, mask and export.

Configuration is an INI file with sections ``[synth]``, ``[train]``,
``[pgd]`` and ``[io]``. Command-line flags override file values. ``--seed``
sets both the ``[synth]`` and the ``[train]`` seed.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime as _dt
import hashlib
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

from . import evaluation, features, mask as mask_mod, plotting, synthgen, trainer
from .seeding import component_key


class UsageError(Exception):
    pass


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    for section in ("synth", "train", "pgd", "io"):
        if not cp.has_section(section):
            cp.add_section(section)
    return cp


def _get(section, key, cast, default=None):
    if key in section and str(section[key]).strip() != "":
        return cast(section[key])
    return default


def train_config(cp, args) -> trainer.TrainConfig:
    sec = cp["train"]
    kw = {}
    casts = {"theta": float, "learning_rate": float, "batch_size": int, "epochs": int,
             "mask_update_cadence": int, "mask_iterations": int, "seed": int,
             "encoder_init": str, "init_noise": float}
    for key, cast in casts.items():
        val = _get(sec, key, cast)
        if val is not None:
            kw[key] = val
    for key in ("theta", "seed", "epochs"):
        val = getattr(args, key, None)
        if val is not None:
            kw[key] = val
    return trainer.TrainConfig(**kw)


def pgd_config(cp, args, m: int) -> mask_mod.PgdConfig:
    sec = cp["pgd"]
    c = getattr(args, "c", None)
    alpha = getattr(args, "alpha", None)
    kw = {
        "sum_threshold": _get(sec, "c", float, m / 4) if c is None else c,
        "step_size": _get(sec, "alpha", float, 2.0) if alpha is None else alpha,
        "tolerable_error": _get(sec, "e", float),
        "lower": _get(sec, "lower", float),
        "upper": _get(sec, "upper", float),
        "max_iterations": _get(sec, "max_iterations", int, 500),
        "stop_tolerance": _get(sec, "stop_tolerance", float, 1e-6),
    }
    return mask_mod.PgdConfig(**kw)


def synth_spec(cp, args) -> synthgen.SynthSpec:
    return synthgen.spec_from_section(cp["synth"], seed=getattr(args, "seed", None))


def _io(cp, args, key, default):
    val = getattr(args, key, None)
    if val is not None:
        return Path(val)
    return Path(cp["io"].get(key, default))


def digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _echo(section: dict) -> dict:
    return {k: "" if v is None else repr(v) if isinstance(v, float) else str(v)
            for k, v in section.items()}


# ----------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    cp = load_config(args.config)
    spec = synth_spec(cp, args)
    out = _io(cp, args, "data_dir", "data")
    written = synthgen.save_dataset(synthgen.generate(spec, "train"), out)
    written += synthgen.save_dataset(synthgen.generate(spec, "heldout"), out / "heldout")
    for p in written:
        print(f"{digest(p)}  {p}")
    return 0


def cmd_fit(args) -> int:
    cp = load_config(args.config)
    data_dir = _io(cp, args, "data_dir", "data")
    out = _io(cp, args, "out_dir", "run")
    if not (data_dir / "ground_truth.ini").exists():
        raise UsageError(f"no dataset in {data_dir}; run 'pci-corr gen' first")
    ds = synthgen.load_dataset(data_dir)
    heldout = None
    if (data_dir / "heldout" / "ground_truth.ini").exists():
        heldout = synthgen.load_dataset(data_dir / "heldout")
        if heldout.spec.k != ds.spec.k or heldout.spec.d_raw != ds.spec.d_raw:
            raise UsageError("held-out split does not match the training split")
    cfg = train_config(cp, args)
    pgd = pgd_config(cp, args, ds.spec.m)
    model = trainer.train(ds, cfg, pgd)

    out.mkdir(parents=True, exist_ok=True)
    model.save(out)
    rec = evaluation.score_recovery(model.masks, ds, model.encoders)
    evaluation.save_recovery_csv(rec, out / "recovery.csv")
    plotting.plot_masks(model.masks, out / "masks.png")
    if model.history:
        plotting.plot_history(model.history, out / "history.png")

    report = configparser.ConfigParser()
    report["run"] = {
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "command": "fit",
        "data_dir": str(data_dir),
    }
    report["train"] = _echo(asdict(cfg))
    report["pgd"] = _echo({f.name: getattr(pgd, f.name) for f in fields(pgd)})
    report["synth"] = synthgen.spec_to_config(ds.spec)["synth"]
    report["seeds"] = {
        "seed": str(cfg.seed),
        "rule": "SeedSequence([seed, sha256(name)[:8]])",
        **{name: str(component_key(name)) for name in
           ("encoder-init", "head-init", "batch-order", "mask-init-0-1")},
    }
    report["history"] = {
        f"epoch_{r.epoch}": f"{r.correlation_loss!r},{r.task_loss!r},{r.total_loss!r}"
        for r in model.history
    }
    report["recovery"] = {
        "mass_on_planted": repr(rec.mass_on_planted),
        "support_iou": repr(rec.support_iou),
        **{f"pair_{i}_{j}": f"{r['mass_on_planted']!r},{r['support_iou']!r}"
           for (i, j), r in rec.per_pair.items()},
    }
    if heldout is not None:
        report["heldout"] = {
            "accuracy": repr(model.accuracy(heldout)),
            "total_masked_corr": repr(model.total_masked_corr(heldout)),
        }
    with (out / "report.ini").open("w", encoding="utf-8", newline="\n") as fh:
        report.write(fh)

    print(f"epochs: {len(model.history)}")
    print(f"mass_on_planted: {rec.mass_on_planted:.4f}")
    print(f"support_iou: {rec.support_iou:.4f}")
    if heldout is not None:
        print(f"heldout_accuracy: {model.accuracy(heldout):.4f}")
    print(f"report: {out / 'report.ini'}")
    return 0


def cmd_mask(args) -> int:
    if len(args.features) < 2:
        raise UsageError("mask needs at least two feature CSV files")
    cp = load_config(args.config)
    batches = [features.load_csv(p, i) for i, p in enumerate(args.features)]
    for p, b in zip(args.features, batches):
        if not b.is_centered():
            raise UsageError(f"{p} is not centered; subtract the column means first")
    shapes = {b.data.shape for b in batches}
    if len(shapes) != 1:
        raise UsageError(f"feature files disagree in shape: {sorted(shapes)}")
    m = batches[0].m
    k = len(batches)
    pgd = pgd_config(cp, args, m)
    seed = args.seed if args.seed is not None else _get(cp["train"], "seed", int, 0)
    masks = mask_mod.MaskSet.random(k, m, pgd, seed)
    out = _io(cp, args, "out_dir", "masks")
    out.mkdir(parents=True, exist_ok=True)
    fitted = {}
    for (i, j), mk in masks.items():
        cfg = pgd
        if args.safe_alpha:
            lip = mask_mod.lipschitz_estimate(batches[i], batches[j])
            if lip > 0:
                cfg = replace(pgd, step_size=0.9 / lip)
            # descent is only guaranteed for an exact projection
            if _get(cp["pgd"], "e", float) is None:
                cfg = replace(cfg, tolerable_error=1e-12 * cfg.c)
        fit = mask_mod.optimize_mask(batches[i], batches[j], mk, cfg)
        fitted[(i, j)] = fit.mask
        trace = out / f"trace_{i}_{j}.csv"
        with trace.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["step", "loss"])
            for t, v in enumerate(fit.losses):
                writer.writerow([t, repr(v)])
        status = "converged" if fit.converged else "max_iterations"
        print(f"pair {i}-{j}: {fit.iterations} steps ({status}), final loss {fit.losses[-1]:.6g}")
    mask_mod.save_maskset(mask_mod.MaskSet(fitted, k), out, seed)
    return 0


def cmd_export(args) -> int:
    out = Path(args.out) if args.out else None
    for p in args.masks:
        p = Path(p)
        mk = mask_mod.load_mask(p)
        target_dir = out or p.parent
        target_dir.mkdir(parents=True, exist_ok=True)
        if args.format == "pgm":
            width = 128 if args.figure2 else None
            target = mask_mod.write_pgm(mk.weights, target_dir / (p.stem + ".pgm"), width)
        else:
            target = target_dir / p.name
            if target.resolve() != p.resolve():
                mask_mod.save_mask(mk, target)
        print(target)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pci-corr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file with [synth] [train] [pgd] [io] sections")
        p.add_argument("--seed", type=int)

    g = sub.add_parser("gen", help="generate a planted-structure dataset")
    common(g)
    g.add_argument("--data-dir", dest="data_dir")
    g.set_defaults(func=cmd_gen)

    f = sub.add_parser("fit", help="train encoders, head and masks")
    common(f)
    f.add_argument("--theta", type=float)
    f.add_argument("--c", type=float)
    f.add_argument("--alpha", type=float)
    f.add_argument("--epochs", type=int)
    f.add_argument("--data-dir", dest="data_dir")
    f.add_argument("--out", dest="out_dir")
    f.set_defaults(func=cmd_fit)

    mk = sub.add_parser("mask", help="optimize pair masks on fixed feature CSVs")
    common(mk)
    mk.add_argument("features", nargs="+")
    mk.add_argument("--c", type=float)
    mk.add_argument("--alpha", type=float)
    mk.add_argument("--safe-alpha", action="store_true",
                    help="per pair, use 0.9 / (top eigenvalue of the Hadamard matrix) "
                         "and a 1e-12 * c projection tolerance unless [pgd] e is set")
    mk.add_argument("--out", dest="out_dir")
    mk.set_defaults(func=cmd_mask)

    ex = sub.add_parser("export", help="write masks as PGM heat maps or CSV")
    ex.add_argument("masks", nargs="+")
    ex.add_argument("--format", choices=("pgm", "csv"), default="pgm")
    ex.add_argument("--figure2", action="store_true", help="keep the first 128 values")
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pci-corr {args.command}: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, FileNotFoundError, mask_mod.BisectionError) as exc:
        print(f"pci-corr {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
