"""Command-line interface: train / eval / synth / export-* / probe."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .. import autodiff as ad
from ..datamodel import collate, generate_synthetic, save_dataset
from . import exports
from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, apply_overrides, config_from_sources, parse_ablation
from .model import DhmdModel, ModelSpec
from .train import Trainer, evaluate_model, probe_accuracies, resolve_dataset
from ..dictionary import export_activations as build_activation_rows


_FLAG_FIELDS = [
    "data", "seed", "epochs", "batch_size", "lr", "out", "channels",
    "dict_size", "ca_dim", "ca_heads", "ca_layers", "gd_hidden",
    "kernel_sizes", "aux_task_weight",
    "synth_classes", "synth_train_per_class", "synth_strengths", "synth_noise",
    "synth_sparsity", "synth_seq_len", "synth_dims", "synth_seed",
]


def _add_config_flags(parser):
    parser.add_argument("--config", help="flat key=value config file")
    for field in _FLAG_FIELDS:
        parser.add_argument(f"--{field.replace('_', '-')}", dest=field, default=None)
    parser.add_argument("--ablation", default=None,
                        help="comma list of enabled switches (FD,CA,GD,DM) or 'none'")
    parser.add_argument("--set", dest="sets", action="append", default=[],
                        metavar="KEY=VALUE", help="override any config field")
    parser.add_argument("--no-plots", action="store_true")


def _build_config(args):
    overrides = {}
    for field in _FLAG_FIELDS:
        val = getattr(args, field, None)
        if val is not None:
            overrides[field] = val
    for item in args.sets:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.ablation is not None:
        overrides.update(parse_ablation(args.ablation))
    if args.no_plots:
        overrides["plots"] = False
    return config_from_sources(args.config, overrides)


def _load_model(checkpoint_path):
    arrays, meta = load_checkpoint(checkpoint_path)
    cfg_dict = meta["config"]
    cfg = apply_overrides(RunConfig(), cfg_dict).validate()
    spec = ModelSpec.from_dict(meta["model_spec"])
    model = DhmdModel(cfg, spec, np.random.default_rng([cfg.seed, 0]))
    model.load_state_arrays(
        {k: v for k, v in arrays.items() if not k.startswith("adam.")})
    return model, cfg, meta


def _dataset_for(args, cfg):
    if getattr(args, "data", None):
        cfg = apply_overrides(cfg, {"data": args.data})
    return resolve_dataset(cfg)


def _print_report(report, prefix=""):
    d = report.to_dict()
    parts = []
    for key in ("acc7", "acc2", "f1", "precision", "recall"):
        v = d[key]
        if not (isinstance(v, float) and np.isnan(v)):
            parts.append(f"{key}={v:.2f}%")
    parts.append(f"mae={d['mae']:.4f}")
    parts.append(f"corr={d['corr']:.4f}")
    print(prefix + " ".join(parts))


# ---------------------------------------------------------------------------


def _cmd_train(args):
    cfg = _build_config(args)
    run_dir = cfg.out or f"runs/train-seed{cfg.seed}"
    trainer = Trainer(cfg, run_dir=run_dir)
    result = trainer.run(resume=args.resume)
    print(f"run dir: {result.run_dir}")
    print(f"best epoch: {result.best_epoch}")
    _print_report(result.valid_report, "valid: ")
    _print_report(result.test_report, "test:  ")
    return 0


def _cmd_eval(args):
    model, cfg, _ = _load_model(args.checkpoint)
    splits, manifest = _dataset_for(args, cfg)
    if args.split not in splits:
        raise ConfigError(f"unknown split {args.split!r}")
    samples = splits[args.split]
    if not samples:
        raise ValueError(f"split {args.split!r} is empty")
    report, _ = evaluate_model(model, samples)
    _print_report(report, f"{args.split}: ")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({args.split: report.to_dict()}, fh, indent=2)
            fh.write("\n")
    return 0


def _cmd_synth(args):
    cfg = _build_config(args)
    ds = generate_synthetic(cfg.synthetic_spec())
    out = args.out or cfg.out
    if not out:
        raise ConfigError("synth requires --out for the dataset directory")
    save_dataset(ds.splits, ds.manifest(), out, binary=args.binary)
    report = ds.oracle_report()
    print(f"dataset written to {out}")
    for split in ("train", "valid", "test"):
        accs = " ".join(f"{m}={100 * report[split][m]:.1f}%" for m in ("L", "V", "A"))
        print(f"oracle[{split}]: {accs}")
    return 0


def _cmd_export_edges(args):
    path = Path(args.run) / "edges.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"no edges.jsonl in {args.run}")
    lines = path.read_text().strip().splitlines()
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
    else:
        for line in lines:
            print(line)
    return 0


def _cmd_export_activations(args):
    model, cfg, _ = _load_model(args.checkpoint)
    if not cfg.dm:
        raise ValueError("checkpoint was trained without the DM component")
    splits, _ = _dataset_for(args, cfg)
    _, extras = evaluate_model(model, splits[args.split], collect_alpha=True)
    rows = build_activation_rows(extras["alpha"], extras["class_ids"])
    if args.out:
        exports.write_activations(args.out, rows)
        print(f"wrote {len(rows)} activation rows to {args.out}")
    else:
        for row in rows:
            print(json.dumps({"space": row["space"], "modality": row["modality"],
                              "class": row["class"],
                              "alpha": [float(np.float32(v)) for v in row["alpha"]]}))
    return 0


def _cmd_export_attention(args):
    model, cfg, _ = _load_model(args.checkpoint)
    if not cfg.ca:
        raise ValueError("checkpoint was trained without the CA component")
    splits, _ = _dataset_for(args, cfg)
    samples = splits[args.split]
    wanted = args.sample
    chosen = [s for s in samples if s.sample_id == wanted] if wanted else samples[:1]
    if not chosen:
        raise ValueError(f"sample {wanted!r} not found in split {args.split!r}")
    out_dir = args.out or "attention"
    for sample in chosen:
        batch = collate([sample])
        with ad.no_grad():
            fw = model.forward(batch, collect_attention=True)
        maps = {pair: arr[0] for pair, arr in fw.diagnostics["attention"].items()}
        path = exports.write_attention(out_dir, sample.sample_id, maps)
        print(f"wrote {path}")
    return 0


def _cmd_probe(args):
    model, cfg, meta = _load_model(args.checkpoint)
    splits, manifest = _dataset_for(args, cfg)
    accs = probe_accuracies(model, splits, manifest["num_classes"],
                            seed=args.probe_seed)
    vals = [accs[m] for m in ("L", "V", "A")]
    for m in ("L", "V", "A"):
        print(f"probe[{m}]: {accs[m]:.2f}%")
    print(f"mean: {np.mean(vals):.2f}%  std: {np.std(vals):.2f}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="dhmd",
        description="decoupled hierarchical multimodal distillation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p)
    p.add_argument("--resume", help="resume from a checkpoint")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--binary", action="store_true",
                   help="also write packed binary record files")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("export-edges", help="emit per-epoch GD edge weights")
    p.add_argument("--run", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export_edges)

    p = sub.add_parser("export-activations", help="emit dictionary activations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="valid")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export_activations)

    p = sub.add_parser("export-attention", help="emit cross-modal attention maps")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--sample", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_export_attention)

    p = sub.add_parser("probe", help="per-modality linear probe accuracies")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--probe-seed", type=int, default=0)
    p.set_defaults(fn=_cmd_probe)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
