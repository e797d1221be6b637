"""Command-line entry point: generate data, pretrain, finetune, evaluate.

Every pipeline is fully reproducible from (config file, seed): re-running
writes byte-identical reports, CSVs, and heatmaps under the --out directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import data as data_mod
from . import harness, model as model_mod
from .config import RunConfig, load_config, parse_config, parse_fraction
from .errors import IoFailure, TimaError

ZERO_SHOT_SEED_OFFSET = 7919  # fresh prototype stream for the shifted probe set


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(path: Path, split: str) -> data_mod.Dataset:
    if not path.exists():
        raise IoFailure(f"missing dataset {path}; run `tima gen-data` first")
    return data_mod.load_dataset(path, split=split)


def _load_model(path: Path) -> model_mod.DualEncoder:
    if not path.exists():
        raise IoFailure(f"missing checkpoint {path}")
    return model_mod.load_model(path)


def cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    spec = cfg.synthetic_spec()
    train, test = data_mod.generate_synthetic(spec)
    data_mod.save_dataset(train, out / "train.timd")
    data_mod.save_dataset(test, out / "test.timd")
    shifted_spec = dataclasses.replace(spec, seed=spec.seed + ZERO_SHOT_SEED_OFFSET)
    _, shifted = data_mod.generate_synthetic(shifted_spec)
    data_mod.save_dataset(shifted, out / "shifted.timd")
    print(f"wrote {out / 'train.timd'} ({train.num_samples} samples), "
          f"{out / 'test.timd'} ({test.num_samples}), "
          f"{out / 'shifted.timd'} ({shifted.num_samples})")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    train = _load_dataset(out / "train.timd", "train")
    encoder = model_mod.init_model(cfg.encoder_config(), tau=cfg["tau"])
    encoder, trace = harness.pretrain_clean(encoder, train, cfg.pretrain_config())
    model_mod.save_model(encoder, out / "pretrained.timm")
    print(f"pretrained {len(trace)} epochs, final loss {trace[-1]:.4f}; "
          f"saved {out / 'pretrained.timm'}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    train = _load_dataset(out / "train.timd", "train")
    student = _load_model(out / "pretrained.timm")
    teacher = model_mod.snapshot_teacher(student)
    train_cfg = cfg.finetune_config(variant=args.variant)
    student, trace = harness.finetune(student, teacher, train, train_cfg)
    ckpt = out / f"finetuned_{train_cfg.variant}.timm"
    model_mod.save_model(student, ckpt)
    print(f"finetuned variant={train_cfg.variant} for {len(trace)} epochs, "
          f"final loss {trace[-1]:.4f}; saved {ckpt}")
    return 0


def _pick_model(args, cfg: RunConfig, out: Path) -> model_mod.DualEncoder:
    if args.model:
        return _load_model(Path(args.model))
    variant = getattr(args, "variant", None) or cfg["variant"]
    return _load_model(out / f"finetuned_{variant}.timm")


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    student = _pick_model(args, cfg, out)
    teacher = model_mod.snapshot_teacher(_load_model(out / "pretrained.timm"))
    data_path = Path(args.data) if args.data else out / "test.timd"
    test = _load_dataset(data_path, "test")
    report = harness.evaluate(student, teacher, test, cfg.eval_eps(),
                              attack=cfg.eval_attack(), matrices_dir=out / "matrices",
                              config_echo=cfg.echo(), seed=cfg["seed"])
    harness.write_report(report, out / "report.json")
    robust = ", ".join(f"eps={k}: {v:.3f}" for k, v in report.robust_accuracy.items())
    print(f"clean accuracy {report.clean_accuracy:.3f}; robust {robust}")
    print(f"wrote {out / 'report.json'}")
    return 0


def cmd_export_matrices(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    student = _pick_model(args, cfg, out)
    teacher = model_mod.snapshot_teacher(_load_model(out / "pretrained.timm"))
    data_path = Path(args.data) if args.data else out / "test.timd"
    test = _load_dataset(data_path, "test")
    manifest = harness.export_similarity_matrices(student, teacher, test,
                                                  cfg.eval_eps(), out / "matrices",
                                                  attack=cfg.eval_attack())
    print(f"wrote {len(manifest)} matrices under {out / 'matrices'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(args)
    train = _load_dataset(out / "train.timd", "train")
    test = _load_dataset(out / "test.timd", "test")
    pretrained = _load_model(out / "pretrained.timm")
    teacher = model_mod.snapshot_teacher(pretrained)
    count = 0
    for m in cfg["sweep_m"]:
        for eta in cfg["sweep_eta"]:
            student = pretrained.clone()
            weights = dataclasses.replace(cfg.loss_weights(), m=m, eta=eta)
            train_cfg = dataclasses.replace(cfg.finetune_config(), loss_weights=weights)
            student, _ = harness.finetune(student, teacher, train, train_cfg)
            echo = dict(cfg.echo(), m=repr(m), eta=repr(eta))
            for eps_text in cfg["sweep_eps"]:
                point = out / "sweep" / f"m{m}_eta{eta}_eps{harness.eps_tag(eps_text)}"
                point.mkdir(parents=True, exist_ok=True)
                report = harness.evaluate(
                    student, teacher, test, [(eps_text, parse_fraction(eps_text))],
                    attack=cfg.eval_attack(), config_echo=echo, seed=cfg["seed"])
                harness.write_report(report, point / "report.json")
                count += 1
                print(f"sweep point m={m} eta={eta} eps={eps_text}: "
                      f"clean {report.clean_accuracy:.3f}, "
                      f"robust {report.robust_accuracy[eps_text]:.3f}")
    print(f"wrote {count} sweep reports under {out / 'sweep'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tima",
        description="Adversarial fine-tuning lab for a toy image/text dual encoder.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    for name, fn in (("gen-data", cmd_gen_data), ("pretrain", cmd_pretrain),
                     ("finetune", cmd_finetune), ("eval", cmd_eval),
                     ("export-matrices", cmd_export_matrices), ("sweep", cmd_sweep)):
        p = sub.add_parser(name)
        common(p)
        if name in ("finetune", "eval", "export-matrices"):
            p.add_argument("--variant", default=None,
                           help="override the config variant for this run")
        if name in ("eval", "export-matrices"):
            p.add_argument("--model", default=None, help="checkpoint to evaluate")
            p.add_argument("--data", default=None, help="dataset file to evaluate on")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except TimaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
