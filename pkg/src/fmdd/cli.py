"""Command-line surface.

Subcommands: gen-data, train, eval, protocol, ablate, gradcheck. Exit codes:
0 on success, 1 on runtime failure, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys

from .ablation import AXES, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (DomainShift, SignalMode, gen_synthetic, read_dataset,
                   synth_spec_for, write_dataset)
from .evaluation import ProtocolSpec, compute_metrics, run_protocol
from .fusion import FusionMode
from .gradcheck import run_suite
from .model import MASK_A, MASK_V, MASK_VA, PRESETS, build_model, preset
from .rng import derive_seed
from .training import TrainConfig, predict_scores, train_model

SCENARIOS = {"va": MASK_VA, "a": MASK_A, "v": MASK_V}

# desk-scale defaults for sweep/protocol training; randomly initialized
# extractors need a larger step size than the full-scale recipe assumes
DESK_LR = 0.01
DESK_EPOCHS = 6


def _add_train_flags(p: argparse.ArgumentParser, lr: float, epochs: int) -> None:
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    p.add_argument("--momentum", type=float, default=TrainConfig.momentum)
    p.add_argument("--step-size", type=int, default=TrainConfig.step_size)
    p.add_argument("--gamma", type=float, default=TrainConfig.gamma)


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, lr=args.lr,
                       weight_decay=args.weight_decay, momentum=args.momentum,
                       step_size=args.step_size, gamma=args.gamma,
                       epochs=args.epochs, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fmdd",
        description="Flexible-modal audio-visual deception detection at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset file")
    p.add_argument("--mode", required=True, choices=[m.value for m in SignalMode])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--preset", default="test", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--domain-shift", action="store_true",
                   help="apply a fixed brightness offset and noise rescale")
    p.add_argument("--noise-sigma", type=float, default=0.3)

    p = sub.add_parser("train", help="train a model on a dataset file")
    p.add_argument("--data", required=True)
    p.add_argument("--fusion", default="ava", choices=[m.value for m in FusionMode])
    p.add_argument("--preset", default="test", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.add_argument("--scenario", default="va", choices=sorted(SCENARIOS),
                   help="training-time modality scenario")
    _add_train_flags(p, lr=TrainConfig.lr, epochs=TrainConfig.epochs)

    p = sub.add_parser("eval", help="evaluate a checkpoint under a modality scenario")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", default="va", choices=sorted(SCENARIOS))

    p = sub.add_parser("protocol", help="run a flexible-modal evaluation protocol")
    p.add_argument("--kind", required=True, choices=["intra", "cross"])
    p.add_argument("--k", type=int, default=5, help="fold count for intra runs")
    p.add_argument("--data", required=True)
    p.add_argument("--data2", default=None, help="test dataset for cross runs")
    p.add_argument("--fusion", default="ava", choices=[m.value for m in FusionMode])
    p.add_argument("--preset", default="test", choices=sorted(PRESETS))
    p.add_argument("--out-dir", default=None,
                   help="write report.tsv and report.png here")
    _add_train_flags(p, lr=DESK_LR, epochs=DESK_EPOCHS)

    p = sub.add_parser("ablate", help="sweep one adapter configuration axis")
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--data", default=None,
                   help="dataset file; generated internally when omitted")
    p.add_argument("--n", type=int, default=192,
                   help="sample count for the generated dataset")
    p.add_argument("--preset", default="test", choices=sorted(PRESETS))
    p.add_argument("--out-dir", default=None,
                   help="write ablate_<axis>.tsv and ablate_<axis>.png here")
    _add_train_flags(p, lr=DESK_LR, epochs=DESK_EPOCHS)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--preset", default="test", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int, default=0)

    return parser


def cmd_gen_data(args) -> int:
    cfg = preset(args.preset)
    shift = DomainShift() if args.domain_shift else None
    spec = synth_spec_for(cfg, SignalMode(args.mode), args.n, seed=args.seed,
                          noise_sigma=args.noise_sigma, domain_shift=shift)
    dataset = gen_synthetic(spec)
    write_dataset(args.out, dataset)
    labels = dataset.labels()
    print(f"wrote {args.out}: {len(dataset)} samples, "
          f"positive fraction {labels.mean():.3f}")
    return 0


def cmd_train(args) -> int:
    dataset = read_dataset(args.data)
    cfg = preset(args.preset, fusion=FusionMode(args.fusion))
    model = build_model(cfg, seed=derive_seed(args.seed, "model"))
    mask = SCENARIOS[args.scenario]
    train_cfg = _train_config(args)
    train_model(model, dataset.samples, train_cfg,
                mask=None if mask == MASK_VA else mask,
                log_fn=lambda e, loss, lr:
                print(f"epoch {e + 1}/{train_cfg.epochs} loss={loss:.4f} lr={lr:g}"))
    save_checkpoint(model, args.out)
    print(f"saved checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    dataset = read_dataset(args.data)
    scores, labels = predict_scores(model, dataset.samples, SCENARIOS[args.scenario])
    m = compute_metrics(scores, labels)
    auc = "nan" if not m.auc_defined else f"{m.auc:.4f}"
    print(f"ACC {m.acc:.4f}")
    print(f"AUC {auc}")
    print(f"F1  {m.f1:.4f}")
    return 0


def cmd_protocol(args) -> int:
    from .report import report_to_text, write_report_files

    dataset = read_dataset(args.data)
    dataset2 = None
    if args.kind == "cross":
        if args.data2 is None:
            print("error: --data2 is required for cross-dataset protocols",
                  file=sys.stderr)
            return 2
        dataset2 = read_dataset(args.data2)
    spec = ProtocolSpec(kind="intra_kfold" if args.kind == "intra" else "cross_dataset",
                        k=args.k)
    cfg = preset(args.preset, fusion=FusionMode(args.fusion))
    report = run_protocol(spec, dataset, cfg, _train_config(args), dataset2=dataset2)
    print(report_to_text(report))
    if args.out_dir:
        for path in write_report_files(report, args.out_dir):
            print(f"wrote {path}")
    return 0


def cmd_ablate(args) -> int:
    from .report import ablation_rows_to_text, write_ablation_files

    cfg = preset(args.preset)
    if args.data is not None:
        dataset = read_dataset(args.data)
        samples = dataset.samples
        cut = max(1, (3 * len(samples)) // 4)
        train_samples, test_samples = samples[:cut], samples[cut:]
    else:
        n_test = max(1, args.n // 3)
        train = gen_synthetic(synth_spec_for(cfg, SignalMode.XOR, args.n,
                                             seed=derive_seed(args.seed, "train")))
        test = gen_synthetic(synth_spec_for(cfg, SignalMode.XOR, n_test,
                                            seed=derive_seed(args.seed, "test")))
        train_samples, test_samples = train.samples, test.samples
    rows = run_ablation(args.axis, train_samples, test_samples, cfg,
                        _train_config(args), printer=print)
    print(ablation_rows_to_text(args.axis, rows))
    if args.out_dir:
        for path in write_ablation_files(args.axis, rows, args.out_dir):
            print(f"wrote {path}")
    return 0


def cmd_gradcheck(args) -> int:
    ok = run_suite(preset_name=args.preset, seed=args.seed)
    print("gradient suite: " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "protocol": cmd_protocol,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
