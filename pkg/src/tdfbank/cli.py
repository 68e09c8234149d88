"""Command-line entry point.

Subcommands::

    init-dump    write initial filters as a TDFB container
    extract      run a front-end on a WAV file, write a TDFT container
    gradcheck    finite-difference checks of every backward pass
    compare-mel  per-channel correlation of the Gabor front-end with log-mel
    train-toy    train one model on the toy task, write CSV + summary
    ablate       matched-pair training runs along one axis

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import filter_init, gradcheck, mel_reference, train_toy
from .frontend import FrontendConfig, frontend_forward, init_params, write_feature_dump
from .signal_io import WavFormatError, WavParseError, load_wav
from .tensor_core import ContractError, NumericalError

LOWPASS_FLAGS = {"han-fixed": "han_fixed", "han-learnt": "han_learnt", "max-pool": "max_pool"}
AXIS_FLAGS = {"instance-norm": "instance_norm", "lowpass": "lowpass", "init": "init",
              "pre-emphasis": "pre_emphasis"}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tdfbank", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init-dump", help="write initial filters (TDFB)")
    p.add_argument("--kind", choices=["gamm", "scatt", "rand"], required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", action="store_true", help="also write OUT with a .csv suffix")
    p.add_argument("--rows", type=int, default=80, help="row count for --kind rand")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("extract", help="front-end features of a WAV file (TDFT)")
    _frontend_flags(p)
    p.add_argument("--in", dest="inp", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", action="store_true", help="also write OUT with a .csv suffix")
    p.add_argument("--seed", type=int, default=0, help="seed for --init rand")

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--layer", choices=sorted(gradcheck.LAYER_CHECKS))
    g.add_argument("--all", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("compare-mel", help="Gabor front-end vs log-mel correlation")
    p.add_argument("--in", dest="inp", type=Path, required=True)

    p = sub.add_parser("train-toy", help="train on the toy task")
    _frontend_flags(p)
    _train_flags(p)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", type=Path, required=True, help="per-epoch CSV")
    p.add_argument("--summary", type=Path, help="key=value summary (default: stdout)")

    p = sub.add_parser("ablate", help="matched-pair runs along one axis")
    p.add_argument("--axis", choices=sorted(AXIS_FLAGS), required=True)
    _frontend_flags(p)
    _train_flags(p)
    p.add_argument("--seeds", default="1,2,3", help="comma-separated, at least 3")
    p.add_argument("--out-dir", type=Path, required=True)
    return ap


def _frontend_flags(p):
    p.add_argument("--variant", choices=["scattering", "gammatone"], default="scattering")
    p.add_argument("--init", choices=["gamm", "scatt", "rand"], default=None,
                   help="default: scatt for scattering, gamm for gammatone")
    p.add_argument("--lowpass", choices=sorted(LOWPASS_FLAGS), default="han-fixed")
    p.add_argument("--pre-emphasis", action="store_true")
    p.add_argument("--no-instance-norm", action="store_true")
    p.add_argument("--log-offset", type=float, default=None)


def _train_flags(p):
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-heldout", type=int, default=200)
    p.add_argument("--lr", type=float, default=train_toy.DEFAULT_LR)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--frontend-lr-scale", type=float, default=train_toy.FRONTEND_LR_SCALE)
    p.add_argument("--pooling", choices=train_toy.POOLINGS, default="lag1")


def _config(args) -> FrontendConfig:
    init = args.init or ("scatt" if args.variant == "scattering" else "gamm")
    try:
        return FrontendConfig(args.variant, init, LOWPASS_FLAGS[args.lowpass],
                              log_offset=args.log_offset,
                              use_pre_emphasis=args.pre_emphasis,
                              use_instance_norm=not args.no_instance_norm)
    except ContractError as e:
        raise UsageError(str(e)) from e


def _train_kw(args) -> dict:
    return dict(epochs=args.epochs, n_train=args.n_train, n_heldout=args.n_heldout,
                learning_rate=args.lr, momentum=args.momentum,
                frontend_lr_scale=args.frontend_lr_scale, pooling=args.pooling)


def cmd_init_dump(args) -> int:
    grid = filter_init.mel_grid(40, 0.0, 8000.0)
    if args.kind == "gamm":
        filters = filter_init.init_gammatone(grid).filters
    elif args.kind == "scatt":
        filters = filter_init.init_gabor(grid).filters
    else:
        if args.rows < 1:
            raise UsageError("--rows must be positive")
        filters = filter_init.init_random(args.rows, 400, args.seed).filters
    csv = args.out.with_suffix(".csv") if args.csv else None
    filter_init.write_filter_dump(filters, args.out, csv_path=csv)
    print(f"wrote {args.out} ({filters.shape[0]}x{filters.shape[1]})")
    return 0


def cmd_extract(args) -> int:
    cfg = _config(args)
    wave = load_wav(args.inp)
    fmap, _ = frontend_forward(wave, init_params(cfg, args.seed), cfg)
    csv = args.out.with_suffix(".csv") if args.csv else None
    write_feature_dump(fmap, args.out, csv_path=csv)
    print(f"wrote {args.out} (channels={fmap.channels} frames={fmap.frames})")
    return 0


def cmd_gradcheck(args) -> int:
    names = [args.layer] if args.layer else None
    results = gradcheck.run_checks(names, seed=args.seed)
    width = max(map(len, results))
    for name, err in results.items():
        flag = "ok" if err < gradcheck.TOLERANCE else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    return 0 if all(e < gradcheck.TOLERANCE for e in results.values()) else 1


def cmd_compare_mel(args) -> int:
    cfg = FrontendConfig("scattering", "scatt", "han_fixed")
    a, b = mel_reference.aligned_pair(load_wav(args.inp), init_params(cfg), cfg)
    r = mel_reference.channel_correlation(a, b)
    for k, v in enumerate(r):
        print(f"channel {k:2d}  {v:.4f}")
    print(f"mean  {r.mean():.4f}")
    return 0


def _progress(rec):
    print(f"epoch {rec.epoch}: loss {rec.train_loss:.4f} train {rec.train_acc:.3f} "
          f"heldout {rec.heldout_acc:.3f}", file=sys.stderr)


def cmd_train_toy(args) -> int:
    report = train_toy.train(_config(args), args.seed, progress=_progress, **_train_kw(args))
    args.out.write_text(report.to_csv())
    if args.summary:
        args.summary.write_text(report.summary())
    else:
        print(report.summary(), end="")
    return 1 if report.diverged else 0


def cmd_ablate(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as e:
        raise UsageError(f"--seeds: {e}") from e
    if len(seeds) < 3:
        raise UsageError("--seeds needs at least 3 values")
    axis = AXIS_FLAGS[args.axis]
    result = train_toy.ablation_run(axis, _config(args), seeds, **_train_kw(args))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    for seed, pair in zip(seeds, result.reports):
        for tag, rep in zip("ab", pair):
            (args.out_dir / f"{tag}_seed{seed}.csv").write_text(rep.to_csv())
    (args.out_dir / "summary.txt").write_text(result.summary())
    print(result.summary(), end="")
    return 0


COMMANDS = {
    "init-dump": cmd_init_dump,
    "extract": cmd_extract,
    "gradcheck": cmd_gradcheck,
    "compare-mel": cmd_compare_mel,
    "train-toy": cmd_train_toy,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # argparse already printed the message
        return int(e.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"tdfbank {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (ContractError, NumericalError, WavFormatError, WavParseError, OSError) as e:
        print(f"tdfbank {args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
