"""Command-line entry points for the workbench.

Every subcommand reads the INI config (defaults when omitted) and accepts
a few targeted overrides; results land in plain files (NOLD containers,
CSV, JSON, PNG) under the chosen output paths.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..devices import (
    GenerationConfig, generate_dataset, load_dataset, sample_device,
    simulate_device, split_dataset,
)
from ..encoding import CHANNEL_COUNTS
from ..model import ModelConfig, NeurOLightModel, count_params
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .evaluate import (
    adapt, evaluate, evaluate_superposed, infer, spectrum_sweep,
    sweep_wavelengths,
)
from .plot import curves_figure, field_panels, spectrum_figure
from .train import TrainConfig, save_curves, train


def _model_from_config(cfg: dict) -> NeurOLightModel:
    mc = cfg["model"]
    config = ModelConfig(
        in_channels=CHANNEL_COUNTS[mc["channel_set"]],
        channels=mc["channels"], blocks=mc["blocks"],
        modes=(mc["modes_z"], mc["modes_x"]), expand=mc["expand"],
        dropout=mc["dropout"], droppath=mc["droppath"], stem=mc["stem"],
    )
    return NeurOLightModel(config, seed=mc["seed"])


def _split_records(records, fractions, seed):
    tr, va, te = split_dataset(len(records), tuple(fractions), seed)
    pick = lambda idx: [records[i] for i in idx]  # noqa: E731
    return pick(tr), pick(va), pick(te)


def _cmd_simulate(args):
    cfg = load_config(args.config)
    dv, dom = cfg["device"], cfg["domain"]
    seed = args.seed if args.seed is not None else dv["seed"]
    spec = sample_device(dv["kind"], dv["n_ports"], seed, preset=dv["preset"])
    record = simulate_device(spec, dom["rows"], dom["cols"])
    for port, (src, fm) in enumerate(record.ports):
        print(f"port {port}: n_eff {src.mode.n_eff:.4f} "
              f"residual {fm.residual:.2e}")
    if args.out:
        field_panels(record.ports[args.port][1].hy,
                     title=f"device {seed}, port {args.port}", path=args.out)
        print(f"wrote {args.out}")
    return 0


def _cmd_gen_dataset(args):
    cfg = load_config(args.config)
    dv, dom = cfg["device"], cfg["domain"]
    gen = GenerationConfig(
        count=args.count if args.count is not None else dv["count"],
        kind=dv["kind"], n_ports=args.ports or dv["n_ports"],
        grid=(dom["rows"], dom["cols"]),
        seed=args.seed if args.seed is not None else dv["seed"],
        out_dir=args.out, preset=dv["preset"],
    )
    path = generate_dataset(gen)
    records = load_dataset(path)
    print(f"wrote {len(records)} records to {path}")
    return 0


def _cmd_train(args):
    cfg = load_config(args.config)
    tr = cfg["train"]
    records = load_dataset(args.data)
    train_recs, val_recs, _ = _split_records(records, tr["fractions"], tr["seed"])
    if not train_recs or not val_recs:
        raise SystemExit(
            f"split of {len(records)} records by fractions {tr['fractions']} "
            "leaves an empty train or validation set; generate more devices "
            "or adjust [train] fractions"
        )
    model = _model_from_config(cfg)
    print(f"model: {count_params(model):,} parameters; "
          f"{len(train_recs)} train / {len(val_recs)} val devices")
    tc = TrainConfig(
        epochs=args.epochs if args.epochs is not None else tr["epochs"],
        lr=tr["lr"], batch_size=tr["batch_size"],
        seed=args.seed if args.seed is not None else tr["seed"],
        mixup=tr["mixup"] and not args.no_mixup,
        weight_decay=tr["weight_decay"], schedule=tr["schedule"],
        channel_set=cfg["model"]["channel_set"],
    )
    result = train(model, train_recs, val_recs, tc)
    out = Path(args.out)
    save_checkpoint(out, model, result.stats, history=result.history,
                    extra={"fractions": list(tr["fractions"]),
                           "split_seed": tr["seed"],
                           "channel_set": tc.channel_set,
                           "data": str(args.data)})
    save_curves(result.history, out / "curves.csv")
    curves_figure(result.history, out / "curves.png")
    print(f"best val nmae {result.best_val:.4f}; checkpoint in {out}")
    return 0


def _load_for_eval(args):
    model, stats, manifest = load_checkpoint(args.checkpoint)
    extra = manifest.get("extra", {})
    records = load_dataset(args.data)
    fractions = tuple(extra.get("fractions", (0.72, 0.08, 0.20)))
    seed = int(extra.get("split_seed", 0))
    channel_set = extra.get("channel_set", "full")
    _, _, test = _split_records(records, fractions, seed)
    return model, stats, test or records, channel_set


def _cmd_eval(args):
    cfg = load_config(args.config)
    ev = cfg["eval"]
    mode = args.mode or ev["mode"]
    model, stats, test, channel_set = _load_for_eval(args)
    if mode == "single_source":
        report = evaluate(model, test, stats, channel_set=channel_set,
                          batch_size=ev["batch_size"])
    else:
        report = evaluate_superposed(model, test, stats, mode=mode,
                                     seed=ev["seed"], channel_set=channel_set)
    print(json.dumps(report.summary(), indent=2, sort_keys=True))
    if args.out:
        report.to_csv(str(args.out) + ".csv")
        report.to_json(str(args.out) + ".json")
        print(f"wrote {args.out}.csv and {args.out}.json")
    return 0


def _cmd_sweep(args):
    model, stats, test, channel_set = _load_for_eval(args)
    record = test[args.index]
    wls = sweep_wavelengths(args.lo * 1e-9, args.hi * 1e-9, args.step * 1e-9)
    checks = [c * 1e-9 for c in args.check]
    result = spectrum_sweep(model, record, stats, wls, port=args.port,
                            channel_set=channel_set, solver_check=checks)
    print(f"{wls.size} wavelengths in {result.forwards} forward call, "
          f"{result.wall_clock_s:.3f}s")
    for row in result.checks:
        print(f"check {row['wavelength_m'] * 1e9:.1f} nm: "
              f"nmae {row['nmae']:.4f}")
    if args.out:
        result.to_csv(str(args.out) + ".csv")
        spectrum_figure(result, str(args.out) + ".png")
        print(f"wrote {args.out}.csv and {args.out}.png")
    return 0


def _cmd_adapt(args):
    cfg = load_config(args.config)
    tr = cfg["train"]
    model, stats, manifest = load_checkpoint(args.checkpoint)
    channel_set = manifest.get("extra", {}).get("channel_set", "full")
    records = load_dataset(args.data)
    train_recs, val_recs, _ = _split_records(records, tr["fractions"], tr["seed"])
    history = adapt(model, stats, train_recs, val_recs,
                    probe_epochs=args.probe_epochs,
                    tune_epochs=args.tune_epochs,
                    seed=args.seed if args.seed is not None else tr["seed"],
                    channel_set=channel_set, mixup=tr["mixup"])
    out = Path(args.out)
    save_checkpoint(out, model, stats, history=history,
                    extra={"fractions": list(tr["fractions"]),
                           "split_seed": tr["seed"],
                           "channel_set": channel_set,
                           "adapted_from": str(args.checkpoint),
                           "data": str(args.data)})
    best = min(h["val_nmae"] for h in history)
    print(f"adapted checkpoint in {out}; best val nmae {best:.4f}")
    return 0


def _cmd_plot(args):
    records = load_dataset(args.data)
    record = records[args.index]
    truth = record.fields[args.port]
    pred = None
    if args.checkpoint:
        model, stats, manifest = load_checkpoint(args.checkpoint)
        channel_set = manifest.get("extra", {}).get("channel_set", "full")
        amps = np.zeros(record.spec.n_ports, dtype=np.complex128)
        amps[args.port] = 1.0
        fm, _ = infer(model, record, stats, mode="multi_source",
                      amplitudes=amps, channel_set=channel_set)
        pred = fm.hy
    field_panels(truth, pred,
                 title=f"record {args.index}, port {args.port}", path=args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="neurolight",
        description="Frequency-domain photonic simulation and surrogate workbench",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="solve one random device")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--out", help="PNG path for field panels")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-dataset", help="generate a ground-truth dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int)
    p.add_argument("--ports", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("train", help="train a surrogate on a dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-mixup", action="store_true")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="test-set error of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["single_source", "multi_source"])
    p.add_argument("--out", help="report path prefix")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="batched wavelength sweep on one device")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--lo", type=float, default=1550.0, help="nm, inclusive")
    p.add_argument("--hi", type=float, default=1565.0, help="nm, exclusive")
    p.add_argument("--step", type=float, default=2.0, help="nm")
    p.add_argument("--check", type=float, action="append", default=[],
                   help="nm wavelength to cross-check with the solver")
    p.add_argument("--out", help="output path prefix")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("adapt", help="transfer a checkpoint to a new dataset")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--probe-epochs", type=int, default=20)
    p.add_argument("--tune-epochs", type=int, default=30)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("plot", help="field panels for a dataset record")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--port", type=int, default=0)
    p.add_argument("--checkpoint", help="add prediction and error panels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
