"""Command-line pipeline: ``generate``, ``train``, ``predict`` and ``evaluate``.

Exit codes: 0 success, 1 usage error (bad flags, missing or unwritable paths),
2 runtime failure. Log verbosity follows ``PHYULSTM_LOG_LEVEL`` (default INFO).

Settings resolve as command-line flag, then the ``--config`` JSON file, then the
built-in default. The config file holds one object per subcommand, keyed by flag
name with dashes turned into underscores, e.g. ``{"train": {"epochs": 300}}``.
Every artifact records the effective settings it was produced with.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import generate_synthetic_dataset, load_record_csv, load_records, save_records, split
from .dynamics import OscillatorParams
from .evaluation import evaluate_model, export_plot_data
from .training import ModelConfig, TrainConfig, load_checkpoint, predict, save_checkpoint, train
from .unet import UNetPlan

log = logging.getLogger("phyulstm")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOG_ENV = "PHYULSTM_LOG_LEVEL"
REGIME_FLAGS = {"full-state": "full_state", "accel-only": "accel_only", "data-driven": "data_driven"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class CliConfig:
    """Effective settings of one invocation after flags, config file and defaults merge."""

    subcommand: str
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"subcommand": self.subcommand,
                **{k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(self.options.items())}}


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="phyulstm", description="Physics-informed U-Net/LSTM surrogate for a nonlinear oscillator.")
    parser.add_argument("--config", type=Path, help="JSON file with per-subcommand defaults")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="simulate a synthetic record set")
    g.add_argument("--n", type=int, default=100, help="number of records")
    g.add_argument("--duration", type=float, default=50.0, help="record length in seconds")
    g.add_argument("--dt", type=float, default=0.05, help="sample interval in seconds")
    g.add_argument("--intensity", type=_floats, default=(3.0,),
                   help="peak ground acceleration in m/s^2, or 'low,high' for a per-record range")
    g.add_argument("--f-band", type=_floats, default=(1.0, 3.0), help="'low,high' range of filter center frequency (Hz)")
    g.add_argument("--seed", type=int, default=0, help="generation seed")
    g.add_argument("--params", help="oscillator constants: a JSON file or inline JSON object (m, c, k1, k2, Gamma)")
    g.add_argument("--out", type=Path, required=True, help="output directory for manifest.json and record CSVs")

    t = sub.add_parser("train", help="train a model on a record set")
    t.add_argument("--data", type=Path, required=True, help="record directory written by 'generate'")
    t.add_argument("--regime", choices=sorted(REGIME_FLAGS), default="full-state", help="training regime")
    t.add_argument("--train-n", type=int, help="re-split: number of random training records (default: keep tags)")
    t.add_argument("--seed", type=int, default=0, help="split and initialization seed")
    t.add_argument("--epochs", type=int, default=5000, help="maximum epochs")
    t.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    t.add_argument("--patience", type=int, default=500, help="early-stopping patience in epochs")
    t.add_argument("--encoder-filters", type=_ints, default=(50, 100), help="comma-separated encoder widths")
    t.add_argument("--bottleneck", type=int, default=200, help="bottleneck width")
    t.add_argument("--lstm-hidden", type=_ints, default=(100, 100), help="comma-separated LSTM widths")
    t.add_argument("--dense", type=_ints, default=(100,), help="comma-separated dense widths before the head")
    t.add_argument("--out-checkpoint", type=Path, required=True, help="checkpoint file to write")
    t.add_argument("--log-csv", type=Path, help="epoch log (default: <checkpoint>.log.csv)")

    p = sub.add_parser("predict", help="predict one record")
    p.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    p.add_argument("--record", type=Path, required=True, help="record CSV with columns t, ag")
    p.add_argument("--out", type=Path, required=True, help="CSV of predicted t, ag, x, v, a, g")

    e = sub.add_parser("evaluate", help="correlation report on a record split")
    e.add_argument("--checkpoint", type=Path, required=True, help="trained checkpoint")
    e.add_argument("--data", type=Path, required=True, help="record directory")
    e.add_argument("--split", default="test", help="split tag to evaluate ('all' for every record)")
    e.add_argument("--report", type=Path, required=True, help="report JSON to write")
    e.add_argument("--plots", type=Path, help="directory for per-record time-history and hysteresis CSVs")
    return parser


def parse_config(argv: list[str]) -> CliConfig:
    parser = build_parser()
    pre = _Parser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    if known.config is not None and command in subparsers:
        _apply_config_defaults(subparsers[command], _read_config_file(known.config, command), known.config)
    ns = parser.parse_args(argv)
    config = CliConfig(ns.subcommand, {k: v for k, v in vars(ns).items() if k != "subcommand"})
    _validate_paths(config)
    return config


def _apply_config_defaults(subparser: argparse.ArgumentParser, values: dict, source: Path) -> None:
    actions = {a.dest: a for a in subparser._actions if a.dest != "help"}
    unknown = set(values) - set(actions)
    if unknown:
        raise UsageError(f"{source}: unknown keys {sorted(unknown)}")
    converted = {}
    for dest, value in values.items():
        action = actions[dest]
        try:
            if action.type in (_floats, _ints):
                value = action.type(",".join(map(str, value)) if isinstance(value, list) else str(value))
            elif action.type is not None:
                value = action.type(value)
        except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
            raise UsageError(f"{source}: bad value for {dest}: {exc}") from None
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{source}: {dest}={value!r} not one of {sorted(action.choices)}")
        converted[dest] = value
        action.required = False
    subparser.set_defaults(**converted)


def _read_config_file(path: Path, subcommand: str) -> dict:
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        content = json.loads(path.read_text())
    except ValueError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    section = content.get(subcommand, {})
    if not isinstance(section, dict):
        raise UsageError(f"{path}: section {subcommand!r} must be an object")
    return {k.replace("-", "_"): v for k, v in section.items()}


def _writable_parent(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if parent.exists() and not os.access(parent, os.W_OK):
        raise UsageError(f"cannot write to {parent}")


def _validate_paths(cfg: CliConfig) -> None:
    o = cfg.options
    if cfg.subcommand == "generate":
        if o["out"].exists() and not o["out"].is_dir():
            raise UsageError(f"--out {o['out']} exists and is not a directory")
        _writable_parent(o["out"])
        if o["n"] < 1:
            raise UsageError("--n must be at least 1")
        if len(o["intensity"]) not in (1, 2) or len(o["f_band"]) != 2:
            raise UsageError("--intensity takes one value or 'low,high'; --f-band takes 'low,high'")
    if cfg.subcommand in ("train", "evaluate") and not (o["data"] / "manifest.json").is_file():
        raise UsageError(f"--data {o['data']}: no manifest.json found")
    if cfg.subcommand in ("predict", "evaluate") and not o["checkpoint"].is_file():
        raise UsageError(f"--checkpoint {o['checkpoint']}: file not found")
    if cfg.subcommand == "predict" and not o["record"].is_file():
        raise UsageError(f"--record {o['record']}: file not found")
    for key in ("out_checkpoint", "log_csv", "report"):
        if o.get(key) is not None:
            _writable_parent(o[key])
    if cfg.subcommand == "predict":
        _writable_parent(o["out"])


# ---------------------------------------------------------------------------
# subcommands


def _oscillator_params(spec: str | None) -> OscillatorParams:
    if spec is None:
        return OscillatorParams()
    text = Path(spec).read_text() if Path(spec).is_file() else spec
    try:
        values = json.loads(text)
    except ValueError as exc:
        raise UsageError(f"--params: not a JSON file or object: {exc}") from None
    try:
        return OscillatorParams(**values)
    except TypeError as exc:
        raise UsageError(f"--params: {exc}") from None


def cmd_generate(cfg: CliConfig) -> int:
    o = cfg.options
    params = _oscillator_params(o["params"])
    intensity = o["intensity"][0] if len(o["intensity"]) == 1 else tuple(o["intensity"])
    ds = generate_synthetic_dataset(o["n"], o["duration"], o["dt"], params, o["seed"], intensity,
                                    tuple(o["f_band"]))
    ds.meta["cli"] = cfg.to_dict()
    save_records(o["out"], ds)
    log.info("wrote %d records of %d samples to %s", len(ds), len(ds[0]), o["out"])
    return EXIT_OK


def write_epoch_log(path: Path, history: list[dict]) -> Path:
    columns = []
    for entry in history:
        columns += [k for k in entry if k not in columns]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns or ["epoch", "total"])
        for entry in history:
            w.writerow([entry["epoch"]] + [f"{entry[k]:.17g}" if k in entry else "" for k in columns[1:]])
    return path


def cmd_train(cfg: CliConfig) -> int:
    o = cfg.options
    ds = load_records(o["data"])
    if o["train_n"] is not None:
        split(ds, o["train_n"], seed=o["seed"])
    n_train = len(ds.by_split("train"))
    log.info("%d training records, %d others", n_train, len(ds) - n_train)
    tcfg = TrainConfig(regime=REGIME_FLAGS[o["regime"]], epochs=o["epochs"], learning_rate=o["lr"],
                       patience=o["patience"], seed=o["seed"], log_every=max(1, o["epochs"] // 20))
    mcfg = ModelConfig(UNetPlan(tuple(o["encoder_filters"]), o["bottleneck"]), tuple(o["lstm_hidden"]),
                       tuple(o["dense"]))
    result = train(ds.records, tcfg, mcfg, Gamma=float(ds.meta.get("params", {}).get("Gamma", 1.0)))
    result.model.provenance = {"cli": cfg.to_dict(),
                               "train_ids": [r.id for r in ds.by_split("train")]}
    save_checkpoint(o["out_checkpoint"], result.model)
    log_path = o["log_csv"] or o["out_checkpoint"].with_name(o["out_checkpoint"].name + ".log.csv")
    write_epoch_log(log_path, result.history)
    log.info("best epoch %d loss %.6g (%s); checkpoint %s", result.best_epoch, result.best_loss,
             result.stopped, o["out_checkpoint"])
    return EXIT_OK


def cmd_predict(cfg: CliConfig) -> int:
    o = cfg.options
    model = load_checkpoint(o["checkpoint"])
    rec = load_record_csv(o["record"])
    traj = predict(model, rec.ag, rec.dt)
    cols = {"t": traj.t, "ag": traj.ag, "x": traj.x, "v": traj.v, "a": traj.a, "g": traj.g}
    with open(o["out"], "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*cols.values()):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    sidecar = o["out"].with_name(o["out"].name + ".json")
    sidecar.write_text(json.dumps({"cli": cfg.to_dict(), "regime": model.regime,
                                   "checkpoint_train": model.provenance}, indent=2, sort_keys=True) + "\n")
    if not np.all(np.isfinite(traj.x)):
        log.error("prediction contains non-finite values")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_evaluate(cfg: CliConfig) -> int:
    o = cfg.options
    model = load_checkpoint(o["checkpoint"])
    ds = load_records(o["data"])
    records = ds.records if o["split"] == "all" else ds.by_split(o["split"])
    if not records:
        raise UsageError(f"split {o['split']!r} of {o['data']} is empty")
    report = evaluate_model(model, records, model.regime, str(o["data"]))
    report.provenance = {"cli": cfg.to_dict(), "checkpoint_train": model.provenance}
    report.write(o["report"])
    for ch in report.channels():
        s = report.summary(ch)
        log.info("%s: mean r %s, fraction above %.2f: %.3f", ch, s.mean, report.threshold, s.fraction_above)
    if o["plots"] is not None:
        for rec in records:
            export_plot_data(predict(model, rec.ag, rec.dt), rec, o["plots"], rec.id)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "predict": cmd_predict, "evaluate": cmd_evaluate}


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_logging()
    try:
        cfg = parse_config(argv)
        return COMMANDS[cfg.subcommand](cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
