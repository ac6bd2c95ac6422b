"""Command-line entry point: ``divact {train,ablate,analyze,memory,dump-cache}``.

Configuration is an INI-style file with a single ``[run]`` section (see
docs/config.md); command-line flags override file values and the
``DIVACT_OUT_DIR`` environment variable overrides the output directory.

Exit codes: 0 success, 1 runtime failure (e.g. divergence), 2 bad
configuration or input.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import glob
import io
import json
import os
import sys
from dataclasses import asdict, dataclass, field

from . import analysis, compress, data, memory, nn
from .errors import DivactError, DivergenceError, FormatError, ParameterError, ParseError, ShapeError
from .tensor import Rng

OUT_DIR_ENV = "DIVACT_OUT_DIR"

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class ConfigError(DivactError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"  # blobs | textured | csv
    classes: int = 4
    dim: int = 32
    per_class: int = 200
    spread: float = 1.0
    image_size: int = 16
    path: str = ""
    label_column: str = "-1"
    delimiter: str = ","
    header: bool = False
    eval_frac: float = 0.2
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    layers: str = "linear:32:relu,linear:4"
    strategy: str = "division"
    block: int = 8
    bits: int = 2
    train: nn.TrainConfig = field(default_factory=nn.TrainConfig)
    w_fracs: tuple = (0.1, 0.25, 0.5)
    checkpoint_epochs: tuple = ()
    geb_trials: int = 200
    norm_trials: int = 1000
    grid_n: tuple = (7, 8, 14, 16, 28, 32, 56)
    grid_b: tuple = (4, 8, 16)
    grid_q: tuple = (1, 2, 4, 8)
    out_dir: str = "divact-out"

    def cache_strategy(self) -> nn.CacheStrategy:
        return nn.parse_strategy(self.strategy, self.block, self.bits)


# ---------------------------------------------------------------------------
# configuration


def _ints(text):
    return tuple(int(t) for t in str(text).replace(",", " ").split())


def _floats(text):
    return tuple(float(t) for t in str(text).replace(",", " ").split())


_KEYS = {
    # key: (target, converter)
    "dataset": ("data.kind", str),
    "classes": ("data.classes", int),
    "dim": ("data.dim", int),
    "per_class": ("data.per_class", int),
    "spread": ("data.spread", float),
    "image_size": ("data.image_size", int),
    "data_path": ("data.path", str),
    "label_column": ("data.label_column", str),
    "delimiter": ("data.delimiter", str),
    "header": ("data.header", lambda s: str(s).strip().lower() in ("1", "true", "yes", "on")),
    "eval_frac": ("data.eval_frac", float),
    "data_seed": ("data.seed", int),
    "layers": ("layers", str),
    "strategy": ("strategy", str),
    "block": ("block", int),
    "bits": ("bits", int),
    "epochs": ("train.epochs", int),
    "batch_size": ("train.batch_size", int),
    "lr": ("train.lr", float),
    "schedule": ("train.schedule", str),
    "weight_decay": ("train.weight_decay", float),
    "momentum": ("train.momentum", float),
    "seed": ("train.seed", int),
    "step_size": ("train.step_size", int),
    "w_fracs": ("w_fracs", _floats),
    "checkpoint_epochs": ("checkpoint_epochs", _ints),
    "geb_trials": ("geb_trials", int),
    "norm_trials": ("norm_trials", int),
    "grid_n": ("grid_n", _ints),
    "grid_b": ("grid_b", _ints),
    "grid_q": ("grid_q", _ints),
    "out_dir": ("out_dir", str),
}


def build_config(values: dict) -> RunConfig:
    """Validate raw key/value pairs into a :class:`RunConfig`."""
    top, dat, trn = {}, {}, {}
    for key, raw in values.items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        target, conv = _KEYS[key]
        try:
            value = conv(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        section, _, name = target.rpartition(".")
        {"": top, "data": dat, "train": trn}[section][name] = value
    try:
        cfg = RunConfig(data=DataConfig(**dat), train=nn.TrainConfig(**trn), **top)
        cfg.cache_strategy()
        nn.parse_layers(cfg.layers)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc
    d = cfg.data
    if d.kind not in ("blobs", "textured", "csv"):
        raise ConfigError(f"dataset must be blobs, textured or csv, got {d.kind!r}")
    if d.kind == "csv" and not os.path.isfile(d.path):
        raise ConfigError(f"dataset file not found: {d.path!r}")
    if not 0 < d.eval_frac < 1:
        raise ConfigError("eval_frac must be in (0, 1)")
    if any(not 0 < w <= 1 for w in cfg.w_fracs) or not cfg.w_fracs:
        raise ConfigError("w_fracs must be non-empty values in (0, 1]")
    if any(e < 0 or e >= cfg.train.epochs for e in cfg.checkpoint_epochs):
        raise ConfigError("checkpoint_epochs must lie in [0, epochs)")
    return cfg


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if "run" not in parser:
        raise ConfigError(f"{path}: missing [run] section")
    return dict(parser["run"])


def _flag_values(args) -> dict:
    out = {}
    for key in _KEYS:
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def resolve_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    values.update(_flag_values(args))
    env_out = os.environ.get(OUT_DIR_ENV)
    if env_out and getattr(args, "out_dir", None) is None:
        values["out_dir"] = env_out
    return build_config(values)


# ---------------------------------------------------------------------------
# shared pieces


def load_dataset(cfg: RunConfig):
    d = cfg.data
    try:
        if d.kind == "blobs":
            full = data.gen_blobs(d.classes, d.dim, d.per_class, d.spread, d.seed)
        elif d.kind == "textured":
            full = data.gen_textured_images(d.classes, d.image_size, d.per_class, d.seed)
        else:
            col = int(d.label_column) if d.label_column.lstrip("-").isdigit() else d.label_column
            full = data.load_delimited(d.path, col, d.delimiter, d.header)
    except (ParseError, ParameterError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return full.split(d.eval_frac, d.seed)


def build_network(cfg: RunConfig, sample_shape, classes: int) -> nn.Network:
    try:
        net = nn.Network(nn.parse_layers(cfg.layers), sample_shape, seed=cfg.train.seed)
    except (ParameterError, ShapeError) as exc:
        raise ConfigError(f"network does not fit the data: {exc}") from exc
    if net.output_shape != (classes,):
        raise ConfigError(f"network output {net.output_shape} does not match {classes} classes")
    return net


def _fmt(x):
    return repr(float(x))


def metrics_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "accuracy", "peak_cache_bytes"])
    for m in history:
        w.writerow([m.epoch, _fmt(m.loss), _fmt(m.accuracy), m.peak_cache_bytes])
    return buf.getvalue()


def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_meta(out, cfg, command):
    meta = {
        "command": command,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "config": json.loads(json.dumps(asdict(cfg), default=list)),
        "preprocessing": "per-column standardization" if cfg.data.kind == "csv" else "none",
    }
    _write_json(os.path.join(out, "run-meta.json"), meta)


def run_training(cfg: RunConfig, strategy: nn.CacheStrategy, out: str, checkpoints: bool = True):
    """Train once; writes metrics.csv, memory.json and checkpoints into ``out``."""
    train_set, eval_set = load_dataset(cfg)
    net = build_network(cfg, train_set.sample_shape, train_set.classes)
    os.makedirs(out, exist_ok=True)

    def on_epoch(epoch, net_, metrics):
        if checkpoints and epoch in cfg.checkpoint_epochs:
            nn.save_checkpoint(net_, os.path.join(out, "checkpoints", f"epoch-{epoch:04d}"))

    report = memory.account(net, cfg.train.batch_size, strategy)
    try:
        result = nn.train(net, train_set, strategy, cfg.train, eval_set, on_epoch)
    except DivergenceError as exc:
        _write(os.path.join(out, "metrics.csv"), metrics_csv(getattr(exc, "history", [])))
        raise
    _write(os.path.join(out, "metrics.csv"), metrics_csv(result.history))
    _write(os.path.join(out, "memory.json"), report.to_json() + "\n")
    if checkpoints:
        nn.save_checkpoint(net, os.path.join(out, "checkpoint"))
    return result, report


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig) -> int:
    run_training(cfg, cfg.cache_strategy(), cfg.out_dir)
    _write_meta(cfg.out_dir, cfg, "train")
    return EXIT_OK


def ablation_strategies(block: int, bits: int) -> list:
    return [
        nn.CacheStrategy.exact(),
        nn.CacheStrategy.division(block, bits),
        nn.CacheStrategy.lfc_only(block),
        nn.CacheStrategy.hfc_only(bits, block),
        nn.CacheStrategy.fixed_quant(bits),
        nn.CacheStrategy.fixed_quant(4),
    ]


def cmd_ablate(cfg: RunConfig) -> int:
    rows = []
    for i, strategy in enumerate(ablation_strategies(cfg.block, cfg.bits)):
        sub = os.path.join(cfg.out_dir, "ablation", f"{i}-{strategy.variant}")
        result, report = run_training(cfg, strategy, sub, checkpoints=False)
        last = result.history[-1]
        rows.append([strategy.name, cfg.train.seed, _fmt(last.accuracy), _fmt(last.loss), last.peak_cache_bytes, _fmt(report.rate)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "seed", "accuracy", "loss", "peak_cache_bytes", "compression_rate"])
    w.writerows(rows)
    _write(os.path.join(cfg.out_dir, "ablation.csv"), buf.getvalue())
    _write_meta(cfg.out_dir, cfg, "ablate")
    return EXIT_OK


def cmd_analyze(cfg: RunConfig) -> int:
    ckpts = sorted(glob.glob(os.path.join(cfg.out_dir, "checkpoints", "epoch-*")))
    if not ckpts:
        raise ConfigError(f"no checkpoints under {cfg.out_dir}/checkpoints; run train with checkpoint_epochs")
    _, eval_set = load_dataset(cfg)
    probe = eval_set.features[:64]
    records = []
    for path in ckpts:
        epoch = int(os.path.basename(path).split("-")[1])
        try:
            net = nn.load_checkpoint(path)
        except (FormatError, OSError, KeyError) as exc:
            raise ConfigError(f"bad checkpoint {path}: {exc}") from exc
        records.extend(analysis.lambda_records(net, probe, cfg.w_fracs, epoch))
    out = cfg.out_dir
    _write(os.path.join(out, "lambda.csv"), analysis.lambda_csv(records))

    profile_net, x, target, _ = analysis.random_geb_trial(0)
    trials = []
    for seed in range(cfg.geb_trials):
        net, x_t, t_t, wf = analysis.random_geb_trial(seed)
        for mode in ("lfc", "hfc"):
            chk = analysis.verify_geb_bound(net, x_t, t_t, mode, wf)
            trials.append({"seed": seed, "mode": mode, "w_frac": wf, "observed": chk.observed, "bound": chk.bound, "holds": chk.holds})
    _write_json(
        os.path.join(out, "geb.json"),
        {
            "profile": analysis.geb_coefficients(profile_net, x, target, cfg.w_fracs[0]).to_dict(),
            "trials": trials,
            "violations": sum(not t["holds"] for t in trials),
        },
    )

    curve = analysis.box_filter_curve(8, 4096, 4)
    _write_json(
        os.path.join(out, "theorem2.json"),
        {
            "curve": [{"b_samples": b, "n": n, "deviation": d} for b, n, d in curve],
            "ratios": [curve[i + 1][2] / curve[i][2] for i in range(len(curve) - 1)],
        },
    )

    rng = Rng(cfg.train.seed, (41,))
    results = []
    for _ in range(cfg.norm_trials):
        k, n = int(rng.integers(1, 6)), int(rng.integers(1, 13))
        lhs, rhs, ok = analysis.conv_norm_inequality(rng.normal((k, k)), rng.normal((n, n)))
        results.append((lhs / rhs if rhs else 0.0, ok))
    _write_json(
        os.path.join(out, "corollary1.json"),
        {"trials": len(results), "violations": sum(not ok for _, ok in results), "max_ratio": max(r for r, _ in results)},
    )
    _write_meta(out, cfg, "analyze")
    return EXIT_OK


def _grid_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "B", "Q", "formula_R", "accounted_R", "divergent"])
    for n, b, q, f, a, div in rows:
        w.writerow([n, b, q, _fmt(f), _fmt(a), int(div)])
    return buf.getvalue()


def cmd_memory(cfg: RunConfig) -> int:
    train_set, _ = load_dataset(cfg)
    net = build_network(cfg, train_set.sample_shape, train_set.classes)
    report = memory.account(net, cfg.train.batch_size, cfg.cache_strategy())
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "memory_grid.csv"), _grid_csv(memory.rate_grid(cfg.grid_n, cfg.grid_b, cfg.grid_q)))
    lin_rows = []
    for n in cfg.grid_n:
        block_net = memory.linear_block_network(n)
        for b in cfg.grid_b:
            for q in cfg.grid_q:
                f = memory.rate_linear_block(n, b, q)
                a = memory.account(block_net, 1, nn.CacheStrategy.division(b, q)).rate
                lin_rows.append((n, b, q, f, a, abs(a - f) > 1e-9 * f))
    _write(os.path.join(out, "memory_linear_grid.csv"), _grid_csv(lin_rows))
    _write(os.path.join(out, "memory.csv"), report.to_csv())
    _write(os.path.join(out, "memory.json"), report.to_json() + "\n")
    _write_meta(out, cfg, "memory")
    return EXIT_OK


def cmd_dump_cache(cfg: RunConfig, layer: int = -1) -> int:
    """Serialize the DIVISION cache of each (or one) layer input for the first batch."""
    strategy = cfg.cache_strategy()
    if strategy.variant != "division":
        raise ConfigError("dump-cache needs strategy = division")
    train_set, _ = load_dataset(cfg)
    net = build_network(cfg, train_set.sample_shape, train_set.classes)
    _, caches = nn.forward(net, train_set.features[: cfg.train.batch_size], strategy, Rng(cfg.train.seed, (3, 0, 0)))
    out = os.path.join(cfg.out_dir, "cache-dump")
    os.makedirs(out, exist_ok=True)
    written = 0
    for i, record in enumerate(caches):
        if record is None or "input" not in record or (layer >= 0 and i != layer):
            continue
        _, payload = record["input"].payload
        with open(os.path.join(out, f"layer-{i:03d}.divc"), "wb") as fh:
            fh.write(compress.serialize_compressed(payload))
        written += 1
    if layer >= 0 and not written:
        raise ConfigError(f"layer {layer} has no compressed input cache")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="divact", description="Compressed-activation training experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI file with a [run] section")
        sp.add_argument("--out", dest="out_dir", help=f"output directory (overrides ${OUT_DIR_ENV})")
        sp.add_argument("--strategy", help="exact | division | fixed_quant | lfc_only | hfc_only")
        sp.add_argument("--B", dest="block", type=int, help="LFC pooling block size")
        sp.add_argument("--Q", dest="bits", type=int, help="HFC bit-width (1, 2, 4 or 8)")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--layers", help="comma-separated layer list, e.g. 'linear:64:relu,linear:6'")

    for name, text in (
        ("train", "train one network and write metrics.csv, memory.json and a checkpoint"),
        ("ablate", "train under six cache strategies and write ablation.csv"),
        ("analyze", "frequency and bound analysis over saved checkpoints"),
        ("memory", "accountant report and closed-form compression-rate grid"),
        ("dump-cache", "serialize compressed caches of the first batch"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        if name == "dump-cache":
            sp.add_argument("--layer", type=int, default=-1, help="only this layer index")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg)
        if args.command == "memory":
            return cmd_memory(cfg)
        return cmd_dump_cache(cfg, args.layer)
    except ConfigError as exc:
        print(f"divact: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divact: training diverged: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except DivactError as exc:
        print(f"divact: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
