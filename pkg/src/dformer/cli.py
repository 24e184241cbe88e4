"""Command-line entry point: ``python -m dformer <subcommand> ...``.

Every subcommand writes ``config.json`` (the effective configuration),
``metrics.log`` and ``report.txt`` under ``--out``.
"""

from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core.init import DEFAULT_INIT_STD

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2

ABLATION_AXES = ("q_fusion", "lea_fusion", "channel_ratio", "gaa_pool_k", "no_ham", "depth_in_channels",
                 "base_kernel")


class ConfigError(ValueError):
    """A configuration or argument problem reported with exit code 1."""


@dataclass
class RunConfig:
    command: str
    variant: str = "tiny-test"
    seed: int = 0
    out: str = "runs/out"
    data: str | None = None
    checkpoint: str | None = None
    precision: str = "f32"
    q_fusion: str | None = None
    lea_fusion: str | None = None
    channel_ratio: str | None = None
    gaa_pool_k: int | None = None
    no_ham: bool = False
    depth_in_channels: int | None = None
    depth_mode: str = "depth"
    drop_path: float | None = None
    init_std: float = DEFAULT_INIT_STD
    msflip: bool = False
    hyper: dict = field(default_factory=dict)

    def variant_config(self, num_classes: int | None = None):
        from .data.loader import depth_channels_for
        from .encoder.config import get_variant, parse_ratio
        cfg = get_variant(self.variant)
        if self.channel_ratio is not None:
            cfg = cfg.with_channel_ratio(parse_ratio(self.channel_ratio))
        changes = {}
        for key in ("q_fusion", "lea_fusion", "gaa_pool_k"):
            if getattr(self, key) is not None:
                changes[key] = getattr(self, key)
        if self.no_ham:
            changes["use_ham"] = False
        if self.drop_path is not None:
            changes["drop_path_max"] = self.drop_path
        changes["depth_in_channels"] = self.depth_in_channels or depth_channels_for(self.depth_mode)
        if num_classes is not None:
            changes["num_classes"] = num_classes
        return cfg.replace(**changes)


# ---------------------------------------------------------------- argument parsing

COMMON = [
    (("--variant",), dict(choices=["T", "S", "B", "L", "tiny-test"], default="tiny-test", help="encoder variant")),
    (("--seed",), dict(type=int, default=0, help="master seed")),
    (("--out",), dict(default="runs/out", help="output directory")),
    (("--config",), dict(default=None, help="JSON file of defaults; command-line flags win")),
    (("--precision",), dict(choices=["f32", "f64"], default="f32", help="compute precision")),
    (("--q-fusion",), dict(choices=["none", "q", "qkv"], default=None, help="GAA fusion (variant default: q)")),
    (("--lea-fusion",), dict(choices=["hadamard", "add", "concat"], default=None,
                             help="LEA fusion (variant default: hadamard)")),
    (("--channel-ratio",), dict(default=None, help="depth/RGB channel ratio, e.g. 1/2")),
    (("--gaa-pool-k",), dict(type=int, default=None, help="GAA pooled query grid size")),
    (("--no-ham",), dict(action="store_true", default=False, help="disable the factorization context")),
    (("--depth-in-channels",), dict(type=int, default=None, help="depth branch input channels")),
    (("--depth-mode",), dict(choices=["depth", "dup3", "rgb"], default="depth",
                             help="what feeds the depth branch (rgb gives the RGB+RGB baseline)")),
    (("--drop-path",), dict(type=float, default=None, help="max stochastic depth rate")),
    (("--init-std",), dict(type=float, default=DEFAULT_INIT_STD, help="truncated-normal init std")),
]

COMMANDS = {
    "gen-data": [
        (("--n-samples",), dict(type=int, default=256, help="number of samples")),
        (("--size",), dict(type=int, default=64, help="image side, a multiple of 32")),
        (("--mode",), dict(choices=["classify", "segment"], default="segment", help="target type")),
        (("--n-classes",), dict(type=int, default=5, help="number of classes (segment: incl. background)")),
        (("--workers",), dict(type=int, default=1, help="generation threads")),
    ],
    "pretrain": [
        (("--data",), dict(default=None, help="classification dataset directory")),
        (("--epochs",), dict(type=int, default=20, help="training epochs")),
        (("--batch-size",), dict(type=int, default=16, help="batch size")),
        (("--lr",), dict(type=float, default=1e-3, help="base learning rate")),
        (("--weight-decay",), dict(type=float, default=0.05, help="AdamW weight decay")),
        (("--warmup-epochs",), dict(type=int, default=1, help="linear warmup epochs")),
        (("--label-smoothing",), dict(type=float, default=0.1, help="label smoothing")),
        (("--stop-after",), dict(type=int, default=None, help="stop after N epochs (resumable)")),
        (("--no-resume",), dict(action="store_true", default=False, help="ignore saved state in --out")),
    ],
    "finetune": [
        (("--data",), dict(default=None, help="segmentation dataset directory")),
        (("--checkpoint",), dict(default=None, help="pretrained checkpoint (random init when absent)")),
        (("--epochs",), dict(type=int, default=40, help="training epochs")),
        (("--batch-size",), dict(type=int, default=8, help="batch size")),
        (("--lr",), dict(type=float, default=1e-3, help="initial learning rate")),
        (("--weight-decay",), dict(type=float, default=0.01, help="AdamW weight decay")),
        (("--max-steps",), dict(type=int, default=None, help="cap on optimizer steps")),
        (("--val-fraction",), dict(type=float, default=0.2, help="held-out fraction")),
        (("--msflip",), dict(action="store_true", default=False, help="add multi-scale flip evaluation")),
        (("--stop-after",), dict(type=int, default=None, help="stop after N epochs (resumable)")),
        (("--no-resume",), dict(action="store_true", default=False, help="ignore saved state in --out")),
    ],
    "eval": [
        (("--data",), dict(default=None, help="segmentation dataset directory")),
        (("--checkpoint",), dict(default=None, help="finetuned checkpoint (required)")),
        (("--split",), dict(choices=["val", "all"], default="val", help="which samples to score")),
        (("--val-fraction",), dict(type=float, default=0.2, help="held-out fraction used for --split val")),
        (("--msflip",), dict(action="store_true", default=False, help="multi-scale flip inference")),
        (("--workers",), dict(type=int, default=1, help="evaluation threads")),
    ],
    "gradcheck": [
        (("--shapes",), dict(type=int, default=5, help="random shapes per primitive")),
    ],
    "params": [
        (("--no-decoder",), dict(action="store_true", default=False, help="count the encoder only")),
    ],
    "ablate": [
        (("--axis",), dict(action="append", default=None,
                           help="axis=v1,v2,... (repeatable); axes: " + ", ".join(ABLATION_AXES))),
        (("--sweep",), dict(choices=["cartesian", "single"], default="cartesian",
                            help="full product of axes, or one axis at a time")),
        (("--n-samples",), dict(type=int, default=40, help="samples generated for the sweep")),
        (("--size",), dict(type=int, default=64, help="image side")),
        (("--n-classes",), dict(type=int, default=5, help="classes incl. background")),
        (("--epochs",), dict(type=int, default=2, help="finetune epochs per cell")),
        (("--batch-size",), dict(type=int, default=8, help="batch size")),
        (("--lr",), dict(type=float, default=4e-3, help="learning rate")),
    ],
}

HYPER_KEYS = {"n_samples", "size", "mode", "n_classes", "workers", "epochs", "batch_size", "lr", "weight_decay",
              "warmup_epochs", "label_smoothing", "stop_after", "no_resume", "max_steps", "val_fraction",
              "split", "shapes", "no_decoder", "axis", "sweep"}


def build_parser(suppress: bool = False) -> argparse.ArgumentParser:
    """With ``suppress`` every default is dropped, so the namespace holds only explicit flags."""
    parser = argparse.ArgumentParser(prog="dformer", description="RGB-D encoder-decoder toolkit",
                                     argument_default=argparse.SUPPRESS if suppress else None)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, extra in COMMANDS.items():
        p = sub.add_parser(name, formatter_class=argparse.ArgumentDefaultsHelpFormatter,
                           argument_default=argparse.SUPPRESS if suppress else None)
        for flags, kw in COMMON + extra:
            kw = dict(kw)
            if suppress:
                kw["default"] = argparse.SUPPRESS
            p.add_argument(*flags, **kw)
    return parser


def _subcommand_actions(parser: argparse.ArgumentParser, command: str) -> dict:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {a.dest: a for a in sub.choices[command]._actions}


def _coerce(action: argparse.Action, key: str, value, source: Path):
    """Apply a flag's type and choice checks to a value read from a config file."""
    if value is None:
        return None
    if isinstance(action, argparse._StoreTrueAction):
        if not isinstance(value, bool):
            raise ConfigError(f"--config {source}: {key} must be true or false, got {value!r}")
        return value
    if isinstance(action, argparse._AppendAction):
        if not isinstance(value, list):
            raise ConfigError(f"--config {source}: {key} must be a list, got {value!r}")
        return [str(v) for v in value]
    if action.type is not None:
        if isinstance(value, bool) or (action.type in (int, float) and not isinstance(value, (int, float))):
            raise ConfigError(f"--config {source}: {key} must be {action.type.__name__}, got {value!r}")
        try:
            value = action.type(value)
        except (TypeError, ValueError):
            raise ConfigError(f"--config {source}: bad value for {key}: {value!r}") from None
    if action.choices is not None and value not in action.choices:
        raise ConfigError(f"--config {source}: {key} must be one of {list(action.choices)}, got {value!r}")
    return value


def resolve_config(argv: list[str]) -> RunConfig:
    """Defaults, then the JSON ``--config`` file, then explicit flags."""
    parser = build_parser()
    full = vars(parser.parse_args(argv))
    explicit = vars(build_parser(suppress=True).parse_args(argv))
    merged = dict(full)
    if full.get("config"):
        path = Path(full["config"])
        if not path.exists():
            raise ConfigError(f"--config file not found: {path}")
        try:
            file_cfg = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"--config {path}: invalid JSON ({e})") from None
        hyper_in_file = file_cfg.pop("hyper", {})
        file_cfg.update(hyper_in_file)
        unknown = set(file_cfg) - set(full)
        if unknown:
            raise ConfigError(f"--config {path}: unknown keys {sorted(unknown)}")
        actions = _subcommand_actions(parser, full["command"])
        for k, v in file_cfg.items():
            if k not in explicit:
                merged[k] = _coerce(actions[k], k, v, path)
    merged.pop("config", None)
    command = merged.pop("command")
    hyper = {k: merged.pop(k) for k in list(merged) if k in HYPER_KEYS}
    return RunConfig(command=command, hyper=hyper, **merged)


# ---------------------------------------------------------------- helpers


def _echo_config(rc: RunConfig, out: Path, extra: dict | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    d = asdict(rc)
    if extra:
        d.update(extra)
    (out / "config.json").write_text(json.dumps(d, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _require(rc: RunConfig, attr: str, flag: str) -> str:
    value = getattr(rc, attr)
    if not value:
        raise ConfigError(f"{rc.command} requires {flag}")
    return value


def _load_dataset(path: str, depth_mode: str):
    from .data import DatasetManifest, RGBDDataset
    p = Path(path)
    if not (p / "manifest.txt").exists() and not p.is_file():
        raise ConfigError(f"no manifest.txt under --data {path}")
    return RGBDDataset(DatasetManifest.read(p), depth_mode)


def _thread_limit():
    n = os.environ.get("DFORMER_THREADS")
    if not n:
        return contextlib.nullcontext()
    try:
        limit = int(n)
    except ValueError:
        raise ConfigError(f"DFORMER_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=limit)


def _workers(requested: int) -> int:
    cap = os.environ.get("DFORMER_THREADS")
    return min(requested, int(cap)) if cap else requested


def _say(line: str) -> None:
    print(line, flush=True)


# ---------------------------------------------------------------- subcommands


def cmd_gen_data(rc: RunConfig) -> int:
    from .data import gen_synthetic
    h = rc.hyper
    out = Path(rc.out)
    _echo_config(rc, out)
    m = gen_synthetic(rc.seed, h["n_samples"], h["size"], h["mode"], h["n_classes"], out,
                      workers=_workers(h["workers"]))
    counts = np.zeros(h["n_classes"], np.int64)
    lines = ["sample,classes"]
    for i in range(len(m)):
        t = m.load(i).target
        present = np.unique(t) if isinstance(t, np.ndarray) else np.array([t])
        counts[present[present < h["n_classes"]]] += 1
        lines.append(f"{i}," + " ".join(str(int(c)) for c in present))
    (out / "metrics.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report = ["class,samples_containing"] + [f"{c},{n}" for c, n in enumerate(counts)]
    (out / "report.txt").write_text("\n".join(report) + "\n", encoding="utf-8")
    _say(f"wrote {len(m)} {h['mode']} samples ({h['size']}x{h['size']}, {h['n_classes']} classes) to {out}")
    return EXIT_OK


def cmd_pretrain(rc: RunConfig) -> int:
    from .pretrain import PretrainHyper, pretrain_run
    data = _load_dataset(_require(rc, "data", "--data"), rc.depth_mode)
    h = rc.hyper
    cfg = rc.variant_config(data.num_classes)
    hyper = PretrainHyper(epochs=h["epochs"], batch_size=h["batch_size"], lr=h["lr"],
                          weight_decay=h["weight_decay"], warmup_epochs=h["warmup_epochs"],
                          label_smoothing=h["label_smoothing"], init_std=rc.init_std, seed=rc.seed,
                          stop_after=h["stop_after"])
    out = Path(rc.out)
    _echo_config(rc, out, {"model": cfg.to_dict()})
    res = pretrain_run(cfg, data, hyper, out, resume=not h["no_resume"])
    (out / "model.json").write_text(json.dumps({"model": cfg.to_dict(), "depth_mode": rc.depth_mode},
                                               indent=1, sort_keys=True) + "\n", encoding="utf-8")
    best = res.state.best_metric
    (out / "report.txt").write_text("variant,params,epochs,best_top1,best_epoch\n"
                                    f"{cfg.name},{res.model.num_parameters()},{res.state.epoch},"
                                    f"{best:.4f},{res.state.best_epoch}\n", encoding="utf-8")
    _say(f"pretrained {cfg.name} for {res.state.epoch} epochs; best top-1 {best:.4f} -> {out / 'best.ckpt'}")
    return EXIT_OK


def _finetune_hyper(rc: RunConfig, **over):
    from .segmentation import FinetuneHyper
    h = dict(rc.hyper)
    h.update(over)
    return FinetuneHyper(epochs=h["epochs"], batch_size=h["batch_size"], lr=h["lr"],
                         weight_decay=h.get("weight_decay", 0.01), init_std=rc.init_std, seed=rc.seed,
                         val_fraction=h.get("val_fraction", 0.2), msflip=rc.msflip,
                         max_steps=h.get("max_steps"), stop_after=h.get("stop_after"))


def cmd_finetune(rc: RunConfig) -> int:
    from .segmentation import finetune_run
    data = _load_dataset(_require(rc, "data", "--data"), rc.depth_mode)
    cfg = rc.variant_config(data.num_classes)
    if rc.checkpoint and not Path(rc.checkpoint).exists():
        raise ConfigError(f"--checkpoint not found: {rc.checkpoint}")
    out = Path(rc.out)
    _echo_config(rc, out, {"model": cfg.to_dict()})
    res = finetune_run(cfg, data, _finetune_hyper(rc), out, pretrained=rc.checkpoint,
                       resume=not rc.hyper["no_resume"])
    (out / "model.json").write_text(json.dumps({"model": cfg.to_dict(), "depth_mode": rc.depth_mode},
                                               indent=1, sort_keys=True) + "\n", encoding="utf-8")
    r = res.report
    _say(f"finetuned {cfg.name}: val mIoU {r['miou_single']:.4f}"
         + (f", MS-flip {r['miou_msflip']:.4f}" if rc.msflip else "") + f" -> {out / 'report.txt'}")
    return EXIT_OK


def cmd_eval(rc: RunConfig) -> int:
    from .core.rdt import load_checkpoint
    from .data import split_indices
    from .encoder.config import VariantConfig
    from .segmentation import SegmentationModel, evaluate_confusion, miou
    from .segmentation.finetune import format_report
    ckpt = Path(_require(rc, "checkpoint", "--checkpoint"))
    if not ckpt.exists():
        raise ConfigError(f"--checkpoint not found: {ckpt}")
    spec = ckpt.parent / "model.json"
    depth_mode = rc.depth_mode
    if spec.exists():
        meta = json.loads(spec.read_text(encoding="utf-8"))
        cfg = VariantConfig.from_dict(meta["model"])
        depth_mode = meta.get("depth_mode", depth_mode)
    else:
        cfg = None
    data = _load_dataset(_require(rc, "data", "--data"), depth_mode)
    cfg = cfg or rc.variant_config(data.num_classes)
    model = SegmentationModel(cfg, num_classes=cfg.num_classes)
    model.to(np.float64 if rc.precision == "f64" else np.float32)
    model.load_state_dict(load_checkpoint(ckpt))
    h = rc.hyper
    if h["split"] == "val":
        _, idx = split_indices(len(data), rc.seed, h["val_fraction"])
    else:
        idx = list(range(len(data)))
    out = Path(rc.out)
    _echo_config(rc, out, {"model": cfg.to_dict()})
    cm = evaluate_confusion(model, data, idx, cfg.num_classes, workers=_workers(h["workers"]))
    single, per = miou(cm)
    row = {"variant": cfg.name, "params": model.num_parameters(), "miou_single": single,
           "miou_msflip": float("nan"), "per_class_iou": per}
    lines = ["mode,class,iou"] + [f"single,{c},{v:.6f}" for c, v in enumerate(per)]
    if rc.msflip:
        ms, per_ms = miou(evaluate_confusion(model, data, idx, cfg.num_classes, msflip=True,
                                             workers=_workers(h["workers"])))
        row["miou_msflip"] = ms
        lines += [f"msflip,{c},{v:.6f}" for c, v in enumerate(per_ms)]
    (out / "metrics.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(format_report([row]), encoding="utf-8")
    _say(f"mIoU {single:.4f}" + (f", MS-flip {row['miou_msflip']:.4f}" if rc.msflip else "")
         + f" over {len(idx)} samples")
    return EXIT_OK


def cmd_gradcheck(rc: RunConfig) -> int:
    from .verify import GRADCHECK_TOL, run_suite
    if rc.precision != "f64":
        raise ConfigError("gradcheck requires --precision f64")
    out = Path(rc.out)
    _echo_config(rc, out)
    lines = ["check,max_rel_err,tol,ok"]

    def log(r):
        lines.append(f"{r.name},{r.max_rel_err:.3e},{r.tol:.0e},{int(r.ok)}")
        _say(f"  {r.name:26s} {r.max_rel_err:.3e}  {'ok' if r.ok else 'FAIL'}")

    results = run_suite(rc.seed, rc.hyper["shapes"], log=log)
    (out / "metrics.log").write_text("\n".join(lines) + "\n", encoding="utf-8")
    worst = max(r.max_rel_err for r in results)
    failed = [r.name for r in results if not r.ok]
    (out / "report.txt").write_text(f"max_rel_err,{worst:.3e}\nfailed,{' '.join(failed) or '-'}\n",
                                    encoding="utf-8")
    _say(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    return EXIT_OK if not failed else EXIT_ERROR


def cmd_params(rc: RunConfig) -> int:
    from .encoder.params import count_parameters, parameter_report
    cfg = rc.variant_config()
    out = Path(rc.out)
    _echo_config(rc, out)
    if rc.hyper["no_decoder"]:
        n = count_parameters(cfg)
        line = f"{cfg.name}: encoder {n:,} parameters"
        rows = [f"{cfg.name},{n},,"]
    else:
        r = parameter_report(cfg)
        n = r["params"]
        if "reference_m" in r:
            line = (f"{cfg.name}: {n:,} parameters ({n / 1e6:.2f}M) vs reference {r['reference_m']}M "
                    f"({r['deviation_pct']:+.2f}%)")
            rows = [f"{cfg.name},{n},{r['reference_m']},{r['deviation_pct']:.2f}"]
        else:
            line = f"{cfg.name}: {n:,} parameters ({n / 1e6:.3f}M); no reference value"
            rows = [f"{cfg.name},{n},,"]
    (out / "metrics.log").write_text("variant,params,reference_m,deviation_pct\n" + "\n".join(rows) + "\n",
                                     encoding="utf-8")
    (out / "report.txt").write_text(line + "\n", encoding="utf-8")
    _say(line)
    return EXIT_OK


def parse_axes(specs: list[str] | None) -> list[tuple[str, list[str]]]:
    if not specs:
        raise ConfigError("ablate requires at least one --axis name=v1,v2,...")
    axes = []
    for spec in specs:
        name, sep, values = spec.partition("=")
        name = name.strip().replace("-", "_")
        if not sep or not values:
            raise ConfigError(f"--axis expects name=v1,v2,..., got {spec!r}")
        if name not in ABLATION_AXES:
            raise ConfigError(f"unsupported ablation axis {name!r}; choose from {', '.join(ABLATION_AXES)}")
        axes.append((name, [v.strip() for v in values.split(",") if v.strip()]))
    return axes


def _apply_axis(rc: RunConfig, name: str, value: str) -> RunConfig:
    from dataclasses import replace
    if name == "no_ham":
        return replace(rc, no_ham=value.lower() in ("1", "true", "yes"))
    if name in ("gaa_pool_k", "depth_in_channels"):
        return replace(rc, **{name: int(value)})
    if name == "base_kernel":
        return replace(rc, hyper={**rc.hyper, "base_kernel": int(value)})
    return replace(rc, **{name: value})


def ablation_cells(axes, sweep: str):
    if sweep == "single":
        return [((name, v),) for name, values in axes for v in values]
    return [tuple(zip([a for a, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]


def cmd_ablate(rc: RunConfig) -> int:
    from .core.tensor import Tensor, count_macs, no_grad
    from .data import RGBDDataset, gen_synthetic
    from .segmentation import SegmentationModel, finetune_run
    h = rc.hyper
    axes = parse_axes(h["axis"])
    cells = ablation_cells(axes, h["sweep"])
    out = Path(rc.out)
    _echo_config(rc, out)
    manifest = gen_synthetic(rc.seed, h["n_samples"], h["size"], "segment", h["n_classes"], out / "data")
    header = "axis-values,params,flops-proxy,miou"
    rows = [header]
    for cell in cells:
        cell_rc = rc
        for name, value in cell:
            cell_rc = _apply_axis(cell_rc, name, value)
        cfg = cell_rc.variant_config(h["n_classes"])
        if "base_kernel" in cell_rc.hyper:
            cfg = cfg.replace(base_kernel=cell_rc.hyper["base_kernel"])
        data = RGBDDataset(manifest, cell_rc.depth_mode)
        tag = ";".join(f"{n}={v}" for n, v in cell)
        cell_dir = out / "cells" / tag.replace("/", "_").replace(";", "__").replace("=", "-")
        res = finetune_run(cfg, data, _finetune_hyper(cell_rc, val_fraction=0.2), cell_dir, resume=False)
        probe = SegmentationModel(cfg, num_classes=h["n_classes"]).eval()
        rgb, depth, _ = data.batch([0])
        with no_grad(), count_macs() as macs:
            probe(Tensor(rgb), Tensor(depth))
        row = f"{tag},{res.model.num_parameters()},{macs[0]},{res.report['miou_single']:.6f}"
        rows.append(row)
        _say(row)
    text = "\n".join(rows) + "\n"
    (out / "metrics.log").write_text(text, encoding="utf-8")
    (out / "report.txt").write_text(text, encoding="utf-8")
    return EXIT_OK


HANDLERS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "params": cmd_params, "ablate": cmd_ablate}


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    from .core.tensor import NonFiniteError, precision
    from .core.rdt import RDTError
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rc = resolve_config(argv)
    except SystemExit as e:  # argparse: usage errors and --help
        return int(e.code or 0)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    try:
        with _thread_limit(), precision(rc.precision):
            return HANDLERS[rc.command](rc)
    except (ConfigError, ValueError, KeyError, TypeError, FileNotFoundError, RDTError, NonFiniteError) as e:
        msg = str(e).strip().splitlines()[0] if str(e).strip() else type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())
