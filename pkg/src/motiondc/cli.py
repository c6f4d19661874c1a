"""Command-line front end: ``motiondc <command> ...``.

Errors are reported on stderr as a single ``motiondc: error: <message>`` line
with a nonzero exit status.
"""
from __future__ import annotations

import argparse
import csv
import logging
from pathlib import Path
import sys

import numpy as np

DATASET_DEFAULTS = {
    "count": 200,
    "split": "0.8/0.1/0.1",
    "scan_order": "FS",
    "scan_order_file": "",
    "height": 64,
    "width": 64,
    "coils": 4,
    "coil_radius": 0.0,
    "max_angle_deg": 8.0,
    "max_shift": "auto",
    "max_motions": 3,
    "min_gap": 64,
    "t_min": 8,
    "band": "auto",
    "seed": 0,
}

TRAIN_DEFAULTS = {
    "n_units": 2,
    "resnet_filters": 16,
    "resnet_layers": 3,
    "leaky_slope": 0.2,
    "unet_levels": 3,
    "unet_base_filters": 16,
    "unet_max_filters": 512,
    "kernel_size": 3,
    "residual": False,
    "head_init_scale": 1.0,
    "lr": 1e-4,
    "epochs": 30,
    "batch_size": 4,
    "seed": 0,
    "variant": "two_branch",
    "dtype": "float32",
    "grad_floor": 0.05,
}

SPLITS = ("train", "val", "test")


class CliError(Exception):
    pass


# -- dataset configuration ---------------------------------------------------

def split_counts(count: int, split: str) -> tuple[int, int, int]:
    try:
        fracs = [float(v) for v in split.split("/")]
    except ValueError:
        raise CliError(f"bad split {split!r}; expected train/val/test fractions") from None
    if len(fracs) != 3 or any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
        raise CliError(f"bad split {split!r}; need three non-negative fractions summing to 1")
    n_train = round(count * fracs[0])
    n_val = round(count * fracs[1])
    return n_train, n_val, count - n_train - n_val


def resolve_order(cfg: dict):
    from .acquisition import analog_scan_order, load_scan_order

    if cfg["scan_order_file"]:
        order = load_scan_order(cfg["scan_order_file"])
    else:
        order = analog_scan_order(cfg["scan_order"], cfg["width"])
    if order.n_columns != cfg["width"]:
        raise CliError(f"scan order width {order.n_columns} != image width {cfg['width']}")
    return order


def motion_config(cfg: dict):
    from .motion import MotionConfig

    shift = cfg["max_shift"]
    # the 5 px default is meant for 256-pixel images
    shift = 5.0 * cfg["width"] / 256.0 if shift == "auto" else float(shift)
    return MotionConfig(max_angle_deg=cfg["max_angle_deg"], max_shift=shift,
                        max_motions=cfg["max_motions"], min_gap=cfg["min_gap"], t_min=cfg["t_min"])


def dp_band(cfg: dict) -> int:
    band = cfg["band"]
    return max(1, cfg["width"] // 8) if band == "auto" else int(band)


def build_datasets(cfg: dict) -> dict:
    """Train/val/test datasets with disjoint, consecutive seed ranges."""
    from .acquisition import biot_savart_maps
    from .training import generate_dataset

    order = resolve_order(cfg)
    radius = cfg["coil_radius"] or None
    maps = biot_savart_maps(cfg["height"], cfg["width"], cfg["coils"], coil_radius=radius)
    mcfg = motion_config(cfg)
    band = dp_band(cfg)
    counts = split_counts(cfg["count"], cfg["split"])
    out, start = {}, cfg["seed"]
    for name, n in zip(SPLITS, counts):
        out[name] = generate_dataset(range(start, start + n), order, maps, mcfg, band)
        start += n
    return out


# -- commands ----------------------------------------------------------------

def cmd_gen_dataset(args) -> int:
    from .formats import load_config, write_dataset

    cfg = load_config(args.config, DATASET_DEFAULTS)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    datasets = build_datasets(cfg)
    for name, ds in datasets.items():
        write_dataset(ds, out / f"{name}.mksp", extra={"split": name, "config": cfg})
    print(" ".join(f"{name}={len(ds)}" for name, ds in datasets.items()))
    return 0


def _dataset_path(path: str, split: str) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / f"{split}.mksp"
    if not p.exists():
        raise CliError(f"dataset not found: {p}")
    return p


def _variant(name: str) -> str:
    return name.replace("-", "_")


def cmd_train(args) -> int:
    from .formats import load_config, read_dataset, save_weights
    from .network import NetworkConfig
    from .training import OptimConfig, train

    cfg = load_config(args.config, TRAIN_DEFAULTS)
    for key in ("lr", "epochs", "variant", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _variant(val) if key == "variant" else val
    train_path = _dataset_path(args.dataset, "train")
    train_set, _ = read_dataset(train_path)
    val_set = None
    if Path(args.dataset).is_dir() and (Path(args.dataset) / "val.mksp").exists():
        val_set, _ = read_dataset(Path(args.dataset) / "val.mksp")
    net_cfg = NetworkConfig(**{k: cfg[k] for k in NetworkConfig.__dataclass_fields__})
    opt = OptimConfig(lr=cfg["lr"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
                      seed=cfg["seed"], variant=cfg["variant"], dtype=cfg["dtype"],
                      grad_floor=cfg["grad_floor"])
    result = train(train_set, net_cfg, opt, val_set)
    save_weights(result.model, args.out, meta={"variant": opt.variant})
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in result.history:
            w.writerow([epoch, f"{tl:.8g}", f"{vl:.8g}"])
    print(f"trained {opt.variant} for {opt.epochs} epochs (best epoch {result.best_epoch}) -> {args.out}")
    return 0


def magnitude_panel(img: np.ndarray) -> np.ndarray:
    mag = np.abs(img)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def save_triptych(panels: list[np.ndarray], path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    strip = np.concatenate([magnitude_panel(p) for p in panels], axis=1)
    plt.imsave(path, strip, cmap="gray", vmin=0.0, vmax=1.0, metadata={"Software": None})


def cmd_correct(args) -> int:
    from .formats import load_weights, read_dataset, write_images
    from .training import reconstruct

    model, meta = load_weights(args.weights)
    variant = _variant(args.variant) if args.variant else meta.get("variant", "two_branch")
    dataset, _ = read_dataset(_dataset_path(args.dataset, "test"))
    if len(dataset) == 0:
        raise CliError("dataset is empty")
    try:
        model.cfg.check_shape(*dataset.shape)
    except ValueError as exc:
        raise CliError(f"weights do not fit dataset: {exc}") from None
    corrupted = reconstruct(None, dataset, "zero_filled")
    corrected = reconstruct(model, dataset, variant)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, zf, xc in zip(dataset.samples, corrupted, corrected):
        stem = out / f"sample_{s.seed:06d}"
        save_triptych([zf, xc, s.target], f"{stem}.png")
        write_images({"corrupted": zf, "corrected": xc, "target": s.target}, f"{stem}.mksp")
    print(f"corrected {len(dataset)} samples -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    from .formats import load_weights, read_dataset
    from .training import evaluate

    dataset, extra = read_dataset(_dataset_path(args.dataset, "test"))
    if len(dataset) == 0:
        raise CliError("cannot evaluate an empty dataset")
    runs = [("zero_filled", None)]
    if args.single_branch:
        runs.append(("single_branch", load_weights(args.single_branch)[0]))
    if args.two_branch:
        runs.append(("two_branch", load_weights(args.two_branch)[0]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = dataset.order.kind
    summary = []
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "variant", "nmse", "ssim"])
        for variant, model in runs:
            rows = evaluate(model, dataset, variant)
            for r in rows:
                w.writerow([r.sample_id, r.variant, f"{r.nmse:.8g}", f"{r.ssim:.8g}"])
            summary.append((variant, np.mean([r.nmse for r in rows])))
    label = kind if kind != "Custom" else f"Custom{dataset.order.n_columns}"
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", label])
        for variant, value in summary:
            w.writerow([variant, f"{value:.6g}"])
    for variant, value in summary:
        print(f"{variant:14s} {label} mean NMSE {value:.5f}")
    return 0


def render_scan_order(order, path) -> int:
    """Scatter of acquisition time vs column; returns the number of plotted points."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = np.arange(len(order))
    fig, ax = plt.subplots(figsize=(4, 4), dpi=100)
    ax.scatter(t, order.columns, s=4, c="tab:blue")
    if order.t_center is not None:
        ax.scatter([order.t_center], [order.center_column], s=30, c="red", zorder=3)
    ax.set_xlabel("acquisition time t")
    ax.set_ylabel("phase-encode column $k_x$")
    ax.set_title(f"{order.kind} ({len(order)} of {order.n_columns} columns)")
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return len(order)


def cmd_render_scan_order(args) -> int:
    from .acquisition import analog_scan_order, load_scan_order

    if args.file:
        order = load_scan_order(args.file)
    elif args.kind:
        width = args.width or {"FS256": 256, "FS260": 260, "US260": 260}.get(args.kind)
        if width is None:
            raise CliError(f"--width is required for kind {args.kind!r}")
        order = analog_scan_order(args.kind, width)
    else:
        raise CliError("give a scan-order kind or --file")
    n = render_scan_order(order, args.out)
    print(f"{n} points -> {args.out}")
    return 0


def cmd_info(args) -> int:
    from .formats import CONTAINER_MAGIC, WEIGHTS_MAGIC, load_weights, read_container_header

    with open(args.path, "rb") as fh:
        magic = fh.read(5)
    if magic == CONTAINER_MAGIC:
        h = read_container_header(args.path)
        if h["content"] == "dataset":
            so = h["scan_order"]
            print(f"dataset: {h['n_samples']} samples, {h['n_coils']} coils, "
                  f"{h['height']}x{h['width']}, scan order {so['kind']} "
                  f"({len(so['columns'])} of {so['width']} columns)")
        else:
            print(f"images: {', '.join(h['names'])} ({h['height']}x{h['width']})")
    elif magic == WEIGHTS_MAGIC:
        model, meta = load_weights(args.path)
        print(f"weights: {model.n_parameters()} parameters, variant {meta.get('variant')}, "
              f"config {model.cfg.to_dict()}")
    else:
        raise CliError(f"{args.path}: unrecognized file (magic {magic!r})")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="motiondc", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None, help="torch intra-op threads")
    p.add_argument("--config", default=None, help="key=value configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-dataset", help="simulate train/val/test containers")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train a two- or single-branch model")
    t.add_argument("dataset", help="dataset directory or train container")
    t.add_argument("--out", required=True, help="weights file")
    t.add_argument("--log", default=None, help="training log CSV (default: <out>.log.csv)")
    t.add_argument("--variant", choices=("two-branch", "single-branch"), default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("correct", help="write corrected images and PNG triptychs")
    c.add_argument("weights")
    c.add_argument("dataset", help="dataset directory (uses test split) or container")
    c.add_argument("--out", required=True)
    c.add_argument("--variant", choices=("two-branch", "single-branch"), default=None)
    c.set_defaults(func=cmd_correct)

    e = sub.add_parser("evaluate", help="NMSE/SSIM tables")
    e.add_argument("dataset", help="dataset directory (uses test split) or container")
    e.add_argument("--two-branch", default=None, help="two-branch weights")
    e.add_argument("--single-branch", default=None, help="single-branch weights")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("render-scan-order", help="plot a scan order")
    r.add_argument("kind", nargs="?", default=None, help="FS256, FS260, US260, FS or US")
    r.add_argument("--file", default=None, help="scan-order text file")
    r.add_argument("--width", type=int, default=None)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render_scan_order)

    i = sub.add_parser("info", help="describe a container or weights file")
    i.add_argument("path")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        import torch
        torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except (CliError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"motiondc: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
