"""Command-line surface: segment -> patch -> featurize -> train -> eval ->
heatmap, plus a synthetic-bag generator.

Exit codes: 0 success, 1 usage, 2 data/format error, 3 numeric/training
error. Every artifact is written to a temp file and renamed, so reruns
with identical inputs and seeds are byte-identical and never partial.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import bags as bags_mod
from . import checkpoint as ckpt_mod
from . import heatmap as heatmap_mod
from . import metrics as metrics_mod
from . import segment as segment_mod
from . import synth as synth_mod
from . import training as training_mod
from .baselines import init_mil_params
from .errors import (
    AttnMilError,
    ConfigError,
    DataError,
    DimensionError,
    FormatError,
    NumericError,
    TrainingError,
)
from .imageio import load_ppm, save_ppm
from .linalg import make_rng
from .losses import LossConfig
from .model import attention_forward, init_params
from .util import atomic_write_text


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _downsample_image(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-mean downsampling (crops to a multiple of the factor)."""
    if factor == 1:
        return image
    h = (image.shape[0] // factor) * factor
    w = (image.shape[1] // factor) * factor
    blocks = image[:h, :w].reshape(
        h // factor, factor, w // factor, factor, 3
    ).astype(np.float64)
    return np.floor(blocks.mean(axis=(1, 3)) + 0.5).astype(np.uint8)


def _slide_ids(directory, suffix):
    ids = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(suffix):
            ids.append(name[: -len(suffix)])
    return ids


def _read_kv_config(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _train_config(args) -> tuple[training_mod.TrainConfig, bool]:
    keys = _read_kv_config(args.config) if args.config else {}

    def get(name, cast, default):
        return cast(keys[name]) if name in keys else default

    loss = LossConfig(
        alpha=get("alpha", float, 1.0),
        tau=get("tau", float, 1.0),
        c1=get("c1", float, 0.7),
        c2=get("c2", float, 0.3),
        bag_evidence=get("b", int, 8),
        mutually_exclusive=get("mutually_exclusive", lambda v: v == "1", True),
    )
    cfg = training_mod.TrainConfig(
        learning_rate=get("learning_rate", float, 2e-4),
        weight_decay=get("weight_decay", float, 1e-5),
        min_epochs=get("min_epochs", int, 50),
        max_epochs=get("max_epochs", int, 200),
        patience=get("patience", int, 20),
        seed=args.seed,
        loss=loss,
    )
    relu_embed = get("relu_embed", lambda v: v == "1", True)
    return cfg, relu_embed


# -- subcommands ------------------------------------------------------------


def cmd_segment(args):
    os.makedirs(args.out, exist_ok=True)
    overrides = {}
    if args.params and os.path.exists(args.params):
        overrides = segment_mod.parse_seg_param_file(open(args.params).read())
    default = segment_mod.SegParams(
        downsample=args.downsample,
        sat_thresh=args.sat_thresh,
        median_kernel=args.median_kernel,
        close_kernel=args.close_kernel,
        min_area=args.min_area,
    )
    used = {}
    for slide_id in _slide_ids(args.images, ".ppm"):
        params = overrides.get(slide_id, default)
        image = load_ppm(os.path.join(args.images, f"{slide_id}.ppm"))
        small = _downsample_image(image, params.downsample)
        seg = segment_mod.segment_tissue(small, params)
        mask_rgb = np.repeat(seg.mask[:, :, None], 3, axis=2)
        save_ppm(mask_rgb, os.path.join(args.out, f"{slide_id}_mask.ppm"))
        used[slide_id] = params
    atomic_write_text(
        os.path.join(args.out, "seg_params.txt"),
        segment_mod.format_seg_param_file(used),
    )
    return 0


def _mask_from_file(path, params: segment_mod.SegParams) -> segment_mod.SegmentationMask:
    import cv2

    mask = load_ppm(path)[:, :, 0]
    found, _ = cv2.findContours(
        (mask > 0).astype(np.uint8) * 255, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE
    )
    contours = [c.reshape(-1, 2) for c in found if cv2.contourArea(c) >= params.min_area]
    filled = np.zeros_like(mask)
    if contours:
        cv2.drawContours(
            filled, [c.reshape(-1, 1, 2) for c in contours], -1, 255, thickness=-1
        )
    areas = [float(cv2.contourArea(c.reshape(-1, 1, 2))) for c in contours]
    return segment_mod.SegmentationMask(mask=filled, contours=contours, areas=areas)


def cmd_patch(args):
    os.makedirs(args.out, exist_ok=True)
    entries = segment_mod.parse_seg_param_file(open(args.params).read())
    for slide_id in _slide_ids(args.masks, "_mask.ppm"):
        params = entries.get(slide_id, segment_mod.SegParams())
        seg = _mask_from_file(
            os.path.join(args.masks, f"{slide_id}_mask.ppm"), params
        )
        grid = segment_mod.extract_patch_grid(
            seg,
            patch_size=args.patch_size,
            overlap_fraction=args.overlap,
            downsample=params.downsample,
        )
        lines = [
            f"#slide={slide_id}",
            f"#patch_size={grid.patch_size}",
            f"#step={grid.step}",
            f"#downsample={grid.downsample}",
        ]
        lines += [f"{x},{y}" for x, y in grid.coords]
        atomic_write_text(os.path.join(args.out, f"{slide_id}.grid"), "\n".join(lines) + "\n")
    return 0


def _read_grid(path):
    meta, coords = {}, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, value = line[1:].split("=", 1)
                meta[key] = value
            else:
                x, y = line.split(",")
                coords.append((int(x), int(y)))
    return meta, np.array(coords, dtype=np.int32).reshape(-1, 2)


def _read_labels(path) -> dict[str, int]:
    labels = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("slide_id"):
                continue
            parts = line.split(",")
            labels[parts[0]] = int(parts[1])
    return labels


def cmd_featurize(args):
    os.makedirs(args.out, exist_ok=True)
    labels = _read_labels(args.labels) if args.labels else {}
    for slide_id in _slide_ids(args.grids, ".grid"):
        meta, coords = _read_grid(os.path.join(args.grids, f"{slide_id}.grid"))
        image = load_ppm(os.path.join(args.images, f"{slide_id}.ppm"))
        patch_size = int(meta.get("patch_size", 256))
        feats = np.empty((len(coords), args.dim), dtype=np.float32)
        for i, (x, y) in enumerate(coords):
            patch = image[y : y + patch_size, x : x + patch_size]
            feats[i] = segment_mod.stub_features(patch, args.dim, args.seed)
        bag = bags_mod.FeatureBag(
            slide_id=slide_id,
            label=labels.get(slide_id, -1),
            features=feats,
            coords=coords,
            patch_size=patch_size,
            step=int(meta.get("step", patch_size)),
        )
        bags_mod.save_bag(bag, os.path.join(args.out, f"{slide_id}.bag"))
    return 0


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    spec = synth_mod.SynthSpec(
        n_classes=args.classes,
        feat_dim=args.dim,
        k_min=args.k_min,
        k_max=args.k_max,
        evidence_fraction=args.evidence_fraction,
        separation=args.separation,
        noise_std=args.noise_std,
        seed=args.seed,
    )
    bags = synth_mod.generate_bags(spec, args.count)
    label_lines = ["slide_id,label"]
    evidence_lines = ["slide_id,evidence_indices"]
    for bag in bags:
        bags_mod.save_bag(bag, os.path.join(args.out, f"{bag.slide_id}.bag"))
        label_lines.append(f"{bag.slide_id},{bag.label}")
        evidence_lines.append(
            f"{bag.slide_id},{' '.join(str(i) for i in bag.evidence_idx)}"
        )
    atomic_write_text(os.path.join(args.out, "labels.csv"), "\n".join(label_lines) + "\n")
    atomic_write_text(
        os.path.join(args.out, "evidence.csv"), "\n".join(evidence_lines) + "\n"
    )
    return 0


def _make_adapter(model_kind, n_classes, feat_dim, cfg, relu_embed, seed):
    rng = make_rng(seed)
    if model_kind == "clam":
        params = init_params(n_classes, rng, feat_dim=feat_dim)
        return training_mod.ClamAdapter(params, cfg.loss, relu_embed=relu_embed)
    params = init_mil_params(n_classes, rng, feat_dim=feat_dim)
    return training_mod.MilAdapter(params)


def _read_split_file(path):
    assignment = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("case_id"):
                continue
            case_id, _, fold = line.split(",")
            assignment[case_id] = fold
    return assignment


def _format_split(class_by_case, train, val, test):
    lines = ["case_id,class,fold_assignment"]
    for name, ids in (("train", train), ("val", val), ("test", test)):
        for cid in ids:
            lines.append(f"{cid},{class_by_case[cid]},{name}")
    return "\n".join(lines) + "\n"


def cmd_train(args):
    os.makedirs(args.out, exist_ok=True)
    bags = bags_mod.load_bag_dir(args.bags)
    if not bags:
        raise DataError(f"no .bag files in {args.bags}")
    if any(b.label < 0 for b in bags):
        raise DataError("all training bags need labels")
    case_of = {b.slide_id: b.slide_id for b in bags}
    if args.cases:
        case_of.update(_read_labels_text(args.cases))
    by_case = {}
    for b in bags:
        by_case.setdefault(case_of[b.slide_id], []).append(b)
    case_label = {cid: grp[0].label for cid, grp in by_case.items()}
    n_classes = max(b.label for b in bags) + 1
    feat_dim = bags[0].feat_dim
    cfg, relu_embed = _train_config(args)

    if args.split:
        assignment = _read_split_file(args.split)
        folds = [
            (
                sorted(c for c, f in assignment.items() if f == "train"),
                sorted(c for c, f in assignment.items() if f == "val"),
                sorted(c for c, f in assignment.items() if f == "test"),
            )
        ]
    else:
        plan = training_mod.monte_carlo_split(
            sorted(case_label.items()), args.folds, make_rng(args.seed)
        )
        folds = plan.folds

    magic = ckpt_mod.CLAM_MAGIC if args.model == "clam" else ckpt_mod.MIL_MAGIC
    for i, (train_ids, val_ids, test_ids) in enumerate(folds):
        train_bags = [b for cid in train_ids for b in by_case[cid]]
        val_bags = [b for cid in val_ids for b in by_case[cid]]
        adapter = _make_adapter(
            args.model, n_classes, feat_dim, cfg, relu_embed, args.seed + i
        )
        result = training_mod.fit(adapter, train_bags, val_bags, cfg)
        ckpt_mod.save_checkpoint(
            result.params, os.path.join(args.out, f"fold{i}.ckpt"), magic=magic
        )
        atomic_write_text(
            os.path.join(args.out, f"fold{i}.log.csv"),
            training_mod.format_log(result.log),
        )
        atomic_write_text(
            os.path.join(args.out, f"fold{i}.split.csv"),
            _format_split(case_label, train_ids, val_ids, test_ids),
        )
    return 0


def _read_labels_text(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            out[parts[0]] = parts[1]
    return out


def _load_adapter_from_checkpoint(path, model_kind):
    if model_kind == "clam":
        params = ckpt_mod.load_checkpoint(path)
        return training_mod.ClamAdapter(params, LossConfig())
    from .baselines import MilParams

    def factory(n, d):
        import numpy as _np

        return MilParams(
            n_classes=n,
            feat_dim=d,
            w1=_np.zeros((512, d)),
            b1=_np.zeros(512),
            w2=_np.zeros((n, 512)),
            b2=_np.zeros(n),
        )

    params = ckpt_mod.load_checkpoint(path, magic=ckpt_mod.MIL_MAGIC, factory=factory)
    return training_mod.MilAdapter(params)


def cmd_eval(args):
    os.makedirs(args.out, exist_ok=True)
    bags = bags_mod.load_bag_dir(args.bags)
    if not bags:
        raise DataError(f"no .bag files in {args.bags}")
    ordered = sorted(bags, key=lambda b: b.slide_id)
    labels = np.array([b.label for b in ordered])
    all_probs = []
    for path in args.checkpoints:
        adapter = _load_adapter_from_checkpoint(path, args.model)
        all_probs.append(
            np.array([adapter.predict_probs(b) for b in ordered])
        )
    probs = np.mean(all_probs, axis=0)  # ensemble by probability averaging
    preds = np.argmax(probs, axis=1)
    per_class, macro = metrics_mod.macro_ovr_auc(probs, labels)
    conf = metrics_mod.confidence_summary(probs, labels, preds)
    pairs = [
        ("n_slides", len(ordered)),
        ("n_checkpoints", len(args.checkpoints)),
        ("macro_auc", macro),
    ]
    pairs += [(f"auc_class_{m}", auc) for m, auc in enumerate(per_class)]
    pairs += [
        ("mean_confidence_correct", conf.mean_correct),
        ("std_confidence_correct", conf.std_correct),
        ("mean_confidence_incorrect", conf.mean_incorrect),
        ("std_confidence_incorrect", conf.std_incorrect),
        ("n_correct", conf.n_correct),
        ("n_incorrect", conf.n_incorrect),
    ]
    atomic_write_text(
        os.path.join(args.out, "metrics.txt"), metrics_mod.format_report(pairs)
    )
    lines = ["slide_id,label," + ",".join(f"prob_{m}" for m in range(probs.shape[1]))]
    for bag, row in zip(ordered, probs):
        lines.append(
            f"{bag.slide_id},{bag.label}," + ",".join(repr(float(p)) for p in row)
        )
    atomic_write_text(os.path.join(args.out, "probs.csv"), "\n".join(lines) + "\n")
    if args.pca_out:
        feats = np.array(
            [b.features64().mean(axis=0) for b in ordered]
        )
        proj = metrics_mod.pca_project(feats)
        plines = ["slide_id,pc1,pc2"]
        plines += [
            f"{b.slide_id},{p[0]!r},{p[1]!r}" for b, p in zip(ordered, proj)
        ]
        atomic_write_text(args.pca_out, "\n".join(plines) + "\n")
    return 0


def cmd_heatmap(args):
    bag = bags_mod.load_bag(args.bag)
    params = ckpt_mod.load_checkpoint(args.checkpoint)
    fwd = attention_forward(bag.features64(), params)
    branch = int(np.argmax(fwd.probs)) if args.branch == "predicted" else int(args.branch)
    if not 0 <= branch < params.n_classes:
        raise DataError(f"branch {branch} out of range")
    raw = fwd.raw_attention[branch]
    if args.reference_bag:
        ref_bag = bags_mod.load_bag(args.reference_bag)
        ref_fwd = attention_forward(ref_bag.features64(), params)
        reference = ref_fwd.raw_attention[branch]
    else:
        reference = raw
    normalized = heatmap_mod.percentile_normalize(raw, reference)

    ds = args.downsample
    base = load_ppm(args.base) if args.base else None
    if base is not None:
        height, width = base.shape[:2]
    else:
        width = int((bag.coords[:, 0].max() + bag.patch_size) // ds) if len(bag.coords) else 1
        height = int((bag.coords[:, 1].max() + bag.patch_size) // ds) if len(bag.coords) else 1
    grid = heatmap_mod.HeatmapGrid(width=width, height=height)
    heatmap_mod.accumulate(
        grid, bag.coords // ds, max(1, bag.patch_size // ds), normalized
    )
    image = heatmap_mod.render(grid, base=base, alpha=args.alpha)
    save_ppm(image, args.out)
    if args.csv:
        atomic_write_text(
            args.csv, heatmap_mod.score_csv(bag.coords, raw, normalized)
        )
    return 0


# -- argument wiring --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="attnmil", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("segment", cmd_segment, "tissue masks from raster images")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", help="per-slide segmentation parameter file")
    p.add_argument("--downsample", type=int, default=32)
    p.add_argument("--sat-thresh", type=int, default=8)
    p.add_argument("--median-kernel", type=int, default=7)
    p.add_argument("--close-kernel", type=int, default=4)
    p.add_argument("--min-area", type=int, default=512)

    p = add("patch", cmd_patch, "patch grids from tissue masks")
    p.add_argument("--masks", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-size", type=int, default=256)
    p.add_argument("--overlap", type=float, default=0.0)

    p = add("featurize", cmd_featurize, "bags from patch grids (stub features)")
    p.add_argument("--images", required=True)
    p.add_argument("--grids", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="slide_id,label csv")
    p.add_argument("--dim", type=int, default=1024)

    p = add("synth", cmd_synth, "synthetic bag corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--k-min", type=int, default=50)
    p.add_argument("--k-max", type=int, default=150)
    p.add_argument("--evidence-fraction", type=float, default=0.1)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise-std", type=float, default=1.0)

    p = add("train", cmd_train, "train on a bag directory")
    p.add_argument("--bags", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("clam", "mil"), default="clam")
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--split", help="single-fold split file (case_id,class,fold)")
    p.add_argument("--cases", help="slide_id,case_id csv (default: 1 slide = 1 case)")
    p.add_argument("--config", help="key=value training configuration file")

    p = add("eval", cmd_eval, "metrics for one or more checkpoints")
    p.add_argument("--bags", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--model", choices=("clam", "mil"), default="clam")
    p.add_argument("--pca-out", help="slide-feature PCA projection csv")

    p = add("heatmap", cmd_heatmap, "attention heatmap for one bag")
    p.add_argument("--bag", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="per-patch score csv")
    p.add_argument("--reference-bag", help="non-overlapping bag for normalization")
    p.add_argument("--base", help="base image (PPM) to blend onto")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--downsample", type=int, default=32)
    p.add_argument("--branch", default="predicted")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except (FormatError, DataError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except AttnMilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
