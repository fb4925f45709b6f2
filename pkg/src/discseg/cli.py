"""Command-line entry point: ``discseg {generate,train,infer,eval}``.

Settings come from a flat ``key = value`` file (``--config``) overridden by
flags.  Every key of ``RunConfig`` may appear in the file; unknown keys are
an error.  Diagnostics go to stderr.  Exit status: 0 success, 1 input or
I/O error, 2 usage error, 3 training diverged.

Layouts::

    generate  OUT/scene_NNNN.ppm  OUT/scene_NNNN.pgm  OUT/manifest.txt
    train     OUT/checkpoint/{config.txt, params/*.dseg, adam/*.dseg}
              OUT/trace.txt
    infer     OUT/<stem>.pgm  OUT/<stem>.dseg  [OUT/<stem>_scatter*.ppm
              OUT/<stem>_overlay.ppm]
    eval      OUT/report.txt  OUT/report.kv
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from discseg.clustering import ClusterConfig, cluster_by_known_centers, mean_shift_cluster
from discseg.fileio import (
    FormatError,
    atomic_write_text,
    format_key_values,
    parse_key_values,
    read_pgm,
    read_ppm,
    read_tensor,
    write_labels,
    write_ppm,
    write_tensor,
)
from discseg.loss import LossConfig, cluster_means
from discseg.metrics import evaluate
from discseg.render import overlay, scatter
from discseg.synthdata import SticksConfig, generate_dataset, network_input
from discseg.toynet import AdamState, NetConfig, Sample, TrainingDiverged, embed, init_params, train

log = logging.getLogger("discseg")

EXIT_ERROR = 1
EXIT_DIVERGED = 3


class CliError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # scenes
    count: int = 64
    image_size: int = 64
    stick_count_min: int = 2
    stick_count_max: int = 6
    stick_length: float = 36.0
    stick_width: float = 5.0
    # loss
    delta_v: float = 0.5
    delta_d: float = 1.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.001
    norm: str = "l2"
    # clustering; bandwidth None means 2 * delta_v
    bandwidth: float | None = None
    min_cluster_size: int | None = None
    max_shift_iters: int = 100
    shift_tolerance: float = 1e-4
    seed_policy: str = "scan"
    # network and training
    hidden_channels: int = 32
    num_layers: int = 4
    kernel_size: int = 3
    out_dims: int = 8
    weight_init_seed: int = 0
    negative_slope: float = 0.1
    steps: int = 1000
    lr: float = 1e-4
    batch_size: int = 1
    augment: bool = False
    # output
    viz: bool = False
    viz_dims: str = "0,1"
    ablation: bool = False
    # paths
    data: str | None = None
    out: str | None = None
    checkpoint: str | None = None
    image: str | None = None
    mask: str | None = None
    pred: str | None = None
    gt: str | None = None

    def sticks(self) -> SticksConfig:
        return SticksConfig(
            self.image_size,
            (self.stick_count_min, self.stick_count_max),
            self.stick_length,
            self.stick_width,
            self.seed,
        )

    def loss(self) -> LossConfig:
        return LossConfig(self.delta_v, self.delta_d, self.alpha, self.beta, self.gamma, self.norm)

    def cluster(self) -> ClusterConfig:
        b = 2.0 * self.delta_v if self.bandwidth is None else self.bandwidth
        return ClusterConfig(b, self.min_cluster_size, self.max_shift_iters, self.shift_tolerance, self.seed_policy, self.seed)

    def net(self) -> NetConfig:
        return NetConfig(
            hidden_channels=self.hidden_channels,
            num_layers=self.num_layers,
            kernel_size=self.kernel_size,
            out_dims=self.out_dims,
            weight_init_seed=self.weight_init_seed,
            negative_slope=self.negative_slope,
        )

    def validate(self) -> None:
        try:
            self.sticks()
            self.loss()
            self.cluster()
            self.net()
        except ValueError as e:
            raise CliError(f"invalid configuration: {e}") from e
        if self.count < 0 or self.steps < 0 or self.batch_size < 1:
            raise CliError("count and steps must be >= 0 and batch_size >= 1")
        if not self.lr > 0:
            raise CliError("lr must be positive")

    def to_text(self, paths: bool = True) -> str:
        items = dataclasses.asdict(self)
        if not paths:
            items = {k: v for k, v in items.items() if k not in PATH_KEYS}
        return format_key_values({k: _show(v) for k, v in items.items() if v is not None})


PATH_KEYS = ("data", "out", "checkpoint", "image", "mask", "pred", "gt")


_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, text: str):
    kind = _TYPES[key].split("|")[0].strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(text)
        if kind in ("int", "float"):
            return {"int": int, "float": float}[kind](text)
        return text
    except ValueError:
        raise CliError(f"{key}: cannot read {text!r} as {kind}") from None


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then ``overrides`` (flag values)."""
    values = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise CliError(f"cannot read config {path}: {e.strerror}") from e
        try:
            items = parse_key_values(text, str(path))
        except FormatError as e:
            raise CliError(str(e)) from e
        unknown = sorted(set(items) - set(_TYPES))
        if unknown:
            raise CliError(f"{path}: unknown keys: {', '.join(unknown)}")
        values = {k: _convert(k, v) for k, v in items.items()}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# -- scene directories -----------------------------------------------------------

def _scene_names(data_dir: Path) -> list[str]:
    manifest = data_dir / "manifest.txt"
    try:
        items = parse_key_values(manifest.read_text(), str(manifest))
    except OSError as e:
        raise CliError(f"cannot read {manifest}: {e.strerror}") from e
    except FormatError as e:
        raise CliError(str(e)) from e
    return sorted(k for k in items if k.startswith("scene_"))


def _read_scene(data_dir: Path, name: str) -> tuple[np.ndarray, np.ndarray]:
    image = read_ppm(data_dir / f"{name}.ppm") / 255.0
    labels = read_pgm(data_dir / f"{name}.pgm")
    if labels.shape != image.shape[:2]:
        raise CliError(f"{name}: image {image.shape[:2]} and labels {labels.shape} differ in size")
    return image, labels


def _require(value, flag: str) -> str:
    if value is None:
        raise CliError(f"missing {flag}")
    return value


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path: Path, cfg: RunConfig, params, state: AdamState) -> None:
    atomic_write_text(path / "config.txt", cfg.to_text(paths=False))
    for k, v in params.items():
        write_tensor(path / "params" / f"{k}.dseg", v)
        write_tensor(path / "adam" / f"m.{k}.dseg", state.m[k])
        write_tensor(path / "adam" / f"v.{k}.dseg", state.v[k])
    hyper = np.array([state.step, state.lr, state.beta1, state.beta2, state.epsilon], dtype=np.float64)
    write_tensor(path / "adam" / "state.dseg", hyper)


def load_checkpoint(path: Path) -> tuple[NetConfig, dict, AdamState]:
    try:
        ck = load_run_config(path / "config.txt")
        net = ck.net()
        params = {k: read_tensor(path / "params" / f"{k}.dseg") for k in net.param_names()}
        m = {k: read_tensor(path / "adam" / f"m.{k}.dseg") for k in net.param_names()}
        v = {k: read_tensor(path / "adam" / f"v.{k}.dseg") for k in net.param_names()}
        step, lr, b1, b2, eps = read_tensor(path / "adam" / "state.dseg")
    except OSError as e:
        raise CliError(f"cannot read checkpoint {path}: {e}") from e
    except FormatError as e:
        raise CliError(f"corrupt checkpoint {path}: {e}") from e
    for k, (cin, cout) in zip(net.param_names()[::2], net.layer_shapes()):
        if params[k].shape != (cout, cin, net.kernel_size, net.kernel_size):
            raise CliError(f"checkpoint {path}: {k} has shape {params[k].shape}, config expects ({cout}, {cin}, {net.kernel_size}, {net.kernel_size})")
    return net, params, AdamState(m, v, int(step), float(lr), float(b1), float(b2), float(eps))


# -- commands ----------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> int:
    out = Path(_require(cfg.out, "--out"))
    scenes = generate_dataset(cfg.sticks(), cfg.count)
    manifest = {
        "image_size": cfg.image_size,
        "stick_count_min": cfg.stick_count_min,
        "stick_count_max": cfg.stick_count_max,
        "stick_length": repr(cfg.stick_length),
        "stick_width": repr(cfg.stick_width),
        "count": cfg.count,
    }
    for i, scene in enumerate(scenes):
        name = f"scene_{i:04d}"
        write_ppm(out / f"{name}.ppm", scene.image)
        write_labels(out / f"{name}.pgm", scene.instances)
        manifest[name] = scene.seed
    atomic_write_text(out / "manifest.txt", format_key_values(manifest))
    log.info("wrote %d scenes to %s", len(scenes), out)
    return 0


def cmd_train(cfg: RunConfig) -> int:
    data = Path(_require(cfg.data, "--data"))
    out = Path(_require(cfg.out, "--out"))
    names = _scene_names(data)
    if not names and cfg.steps > 0:
        raise CliError(f"{data}: no scenes to train on")
    samples = []
    for name in names:
        image, labels = _read_scene(data, name)
        samples.append(Sample(network_input(image), labels))
    net = cfg.net()
    trace_lines = ["# step l_var l_dist l_reg total"]

    def progress(step, b, _params):
        trace_lines.append(f"{step} {b.l_var!r} {b.l_dist!r} {b.l_reg!r} {b.total!r}")
        if step % 100 == 0:
            log.info("step %d loss %.6g", step, b.total)

    if cfg.steps == 0:
        params = init_params(net)
        state = AdamState.zeros_like(params, lr=cfg.lr)
    else:
        try:
            res = train(
                net, samples, cfg.loss(), steps=cfg.steps, seed=cfg.seed, lr=cfg.lr,
                batch_size=cfg.batch_size, augment_data=cfg.augment, callback=progress,
            )
        except TrainingDiverged as e:
            atomic_write_text(out / "trace.txt", "\n".join(trace_lines) + "\n")
            log.error("%s", e)
            return EXIT_DIVERGED
        params, state = res.params, res.state
    save_checkpoint(out / "checkpoint", cfg, params, state)
    atomic_write_text(out / "trace.txt", "\n".join(trace_lines) + "\n")
    return 0


def _viz_dims(cfg: RunConfig, dims: int) -> tuple[int, int]:
    try:
        pair = tuple(int(t) for t in cfg.viz_dims.split(","))
    except ValueError:
        raise CliError(f"viz_dims must look like '0,1', got {cfg.viz_dims!r}") from None
    if len(pair) != 2 or pair[0] == pair[1] or min(pair) < 0:
        raise CliError(f"viz_dims must name two distinct dimensions, got {cfg.viz_dims!r}")
    if max(pair) >= dims:
        raise CliError(f"viz_dims {cfg.viz_dims} out of range: checkpoint embeds in {dims} dimensions")
    return pair


def cmd_infer(cfg: RunConfig, explicit_out_dims: bool = False) -> int:
    out = Path(_require(cfg.out, "--out"))
    net, params, _ = load_checkpoint(Path(_require(cfg.checkpoint, "--checkpoint")))
    if explicit_out_dims and cfg.out_dims != net.out_dims:
        raise CliError(f"--out-dims {cfg.out_dims} does not match the checkpoint ({net.out_dims})")
    pair = _viz_dims(cfg, net.out_dims) if cfg.viz else None
    jobs = []
    if cfg.data is not None:
        data = Path(cfg.data)
        for name in _scene_names(data):
            image, labels = _read_scene(data, name)
            jobs.append((name, image, labels > 0))
    else:
        path = Path(_require(cfg.image, "--image or --data"))
        image = read_ppm(path) / 255.0
        fg = np.ones(image.shape[:2], dtype=bool) if cfg.mask is None else read_pgm(cfg.mask) > 0
        if fg.shape != image.shape[:2]:
            raise CliError(f"mask {fg.shape} does not match image {image.shape[:2]}")
        jobs.append((path.stem, image, fg))
    ccfg = cfg.cluster()
    for name, image, fg in jobs:
        emb = embed(params, network_input(image), net)
        result = mean_shift_cluster(emb, fg, ccfg, cfg.norm)
        write_labels(out / f"{name}.pgm", result.labels)
        write_tensor(out / f"{name}.dseg", emb)
        if pair is not None:
            suffix = "" if net.out_dims == 2 else f"_dims{pair[0]}-{pair[1]}"
            pts = emb[fg][:, list(pair)]
            write_ppm(out / f"{name}_scatter{suffix}.ppm", scatter(pts, result.labels[fg]))
            write_ppm(out / f"{name}_overlay.ppm", overlay(image, result.labels))
        log.info("%s: %d instances", name, result.num_instances)
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    pred_dir = Path(_require(cfg.pred, "--pred"))
    gt_dir = Path(_require(cfg.gt, "--gt"))
    out = Path(_require(cfg.out, "--out"))
    if not gt_dir.is_dir():
        raise CliError(f"{gt_dir}: not a directory")
    preds = {p.stem: p for p in sorted(pred_dir.glob("*.pgm"))} if pred_dir.is_dir() else {}
    gts = {p.stem: p for p in sorted(gt_dir.glob("*.pgm"))}
    if not gts:
        raise CliError(f"{gt_dir}: no ground-truth label maps")
    missing = sorted(set(gts) - set(preds))
    extra = sorted(set(preds) - set(gts))
    for name in missing:
        log.error("no prediction for %s (scored as empty)", name)
    for name in extra:
        log.error("prediction %s has no ground truth (ignored)", name)

    names = sorted(gts)
    gt_maps = [read_pgm(gts[n]) for n in names]
    pred_maps = [read_pgm(preds[n]) if n in preds else np.zeros_like(g) for n, g in zip(names, gt_maps)]
    report = evaluate(pred_maps, gt_maps, names)
    text = ["mean-shift clustering"] + report.lines()
    kv = report.key_values()
    if cfg.ablation:
        ccfg = cfg.cluster()
        centered = []
        for n, g in zip(names, gt_maps):
            emb_path = pred_dir / f"{n}.dseg"
            if not emb_path.exists():
                raise CliError(f"ablation needs stored embeddings: {emb_path} is missing")
            emb = read_tensor(emb_path)
            if emb.shape[:2] != g.shape:
                raise CliError(f"{emb_path}: embedding map {emb.shape} does not match labels {g.shape}")
            means = cluster_means(emb, g).means
            centered.append(cluster_by_known_centers(emb, g > 0, means, ccfg.bandwidth, cfg.norm).labels)
        ablation = evaluate(centered, gt_maps, names)
        text += ["", "ground-truth center threshold"] + ablation.lines()
        kv.update(ablation.key_values("center."))
    atomic_write_text(out / "report.txt", "\n".join(text) + "\n")
    atomic_write_text(out / "report.kv", format_key_values(kv))
    print(f"sbd {report.sbd:.4f}  |DiC| {report.dic:.4f}  ap50 {report.ap50:.4f}", file=sys.stderr)
    return EXIT_ERROR if missing or extra else 0


# -- argument parsing ----------------------------------------------------------------

COMMANDS = {"generate": cmd_generate, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--delta-v", type=float)
    common.add_argument("--delta-d", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--norm", choices=("l1", "l2"))
    common.add_argument("--bandwidth", type=float, help="default: 2 * delta_v")
    common.add_argument("--min-cluster-size", type=int)
    common.add_argument("--out-dims", type=int)
    common.add_argument("--steps", type=int)
    common.add_argument("--viz", action="store_const", const=True)
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="discseg", description="Discriminative-loss instance segmentation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write scattered-sticks scenes")
    p.add_argument("--count", type=int)
    p.add_argument("--image-size", type=int)

    p = sub.add_parser("train", parents=[common], help="train the embedding network")
    p.add_argument("--data", help="scene directory from 'generate'")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--augment", action="store_const", const=True)

    p = sub.add_parser("infer", parents=[common], help="embed and cluster images")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="scene directory; labels give the foreground mask")
    p.add_argument("--image", help="single P6 image")
    p.add_argument("--mask", help="P5 foreground mask for --image (nonzero = foreground)")
    p.add_argument("--viz-dims", help="two embedding dimensions to plot, e.g. 0,1")

    p = sub.add_parser("eval", parents=[common], help="score predicted label maps")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--ablation", action="store_const", const=True,
                   help="also cluster stored embeddings around ground-truth centers")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = load_run_config(args.config, flags)
        if args.command == "infer":
            return cmd_infer(cfg, explicit_out_dims=args.out_dims is not None)
        return COMMANDS[args.command](cfg)
    except (CliError, FormatError) as e:
        log.error("%s", e)
        return EXIT_ERROR
    except OSError as e:
        log.error("%s: %s", e.filename or "I/O error", e.strerror or e)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
