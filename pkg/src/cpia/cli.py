"""Command-line entry point.

Subcommands: ``flush``, ``stroke``, ``paint``, ``coverage``, ``replay`` and
``toy-net`` (writes the bundled reference network and a demo scene).

Every run subcommand reads one JSON config (``--config``) with optional
flag overrides, writes its artifacts into ``--out`` and a
``run_summary.json`` whose ``config_effective`` block is itself a valid
config for rerunning. Exit codes: 0 success, 2 config error, 3 I/O error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .actionlog import ActionLog, replay
from .channel_ops import apply_mask, channel_flush, coverage
from .exceptions import (ArchiveError, ChecksumError, ConfigError, CPIAError, NetworkError,
                         PlanError, ReplayError, ShapeError)
from .imageio import read_image, write_frame, write_mask
from .netgraph import forward, forward_from, forward_to, load_network
from .planner import PlanPolicy, RoiSet, composite, load_rois, make_plan, opacity_map, paint
from .stroke import StopCriterion, StrokeParams, run_strokes
from .tensor import TensorArchive, import_npy, load_tensor

log = logging.getLogger("cpia")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "network": None,
    "weights": None,
    "input": None,
    "activation": None,
    "rois": None,
    "layer": None,
    "stroke": {"tau": None, "m": 0.95, "z": 1, "p": 2, "g_c": 0.5, "sigma": None,
               "movement": True, "cost_mode": "continuation", "compare": "signed"},
    "stop": {"response_ratio": 0.1, "max_strokes": None, "painted_fraction": None},
    "plan": {"order": "by_score", "explicit": [], "overrides": [], "background": "last"},
    "render": {"background": "white", "gamma": 1.0, "format": "ppm"},
    "coverage_bins": 10,
    "frame_every": 0,
    "out": None,
    "seed": 0,
}

_PATH_KEYS = ("network", "weights", "input", "activation", "rois", "out")

# flag -> (section, key, type)
_OVERRIDES = {
    "layer": (None, "layer"),
    "tau": ("stroke", "tau"),
    "sensitivity": ("stroke", "m"),
    "penetration": ("stroke", "p"),
    "stroke_size": ("stroke", "z"),
    "sigma": ("stroke", "sigma"),
    "channel_cost": ("stroke", "g_c"),
    "cost_mode": ("stroke", "cost_mode"),
    "compare": ("stroke", "compare"),
    "stop_ratio": ("stop", "response_ratio"),
    "max_strokes": ("stop", "max_strokes"),
    "painted_fraction": ("stop", "painted_fraction"),
    "frame_every": (None, "frame_every"),
    "background": ("plan", "background"),
    "bg_color": ("render", "background"),
    "format": ("render", "format"),
    "network": (None, "network"),
    "input": (None, "input"),
    "activation": (None, "activation"),
    "rois": (None, "rois"),
    "out": (None, "out"),
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if k not in base:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {k!r} must be an object")
            unknown = set(v) - set(base[k])
            if unknown:
                raise ConfigError(f"unknown keys in {k!r}: {sorted(unknown)}")
            out[k].update(v)
        else:
            out[k] = v
    return out


def build_config(args: argparse.Namespace) -> dict:
    """Defaults <- config file (or a run summary) <- command-line flags."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    base = Path.cwd()
    if getattr(args, "config", None):
        cpath = Path(args.config)
        try:
            doc = json.loads(cpath.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {cpath}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config does not parse: {exc}") from exc
        if isinstance(doc, dict) and "config_effective" in doc:
            doc = doc["config_effective"]
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, doc)
        base = cpath.parent
    for k in _PATH_KEYS:
        if cfg[k] is not None:
            cfg[k] = str((base / cfg[k]).resolve())
    for flag, (section, key) in _OVERRIDES.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if flag in _PATH_KEYS:
            v = str(Path(v).resolve())
        if section is None:
            cfg[key] = v
        else:
            cfg[section][key] = v
    if getattr(args, "no_movement", False):
        cfg["stroke"]["movement"] = False
    if cfg["out"] is None:
        raise ConfigError("no output directory: pass --out or set 'out'")
    return cfg


def _read_tensor_file(path: str, preferred: tuple[str, ...]) -> np.ndarray:
    p = Path(path)
    suffix = p.suffix.lower()
    if suffix == ".npy":
        return import_npy(p)
    if suffix in (".png", ".ppm", ".jpg", ".jpeg", ".bmp"):
        try:
            return read_image(p)
        except OSError as exc:
            raise ArchiveError(f"cannot read image {p}: {exc}") from exc
    arc = TensorArchive.read(p)
    for name in preferred:
        if name in arc:
            return load_tensor(arc, name)
    if len(arc) == 1:
        return load_tensor(arc, next(iter(arc)))
    raise ArchiveError(f"{p}: none of {preferred} present and archive holds several tensors")


class Run:
    """Resolved inputs shared by the run subcommands."""

    def __init__(self, cfg: dict, need_network: bool = False):
        self.cfg = cfg
        self.out = Path(cfg["out"])
        self.net = None
        self.x = None
        has_net = cfg["network"] is not None and cfg["input"] is not None
        has_act = cfg["activation"] is not None
        if has_net == has_act:
            raise ConfigError("provide exactly one of (network + input) or activation")
        if need_network and not has_net:
            raise ConfigError("this subcommand needs a network and an input")
        if has_net:
            self.net = load_network(cfg["network"], cfg["weights"])
            if cfg["layer"] is None:
                cfg["layer"] = self.net.metadata.get("default_hook")
            layer = cfg["layer"]
            lo, hi = self.net.operable_layers or (1, self.net.n_layers - 1)
            if not isinstance(layer, int) or not lo <= layer <= hi:
                raise ConfigError(f"layer out of range: {layer} not in operable range [{lo}, {hi}]")
            self.x = _read_tensor_file(cfg["input"], ("x", "input"))
            if self.x.shape != self.net.input_shape:
                raise ConfigError(f"input shape {self.x.shape} != network input {self.net.input_shape}")
        self.artifacts: list[str] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def activation(self):
        if self.net is None:
            return _read_tensor_file(self.cfg["activation"], ("y", "activation")), None
        return forward_to(self.net, self.x, self.cfg["layer"], return_cache=True)

    def stroke_params(self, C: int) -> StrokeParams:
        s = dict(self.cfg["stroke"])
        if s["tau"] is None:
            raise ConfigError("stroke.tau is required (--tau)")
        try:
            return StrokeParams(**s).validate(C)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid stroke parameters: {exc}") from None

    def stop(self) -> StopCriterion:
        try:
            return StopCriterion(**self.cfg["stop"]).validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid stop criterion: {exc}") from None

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.artifacts.append(name)
        return p

    @property
    def ext(self) -> str:
        fmt = self.cfg["render"]["format"]
        if fmt not in ("ppm", "png"):
            raise ConfigError(f"render.format must be ppm or png, got {fmt!r}")
        return fmt

    def render(self, y, mask, cache, tau):
        raw = forward_from(self.net, self.cfg["layer"], apply_mask(y, mask), cache)
        alpha = opacity_map(mask.sum(axis=0), tau, self.cfg["render"]["gamma"])
        bg = self.cfg["render"]["background"]
        return composite(raw, alpha, self.x if bg == "input" else bg)

    def summary(self, **extra) -> Path:
        self.timings["total_s"] = round(time.perf_counter() - self._t0, 6)
        doc = {"config_effective": self.cfg, "artifact_list": sorted(self.artifacts),
               "timings": self.timings, "version": __version__}
        doc.update(extra)
        p = self.out / "run_summary.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _write_mask_archive(path: Path, mask, name: str = "mask", extra: dict | None = None):
    arc = TensorArchive()
    arc.add(name, np.asarray(mask, dtype=np.float32))
    for k, v in (extra or {}).items():
        arc.add(k, np.asarray(v, dtype=np.float32))
    arc.write(path)


def cmd_flush(args) -> int:
    cfg = build_config(args)
    run = Run(cfg)
    y, cache = run.activation()
    tau = cfg["stroke"]["tau"]
    if not isinstance(tau, int) or not 1 <= tau <= y.shape[0]:
        raise ConfigError(f"tau must be an integer in 1..{y.shape[0]}, got {tau!r}")
    t = time.perf_counter()
    mask = channel_flush(y, tau, cfg["stroke"]["compare"])
    run.timings["flush_s"] = round(time.perf_counter() - t, 6)
    _write_mask_archive(run.path("mask.cpia"), mask)
    TensorArchive({"y": y}).write(run.path("activation.cpia"))
    cov = coverage(mask, cfg["coverage_bins"])
    cov.write_csv(run.path("coverage.csv"), run.path("coverage_hist.csv"))
    if run.net is not None:
        write_frame(run.path(f"raw.{run.ext}"), forward(run.net, run.x))
        write_frame(run.path(f"flush.{run.ext}"), run.render(y, mask, cache, tau))
    run.summary(subcommand="flush", stop_reasons=[])
    print(f"flush: tau={tau} mask={int(mask.sum())} bits -> {run.out}")
    return EXIT_OK


def cmd_stroke(args) -> int:
    cfg = build_config(args)
    run = Run(cfg)
    y, cache = run.activation()
    params = run.stroke_params(y.shape[0])
    stop = run.stop()
    k = int(cfg["frame_every"] or 0)
    frames = []

    def on_action(state, action):
        if k > 0 and run.net is not None and (action.seq + 1) % k == 0:
            frames.append(run.render(y, state.mask, cache, params.tau))

    t = time.perf_counter()
    mask, slog = run_strokes(y, params, stop, callback=on_action)
    run.timings["stroke_s"] = round(time.perf_counter() - t, 6)
    slog.write(run.path("actions.ndjson"))
    _write_mask_archive(run.path("mask.cpia"), mask)
    TensorArchive({"y": y}).write(run.path("activation.cpia"))
    coverage(mask, cfg["coverage_bins"]).write_csv(run.path("coverage.csv"),
                                                   run.path("coverage_hist.csv"))
    if run.net is not None:
        for i, f in enumerate(frames):
            write_frame(run.path(f"frames/frame_{i:06d}.{run.ext}"), f)
        write_frame(run.path(f"stroke.{run.ext}"), run.render(y, mask, cache, params.tau))
    run.summary(subcommand="stroke", stop_reasons=[slog.stop_reason], n_actions=len(slog))
    print(f"stroke: {len(slog)} actions, stop_reason={slog.stop_reason} -> {run.out}")
    return EXIT_OK


def cmd_paint(args) -> int:
    cfg = build_config(args)
    run = Run(cfg, need_network=True)
    net, x = run.net, run.x
    if cfg["rois"] is not None:
        rois = load_rois(cfg["rois"])
    else:
        rois = RoiSet(x.shape[1:])
    if tuple(rois.image_shape) != x.shape[1:]:
        raise ConfigError(f"ROI image shape {rois.image_shape} != input {x.shape[1:]}")
    policy = PlanPolicy.from_dict(cfg["plan"])
    plan = make_plan(rois, policy, x)
    params = run.stroke_params(net.output_shape(cfg["layer"])[0])
    bg = cfg["render"]["background"]
    t = time.perf_counter()
    res = paint(net, cfg["layer"], plan, params, run.stop(), frame_every=int(cfg["frame_every"] or 0),
                image=x, background=bg, gamma=cfg["render"]["gamma"])
    run.timings["paint_s"] = round(time.perf_counter() - t, 6)
    acts = TensorArchive()
    masks = TensorArchive()
    for i, (slog, smask) in enumerate(zip(res.logs, res.step_masks)):
        slog.write(run.path(f"step_{i:02d}.ndjson"))
        y_i = forward_to(net, plan.steps[i].masked_input, cfg["layer"])
        acts.add(f"step_{i:02d}", y_i)
        masks.add(f"step_{i:02d}", smask.astype(np.float32))
    acts.write(run.path("step_activations.cpia"))
    masks.add("mask", res.canvas.mask.astype(np.float32))
    masks.write(run.path("mask.cpia"))
    for i, f in enumerate(res.frames):
        write_frame(run.path(f"frames/frame_{i:06d}.{run.ext}"), f)
    write_frame(run.path(f"final.{run.ext}"), res.image)
    write_frame(run.path(f"raw.{run.ext}"), forward(net, x))
    coverage(res.canvas.mask, cfg["coverage_bins"]).write_csv(run.path("coverage.csv"),
                                                              run.path("coverage_hist.csv"))
    run.summary(subcommand="paint", stop_reasons=res.stop_reasons, step_order=res.step_labels,
                n_actions=[len(lg) for lg in res.logs])
    print(f"paint: steps={res.step_labels} actions={[len(lg) for lg in res.logs]} -> {run.out}")
    return EXIT_OK


def cmd_coverage(args) -> int:
    arc = TensorArchive.read(args.mask)
    name = args.name if args.name in arc else next(iter(arc))
    mask = np.asarray(arc[name]) != 0
    if mask.ndim != 3:
        raise ConfigError(f"{name!r} is not a CHW mask")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cov = coverage(mask, args.bins)
    cov.write_csv(out / "coverage.csv", out / "coverage_hist.csv")
    print(f"coverage: {mask.shape[0]} channels, mean={cov.per_channel.mean():.6f} -> {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    slog = ActionLog.read(args.log)
    if args.y_name is not None:
        y = load_tensor(TensorArchive.read(args.y), args.y_name)
    else:
        y = _read_tensor_file(args.y, ("y", "activation"))
    mask = replay(y.shape, slog, y)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_mask_archive(out / "replayed_mask.cpia", mask)
    mask_path = Path(args.mask) if args.mask else Path(args.log).parent / "mask.cpia"
    if not mask_path.exists():
        print(f"replayed {len(slog)} actions; no bundled mask at {mask_path} to verify against")
        return EXIT_VERIFY
    bundled = TensorArchive.read(mask_path)
    name = args.mask_name or "mask"
    if name not in bundled:
        raise ArchiveError(f"{mask_path} has no tensor {name!r}")
    ref = bundled[name]
    ok = ref.shape == mask.shape and ref.tobytes() == mask.astype(np.float32).tobytes()
    if ok:
        print("verified")
        return EXIT_OK
    print("verification failed: replayed mask differs from bundled mask")
    return EXIT_VERIFY


def cmd_toy_net(args) -> int:
    from .toynet import toy_scene, write_toy_network

    out = Path(args.out)
    manifest = write_toy_network(out, seed=args.seed)
    img, rois = toy_scene(seed=args.seed)
    TensorArchive({"x": img}).write(out / "input.cpia")
    entries = []
    for label, score, mask in rois:
        write_mask(out / f"mask_{label}.png", mask)
        entries.append({"label": label, "score": score, "mask_file": f"mask_{label}.png"})
    (out / "rois.json").write_text(json.dumps(
        {"image": {"width": img.shape[2], "height": img.shape[1]}, "rois": entries}, indent=2) + "\n")
    config = {"network": manifest.name, "input": "input.cpia", "rois": "rois.json", "layer": 6,
              "stroke": {"tau": 8}, "out": "run"}
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"toy network written to {out}")
    return EXIT_OK


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file or a run_summary.json to rerun")
    p.add_argument("--out", help="output directory")
    p.add_argument("--network", help="network manifest (JSON)")
    p.add_argument("--input", help="network input: .cpia archive, .npy or image")
    p.add_argument("--activation", help="activation dump for network-free runs")
    p.add_argument("--layer", type=int, help="hook layer l")
    p.add_argument("--tau", type=int, help="channel limit per location")
    p.add_argument("--sensitivity", type=float, help="stroke sensitivity m in (0, 1)")
    p.add_argument("--penetration", type=int, help="stroke penetration p")
    p.add_argument("--stroke-size", dest="stroke_size", type=int, help="stroke half-size z")
    p.add_argument("--sigma", type=float, help="movement cost standard deviation")
    p.add_argument("--no-movement", dest="no_movement", action="store_true",
                   help="disable the movement cost")
    p.add_argument("--channel-cost", dest="channel_cost", type=float, help="channel change cost g_c")
    p.add_argument("--cost-mode", dest="cost_mode", choices=("continuation", "literal"))
    p.add_argument("--compare", choices=("signed", "magnitude"))
    p.add_argument("--stop-ratio", dest="stop_ratio", type=float, help="response-ratio stop")
    p.add_argument("--max-strokes", dest="max_strokes", type=int)
    p.add_argument("--painted-fraction", dest="painted_fraction", type=float)
    p.add_argument("--frame-every", dest="frame_every", type=int, help="frame every k actions")
    p.add_argument("--format", choices=("ppm", "png"), help="frame image format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpia", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("flush", help="per-location top-tau channel mask")
    _add_run_flags(p)
    p.set_defaults(func=cmd_flush)

    p = sub.add_parser("stroke", help="greedy channel stroke decomposition")
    _add_run_flags(p)
    p.set_defaults(func=cmd_stroke)

    p = sub.add_parser("paint", help="region-ordered painting pipeline")
    _add_run_flags(p)
    p.add_argument("--rois", help="ROI manifest (JSON)")
    p.add_argument("--background", choices=("first", "last", "skip"), help="background step")
    p.add_argument("--bg-color", dest="bg_color", choices=("white", "black", "input"))
    p.set_defaults(func=cmd_paint)

    p = sub.add_parser("coverage", help="channel coverage of a mask archive")
    p.add_argument("mask", help="mask archive")
    p.add_argument("--name", default="mask")
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("replay", help="replay an action log and verify it against a mask")
    p.add_argument("log", help="action log (NDJSON)")
    p.add_argument("y", help="activation archive or .npy the log was produced from")
    p.add_argument("--y-name", dest="y_name", help="tensor name inside the activation archive")
    p.add_argument("--mask", help="mask archive to verify against (default: mask.cpia beside the log)")
    p.add_argument("--mask-name", dest="mask_name", help="tensor name in the mask archive")
    p.add_argument("--out", help="write the replayed mask here")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("toy-net", help="write the reference toy network and demo scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_toy_net)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "out", None):
            Path(args.out).mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except (ChecksumError, ReplayError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (ArchiveError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, NetworkError, PlanError, ShapeError, CPIAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
