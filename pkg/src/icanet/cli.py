"""Command-line entry point: ``icanet <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, fusion, nets, pipeline
from .flow import LkParams, flow_sequence, to_gray
from .fusion import FusionWeights
from .lfcc import LfccParams, lfcc_features, render_spectrogram
from .pipeline import PROFILES, Config

log = logging.getLogger("icanet")

SYNTH_NETS = {"rgb_i3d": "rgb_i3d", "flow_i3d": "flow_i3d", "cavgg16": "cavgg16-3",
              "cavgg16-3": "cavgg16-3", "cavgg16-5": "cavgg16-5"}


def _profile(args):
    return PROFILES["small" if args.small else "full"]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _lfcc_params(args) -> LfccParams:
    kw = {}
    for name in ("frame_len_ms", "hop_ms", "pre_emphasis", "fft_size", "num_filters", "num_ceps"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "no_dct", False):
        kw["use_dct"] = False
    if "num_filters" in kw and "num_ceps" not in kw:
        kw["num_ceps"] = kw["num_filters"]
    return LfccParams(**kw)


def _lk_params(args) -> LkParams:
    kw = {}
    for name in ("window", "pyramid_levels", "max_iters", "max_corners"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    return LkParams(**kw)


def _config(args) -> Config:
    weights = {"rgb": args.weights_rgb, "flow": args.weights_flow, "audio": args.weights_audio}
    missing = [f"--weights-{m}" for m, p in weights.items() if p is None]
    if missing:
        raise SystemExit(f"missing {', '.join(missing)}")
    return Config(
        weights={m: Path(p) for m, p in weights.items()},
        profile=_profile(args),
        fusion=FusionWeights.parse(args.fusion),
        lfcc=_lfcc_params(args),
        lk=_lk_params(args),
        jobs=max(1, args.jobs),
        skip_bad=args.skip_bad,
    )


# --------------------------------------------------------------------------
# commands

def cmd_lfcc(args):
    signal = dataio.read_wav(args.wav)
    feats = lfcc_features(signal, _lfcc_params(args))
    img = render_spectrogram(feats, _profile(args).size)
    out = _out(args)
    np.save(out / "lfcc.npy", feats)
    dataio.write_ppm(out / "spectrogram.ppm", img)
    print(f"{feats.shape[0]} frames x {feats.shape[1]} coefficients -> {out}")


def cmd_flow(args):
    profile = _profile(args)
    frames = dataio.sample_frames(dataio.read_frames(args.frames), profile.num_frames)
    fields = flow_sequence([to_gray(f) for f in frames], _lk_params(args), profile.num_frames)
    out = _out(args)
    np.save(out / "flow.npy", fields)
    print(f"flow tensor {'x'.join(map(str, fields.shape))} -> {out / 'flow.npy'}")


def cmd_shapes(args):
    profile = _profile(args)
    net = nets.build_network(args.net, profile.num_frames, profile.size)
    print(nets.format_trace(net))


def cmd_synth(args):
    out = Path(args.out)
    if args.kind == "clip":
        manifest = dataio.synth_dataset(args.seed, args.count, out)
        print(f"{args.count} clip(s) -> {manifest}")
        return
    if args.target_net is None:
        raise SystemExit("--target-net is required for --kind weights")
    profile = _profile(args)
    net = nets.build_network(SYNTH_NETS[args.target_net], profile.num_frames, profile.size)
    store = dataio.glorot_weights(net.parameter_shapes(), args.seed)
    path = out if out.suffix else out / f"{net.name}.icaw"
    path.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_weights(store, path)
    print(f"{net.name}: {len(store)} tensors -> {path}")


def _single_clip_manifest(args, out: Path) -> dataio.Manifest:
    frames = dataio.read_frames(args.frames)
    rec = dataio.ClipRecord(args.clip_id, 1, args.label, Path(args.wav), Path(args.frames), len(frames))
    return dataio.Manifest((rec,))


def cmd_infer(args):
    config = _config(args)
    out = _out(args)
    if args.manifest:
        manifest = dataio.load_manifest(args.manifest)
    elif args.wav and args.frames:
        manifest = _single_clip_manifest(args, out)
    else:
        raise SystemExit("infer needs --manifest or both --wav and --frames")
    clips, _ = pipeline.score_manifest(manifest, config)
    for c in clips:
        print(json.dumps({"clip_id": c["clip_id"], "prediction": c["prediction"], **c["scores"]}))
    if args.dump_scores:
        pipeline.dump_json(pipeline.scores_document(clips), out / "scores.json")


def cmd_eval(args):
    if not args.manifest:
        raise SystemExit("--manifest is required")
    report = pipeline.run_pipeline(args.manifest, _config(args), _out(args))
    print(pipeline.format_report(report), end="")


def cmd_gridsearch(args):
    doc = json.loads(Path(args.scores).read_text())
    clips = doc["clips"]
    scores = [(c["rgb"], c["flow"], c["audio"]) for c in clips]
    labels = [dataio.LABELS.index(c["label"]) for c in clips]
    grid = None
    if args.grid:
        grid = [tuple(int(v) for v in g.split(":")) for g in args.grid]
    best, acc = fusion.weight_grid_search(scores, labels, grid)
    result = {"schema": "icanet.gridsearch/1", "best_weights": list(best.as_tuple()),
              "accuracy": acc, "num_clips": len(clips)}
    pipeline.dump_json(result, _out(args) / "gridsearch.json")
    print(f"best rgb:flow:audio = {best}  ACC {acc:.4f} over {len(clips)} clips")


def cmd_validate_manifest(args):
    table = dataio.validate_distribution(dataio.load_manifest(args.manifest), args.expect_iemocap)
    print(dataio.format_distribution(table))


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="icanet", description="Multimodal short-video emotion recognition")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--small", action="store_true", help="32x112x112 inputs instead of 79x224x224")
        if out:
            sp.add_argument("--out", required=True, help="output directory")

    def lfcc_flags(sp):
        sp.add_argument("--frame-len-ms", type=float)
        sp.add_argument("--hop-ms", type=float)
        sp.add_argument("--pre-emphasis", type=float)
        sp.add_argument("--fft-size", type=int)
        sp.add_argument("--num-filters", type=int)
        sp.add_argument("--num-ceps", type=int)
        sp.add_argument("--no-dct", action="store_true")

    def lk_flags(sp):
        sp.add_argument("--window", type=int)
        sp.add_argument("--pyramid-levels", type=int)
        sp.add_argument("--max-iters", type=int)
        sp.add_argument("--max-corners", type=int)

    def run_flags(sp):
        sp.add_argument("--weights-rgb")
        sp.add_argument("--weights-flow")
        sp.add_argument("--weights-audio")
        sp.add_argument("--fusion", default="4:2:4", help="w_rgb:w_flow:w_audio")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--skip-bad", action="store_true")
        lfcc_flags(sp)
        lk_flags(sp)

    sp = sub.add_parser("lfcc", help="WAV -> LFCC features and spectrogram image")
    sp.add_argument("wav")
    common(sp)
    lfcc_flags(sp)
    sp.set_defaults(func=cmd_lfcc)

    sp = sub.add_parser("flow", help="frame directory -> flow tensor")
    sp.add_argument("frames")
    common(sp)
    lk_flags(sp)
    sp.set_defaults(func=cmd_flow)

    sp = sub.add_parser("shapes", help="print a network's architecture table")
    sp.add_argument("net", choices=nets.NETWORKS)
    common(sp, out=False)
    sp.set_defaults(func=cmd_shapes)

    sp = sub.add_parser("synth", help="write deterministic fixtures")
    sp.add_argument("--kind", choices=("clip", "weights"), required=True)
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--count", type=int, default=1, help="clips to generate")
    sp.add_argument("--target-net", choices=sorted(SYNTH_NETS))
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("infer", help="score clips with all three networks")
    sp.add_argument("--manifest")
    sp.add_argument("--wav")
    sp.add_argument("--frames")
    sp.add_argument("--clip-id", default="clip")
    sp.add_argument("--label", default="neutral", choices=dataio.LABELS)
    sp.add_argument("--dump-scores", action="store_true", help="write scores.json for gridsearch")
    common(sp)
    run_flags(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="evaluate a manifest and write the report")
    sp.add_argument("--manifest")
    common(sp)
    run_flags(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gridsearch", help="search fusion ratios over cached scores")
    sp.add_argument("--scores", required=True, help="scores.json from infer/eval")
    sp.add_argument("--grid", nargs="+", help="ratios like 4:2:4 (default: all triples summing to 10)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gridsearch)

    sp = sub.add_parser("validate-manifest", help="per-session class counts")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--expect-iemocap", action="store_true")
    sp.set_defaults(func=cmd_validate_manifest)
    return p


def main(argv=None) -> int:
    level = os.environ.get("ICANET_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError, pipeline.RunError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
