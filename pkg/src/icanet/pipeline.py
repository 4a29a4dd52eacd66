"""Per-clip preprocessing, the three forward passes, fusion and the evaluation report."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataio, fusion, nets
from .dataio import ClipRecord, WeightStore
from .flow import LkParams, flow_sequence, to_gray
from .fusion import FusionWeights
from .lfcc import LfccParams, lfcc_features, render_spectrogram

log = logging.getLogger("icanet")

REPORT_SCHEMA = "icanet.report/1"
SCORES_SCHEMA = "icanet.scores/1"
MODALITIES = ("rgb", "flow", "audio")


@dataclass(frozen=True)
class Profile:
    name: str
    num_frames: int
    size: int

    def network(self, modality: str) -> nets.NetworkDesc:
        name = {"rgb": "rgb_i3d", "flow": "flow_i3d", "audio": "cavgg16-3"}[modality]
        return nets.build_network(name, self.num_frames, self.size)


PROFILES = {
    "full": Profile("full", 79, 224),
    "small": Profile("small", 32, 112),
}


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    """Centre-crop [C, H, W] to a square, then nearest-neighbour resize to ``size``."""
    _, h, w = img.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    sq = img[:, top:top + side, left:left + side]
    idx = np.arange(size) * side // size
    return sq[:, idx[:, None], idx[None, :]]


def video_tensors(frames: list[np.ndarray], profile: Profile,
                  lk: LkParams = LkParams()) -> tuple[np.ndarray, np.ndarray]:
    """RGB tensor [3, T, S, S] and flow tensor [2, T, S, S] for one clip.

    Flow is tracked on the native-resolution frames; the splatted fields are
    then resized like the RGB frames.
    """
    sampled = dataio.sample_frames(frames, profile.num_frames)
    rgb = np.stack([resize_nearest(f, profile.size) for f in sampled], axis=1)
    grays = [to_gray(f) for f in sampled]
    fields = flow_sequence(grays, lk, profile.num_frames)
    flow = np.stack([resize_nearest(fields[:, t], profile.size)
                     for t in range(profile.num_frames)], axis=1)
    return rgb.astype(np.float32), flow.astype(np.float32)


def audio_tensor(signal, profile: Profile, params: LfccParams = LfccParams()) -> np.ndarray:
    return render_spectrogram(lfcc_features(signal, params), profile.size)


@dataclass
class Config:
    weights: dict[str, Path]
    profile: Profile = PROFILES["full"]
    fusion: FusionWeights = field(default_factory=FusionWeights)
    lfcc: LfccParams = field(default_factory=LfccParams)
    lk: LkParams = field(default_factory=LkParams)
    jobs: int = 1
    skip_bad: bool = False


class Engine:
    """Networks plus loaded weights for one profile; validated on construction."""

    def __init__(self, config: Config):
        self.config = config
        self.nets = {m: config.profile.network(m) for m in MODALITIES}
        self.weights: dict[str, WeightStore] = {}
        for m in MODALITIES:
            store = dataio.load_weights(config.weights[m])
            nets.validate_weights(self.nets[m], store)
            self.weights[m] = store

    def score_clip(self, record: ClipRecord) -> dict:
        cfg = self.config
        frames = dataio.read_frames(record.frames_dir)
        if len(frames) != record.num_frames:
            raise ValueError(
                f"{record.clip_id}: manifest says {record.num_frames} frames, found {len(frames)}")
        rgb, flow = video_tensors(frames, cfg.profile, cfg.lk)
        audio = audio_tensor(dataio.read_wav(record.wav_path), cfg.profile, cfg.lfcc)
        inputs = {"rgb": rgb, "flow": flow, "audio": audio}
        scores = {m: [float(v) for v in nets.forward(self.nets[m], self.weights[m], inputs[m])]
                  for m in MODALITIES}
        fused = fusion.fuse_scores(scores["rgb"], scores["flow"], scores["audio"], cfg.fusion)
        return {
            "clip_id": record.clip_id,
            "label": record.label,
            "prediction": dataio.LABELS[fusion.predict(fused)],
            "scores": {**scores, "fused": list(fused)},
        }


_worker_engine: Engine | None = None


def _init_worker(config: Config):
    global _worker_engine
    _worker_engine = Engine(config)


def _score_safe(engine: Engine, record: ClipRecord):
    try:
        return engine.score_clip(record), None
    except Exception as e:  # reported per clip; the caller decides whether to abort
        return None, f"{type(e).__name__}: {e}"


def _worker_score(record: ClipRecord):
    return _score_safe(_worker_engine, record)


class RunError(RuntimeError):
    pass


def score_manifest(manifest: dataio.Manifest, config: Config) -> tuple[list[dict], list[dict]]:
    """Score every clip; results come back in manifest order whatever ``jobs`` is."""
    records = list(manifest)
    if not records:
        raise RunError("no clips")
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs, initializer=_init_worker, initargs=(config,)) as ex:
            results = list(ex.map(_worker_score, records))
    else:
        engine = Engine(config)
        results = [_score_safe(engine, r) for r in records]
    clips, failed = [], []
    for record, (clip, err) in zip(records, results):
        if err is None:
            log.info("%s: %s (true %s)", record.clip_id, clip["prediction"], record.label)
            clips.append(clip)
        else:
            log.error("%s: %s", record.clip_id, err)
            failed.append({"clip_id": record.clip_id, "error": err})
    if failed and not config.skip_bad:
        raise RunError(f"{len(failed)} clip(s) failed, first: {failed[0]['clip_id']}: {failed[0]['error']}")
    if not clips:
        raise RunError("no clip could be scored")
    return clips, failed


def build_report(clips: list[dict], failed: list[dict], config: Config) -> dict:
    labels = [dataio.LABELS.index(c["label"]) for c in clips]
    preds = [dataio.LABELS.index(c["prediction"]) for c in clips]
    cm = fusion.confusion(preds, labels)
    return {
        "schema": REPORT_SCHEMA,
        "profile": config.profile.name,
        "fusion_weights": list(config.fusion.as_tuple()),
        "num_clips": len(clips),
        "accuracy": fusion.accuracy(preds, labels),
        "per_class_accuracy": cm.per_class_accuracy(),
        "confusion": {"labels": list(dataio.LABELS), "counts": cm.as_lists()},
        "clips": clips,
        "failed": failed,
    }


def format_report(report: dict) -> str:
    cm = fusion.ConfusionMatrix(tuple(tuple(r) for r in report["confusion"]["counts"]))
    lines = [
        f"profile        {report['profile']}",
        f"fusion weights {':'.join(f'{w:g}' for w in report['fusion_weights'])} (rgb:flow:audio)",
        f"clips          {report['num_clips']} scored, {len(report['failed'])} failed",
        f"ACC            {report['accuracy']:.4f}",
        "",
        "one-vs-rest ACC per class",
    ]
    lines += [f"  {k:<8} {v:.4f}" for k, v in report["per_class_accuracy"].items()]
    lines += ["", cm.format()]
    return "\n".join(lines) + "\n"


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def scores_document(clips: list[dict]) -> dict:
    return {
        "schema": SCORES_SCHEMA,
        "clips": [{"clip_id": c["clip_id"], "label": c["label"],
                   **{m: c["scores"][m] for m in MODALITIES}} for c in clips],
    }


def run_pipeline(manifest_path, config: Config, out_dir) -> dict:
    """Evaluate every clip of a manifest and write report.json, report.txt, scores.json."""
    manifest = dataio.load_manifest(manifest_path)
    clips, failed = score_manifest(manifest, config)
    report = build_report(clips, failed, config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(report, out / "report.json")
    (out / "report.txt").write_text(format_report(report))
    dump_json(scores_document(clips), out / "scores.json")
    return report
