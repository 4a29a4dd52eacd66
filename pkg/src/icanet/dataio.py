"""Ingestion and persistence: WAV, PPM frames, manifests, weights, fixtures."""

from __future__ import annotations

import csv
import re
import struct
import wave
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .lfcc import AudioSignal
from .rng import SplitMix64

LABELS = ("happy", "sad", "neutral", "anger")
SAMPLE_RATE = 16000


class FormatError(ValueError):
    """A file does not follow its expected binary or text layout."""


class ManifestError(ValueError):
    pass


# --------------------------------------------------------------------------
# WAV

def _wav_chunks(data: bytes) -> Iterator[tuple[bytes, bytes]]:
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"chunk {cid!r}: declared size {size}, only {len(body)} bytes left")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioSignal:
    """Decode a RIFF/WAVE PCM16 mono 16 kHz file; samples scaled by 1/32768."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF":
        raise FormatError(f"{path}: RIFF magic: expected b'RIFF', got {data[:4]!r}")
    if data[8:12] != b"WAVE":
        raise FormatError(f"{path}: form type: expected b'WAVE', got {data[8:12]!r}")
    fmt = pcm = None
    for cid, body in _wav_chunks(data):
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data" and pcm is None:
            pcm = body
    if fmt is None or len(fmt) < 16:
        raise FormatError(f"{path}: fmt chunk missing or shorter than 16 bytes")
    if pcm is None:
        raise FormatError(f"{path}: data chunk missing")
    tag, channels, rate, _, align, bits = struct.unpack_from("<HHIIHH", fmt)
    if tag != 1:
        raise FormatError(f"{path}: audio format tag {tag}, expected 1 (PCM)")
    if channels != 1:
        raise FormatError(f"{path}: channel count {channels}, expected 1 (mono)")
    if rate != SAMPLE_RATE:
        raise FormatError(f"{path}: sample rate {rate} Hz, expected {SAMPLE_RATE}")
    if bits != 16:
        raise FormatError(f"{path}: bits per sample {bits}, expected 16")
    if align != 2:
        raise FormatError(f"{path}: block align {align}, expected 2")
    raw = np.frombuffer(pcm[:len(pcm) // 2 * 2], dtype="<i2")
    return AudioSignal(raw.astype(np.float64) / 32768.0, rate)


def write_wav(path, samples, rate: int = SAMPLE_RATE) -> None:
    """PCM16 mono; samples in [-1, 1) are scaled by 32768, rounded and clipped."""
    q = np.clip(np.floor(np.asarray(samples, dtype=np.float64) * 32768 + 0.5), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(q.astype("<i2").tobytes())


# --------------------------------------------------------------------------
# PPM frames

FRAME_RE = re.compile(r"frame_(\d{5})\.ppm$")


def _ppm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PPM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # one whitespace byte ends the header


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, offset = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"{path}: PPM magic {tokens[0]!r}, expected b'P6'")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: non-numeric PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval}, expected 255")
    pix = data[offset:offset + w * h * 3]
    if len(pix) != w * h * 3:
        raise FormatError(f"{path}: pixel data truncated")
    arr = np.frombuffer(pix, dtype=np.uint8).reshape(h, w, 3)
    return (arr.transpose(2, 0, 1) / 255.0).astype(np.float32)


def write_ppm(path, rgb) -> None:
    """Write a [3, H, W] image with values in [0, 1]."""
    a = np.asarray(rgb, dtype=np.float64)
    q = np.clip(np.floor(a * 255 + 0.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    h, w = q.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + q.tobytes())


def read_frames(directory) -> list[np.ndarray]:
    directory = Path(directory)
    indexed = []
    for p in directory.iterdir():
        m = FRAME_RE.fullmatch(p.name)
        if m:
            indexed.append((int(m.group(1)), p))
    if not indexed:
        raise FormatError(f"{directory}: no frame_%05d.ppm files")
    indexed.sort()
    for expect, (idx, _) in enumerate(indexed):
        if idx != expect:
            raise FormatError(f"{directory}: frame_{expect:05d}.ppm missing")
    frames = [read_ppm(p) for _, p in indexed]
    for (idx, _), f in zip(indexed, frames):
        if f.shape != frames[0].shape:
            raise FormatError(
                f"{directory}: frame_{idx:05d}.ppm is {f.shape[2]}x{f.shape[1]}, "
                f"expected {frames[0].shape[2]}x{frames[0].shape[1]}")
    return frames


def sample_indices(n: int, target: int = 79) -> list[int]:
    """round(i * (n - 1) / (target - 1)) with halves rounded up, integer-exact."""
    if n < 1:
        raise ValueError("cannot sample from an empty clip")
    if target == 1:
        return [0]
    den = target - 1
    return [(2 * i * (n - 1) + den) // (2 * den) for i in range(target)]


def sample_frames(frames, target: int = 79) -> list:
    return [frames[i] for i in sample_indices(len(frames), target)]


# --------------------------------------------------------------------------
# manifest

MANIFEST_FIELDS = ("clip_id", "session", "label", "wav_path", "frames_dir", "num_frames")

# per session: happy, sad, neutral, anger
IEMOCAP_DISTRIBUTION = {
    1: (278, 194, 384, 229),
    2: (327, 197, 362, 137),
    3: (286, 305, 320, 240),
    4: (303, 143, 258, 327),
    5: (442, 245, 384, 170),
}
IEMOCAP_TOTALS = (1636, 1084, 1708, 1103)
IEMOCAP_CLIPS = 5531


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    session: int
    label: str
    wav_path: Path
    frames_dir: Path
    num_frames: int

    @property
    def label_index(self) -> int:
        return LABELS.index(self.label)


@dataclass(frozen=True)
class Manifest:
    records: tuple[ClipRecord, ...]

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def load_manifest(path) -> Manifest:
    """Read the CSV manifest. Relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    records, seen = [], {}
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            return Manifest(())
        if tuple(h.strip() for h in header) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}:1: header must be {','.join(MANIFEST_FIELDS)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path}:{line}: expected 6 fields, got {len(row)}")
            clip_id, session, label, wav, frames, count = (c.strip() for c in row)
            if label not in LABELS:
                raise ManifestError(f"{path}:{line}: unknown label {label!r}")
            try:
                session_i, count_i = int(session), int(count)
            except ValueError:
                raise ManifestError(f"{path}:{line}: session and num_frames must be integers") from None
            if not 1 <= session_i <= 5:
                raise ManifestError(f"{path}:{line}: session {session_i} outside 1..5")
            if count_i < 1:
                raise ManifestError(f"{path}:{line}: num_frames must be >= 1")
            if clip_id in seen:
                raise ManifestError(
                    f"{path}:{line}: duplicate clip_id {clip_id!r} (first on line {seen[clip_id]})")
            seen[clip_id] = line
            records.append(ClipRecord(clip_id, session_i, label, base / wav, base / frames, count_i))
    return Manifest(tuple(records))


def write_manifest(path, records) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in records:
            wav, frames = Path(r.wav_path), Path(r.frames_dir)
            try:
                wav, frames = wav.relative_to(path.parent), frames.relative_to(path.parent)
            except ValueError:
                pass
            w.writerow([r.clip_id, r.session, r.label, wav.as_posix(), frames.as_posix(), r.num_frames])


def validate_distribution(manifest: Manifest, expect_iemocap: bool = False) -> dict[int, list[int]]:
    """Per-session class counts ``{session: [happy, sad, neutral, anger]}``.

    With ``expect_iemocap`` every session row and the class totals must equal
    the filtered four-class IEMOCAP distribution.
    """
    table: dict[int, list[int]] = {}
    for r in manifest:
        table.setdefault(r.session, [0, 0, 0, 0])[r.label_index] += 1
    table = dict(sorted(table.items()))
    if expect_iemocap:
        problems = []
        for s, want in IEMOCAP_DISTRIBUTION.items():
            got = tuple(table.get(s, (0, 0, 0, 0)))
            if got != want:
                problems.append(f"Session{s}: got {got}, expected {want}")
        totals = tuple(sum(row[k] for row in table.values()) for k in range(4))
        if totals != IEMOCAP_TOTALS:
            problems.append(f"class totals {totals}, expected {IEMOCAP_TOTALS}")
        if len(manifest) != IEMOCAP_CLIPS:
            problems.append(f"{len(manifest)} clips, expected {IEMOCAP_CLIPS}")
        if problems:
            raise ManifestError("IEMOCAP distribution mismatch: " + "; ".join(problems))
    return table


def format_distribution(table: dict[int, list[int]]) -> str:
    lines = [f"{'':<9}" + "".join(f"{l:>9}" for l in LABELS) + f"{'total':>9}"]
    for s, row in table.items():
        lines.append(f"Session{s:<2}" + "".join(f"{c:>9}" for c in row) + f"{sum(row):>9}")
    totals = [sum(r[k] for r in table.values()) for k in range(4)]
    lines.append(f"{'Total':<9}" + "".join(f"{c:>9}" for c in totals) + f"{sum(totals):>9}")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# weights

WEIGHTS_MAGIC = b"ICAW"
WEIGHTS_VERSION = 1


class WeightStore(Mapping):
    """Immutable name -> float32 tensor map."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._t: dict[str, np.ndarray] = {}
        for name, t in (tensors or {}).items():
            a = np.array(t, dtype="<f4", copy=True)
            a.setflags(write=False)
            self._t[name] = a

    def __getitem__(self, name):
        return self._t[name]

    def __iter__(self):
        return iter(self._t)

    def __len__(self):
        return len(self._t)

    def __repr__(self):
        return f"WeightStore({len(self)} tensors)"


def save_weights(store: Mapping[str, np.ndarray], path) -> None:
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC + struct.pack("<II", WEIGHTS_VERSION, len(store)))
        for name, t in store.items():
            a = np.asarray(t, dtype="<f4")  # ascontiguousarray would promote 0-d to 1-d
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)) + raw)
            f.write(struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape))
            f.write(a.tobytes(order="C"))


def load_weights(path) -> WeightStore:
    data = Path(path).read_bytes()
    if data[:4] != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {WEIGHTS_MAGIC!r}")
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: format version {version}, expected {WEIGHTS_VERSION}")
    pos, tensors = 12, {}

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated while reading {what}")
        out = data[pos:pos + n]
        pos += n
        return out

    for i in range(count):
        (nlen,) = struct.unpack("<I", take(4, f"name length of tensor #{i}"))
        name = take(nlen, f"name of tensor #{i}").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, f"tensor {name!r}"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name!r}"))
        size = int(np.prod(dims)) if ndim else 1
        raw = take(4 * size, f"tensor {name!r}")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes after {count} tensors")
    return WeightStore(tensors)


# --------------------------------------------------------------------------
# synthetic fixtures

def glorot_weights(param_shapes: Mapping[str, tuple[int, ...]], seed: int) -> WeightStore:
    """Glorot-uniform weight tensors; 1-D bias tensors are zero.

    One SplitMix64 draw from the seed stream seeds each weight tensor's own
    stream, in parameter order.
    """
    master = SplitMix64(seed)
    out = {}
    for name, shape in param_shapes.items():
        if len(shape) < 2:
            out[name] = np.zeros(shape, dtype=np.float32)
            continue
        receptive = int(np.prod(shape[2:]))
        fan_in, fan_out = shape[1] * receptive, shape[0] * receptive
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        u = SplitMix64(master.next_u64()).floats(int(np.prod(shape)))
        out[name] = (bound * (2.0 * u - 1.0)).astype(np.float32).reshape(shape)
    return WeightStore(out)


FIXTURE_SIZE = 64
SQUARE = 16


def _smooth(a: np.ndarray, passes: int = 2) -> np.ndarray:
    for _ in range(passes):
        a = (np.roll(a, 1, 0) + a + np.roll(a, -1, 0)) / 3
        a = (np.roll(a, 1, 1) + a + np.roll(a, -1, 1)) / 3
    return a


def synth_clip(seed: int, out_dir) -> ClipRecord:
    """Write a textured square moving at constant velocity plus a pure tone.

    Layout: ``<out_dir>/frames/frame_%05d.ppm`` and ``<out_dir>/audio.wav``.
    The label is ``seed mod 4``.
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    rng = SplitMix64(seed)
    n_frames = rng.randint(48, 111)
    vx, vy = rng.randint(-2, 2), rng.randint(-2, 2)
    x0, y0 = rng.randint(0, FIXTURE_SIZE - SQUARE), rng.randint(0, FIXTURE_SIZE - SQUARE)
    tint = 0.5 + 0.5 * rng.floats(3)
    freq = 200 + rng.randint(0, 2800)

    n = FIXTURE_SIZE
    bg = _smooth(rng.floats(n * n).reshape(n, n), 4)
    bg = 0.2 + 0.2 * (bg - bg.min()) / max(bg.max() - bg.min(), 1e-12)
    tex = _smooth(rng.floats(SQUARE * SQUARE).reshape(SQUARE, SQUARE), 1)
    tex = 0.5 + 0.5 * (tex - tex.min()) / max(tex.max() - tex.min(), 1e-12)
    span = n - SQUARE + 1
    for t in range(n_frames):
        gray = bg.copy()
        x = (x0 + t * vx) % span
        y = (y0 + t * vy) % span
        gray[y:y + SQUARE, x:x + SQUARE] = tex
        write_ppm(frames_dir / f"frame_{t:05d}.ppm", gray[None] * tint[:, None, None])

    t = np.arange(2 * SAMPLE_RATE) / SAMPLE_RATE
    write_wav(out_dir / "audio.wav", 0.5 * np.sin(2 * np.pi * freq * t))
    return ClipRecord(f"synth_{seed}", 1 + seed % 5, LABELS[seed % 4],
                      out_dir / "audio.wav", frames_dir, n_frames)


def synth_dataset(seed: int, count: int, out_dir) -> Path:
    """``count`` clips with seeds ``seed .. seed + count - 1`` plus manifest.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [synth_clip(seed + i, out_dir / f"clip_{seed + i}") for i in range(count)]
    write_manifest(out_dir / "manifest.csv", records)
    return out_dir / "manifest.csv"
