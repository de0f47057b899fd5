"""Datasets: CSV manifests of WAV files, a synthetic scene generator, and cached features.

Manifest format (CSV with header)::

    id,path,class,split
    rec000,audio/rec000.wav,beach,train

``path`` is relative to the manifest's directory unless absolute.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dsp import AudioClip, FeatureConfig, load_image, read_wav, recording_inputs, save_image, write_wav

log = logging.getLogger(__name__)

MANIFEST_FIELDS = ["id", "path", "class", "split"]
SPLITS = ("train", "test")
CACHE_ENV = "SCENECRNN_CACHE"


class ManifestError(ValueError):
    pass


@dataclass
class Item:
    id: str
    label: int
    split: str
    path: Path | None = None
    clip: AudioClip | None = None

    def audio(self) -> AudioClip:
        if self.clip is not None:
            return self.clip
        return read_wav(self.path)


@dataclass
class Dataset:
    items: list
    class_names: list

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def split(self, name: str) -> list:
        return [it for it in self.items if it.split == name]

    def labels(self, split: str | None = None) -> np.ndarray:
        items = self.items if split is None else self.split(split)
        return np.array([it.label for it in items], dtype=int)

    def validate(self):
        seen = set()
        for it in self.items:
            if it.id in seen:
                raise ManifestError(f"duplicate recording id {it.id!r}")
            seen.add(it.id)
            if not 0 <= it.label < self.n_classes:
                raise ManifestError(f"{it.id}: label {it.label} outside [0, {self.n_classes})")
        for name in SPLITS:
            present = {it.label for it in self.split(name)}
            if present and len(present) < self.n_classes:
                missing = [self.class_names[c] for c in range(self.n_classes) if c not in present]
                raise ManifestError(f"split {name!r} is missing classes {missing}")


def load_manifest(path, class_names: list | None = None, check_audio: bool = True) -> Dataset:
    """Parse and validate a manifest; every bad row is reported in one error."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest {path} not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}, got {reader.fieldnames}")
        rows = list(reader)
    names = list(class_names) if class_names is not None else sorted({r["class"].strip() for r in rows})
    index = {n: i for i, n in enumerate(names)}
    errors, items, seen = [], [], set()
    for lineno, row in enumerate(rows, start=2):
        rid, cls, split = row["id"].strip(), row["class"].strip(), row["split"].strip()
        audio = Path(row["path"].strip())
        if not audio.is_absolute():
            audio = path.parent / audio
        if rid in seen:
            errors.append(f"row {lineno} ({rid}): duplicate recording id")
        seen.add(rid)
        if cls not in index:
            errors.append(f"row {lineno} ({rid}): unknown class {cls!r}")
        if split not in SPLITS:
            errors.append(f"row {lineno} ({rid}): split must be one of {SPLITS}, got {split!r}")
        if check_audio:
            if not audio.exists():
                errors.append(f"row {lineno} ({rid}): missing file {audio}")
            else:
                try:
                    read_wav(audio)
                except Exception as exc:  # scipy raises several types for malformed files
                    errors.append(f"row {lineno} ({rid}): unreadable WAV {audio}: {exc}")
        items.append(Item(rid, index.get(cls, -1), split, path=audio))
    if errors:
        raise ManifestError(f"{path}:\n  " + "\n  ".join(errors))
    ds = Dataset(items, names)
    ds.validate()
    return ds


def write_manifest(path, dataset: Dataset, audio_dir: str = "audio", dtype=np.float32):
    """Write every item's audio as WAV under ``audio_dir`` and a manifest next to it."""
    path = Path(path)
    (path.parent / audio_dir).mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for it in dataset.items:
            rel = f"{audio_dir}/{it.id}.wav"
            write_wav(path.parent / rel, it.audio(), dtype=dtype)
            writer.writerow([it.id, rel, dataset.class_names[it.label], it.split])


def stratified_split(labels, test_fraction: float = 0.3, seed: int = 0, test_per_class: int | None = None) -> list:
    """Assign ``train``/``test`` per item, stratified by class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    out = np.array(["train"] * labels.size, dtype=object)
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = test_per_class if test_per_class is not None else int(round(test_fraction * idx.size))
        n_test = min(max(n_test, 1), idx.size - 1) if idx.size > 1 else 0
        out[idx[:n_test]] = "test"
    return list(out)


# ---------------------------------------------------------------------------
# synthetic scenes


@dataclass(frozen=True)
class SynthSceneSpec:
    """Recipe for one synthetic scene class."""

    name: str
    tone_hz: tuple = ()
    mod_hz: tuple = ()
    noise_color: float = 1.0      # power spectrum ~ 1 / f**noise_color
    event_rate: float = 0.0       # transient events per second
    event_hz: float = 2000.0
    tone_db: float = -6.0         # tone level relative to the noise bed
    event_db: float = 6.0


def default_recipes(n_classes: int, seed: int = 0) -> list[SynthSceneSpec]:
    """``n_classes`` distinct recipes with overlapping noise beds and class-specific tones and events."""
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    # tone centres on a mel-spaced grid, so classes differ by several mel bands
    grid = 700.0 * (10 ** (np.linspace(400, 2900, 4 * n_classes) / 2595.0) - 1.0)
    picks = rng.permutation(grid.size)
    colors = (0.0, 1.0, 2.0)
    out = []
    for c in range(n_classes):
        tones = tuple(sorted(float(round(grid[i])) for i in picks[2 * c:2 * c + 2]))
        out.append(SynthSceneSpec(
            name=f"scene{c:02d}",
            tone_hz=tones,
            mod_hz=tuple(float(round(rng.uniform(0.5, 6.0), 2)) for _ in tones),
            noise_color=colors[c % len(colors)],
            event_rate=float((0.5, 2.0)[(c // len(colors)) % 2]),
            event_hz=float(round(grid[picks[-1 - c]])),
        ))
    return out


def _colored_noise(rng, n: int, color: float, sample_rate: int) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    f[0] = f[1]
    spec *= f ** (-color / 2.0)
    x = np.fft.irfft(spec, n)
    return x / np.sqrt(np.mean(x * x))


def synthesize(spec: SynthSceneSpec, duration: float, sample_rate: int, rng: np.random.Generator) -> AudioClip:
    """Noise bed + amplitude-modulated tones + Poisson-timed decaying bursts."""
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    x = _colored_noise(rng, n, spec.noise_color, sample_rate)
    for f0, fm in zip(spec.tone_hz, spec.mod_hz):
        f = f0 * rng.uniform(0.97, 1.03)
        amp = 10 ** ((spec.tone_db + rng.uniform(-3, 3)) / 20.0) * np.sqrt(2.0)
        envelope = 1.0 + 0.8 * np.sin(2 * np.pi * fm * t + rng.uniform(0, 2 * np.pi))
        x += amp * envelope * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi)) / 1.8
    if spec.event_rate > 0:
        burst_len = int(0.2 * sample_rate)
        tb = np.arange(burst_len) / sample_rate
        for start in rng.uniform(0, duration, rng.poisson(spec.event_rate * duration)):
            i = int(start * sample_rate)
            m = min(burst_len, n - i)
            f = spec.event_hz * rng.uniform(0.9, 1.1)
            amp = 10 ** ((spec.event_db + rng.uniform(-3, 3)) / 20.0) * np.sqrt(2.0)
            x[i:i + m] += (amp * np.exp(-tb / 0.04) * np.sin(2 * np.pi * f * tb))[:m]
    level = 10 ** (rng.uniform(-26, -14) / 20.0)
    x *= level / np.sqrt(np.mean(x * x))
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return AudioClip(x, sample_rate)


def generate_synth_dataset(specs: list[SynthSceneSpec], per_class: int, seed: int = 0, duration: float = 30.0,
                           sample_rate: int = 22050, test_fraction: float = 0.3,
                           test_per_class: int | None = None) -> Dataset:
    """``per_class`` recordings per recipe, deterministic in ``seed``, with a stratified split."""
    if len(specs) < 2:
        raise ValueError("need at least 2 class specs")
    if len(set(specs)) != len(specs):
        raise ValueError("class recipes must be pairwise distinct")
    labels = np.repeat(np.arange(len(specs)), per_class)
    splits = stratified_split(labels, test_fraction, seed, test_per_class)
    items = []
    for k, (label, split) in enumerate(zip(labels, splits)):
        rng = np.random.default_rng([seed, k])
        clip = synthesize(specs[label], duration, sample_rate, rng)
        items.append(Item(f"rec{k:04d}", int(label), split, clip=clip))
    return Dataset(items, [s.name for s in specs])


# ---------------------------------------------------------------------------
# features


def default_cache_dir(manifest_path=None) -> Path:
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    if manifest_path is not None:
        return Path(manifest_path).parent / ".feature_cache"
    return Path.home() / ".cache" / "scenecrnn"


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def item_features(item: Item, config: FeatureConfig, cache_dir: Path | None = None, bank=None) -> np.ndarray:
    """Segment images ``(n_segments, 2, M, T)`` for one recording, cached as STFI files when possible."""
    if cache_dir is None or item.path is None:
        return recording_inputs(item.audio(), config, bank).astype(np.float32)
    key = hashlib.sha256(f"{_file_digest(item.path)}|{config.key()}".encode()).hexdigest()[:32]
    folder = Path(cache_dir) / key
    done = folder / "complete"
    if done.exists():
        count = int(done.read_text())
        return np.stack([load_image(folder / f"{i:03d}.stfi") for i in range(count)])
    images = recording_inputs(item.audio(), config, bank).astype(np.float32)
    folder.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        save_image(folder / f"{i:03d}.stfi", img)
    done.write_text(str(len(images)))
    return images


@dataclass
class SegmentSet:
    """Segment images with their labels and owning recording index."""

    images: np.ndarray
    labels: np.ndarray
    recording: np.ndarray
    ids: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)


def dataset_features(items: list, config: FeatureConfig, cache_dir: Path | None = None) -> SegmentSet:
    bank = config.filterbank()
    images, labels, owner = [], [], []
    for k, it in enumerate(items):
        segs = item_features(it, config, cache_dir, bank)
        images.append(segs)
        labels.extend([it.label] * len(segs))
        owner.extend([k] * len(segs))
    return SegmentSet(np.concatenate(images), np.array(labels), np.array(owner), [it.id for it in items])


def with_split(dataset: Dataset, split: str) -> Dataset:
    return replace(dataset, items=dataset.split(split))
