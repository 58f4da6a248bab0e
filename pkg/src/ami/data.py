"""Synthetic multimodal streams, delimited-file ingestion, windowing,
normalization and decimation.

A dataset is a list of :class:`Stream` objects. A stream is a temporally
ordered run of windows from one recording; per modality it holds an array
``[S, C_m, T]`` of ``S`` windows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    def __init__(self, path, line: int | None, msg: str):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")


@dataclass
class ModalitySpec:
    name: str
    channels: int
    power_mw: tuple[float, float] = (1.0, 1.0)


@dataclass
class Stream:
    x: list[np.ndarray]  # per modality [S, C_m, T]
    y: np.ndarray  # [S]
    subject: int = 0

    def __len__(self) -> int:
        return len(self.y)

    def slice(self, start: int, stop: int) -> "Stream":
        return Stream([a[start:stop] for a in self.x], self.y[start:stop], self.subject)


@dataclass
class Dataset:
    modalities: list[ModalitySpec]
    streams: list[Stream]
    rate_hz: float
    window_samples: int
    num_classes: int
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.modalities]

    @property
    def channels(self) -> list[int]:
        return [m.channels for m in self.modalities]

    @property
    def window_seconds(self) -> float:
        return self.window_samples / self.rate_hz

    def num_windows(self) -> int:
        return sum(len(s) for s in self.streams)

    def labels(self) -> np.ndarray:
        return np.concatenate([s.y for s in self.streams]) if self.streams else np.zeros(0, dtype=np.int64)

    def with_streams(self, streams: list[Stream]) -> "Dataset":
        return Dataset(self.modalities, streams, self.rate_hz, self.window_samples, self.num_classes,
                       dict(self.meta))


# -- synthetic generator -------------------------------------------------------

@dataclass
class SynthSpec:
    num_modalities: int = 6
    channels: int = 1
    informative: list[int] = field(default_factory=lambda: [0, 1])
    num_classes: int = 4
    rate_hz: float = 10.0
    window_samples: int = 20
    patch_size: int = 5
    stream_windows: int = 16
    segment_windows: int = 3
    n_streams: int = 240
    redundancy: float = 0.5
    noise: float = 0.03
    freqs: list[float] = field(default_factory=lambda: [0.5, 1.5])
    amplitudes: list[float] = field(default_factory=lambda: [1.0, 0.6])
    # "full": every informative modality encodes the whole class (frequency
    # carries one bit, amplitude the other), so they are mutually redundant;
    # "split": informative modality i carries bit i only
    encoding: str = "full"
    power_mw: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        if self.window_samples % self.patch_size:
            raise ValueError("synthetic.window_samples must be divisible by synthetic.patch_size")
        if self.encoding not in ("full", "split"):
            raise ValueError("synthetic.encoding must be 'full' or 'split'")
        capacity = len(self.freqs) * len(self.amplitudes) if self.encoding == "full" else 2 ** len(self.informative)
        if self.num_classes > capacity:
            raise ValueError("num_classes exceeds what the informative modalities can encode")
        if not 0.0 <= self.redundancy <= 1.0:
            raise ValueError("synthetic.redundancy must lie in [0, 1]")

    @property
    def k_star(self) -> int:
        return len(set(self.informative))


_DEFAULT_SYNTH_POWER = [[0.3, 1.0], [1.0, 5.0], [4.0, 10.0], [6.0, 15.0], [0.3, 1.0], [1.0, 5.0]]


def _segment_labels(n_streams: int, S: int, seg: int, num_classes: int, rng) -> np.ndarray:
    """Piecewise-constant label sequences drawn from a balanced pool."""
    offsets = rng.integers(0, seg, n_streams)
    n_seg = (S + seg - 1) // seg + 1
    pool = np.resize(np.arange(num_classes), n_streams * n_seg)
    rng.shuffle(pool)
    pool = pool.reshape(n_streams, n_seg)
    y = np.empty((n_streams, S), dtype=np.int64)
    for i in range(n_streams):
        idx = (np.arange(S) + offsets[i]) // seg
        y[i] = pool[i, idx]
    return y


def synth_generate(spec: SynthSpec, seed: int = 0) -> Dataset:
    """Labelled streams where only ``spec.informative`` modalities carry the class.

    Each window of a modality is a sinusoid whose frequency and amplitude are
    picked by a code. With ``encoding="full"`` an informative modality's code
    is the class itself (frequency index ``c % F``, amplitude index ``c // F``);
    with ``"split"`` informative modality ``i`` uses bit ``i`` of the class for
    both. The remaining modalities follow the same process with codes that
    switch independently of the label. A fraction ``redundancy`` of the
    patches after the first in each window repeat their predecessor before
    sensor noise is added.
    """
    rng = np.random.default_rng(seed)
    N, S, T, M = spec.n_streams, spec.stream_windows, spec.window_samples, spec.num_modalities
    C, P = spec.channels, spec.patch_size
    L = T // P
    y = _segment_labels(N, S, spec.segment_windows, spec.num_classes, rng)
    t = np.arange(T) / spec.rate_hz
    xs = []
    F = len(spec.freqs)
    for m in range(M):
        if spec.encoding == "full":
            code = y if m in spec.informative else _segment_labels(N, S, spec.segment_windows,
                                                                    spec.num_classes, rng)
            fi, ai = code % F, code // F
        else:
            bits = ((y >> spec.informative.index(m)) & 1 if m in spec.informative
                    else _segment_labels(N, S, spec.segment_windows, 2, rng))
            fi = ai = bits
        f = np.asarray(spec.freqs)[fi]  # [N, S]
        amp = np.asarray(spec.amplitudes)[ai]
        phase = rng.uniform(0, 2 * np.pi, (N, S, C))
        clean = amp[..., None, None] * np.sin(2 * np.pi * f[..., None, None] * t + phase[..., None])
        patches = clean.reshape(N, S, C, L, P)
        hold = rng.random((N, S, L)) < spec.redundancy
        hold[..., 0] = False
        for l in range(1, L):
            h = hold[..., l][..., None, None]
            patches[..., l, :] = np.where(h, patches[..., l - 1, :], patches[..., l, :])
        sig = patches.reshape(N, S, C, T) + spec.noise * rng.standard_normal((N, S, C, T))
        xs.append(sig)
    power = spec.power_mw or [_DEFAULT_SYNTH_POWER[m % len(_DEFAULT_SYNTH_POWER)] for m in range(M)]
    mods = [ModalitySpec(f"m{m}", C, tuple(power[m])) for m in range(M)]
    streams = [Stream([x[i] for x in xs], y[i], subject=i) for i in range(N)]
    return Dataset(mods, streams, spec.rate_hz, T, spec.num_classes,
                   {"source": "synthetic", "k_star": spec.k_star, "seed": seed})


# -- delimited ingestion ---------------------------------------------------------

@dataclass
class Recording:
    data: dict[str, np.ndarray]  # modality -> [C_m, N]
    labels: np.ndarray  # [N] raw label values
    path: str = ""


def _split_line(line: str) -> list[str]:
    return [c.strip() for c in line.split(",")] if "," in line else line.split()


def load_delimited(path, column_map: dict[str, list[int]], label_column: int,
                   label_map: dict | None = None) -> Recording:
    """Read a whitespace- or comma-delimited numeric file.

    ``column_map`` assigns 0-based columns to modalities in channel order.
    """
    rows, labels = [], []
    width = None
    cols = [c for chans in column_map.values() for c in chans]
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cells = _split_line(line.strip())
            if width is None:
                width = len(cells)
                need = max(cols + [label_column])
                if need >= width:
                    raise DataFormatError(path, lineno, f"column {need} requested but rows have {width} columns")
            elif len(cells) != width:
                raise DataFormatError(path, lineno, f"ragged row: {len(cells)} columns, expected {width}")
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                bad = next(c for c in cells if not _is_number(c))
                raise DataFormatError(path, lineno, f"non-numeric cell {bad!r}") from None
            lab = vals[label_column]
            if label_map is not None:
                key = int(lab) if float(lab).is_integer() else lab
                if key not in label_map and str(key) not in label_map:
                    raise DataFormatError(path, lineno, f"unmapped label {key!r}")
            rows.append(vals)
            labels.append(lab)
    if not rows:
        raise DataFormatError(path, None, "no data rows")
    arr = np.asarray(rows)
    data = {m: arr[:, chans].T.copy() for m, chans in column_map.items()}
    lab = np.asarray(labels)
    if label_map is not None:
        lab = np.array([label_map.get(int(v), label_map.get(str(int(v)))) for v in lab], dtype=np.float64)
    return Recording(data, lab, str(path))


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def window_segment(stream: np.ndarray, labels: np.ndarray, length: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Cut ``[C, N]`` into ``[W, C, length]`` windows with majority labels."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    C, N = stream.shape
    if length > N:
        log.info("stream of %d samples shorter than window %d: no windows", N, length)
        return np.zeros((0, C, length)), np.zeros(0, dtype=np.int64)
    starts = np.arange(0, N - length + 1, stride)
    wins = np.stack([stream[:, s:s + length] for s in starts])
    labs = np.array([np.bincount(labels[s:s + length].astype(np.int64)).argmax() for s in starts])
    return wins, labs


def decimate(x: np.ndarray, factor: int) -> np.ndarray:
    """Keep every ``factor``-th sample along the last axis (no anti-alias filter)."""
    if int(factor) != factor or factor < 1:
        raise ValueError(f"decimation factor must be a positive integer, got {factor}")
    return x[..., ::int(factor)].copy()


def recording_to_streams(rec: Recording, order: list[str], window: int, stride: int,
                         drop_null: bool = True, null_label: int = 0, label_offset: int = 0,
                         subject: int = 0) -> list[Stream]:
    """Window a recording; null-class rows split it into separate streams."""
    keep = rec.labels != null_label if drop_null else np.ones(len(rec.labels), dtype=bool)
    streams = []
    edges = np.flatnonzero(np.diff(np.concatenate([[0], keep.astype(int), [0]])))
    for start, stop in zip(edges[::2], edges[1::2]):
        lab = rec.labels[start:stop].astype(np.int64) - label_offset
        xs, ys = [], None
        for name in order:
            w, ys = window_segment(rec.data[name][:, start:stop], lab, window, stride)
            xs.append(w)
        if ys is not None and len(ys):
            streams.append(Stream(xs, ys, subject))
    return streams


# -- normalization and splits --------------------------------------------------

@dataclass
class Normalizer:
    mean: list[np.ndarray]  # per modality [C_m]
    std: list[np.ndarray]

    @classmethod
    def fit(cls, streams: list[Stream]) -> "Normalizer":
        M = len(streams[0].x)
        means, stds = [], []
        for m in range(M):
            # every channel sample across all windows, [C, total]
            flat = np.concatenate([np.moveaxis(s.x[m], 1, 0).reshape(s.x[m].shape[1], -1) for s in streams], axis=1)
            means.append(flat.mean(axis=1))
            sd = flat.std(axis=1)
            stds.append(np.where(sd > 0, sd, 1.0))
        return cls(means, stds)

    def apply(self, streams: list[Stream]) -> list[Stream]:
        out = []
        for s in streams:
            xs = [(a - mu[None, :, None]) / sd[None, :, None] for a, mu, sd in zip(s.x, self.mean, self.std)]
            out.append(Stream(xs, s.y, s.subject))
        return out


def split_streams(streams: list[Stream], seed: int, fractions=(0.7, 0.15, 0.15)) -> tuple[list[Stream], ...]:
    """Subject-level split when there are at least three subjects, else by stream."""
    rng = np.random.default_rng(seed)
    subjects = sorted({s.subject for s in streams})
    by_subject = len(subjects) >= 3 and len(subjects) < len(streams)
    units = subjects if by_subject else list(range(len(streams)))
    perm = rng.permutation(len(units))
    n = len(units)
    n_tr = int(round(fractions[0] * n))
    n_va = int(round(fractions[1] * n))
    parts = [perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]]
    out = []
    for idx in parts:
        chosen = {units[i] for i in idx}
        if by_subject:
            out.append([s for s in streams if s.subject in chosen])
        else:
            out.append([streams[i] for i in sorted(chosen)])
    return tuple(out)


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    normalizer: Normalizer


def prepare_splits(ds: Dataset, seed: int, normalize: bool = True) -> Splits:
    tr, va, te = split_streams(ds.streams, seed)
    if not tr:
        raise ValueError("training split is empty")
    norm = Normalizer.fit(tr)
    if normalize:
        tr, va, te = norm.apply(tr), norm.apply(va), norm.apply(te)
    return Splits(ds.with_streams(tr), ds.with_streams(va), ds.with_streams(te), norm)


def chunk_streams(streams: list[Stream], length: int) -> list[Stream]:
    """Cut streams into consecutive chunks of ``length`` windows (tails kept shorter)."""
    out = []
    for s in streams:
        for start in range(0, len(s), length):
            out.append(s.slice(start, min(start + length, len(s))))
    return out


def decimate_dataset(ds: Dataset, factor: int) -> Dataset:
    factor = int(factor)
    if ds.window_samples % factor:
        raise ValueError(f"window of {ds.window_samples} samples not divisible by decimation factor {factor}")
    streams = [Stream([decimate(a, factor) for a in s.x], s.y, s.subject) for s in ds.streams]
    return Dataset(ds.modalities, streams, ds.rate_hz / factor, ds.window_samples // factor,
                   ds.num_classes, dict(ds.meta, decimation=factor))


# -- cache in the checkpoint container ----------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    blocks = {}
    for i, s in enumerate(ds.streams):
        for m, a in enumerate(s.x):
            blocks[f"s{i}.x{m}"] = a
        blocks[f"s{i}.y"] = s.y.astype(np.int64)
    meta = {"modalities": [{"name": m.name, "channels": m.channels, "power_mw": list(m.power_mw)}
                           for m in ds.modalities],
            "subjects": [int(s.subject) for s in ds.streams], "rate_hz": ds.rate_hz,
            "window_samples": ds.window_samples, "num_classes": ds.num_classes, "meta": ds.meta}
    checkpoint.save(path, blocks, meta, kind="dataset")


def load_dataset(path) -> Dataset:
    blocks, meta = checkpoint.load(path, kind="dataset")
    mods = [ModalitySpec(m["name"], m["channels"], tuple(m["power_mw"])) for m in meta["modalities"]]
    streams = []
    for i, subj in enumerate(meta["subjects"]):
        xs = [blocks[f"s{i}.x{m}"] for m in range(len(mods))]
        streams.append(Stream(xs, blocks[f"s{i}.y"], subj))
    return Dataset(mods, streams, meta["rate_hz"], meta["window_samples"], meta["num_classes"], meta["meta"])


def export_delimited(rec: Recording, path, column_map: dict[str, list[int]], label_column: int) -> None:
    """Write a recording back to whitespace-delimited text (exact float repr)."""
    width = max([c for chans in column_map.values() for c in chans] + [label_column]) + 1
    n = len(rec.labels)
    arr = np.zeros((n, width))
    for m, chans in column_map.items():
        arr[:, chans] = rec.data[m].T
    arr[:, label_column] = rec.labels
    Path(path).write_text("\n".join(" ".join(repr(float(v)) for v in row) for row in arr) + "\n")
