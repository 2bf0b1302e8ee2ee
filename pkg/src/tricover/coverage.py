"""Pairwise coverage over neuron triplets spanning adjacent layers.

For every pair of adjacent coverage layers (A, B), every triplet picks
two distinct neurons i < j from A and one neuron q from B. A forward
pass assigns the triplet one of 8 boolean configurations (a neuron is
"on" when its activation exceeds the threshold); each configuration
projects onto 3 neuron pairs, (i,j), (i,q), (j,q), with 4 on/off combos
each, i.e. 12 pair cells per triplet. A triplet is fully covered once
all 12 cells have been observed, which takes at least 4 distinct
configurations.

State per triplet is one byte: the set of configurations seen so far.
Everything else (pair cells, coverage decisions, best next target) is
derived through 256-entry lookup tables.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import CoverageError

CONFIGS_PER_TRIPLET = 8
PAIR_CELLS_PER_TRIPLET = 12
NO_TARGET = 255


def config_bits(config: int) -> tuple[int, int, int]:
    """On/off bits (b_i, b_j, b_q) of a configuration value in [0, 8)."""
    return (config >> 2) & 1, (config >> 1) & 1, config & 1


def config_value(b_i: int, b_j: int, b_q: int) -> int:
    return b_i * 4 + b_j * 2 + b_q


def config_pair_cells(config: int) -> tuple[int, int, int]:
    """The three pair-cell indices (in [0, 12)) a configuration occupies."""
    b_i, b_j, b_q = config_bits(config)
    return (b_i * 2 + b_j, 4 + b_i * 2 + b_q, 8 + b_j * 2 + b_q)


def _build_tables():
    cfg_cells = np.zeros(8, dtype=np.uint16)
    for c in range(8):
        m = 0
        for cell in config_pair_cells(c):
            m |= 1 << cell
        cfg_cells[c] = m

    cell_mask = np.zeros(256, dtype=np.uint16)
    cell_count = np.zeros(256, dtype=np.uint8)
    cfg_count = np.zeros(256, dtype=np.uint8)
    target = np.full(256, NO_TARGET, dtype=np.uint8)
    for mask in range(256):
        cells = 0
        for c in range(8):
            if mask >> c & 1:
                cells |= int(cfg_cells[c])
        cell_mask[mask] = cells
        cell_count[mask] = bin(cells).count("1")
        cfg_count[mask] = bin(mask).count("1")
        if cell_count[mask] < PAIR_CELLS_PER_TRIPLET:
            best_c, best_gain = 0, -1
            for c in range(8):
                gain = bin(int(cfg_cells[c]) & ~cells).count("1")
                if gain > best_gain:
                    best_c, best_gain = c, gain
            target[mask] = best_c
    full = cell_count == PAIR_CELLS_PER_TRIPLET
    return cfg_cells, cell_mask, cell_count, cfg_count, full, target


(_CFG_CELLS, _MASK_CELLS, _CELL_COUNT, _CFG_COUNT, _FULL, _TARGET) = _build_tables()
_BIT = (1 << np.arange(8, dtype=np.uint8)).astype(np.uint8)


@dataclass(frozen=True)
class Triplet:
    """One coverage triplet: neurons i < j in layer ``segment``, q in ``segment + 1``.

    Layer indices refer to positions in the model's coverage-layer list,
    not raw model layer indices.
    """

    segment: int
    i: int
    j: int
    q: int


def triplet_count(layer_sizes: Sequence[int]) -> int:
    """Number of triplets induced by the given coverage-layer sizes."""
    sizes = [int(s) for s in layer_sizes]
    return sum(a * (a - 1) // 2 * b for a, b in zip(sizes, sizes[1:]))


class _Segment:
    __slots__ = ("index", "n_a", "n_b", "iu", "ju", "offset", "count")

    def __init__(self, index, n_a, n_b, offset):
        self.index = index
        self.n_a = n_a
        self.n_b = n_b
        self.iu, self.ju = np.triu_indices(n_a, k=1)
        self.offset = offset
        self.count = len(self.iu) * n_b


class TripletRegistry:
    """Enumerates the triplets of a coverage-layer size vector.

    Triplets are ordered by (segment, i, j, q), with q varying fastest;
    flat indices in [0, total) follow that order.
    """

    def __init__(self, layer_sizes: Sequence[int], name: str = ""):
        sizes = tuple(int(s) for s in layer_sizes)
        if len(sizes) < 2:
            raise CoverageError(f"need at least two coverage layers, got sizes {sizes}")
        if any(s < 1 for s in sizes):
            raise CoverageError(f"coverage layer sizes must be positive, got {sizes}")
        self.layer_sizes = sizes
        self.name = str(name)
        self.segments: list[_Segment] = []
        offset = 0
        for s in range(len(sizes) - 1):
            seg = _Segment(s, sizes[s], sizes[s + 1], offset)
            self.segments.append(seg)
            offset += seg.count
        self.total = offset
        self._offsets = np.array([seg.offset for seg in self.segments], dtype=np.int64)

    def triplet_at(self, index: int) -> Triplet:
        if not (0 <= index < self.total):
            raise CoverageError(f"triplet index {index} out of range [0, {self.total})")
        s = int(np.searchsorted(self._offsets, index, side="right")) - 1
        seg = self.segments[s]
        local = index - seg.offset
        p, q = divmod(local, seg.n_b)
        return Triplet(segment=s, i=int(seg.iu[p]), j=int(seg.ju[p]), q=int(q))

    def index_of(self, t: Triplet) -> int:
        if not (0 <= t.segment < len(self.segments)):
            raise CoverageError(f"segment {t.segment} out of range")
        seg = self.segments[t.segment]
        if not (0 <= t.i < t.j < seg.n_a) or not (0 <= t.q < seg.n_b):
            raise CoverageError(f"triplet {t} invalid for layer sizes "
                                f"({seg.n_a}, {seg.n_b})")
        p = t.i * seg.n_a - t.i * (t.i + 1) // 2 + (t.j - t.i - 1)
        return seg.offset + p * seg.n_b + t.q


def enumerate_triplets(registry: TripletRegistry) -> Iterator[Triplet]:
    """Yield every triplet in flat-index order. O(total); intended for small nets."""
    for seg in registry.segments:
        for p in range(len(seg.iu)):
            i, j = int(seg.iu[p]), int(seg.ju[p])
            for q in range(seg.n_b):
                yield Triplet(segment=seg.index, i=i, j=j, q=q)


@dataclass(frozen=True)
class CoverageStats:
    """Aggregate counters for one coverage state."""

    total_triplets: int
    fully_covered: int
    pair_cells_covered: int
    configs_observed: int
    inputs_observed: int

    @property
    def triplet_coverage(self) -> float:
        return self.fully_covered / self.total_triplets if self.total_triplets else 0.0

    @property
    def pair_cell_coverage(self) -> float:
        denom = self.total_triplets * PAIR_CELLS_PER_TRIPLET
        return self.pair_cells_covered / denom if denom else 0.0

    @property
    def full_config_coverage(self) -> float:
        denom = self.total_triplets * CONFIGS_PER_TRIPLET
        return self.configs_observed / denom if denom else 0.0


class CoverageState:
    """Accumulates observed triplet configurations across forward passes.

    ``masks[t]`` is a bitmask over the 8 configurations triplet ``t`` has
    exhibited so far. The activation predicate is strict: a neuron is on
    when its activation is greater than ``threshold``.
    """

    def __init__(self, registry: TripletRegistry, threshold: float = 0.0):
        self.registry = registry
        self.threshold = float(threshold)
        self.masks = np.zeros(registry.total, dtype=np.uint8)
        self.inputs_observed = 0
        self.observe_seconds = 0.0

    def _activation_bits(self, trace) -> list[np.ndarray]:
        values = getattr(trace, "values", trace)
        sizes = self.registry.layer_sizes
        if len(values) != len(sizes):
            raise CoverageError(
                f"trace has {len(values)} coverage layers, registry expects {len(sizes)}"
            )
        bits = []
        for k, vec in enumerate(values):
            arr = np.asarray(vec, dtype=np.float64).ravel()
            if arr.size != sizes[k]:
                raise CoverageError(
                    f"coverage layer {k} has {arr.size} neurons, registry expects {sizes[k]}"
                )
            bits.append((arr > self.threshold).astype(np.uint8))
        return bits

    def observe(self, trace) -> None:
        """Fold one forward pass (an activation trace or list of vectors) into the state."""
        started = time.perf_counter()
        bits = self._activation_bits(trace)
        for seg in self.registry.segments:
            a, b = bits[seg.index], bits[seg.index + 1]
            pair_bits = (a[seg.iu] << 2) | (a[seg.ju] << 1)
            cfg = pair_bits[:, None] | b[None, :]
            view = self.masks[seg.offset:seg.offset + seg.count]
            view |= _BIT[cfg].ravel()
        self.inputs_observed += 1
        self.observe_seconds += time.perf_counter() - started

    def stats(self) -> CoverageStats:
        counts = np.bincount(self.masks, minlength=256).astype(np.int64)
        return CoverageStats(
            total_triplets=self.registry.total,
            fully_covered=int(counts @ _FULL),
            pair_cells_covered=int(counts @ _CELL_COUNT.astype(np.int64)),
            configs_observed=int(counts @ _CFG_COUNT.astype(np.int64)),
            inputs_observed=self.inputs_observed,
        )

    def is_fully_covered(self, index: int) -> bool:
        return bool(_FULL[self.masks[index]])

    def uncovered_indices(self) -> np.ndarray:
        """Flat indices of triplets that still miss at least one pair cell."""
        return np.flatnonzero(~_FULL[self.masks])

    def target_config(self, index: int) -> int:
        """Best next configuration for a triplet: the one adding the most
        missing pair cells, lowest value on ties. NO_TARGET if fully covered."""
        return int(_TARGET[self.masks[index]])

    def copy(self) -> "CoverageState":
        dup = CoverageState(self.registry, self.threshold)
        dup.masks = self.masks.copy()
        dup.inputs_observed = self.inputs_observed
        return dup


def uncovered_targets(state: CoverageState, rng_seed, count: int) -> list[tuple[Triplet, int]]:
    """Sample triplets that are not yet fully covered, with a target configuration.

    Picks ``count`` distinct triplets uniformly at random (fewer when not
    enough remain uncovered) under a generator seeded with ``rng_seed``,
    so the same seed always yields the same targets for the same state.
    Each comes with the configuration that would cover the most of its
    missing pair cells (an as-yet-unobserved configuration by
    construction, lowest value on ties).
    """
    if count < 1:
        raise CoverageError(f"target count must be >= 1, got {count}")
    eligible = state.uncovered_indices()
    if eligible.size == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    picks = rng.choice(eligible, size=min(count, eligible.size), replace=False)
    return [(state.registry.triplet_at(int(t)), state.target_config(int(t)))
            for t in picks]


class NeuronCoverageState:
    """Single-neuron activation coverage over the same coverage layers.

    A neuron counts as covered once its activation exceeds the threshold
    on any observed input.
    """

    def __init__(self, layer_sizes: Sequence[int], threshold: float = 0.0):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if any(s < 1 for s in self.layer_sizes):
            raise CoverageError(f"coverage layer sizes must be positive, got {self.layer_sizes}")
        self.threshold = float(threshold)
        self.activated = [np.zeros(s, dtype=bool) for s in self.layer_sizes]
        self.inputs_observed = 0

    def observe(self, trace) -> None:
        values = getattr(trace, "values", trace)
        if len(values) != len(self.layer_sizes):
            raise CoverageError(
                f"trace has {len(values)} coverage layers, expected {len(self.layer_sizes)}"
            )
        for k, vec in enumerate(values):
            arr = np.asarray(vec, dtype=np.float64).ravel()
            if arr.size != self.layer_sizes[k]:
                raise CoverageError(
                    f"coverage layer {k} has {arr.size} neurons, expected {self.layer_sizes[k]}"
                )
            self.activated[k] |= arr > self.threshold
        self.inputs_observed += 1

    @property
    def total_neurons(self) -> int:
        return sum(self.layer_sizes)

    def covered_neurons(self) -> int:
        return int(sum(a.sum() for a in self.activated))

    def coverage(self) -> float:
        return self.covered_neurons() / self.total_neurons if self.total_neurons else 0.0


# ---------------------------------------------------------------------------
# Snapshot serialization

_SNAPSHOT_MAGIC = b"TCVS"
_SNAPSHOT_VERSION = 1


def save_state(state: CoverageState, path) -> None:
    """Write a coverage state to a small binary snapshot file."""
    name = state.registry.name.encode("utf-8")
    sizes = state.registry.layer_sizes
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_MAGIC)
        fh.write(struct.pack("<H", _SNAPSHOT_VERSION))
        fh.write(struct.pack("<d", state.threshold))
        fh.write(struct.pack("<Q", state.inputs_observed))
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<H", len(sizes)))
        for s in sizes:
            fh.write(struct.pack("<I", s))
        fh.write(struct.pack("<Q", state.registry.total))
        fh.write(state.masks.tobytes())


def load_state(path) -> CoverageState:
    """Read a snapshot produced by :func:`save_state`."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def fail(msg: str):
        raise CoverageError(f"{path}: {msg}")

    if len(raw) < 4 or raw[:4] != _SNAPSHOT_MAGIC:
        fail("not a coverage snapshot (bad magic)")
    pos = 4

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(raw):
            fail("truncated snapshot")
        out = struct.unpack_from(fmt, raw, pos)
        pos += size
        return out

    (version,) = take("<H")
    if version != _SNAPSHOT_VERSION:
        fail(f"unsupported snapshot version {version}")
    (threshold,) = take("<d")
    (inputs_observed,) = take("<Q")
    (name_len,) = take("<H")
    if pos + name_len > len(raw):
        fail("truncated snapshot (name)")
    name = raw[pos:pos + name_len].decode("utf-8")
    pos += name_len
    (n_layers,) = take("<H")
    sizes = [take("<I")[0] for _ in range(n_layers)]
    (total,) = take("<Q")
    registry = TripletRegistry(sizes, name=name)
    if registry.total != total:
        fail(f"stored triplet count {total} disagrees with layer sizes {sizes} "
             f"({registry.total})")
    if len(raw) - pos != total:
        fail(f"expected {total} mask bytes, found {len(raw) - pos}")
    state = CoverageState(registry, threshold)
    state.masks = np.frombuffer(raw[pos:], dtype=np.uint8).copy()
    state.inputs_observed = int(inputs_observed)
    return state
