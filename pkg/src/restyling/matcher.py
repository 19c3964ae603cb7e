"""Style selection: exact Hamming K-NN (PH mode) or seeded random picks (RS mode)."""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DuplicateId, EmptyIndex, UnknownId
from .phash import PerceptualHash, hamming_many

DEFAULT_K = 5
_CHUNK = 256  # source queries per distance block


class MatchMode(str, enum.Enum):
    PH = "PH"
    RS = "RS"

    @classmethod
    def parse(cls, text) -> "MatchMode":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).upper())
        except ValueError:
            raise ValueError(f"unknown match mode {text!r} (expected ph or rs)") from None


@dataclass(frozen=True)
class Match:
    style_id: str
    distance: Optional[int] = None


@dataclass(frozen=True)
class MatchSet:
    source_id: str
    mode: MatchMode
    matches: tuple[Match, ...]
    k: int

    @property
    def style_ids(self) -> list[str]:
        return [m.style_id for m in self.matches]

    @property
    def distances(self) -> list[Optional[int]]:
        return [m.distance for m in self.matches]


class HashIndex:
    """Insertion-ordered (id, hash) collection; read-only once frozen."""

    def __init__(self):
        self._ids: list[str] = []
        self._hashes: list[int] = []
        self._pos: dict[str, int] = {}
        self._words: Optional[np.ndarray] = None

    def add(self, sample_id: str, h: PerceptualHash) -> None:
        if self.frozen:
            raise RuntimeError("index is frozen")
        if sample_id in self._pos:
            raise DuplicateId(f"duplicate sample id {sample_id!r}")
        self._pos[sample_id] = len(self._ids)
        self._ids.append(sample_id)
        self._hashes.append(h.value)

    def freeze(self) -> "HashIndex":
        if not self.frozen:
            words = np.array(self._hashes, dtype=np.uint64)
            words.setflags(write=False)
            self._words = words
        return self

    @property
    def frozen(self) -> bool:
        return self._words is not None

    @property
    def ids(self) -> Sequence[str]:
        return tuple(self._ids)

    @property
    def words(self) -> np.ndarray:
        self._require_frozen()
        return self._words

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, sample_id) -> bool:
        return sample_id in self._pos

    def __getitem__(self, sample_id: str) -> PerceptualHash:
        try:
            return PerceptualHash(self._hashes[self._pos[sample_id]])
        except KeyError:
            raise UnknownId(f"{sample_id!r} is not in the index") from None

    def entries(self) -> list[tuple[str, PerceptualHash]]:
        return [(i, PerceptualHash(h)) for i, h in zip(self._ids, self._hashes)]

    def _require_frozen(self):
        if not self.frozen:
            raise RuntimeError("index must be frozen before it is queried")

    def _require_queryable(self, k: int):
        self._require_frozen()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if not self._ids:
            raise EmptyIndex("cannot select from an empty index")


def build_index(pairs: Iterable[tuple[str, PerceptualHash]]) -> HashIndex:
    index = HashIndex()
    for sample_id, h in pairs:
        index.add(sample_id, h)
    return index.freeze()


def _smallest(dists: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k smallest distances, ordered by (distance, position)."""
    n = dists.shape[-1]
    keys = (dists.astype(np.int64) << 32) | np.arange(n, dtype=np.int64)
    if k < n:
        keys = np.partition(keys, k - 1, axis=-1)[..., :k]
    keys = np.sort(keys, axis=-1)
    return keys & 0xFFFFFFFF


def _ph_matchset(index: HashIndex, source_id: str, dists: np.ndarray, k: int) -> MatchSet:
    picks = _smallest(dists, k)
    ids = index._ids
    matches = tuple(Match(ids[p], int(dists[p])) for p in picks)
    return MatchSet(source_id, MatchMode.PH, matches, k)


def knn(index: HashIndex, query: PerceptualHash, k: int = DEFAULT_K, source_id: str = "") -> MatchSet:
    """Exact k nearest hashes by full scan; ties go to the earlier-inserted entry."""
    index._require_queryable(k)
    return _ph_matchset(index, source_id, hamming_many(index.words, query), k)


def _stream_key(seed: int, source_id: str) -> np.ndarray:
    digest = hashlib.sha256(f"{int(seed)}\x00{source_id}".encode("utf-8")).digest()
    return np.frombuffer(digest[:16], dtype="<u8").copy()


def _bounded(bitgen: np.random.Philox, m: int) -> int:
    """Unbiased integer in [0, m) from raw 64-bit draws (rejection sampling)."""
    limit = (1 << 64) - ((1 << 64) % m)
    while True:
        r = int(bitgen.random_raw())
        if r < limit:
            return r % m


def random_select(index: HashIndex, source_id: str, k: int = DEFAULT_K, seed: int = 0) -> MatchSet:
    """k distinct styles drawn without replacement, reproducible per (seed, source_id).

    A partial Fisher-Yates shuffle driven by raw Philox output, so selections do
    not depend on numpy's higher-level sampling routines.
    """
    index._require_queryable(k)
    bitgen = np.random.Philox(key=_stream_key(seed, source_id))
    n = len(index)
    take = min(k, n)
    perm = list(range(n))
    for i in range(take):
        j = i + _bounded(bitgen, n - i)
        perm[i], perm[j] = perm[j], perm[i]
    ids = index._ids
    matches = tuple(Match(ids[p]) for p in perm[:take])
    return MatchSet(source_id, MatchMode.RS, matches, k)


def _ph_chunk(index: HashIndex, chunk: Sequence[tuple[str, PerceptualHash]], k: int) -> list[MatchSet]:
    queries = np.array([h.value for _, h in chunk], dtype=np.uint64)
    dists = np.bitwise_count(queries[:, None] ^ index.words[None, :]).astype(np.uint8)
    return [_ph_matchset(index, sid, row, k) for (sid, _), row in zip(chunk, dists)]


def match_corpus(
    source_hashes: Sequence[tuple[str, PerceptualHash]],
    index: HashIndex,
    mode=MatchMode.PH,
    k: int = DEFAULT_K,
    seed: int = 0,
    workers: int = 1,
) -> list[MatchSet]:
    """One MatchSet per source sample, in source order."""
    mode = MatchMode.parse(mode)
    index._require_queryable(k)
    if mode is MatchMode.RS:
        return [random_select(index, sid, k, seed) for sid, _ in source_hashes]
    chunks = [source_hashes[i : i + _CHUNK] for i in range(0, len(source_hashes), _CHUNK)]
    if workers <= 1 or len(chunks) <= 1:
        parts = [_ph_chunk(index, c, k) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _ph_chunk(index, c, k), chunks))
    return [ms for part in parts for ms in part]


def score_post_hoc(matchset: MatchSet, query: PerceptualHash, index: HashIndex) -> list[int]:
    """Hamming distances of a MatchSet's selections, recomputed from the index."""
    return [(query.value ^ index[sid].value).bit_count() for sid in matchset.style_ids]


def style_reuse(matchsets: Iterable[MatchSet]) -> Counter:
    return Counter(sid for ms in matchsets for sid in ms.style_ids)


def format_match_file(matchsets: Iterable[MatchSet]) -> str:
    lines = []
    for ms in matchsets:
        for rank, m in enumerate(ms.matches, 1):
            dist = "NA" if m.distance is None else str(m.distance)
            lines.append(f"{ms.source_id}\t{rank}\t{m.style_id}\t{dist}\t{ms.mode.value}\n")
    return "".join(lines)


def parse_match_file(text: str) -> list[MatchSet]:
    """Inverse of :func:`format_match_file`. ``k`` is recovered as the row count."""
    grouped: dict[str, list] = {}
    modes: dict[str, MatchMode] = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ValueError(f"malformed match line {lineno}: {line!r}")
        source_id, rank, style_id, dist, mode = fields
        rows = grouped.setdefault(source_id, [])
        if int(rank) != len(rows) + 1:
            raise ValueError(f"line {lineno}: rank {rank} out of sequence for {source_id!r}")
        rows.append(Match(style_id, None if dist == "NA" else int(dist)))
        modes[source_id] = MatchMode.parse(mode)
    return [MatchSet(sid, modes[sid], tuple(rows), len(rows)) for sid, rows in grouped.items()]


def write_match_file(path, matchsets) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_match_file(matchsets))


def read_match_file(path) -> list[MatchSet]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_match_file(fh.read())
