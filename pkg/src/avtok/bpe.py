"""Byte-level BPE text tokenizer.

Text is pre-split into whitespace-led chunks, merges never cross chunk
boundaries, and the base alphabet is the 256 byte values, so every string
round-trips exactly. Training picks the most frequent adjacent pair at each
step; ties go to the lexicographically smallest pair of byte strings.
"""

from __future__ import annotations

import heapq
import json
import re
from collections import Counter, defaultdict
from pathlib import Path

from .errors import FormatError, ValidationError, VersionError

BPE_VERSION = 1
_CHUNK = re.compile(r"\s*\S+|\s+")


def _chunks(text: str) -> list[bytes]:
    return [c.encode("utf-8") for c in _CHUNK.findall(text)]


class BpeModel:
    def __init__(self, merges: list[tuple[int, int]] | None = None):
        self.merges: list[tuple[int, int]] = []
        self.ranks: dict[tuple[int, int], int] = {}
        self.vocab: dict[int, bytes] = {i: bytes([i]) for i in range(256)}
        for a, b in merges or []:
            self._add(a, b)

    def _add(self, a: int, b: int) -> int:
        if a not in self.vocab or b not in self.vocab:
            raise FormatError(f"merge ({a}, {b}) refers to unknown tokens")
        new = 256 + len(self.merges)
        self.ranks[(a, b)] = len(self.merges)
        self.merges.append((a, b))
        self.vocab[new] = self.vocab[a] + self.vocab[b]
        return new

    @property
    def vocab_size(self) -> int:
        return 256 + len(self.merges)

    def _encode_chunk(self, ids: list[int]) -> list[int]:
        while len(ids) > 1:
            best = min(range(len(ids) - 1), key=lambda i: self.ranks.get((ids[i], ids[i + 1]), 1 << 62))
            pair = (ids[best], ids[best + 1])
            if pair not in self.ranks:
                break
            new = 256 + self.ranks[pair]
            out, i = [], 0
            while i < len(ids):
                if i < len(ids) - 1 and (ids[i], ids[i + 1]) == pair:
                    out.append(new)
                    i += 2
                else:
                    out.append(ids[i])
                    i += 1
            ids = out
        return ids

    def encode(self, text: str) -> list[int]:
        out = []
        for chunk in _chunks(text):
            out.extend(self._encode_chunk(list(chunk)))
        return out

    def decode(self, ids) -> str:
        try:
            return b"".join(self.vocab[int(i)] for i in ids).decode("utf-8")
        except KeyError as exc:
            raise ValidationError(f"unknown text token {exc.args[0]}") from None

    def to_json(self) -> str:
        return json.dumps({"format": "avtok-bpe", "version": BPE_VERSION, "merges": self.merges})

    @classmethod
    def from_json(cls, text: str) -> "BpeModel":
        obj = json.loads(text)
        if obj.get("format") != "avtok-bpe":
            raise FormatError("not a BPE model file")
        if obj.get("version") != BPE_VERSION:
            raise VersionError(f"BPE model version {obj.get('version')}, expected {BPE_VERSION}")
        return cls([tuple(m) for m in obj["merges"]])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "BpeModel":
        return cls.from_json(Path(path).read_text())


def bpe_train(corpus: list[str], target_vocab: int) -> BpeModel:
    """Learn up to ``target_vocab - 256`` merges from ``corpus``.

    Training stops early if no adjacent pair is left to merge.
    """
    if not corpus:
        raise ValidationError("BPE corpus is empty")
    if target_vocab < 256:
        raise ValidationError(f"target vocabulary {target_vocab} is below the 256-byte base alphabet")
    model = BpeModel()
    freq = Counter(c for text in corpus for c in _chunks(text))
    words = [list(w) for w in freq]
    counts = list(freq.values())

    pair_count: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, w in enumerate(words):
        for p in zip(w, w[1:]):
            pair_count[p] += counts[wi]
            where[p].add(wi)

    def key(p):
        return (-pair_count[p], model.vocab[p[0]], model.vocab[p[1]], p)

    heap = [key(p) for p in pair_count]
    heapq.heapify(heap)

    while model.vocab_size < target_vocab:
        pair = None
        while heap:
            neg, _, _, p = heapq.heappop(heap)
            if pair_count.get(p, 0) == -neg and -neg > 0:
                pair = p
                break
        if pair is None:
            break
        new = model._add(*pair)
        touched = set()
        for wi in list(where.pop(pair, ())):
            w, c = words[wi], counts[wi]
            for p in zip(w, w[1:]):
                pair_count[p] -= c
                touched.add(p)
            out, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and (w[i], w[i + 1]) == pair:
                    out.append(new)
                    i += 2
                else:
                    out.append(w[i])
                    i += 1
            words[wi] = out
            for p in zip(out, out[1:]):
                pair_count[p] += c
                where[p].add(wi)
                touched.add(p)
        pair_count.pop(pair, None)
        for p in touched:
            if pair_count.get(p, 0) > 0:
                heapq.heappush(heap, key(p))
            else:
                pair_count.pop(p, None)
    return model
