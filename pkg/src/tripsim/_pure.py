"""Pure-Python event core: heap, seeded random streams, 64-bit hashing.

This module is the fallback twin of the compiled ``tripsim._speedups``
extension. Both implement exactly the same integer semantics so that a
simulation produces bit-identical results regardless of which core is
loaded. Everything here is integer arithmetic modulo 2**64 plus IEEE-754
doubles combined in a fixed order, so the contract is testable
(see tests/test_backends.py).

Hashing and stream derivation use splitmix64; see ``mix64``.
"""

from math import log

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
# 1 / 2**53, for mapping 53 random bits onto (0, 1]
_INV53 = 1.0 / 9007199254740992.0

BACKEND_NAME = "pure"


def mix64(x: int) -> int:
    """splitmix64 finalizer: avalanche a 64-bit value."""
    x &= _M64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _M64
    return x ^ (x >> 31)


def hash64(data: bytes) -> int:
    """FNV-1a over ``data`` followed by a splitmix64 finalizer.

    Fixed, documented, platform-independent; used for hash-ring
    positions and stream derivation, never Python's salted hash().
    """
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _M64
    return mix64(h)


class RandomCore:
    """splitmix64 sequence with integer-microsecond samplers.

    One instance per named stream. The stream seed is derived from
    (root_seed, label) by the caller; draws depend only on that seed and
    the draw index.
    """

    __slots__ = ("state", "draws")

    def __init__(self, seed: int):
        self.state = seed & _M64
        self.draws = 0

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _M64
        self.draws += 1
        return mix64(self.state)

    def exponential_us(self, mean_us: int) -> int:
        # u in (0, 1]; -mean*log(u) >= 0; truncate to integer microseconds.
        u = ((self.next_u64() >> 11) + 1) * _INV53
        return int(-mean_us * log(u))

    def uniform_us(self, lo_us: int, hi_us: int) -> int:
        if hi_us == lo_us:
            return lo_us
        return lo_us + self.next_u64() % (hi_us - lo_us + 1)

    def uniform_double(self) -> float:
        return (self.next_u64() >> 11) * _INV53


class EventHeap:
    """Binary min-heap ordered by (fire_at, seq).

    ``seq`` is assigned by the caller and strictly increases in insertion
    order, which makes the dispatch order a total order. Payloads are
    opaque objects carried alongside the keys.
    """

    __slots__ = ("_heap",)

    def __init__(self):
        self._heap: list[tuple[int, int, object]] = []

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, fire_at: int, seq: int, payload: object) -> None:
        # Manual sift-up on (fire_at, seq) keys only: payloads are never
        # compared, so arbitrary objects are safe.
        heap = self._heap
        heap.append((fire_at, seq, payload))
        pos = len(heap) - 1
        item = heap[pos]
        while pos > 0:
            parent_pos = (pos - 1) >> 1
            parent = heap[parent_pos]
            if (item[0], item[1]) < (parent[0], parent[1]):
                heap[pos] = parent
                pos = parent_pos
            else:
                break
        heap[pos] = item

    def min_time(self) -> int:
        return self._heap[0][0]

    def pop(self) -> tuple[int, int, object]:
        heap = self._heap
        last = heap.pop()
        if not heap:
            return last
        result = heap[0]
        # Sift the displaced last element down from the root.
        pos = 0
        size = len(heap)
        child = 1
        while child < size:
            right = child + 1
            if right < size and (heap[right][0], heap[right][1]) < (heap[child][0], heap[child][1]):
                child = right
            if (heap[child][0], heap[child][1]) < (last[0], last[1]):
                heap[pos] = heap[child]
                pos = child
                child = 2 * pos + 1
            else:
                break
        heap[pos] = last
        return result
