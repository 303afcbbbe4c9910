# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled event core: heap, seeded random streams, 64-bit hashing.

Semantics must match tripsim._pure exactly (bit-for-bit); the pure module
is the reference. Keys are uint64/int64, samplers combine IEEE doubles in
the same order as the pure code, so results agree on any one platform.
"""

from libc.math cimport log
from libc.stdint cimport uint64_t, int64_t
from libc.stdlib cimport malloc, realloc, free

BACKEND_NAME = "ext"

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t _FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t _FNV_PRIME = 0x100000001B3ULL
cdef double _INV53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t x) nogil:
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL
    return x ^ (x >> 31)


def mix64(x):
    """splitmix64 finalizer: avalanche a 64-bit value."""
    return _mix64(<uint64_t> (x & 0xFFFFFFFFFFFFFFFF))


def hash64(data):
    """FNV-1a over ``data`` followed by a splitmix64 finalizer."""
    cdef const unsigned char[:] view = data
    cdef uint64_t h = _FNV_OFFSET
    cdef Py_ssize_t i
    for i in range(view.shape[0]):
        h = (h ^ view[i]) * _FNV_PRIME
    return _mix64(h)


cdef class RandomCore:
    """splitmix64 sequence with integer-microsecond samplers."""

    cdef uint64_t state
    cdef public long long draws

    def __init__(self, seed):
        self.state = <uint64_t> (seed & 0xFFFFFFFFFFFFFFFF)
        self.draws = 0

    cdef inline uint64_t _next(self):
        self.state += _GOLDEN
        self.draws += 1
        return _mix64(self.state)

    def next_u64(self):
        return self._next()

    def exponential_us(self, mean_us):
        cdef double u = <double> ((self._next() >> 11) + 1) * _INV53
        cdef double mean = <double> mean_us
        return <int64_t> (-mean * log(u))

    def uniform_us(self, lo_us, hi_us):
        cdef int64_t lo = lo_us
        cdef int64_t hi = hi_us
        if hi == lo:
            return lo
        return lo + <int64_t> (self._next() % <uint64_t> (hi - lo + 1))

    def uniform_double(self):
        return <double> (self._next() >> 11) * _INV53


cdef struct _HeapKey:
    int64_t fire_at
    int64_t seq


cdef inline bint _key_less(_HeapKey a, _HeapKey b) nogil:
    if a.fire_at != b.fire_at:
        return a.fire_at < b.fire_at
    return a.seq < b.seq


cdef class EventHeap:
    """Binary min-heap ordered by (fire_at, seq) with object payloads.

    Keys live in a contiguous C array; payload references are held in a
    parallel Python list index-synchronized with the key array.
    """

    cdef _HeapKey* keys
    cdef Py_ssize_t size
    cdef Py_ssize_t cap
    cdef list payloads

    def __cinit__(self):
        self.cap = 256
        self.keys = <_HeapKey*> malloc(self.cap * sizeof(_HeapKey))
        if self.keys == NULL:
            raise MemoryError()
        self.size = 0
        self.payloads = [None] * self.cap

    def __dealloc__(self):
        if self.keys != NULL:
            free(self.keys)

    def __len__(self):
        return self.size

    cdef int _grow(self) except -1:
        cdef Py_ssize_t newcap = self.cap * 2
        cdef _HeapKey* nk = <_HeapKey*> realloc(self.keys, newcap * sizeof(_HeapKey))
        if nk == NULL:
            raise MemoryError()
        self.keys = nk
        self.payloads.extend([None] * (newcap - self.cap))
        self.cap = newcap
        return 0

    def push(self, fire_at, seq, payload):
        cdef _HeapKey item
        cdef Py_ssize_t pos, parent
        item.fire_at = fire_at
        item.seq = seq
        if self.size == self.cap:
            self._grow()
        pos = self.size
        self.size += 1
        while pos > 0:
            parent = (pos - 1) >> 1
            if _key_less(item, self.keys[parent]):
                self.keys[pos] = self.keys[parent]
                self.payloads[pos] = self.payloads[parent]
                pos = parent
            else:
                break
        self.keys[pos] = item
        self.payloads[pos] = payload

    def min_time(self):
        if self.size == 0:
            raise IndexError("empty heap")
        return self.keys[0].fire_at

    def pop(self):
        cdef _HeapKey root, last
        cdef object root_payload, last_payload
        cdef Py_ssize_t size, pos, child, right
        if self.size == 0:
            raise IndexError("empty heap")
        root = self.keys[0]
        root_payload = self.payloads[0]
        self.size -= 1
        size = self.size
        last = self.keys[size]
        last_payload = self.payloads[size]
        self.payloads[size] = None
        pos = 0
        child = 1
        while child < size:
            right = child + 1
            if right < size and _key_less(self.keys[right], self.keys[child]):
                child = right
            if _key_less(self.keys[child], last):
                self.keys[pos] = self.keys[child]
                self.payloads[pos] = self.payloads[child]
                pos = child
                child = 2 * pos + 1
            else:
                break
        if size > 0:
            self.keys[pos] = last
            self.payloads[pos] = last_payload
        return (root.fire_at, root.seq, root_payload)
