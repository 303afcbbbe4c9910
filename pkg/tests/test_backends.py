"""Pure-Python core vs compiled core: bit-for-bit equivalence.

The pure module is the reference; when the extension is present every
operation must agree exactly, including a whole simulation's canonical
report bytes.
"""

import random

import pytest

from tripsim import _pure

ext = pytest.importorskip("tripsim._speedups")


def test_hash64_and_mix64_agree():
    for value in [b"", b"a", b"flightbooking-7#42", b"user-12345", bytes(range(256))]:
        assert _pure.hash64(value) == ext.hash64(value)
    for x in [0, 1, 2**31, 2**63, 2**64 - 1, 0xDEADBEEFCAFEBABE]:
        assert _pure.mix64(x) == ext.mix64(x)


def test_random_core_streams_agree():
    p = _pure.RandomCore(987654321)
    c = ext.RandomCore(987654321)
    for _ in range(50_000):
        assert p.next_u64() == c.next_u64()
    p2, c2 = _pure.RandomCore(42), ext.RandomCore(42)
    for _ in range(50_000):
        assert p2.exponential_us(10_000) == c2.exponential_us(10_000)
        assert p2.uniform_us(5, 909) == c2.uniform_us(5, 909)
        assert p2.uniform_double() == c2.uniform_double()


def test_heaps_agree_under_random_interleaving():
    rng = random.Random(7)
    hp, hc = _pure.EventHeap(), ext.EventHeap()
    seq = 0
    for _ in range(5_000):
        for _ in range(rng.randrange(5)):
            t = rng.randrange(1_000)
            hp.push(t, seq, seq)
            hc.push(t, seq, seq)
            seq += 1
        for _ in range(rng.randrange(4)):
            if len(hp):
                assert hp.pop() == hc.pop()
        if len(hp):
            assert hp.min_time() == hc.min_time()
    while len(hp):
        assert hp.pop() == hc.pop()
    assert len(hc) == 0


def test_full_run_bytes_identical_across_backends(tmp_path):
    # Runs the same scenario in subprocesses with each core selected.
    import subprocess
    import sys

    script = (
        "from tripsim.builtins import telemetry_steady\n"
        "from tripsim.runtime import Simulation\n"
        "from tripsim.telemetry import aggregate, canonical_bytes\n"
        "import sys, tripsim\n"
        "rep = aggregate(Simulation(telemetry_steady(11)[0]).run())\n"
        "sys.stdout.write(tripsim.BACKEND + '|')\n"
        "sys.stdout.flush()\n"
        "sys.stdout.buffer.write(canonical_bytes(rep))\n"
    )
    outputs = {}
    for env_value in ("0", "1"):
        env = dict(__import__("os").environ, TRIPSIM_PURE=env_value)
        proc = subprocess.run([sys.executable, "-c", script], env=env,
                              capture_output=True, check=True)
        backend, blob = proc.stdout.split(b"|", 1)
        outputs[env_value] = blob
        if env_value == "1":
            assert backend == b"pure"
    assert outputs["0"] == outputs["1"]
