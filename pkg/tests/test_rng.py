import numpy as np
import pytest

from blowuplab import rng


def test_threefry_known_answers():
    x0, x1 = rng.threefry2x32((0, 0), np.uint32(0), np.uint32(0))
    assert (int(x0), int(x1)) == (0x6B200159, 0x99BA4EFE)
    m = 0xFFFFFFFF
    x0, x1 = rng.threefry2x32((m, m), np.uint32(m), np.uint32(m))
    assert (int(x0), int(x1)) == (0x1CB996FC, 0xBB002BE7)


def test_threefry_matches_jax_reference():
    prng = pytest.importorskip("jax._src.prng")
    jnp = pytest.importorskip("jax.numpy")
    r = np.random.default_rng(0)
    key = tuple(int(v) for v in r.integers(0, 2 ** 32, size=2))
    c0 = r.integers(0, 2 ** 32, size=257, dtype=np.uint64).astype(np.uint32)
    c1 = r.integers(0, 2 ** 32, size=257, dtype=np.uint64).astype(np.uint32)
    want = prng.threefry_2x32(jnp.asarray(key, dtype=jnp.uint32),
                              jnp.concatenate([jnp.asarray(c0), jnp.asarray(c1)]))
    want = np.asarray(want)
    got0, got1 = rng.threefry2x32(key, c0, c1)
    assert np.array_equal(got0, want[:257]) and np.array_equal(got1, want[257:])


def test_uniforms_are_open_interval_and_deterministic():
    u = rng.uniforms(rng.seed_key(5), np.zeros(10_000, dtype=np.uint64), np.arange(10_000))
    assert np.all((u > 0) & (u < 1))
    assert np.array_equal(u, rng.uniforms(rng.seed_key(5), np.zeros(10_000, dtype=np.uint64),
                                          np.arange(10_000)))
    assert abs(u.mean() - 0.5) < 0.01


def test_counter_overflow_is_refused():
    with pytest.raises(OverflowError):
        rng.uniforms((0, 0), 0, 2 ** 32 + 1)


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        rng.seed_key(-1)


def test_buffered_streams_equal_direct_counters():
    paths = np.array([3, 17, 40])
    s = rng.PathStreams(11, paths, buffer=8)
    got = [s.uniform(np.array([0, 2]), 5), s.uniform(np.array([1]), 3),
           s.uniform(np.array([0, 1, 2]), 20), s.uniform(np.array([2]), 7)]
    key = rng.seed_key(11)

    def direct(path, start, k):
        return rng.uniforms(key, np.full(k, path, dtype=np.uint64), np.arange(start, start + k))

    assert np.array_equal(got[0][0], direct(3, 0, 5)) and np.array_equal(got[0][1], direct(40, 0, 5))
    assert np.array_equal(got[1][0], direct(17, 0, 3))
    assert np.array_equal(got[2][1], direct(17, 3, 20))
    assert np.array_equal(got[3][0], direct(40, 25, 7))


def test_path_stream_independent_of_block_membership():
    a = rng.PathStreams(2, np.array([7])).normal(np.array([0]), 30)[0]
    b = rng.PathStreams(2, np.array([1, 7, 9])).normal(np.array([1]), 30)[0]
    assert np.array_equal(a, b)
