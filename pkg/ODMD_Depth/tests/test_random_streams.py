"""Counter-based streams: known-answer vectors, independence and distributions."""

import numpy as np
import pytest
from scipy import stats

from odmd_app.random_streams import DOMAIN_EXAMPLES, DOMAIN_INIT, CounterStream, philox4x32


def _words(*values):
    return [np.uint64(v) for v in values]


class TestPhiloxKnownAnswers:
    @pytest.mark.parametrize("counter,key,expected", [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        ((0xFFFFFFFF,) * 4, (0xFFFFFFFF, 0xFFFFFFFF), (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
        ((0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344), (0xA4093822, 0x299F31D0),
         (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1)),
    ])
    def test_block_function(self, counter, key, expected):
        out = philox4x32(_words(*counter), _words(*key))
        assert tuple(int(w) for w in out) == expected

    def test_vectorized_counters(self):
        blocks = np.arange(4, dtype=np.uint64)
        out = philox4x32((blocks, 0, 0, 0), _words(7, 9))
        for b in range(4):
            single = philox4x32(_words(b, 0, 0, 0), _words(7, 9))
            assert [int(w[b]) for w in out] == [int(w) for w in single]


class TestCounterStream:
    def test_same_address_same_values(self):
        a = CounterStream(42, [3, 4]).uniform(10)
        b = CounterStream(42, [3, 4]).uniform(10)
        np.testing.assert_array_equal(a, b)

    def test_stream_values_do_not_depend_on_batch_composition(self):
        together = CounterStream(42, [0, 1, 2, 3])
        alone = CounterStream(42, [2])
        for draw in ("uniform", "normal"):
            np.testing.assert_array_equal(getattr(together, draw)(7)[2], getattr(alone, draw)(7)[0])

    def test_domains_and_seeds_are_separate(self):
        base = CounterStream(1, [0], DOMAIN_EXAMPLES).uniform(8)
        assert not np.array_equal(base, CounterStream(1, [0], DOMAIN_INIT).uniform(8))
        assert not np.array_equal(base, CounterStream(2, [0], DOMAIN_EXAMPLES).uniform(8))

    def test_each_call_starts_a_fresh_block(self):
        stream = CounterStream(5, [0])
        stream.uniform(1)
        assert stream.block == 1
        stream.uniform(3)
        assert stream.block == 3
        stream.normal(3)
        assert stream.block == 5

    def test_uniform_range(self):
        u = CounterStream(3, np.arange(100)).uniform(50, -2.0, 5.0)
        assert u.shape == (100, 50)
        assert u.min() >= -2.0 and u.max() < 5.0

    def test_uniform_distribution(self):
        u = CounterStream(9, np.arange(2000)).uniform(10).ravel()
        assert stats.kstest(u, "uniform").pvalue > 1e-3

    def test_normal_distribution(self):
        z = CounterStream(10, np.arange(2000)).normal(10, sigma=2.0).ravel()
        assert stats.kstest(z / 2.0, "norm").pvalue > 1e-3
        assert np.std(z) == pytest.approx(2.0, rel=0.03)

    def test_discrete_draws(self):
        stream = CounterStream(11, np.arange(5000))
        signs = stream.rademacher(1)
        assert set(np.unique(signs)) == {-1.0, 1.0}
        ints = stream.integers(1, 9)
        assert ints.min() == 0 and ints.max() == 8
        hits = stream.bernoulli(1, 0.1)
        assert hits.mean() == pytest.approx(0.1, abs=0.015)

    @pytest.mark.parametrize("seed", [-1, 2 ** 64])
    def test_seed_must_fit_64_bits(self, seed):
        with pytest.raises(ValueError):
            CounterStream(seed, [0])

    def test_large_seed_and_index(self):
        a = CounterStream(2 ** 64 - 1, [2 ** 40]).uniform(4)
        assert a.shape == (1, 4)
        assert np.all((a >= 0) & (a < 1))
