import numpy as np
import pytest

from boltzgrad.rng import (
    TAG_ACCEPT,
    TAG_ANGLES,
    initial_normals,
    philox4x32,
    split_seed,
    uniform_pairs,
    words_to_uniform,
)


class TestPhilox:
    # known-answer vectors published with the Random123 reference implementation
    @pytest.mark.parametrize(
        "counter, key, expected",
        [
            ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
            ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
            (
                (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
                (0xA4093822, 0x299F31D0),
                (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
            ),
        ],
    )
    def test_known_answers(self, counter, key, expected):
        out = philox4x32(np.array([counter]), key)[0]
        assert tuple(int(x) for x in out) == expected

    def test_vectorised_matches_scalar(self):
        ctr = np.array([[i, 7, 3, 0] for i in range(5)])
        batch = philox4x32(ctr, (11, 13))
        for i in range(5):
            np.testing.assert_array_equal(batch[i], philox4x32(ctr[i:i + 1], (11, 13))[0])

    def test_split_seed(self):
        assert split_seed(0x0123456789ABCDEF) == (0x89ABCDEF, 0x01234567)
        assert split_seed(-1) == (0xFFFFFFFF, 0xFFFFFFFF)


class TestUniforms:
    def test_open_interval_extremes(self):
        assert words_to_uniform(0, 0) > 0.0
        top = words_to_uniform(0xFFFFFFFF, 0xFFFFFFFF)
        assert top < 1.0
        assert 1.0 - top == pytest.approx(2.0 ** -53)

    def test_moments(self):
        u = uniform_pairs(5, 0, np.arange(200_000), TAG_ACCEPT).ravel()
        assert u.min() > 0 and u.max() < 1
        assert abs(u.mean() - 0.5) < 4 * np.sqrt(1 / 12 / u.size)
        assert abs(u.var() - 1 / 12) < 2e-3

    def test_tags_and_counters_give_distinct_streams(self):
        a = uniform_pairs(1, 0, np.arange(10), TAG_ACCEPT)
        b = uniform_pairs(1, 0, np.arange(10), TAG_ANGLES)
        c = uniform_pairs(1, 1, np.arange(10), TAG_ACCEPT)
        d = uniform_pairs(2, 0, np.arange(10), TAG_ACCEPT)
        for other in (b, c, d):
            assert not np.any(a == other)

    def test_pure_function_of_counter(self):
        full = uniform_pairs(9, 3, np.arange(100), TAG_ANGLES)
        part = uniform_pairs(9, 3, np.array([17, 42]), TAG_ANGLES)
        np.testing.assert_array_equal(part, full[[17, 42]])


class TestNormals:
    def test_shape_and_moments(self):
        z = initial_normals(3, 100_000)
        assert z.shape == (100_000, 3)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=0.015)
        np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.02)

    def test_prefix_stable(self):
        np.testing.assert_array_equal(initial_normals(4, 10), initial_normals(4, 1000)[:10])
