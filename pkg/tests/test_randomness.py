"""Deterministic stream: key derivation, distributions, noise factors."""

from __future__ import annotations

from fractions import Fraction
from math import exp

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flashflow_lab.randomness import (
    SEED_BYTES,
    Stream,
    derive_key,
    exp_fraction,
    seed_from_text,
)

KEY = seed_from_text("test-key")


class TestSeedFromText:
    def test_hex_used_verbatim(self):
        hex_seed = "ab" * 32
        assert seed_from_text(hex_seed) == bytes.fromhex(hex_seed)

    def test_other_text_hashed(self):
        seed = seed_from_text("lab-1")
        assert len(seed) == SEED_BYTES
        assert seed != b"lab-1".ljust(32, b"\0")

    def test_non_hex_64_chars_hashed(self):
        text = "z" * 64
        assert len(seed_from_text(text)) == SEED_BYTES

    def test_whitespace_stripped(self):
        assert seed_from_text(" lab-1 ") == seed_from_text("lab-1")


class TestDeriveKey:
    def test_deterministic_and_label_sensitive(self):
        assert derive_key(KEY, "a", 1) == derive_key(KEY, "a", 1)
        assert derive_key(KEY, "a", 1) != derive_key(KEY, "a", 2)
        assert derive_key(KEY, "ab") != derive_key(KEY, "a", "b")

    def test_int_str_distinct(self):
        assert derive_key(KEY, 1) != derive_key(KEY, "1")

    def test_bad_key_length(self):
        with pytest.raises(ValueError):
            derive_key(b"short", "a")

    def test_bool_label_rejected(self):
        with pytest.raises(ValueError):
            derive_key(KEY, True)


class TestStream:
    def test_replayable(self):
        a = [Stream(KEY).u64() for _ in range(10)]
        b = [Stream(KEY).u64() for _ in range(10)]
        assert a == b

    def test_child_independent_of_parent_position(self):
        parent = Stream(KEY)
        child_before = parent.child("x").u64()
        parent.u64()
        assert parent.child("x").u64() == child_before

    @given(st.integers(min_value=1, max_value=10**9))
    @settings(max_examples=50)
    def test_below_in_range(self, n):
        assert 0 <= Stream(KEY).below(n) < n

    def test_below_small_n_uniform(self):
        stream = Stream(KEY)
        counts = [0, 0, 0]
        for _ in range(3000):
            counts[stream.below(3)] += 1
        assert min(counts) > 850

    def test_unit_in_range(self):
        stream = Stream(KEY)
        for _ in range(100):
            u = stream.unit()
            assert 0 <= u < 1
            assert u.denominator & (u.denominator - 1) == 0  # dyadic

    def test_bernoulli_edges_consume_nothing(self):
        stream = Stream(KEY)
        assert stream.bernoulli(Fraction(0)) is False
        assert stream.bernoulli(Fraction(1)) is True
        assert stream.u64() == Stream(KEY).u64()

    def test_bernoulli_rate(self):
        stream = Stream(KEY)
        hits = sum(stream.bernoulli(Fraction(1, 4)) for _ in range(4000))
        assert 870 <= hits <= 1130

    def test_normal_moments(self):
        stream = Stream(KEY)
        draws = [stream.normal() for _ in range(2000)]
        mean = sum(draws) / len(draws)
        var = sum(d * d for d in draws) / len(draws) - mean * mean
        assert abs(mean) < Fraction(1, 10)
        assert Fraction(8, 10) < var < Fraction(12, 10)
        assert all(-6 <= d <= 6 for d in draws)


class TestLognormalPpm:
    def test_sigma_zero_short_circuits(self):
        stream = Stream(KEY)
        assert stream.lognormal_ppm(Fraction(0)) == 1_000_000
        assert stream.u64() == Stream(KEY).u64()  # consumed no draws

    def test_clipped_to_three_sigma(self):
        sigma = Fraction(1, 20)
        stream = Stream(KEY)
        lo = 1_000_000 - 150_000
        hi = 1_000_000 + 150_000
        for _ in range(500):
            ppm = stream.lognormal_ppm(sigma)
            assert lo <= ppm <= hi

    def test_mean_near_one(self):
        sigma = Fraction(1, 20)
        stream = Stream(KEY)
        total = sum(stream.lognormal_ppm(sigma) for _ in range(4000))
        assert abs(total / 4000 - 1_000_000) < 3_000

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            Stream(KEY).lognormal_ppm(Fraction(-1, 10))


class TestExpFraction:
    @pytest.mark.parametrize("x", [-3, -1, 0, 1, 2, 5])
    def test_matches_libm(self, x):
        approx = exp_fraction(Fraction(x))
        assert abs(float(approx) - exp(x)) < 1e-9 * exp(x)

    def test_zero_is_one(self):
        assert exp_fraction(Fraction(0)) == 1

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            exp_fraction(Fraction(100))

    @given(st.fractions(min_value=-2, max_value=2))
    @settings(max_examples=30)
    def test_positive_and_monotone_vs_float(self, x):
        assert exp_fraction(x) > 0
