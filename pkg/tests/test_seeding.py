import numpy as np
import pytest

from safeadapt.seeding import as_rng, make_rng, tag_id


def test_streams_reproducible():
    assert np.array_equal(make_rng(3, "ego", 5).random(4), make_rng(3, "ego", 5).random(4))


def test_streams_distinct():
    draws = {(s, t, c): make_rng(s, t, c).random() for s in (0, 1) for t in ("ego", "oppo") for c in (0, 1)}
    assert len(set(draws.values())) == len(draws)
    assert make_rng(0, "a").random() != make_rng(0, "a", 0).random()


def test_documented_scheme():
    seq = np.random.SeedSequence(entropy=7, spawn_key=(tag_id("model"), 4))
    assert make_rng(7, "model", 4).random() == np.random.Generator(np.random.PCG64(seq)).random()


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        make_rng(-1)


def test_as_rng_passthrough():
    g = np.random.default_rng(0)
    assert as_rng(g) is g
    assert as_rng(4).random() == make_rng(4).random()
