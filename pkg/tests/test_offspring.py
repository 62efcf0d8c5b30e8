import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bbmpe.offspring import OffspringLaw
from bbmpe.rng import stream


def test_binary_size_biased_is_itself():
    q = OffspringLaw.binary().size_biased().probs
    assert np.allclose(q, [0.0, 1.0])


def test_two_point_size_biasing():
    q = OffspringLaw.from_probs([0.5, 0.0, 0.5]).size_biased().probs
    assert np.allclose(q, [0.25, 0.0, 0.75], atol=1e-15)


def test_validation():
    with pytest.raises(ValueError):
        OffspringLaw.from_probs([0.5, 0.4])
    with pytest.raises(ValueError):
        OffspringLaw.from_probs([1.0])
    with pytest.raises(ValueError):
        OffspringLaw.from_probs([-0.1, 1.1])


def test_log_tail_flags_and_truncation():
    law = OffspringLaw.log_tail(2.5)
    assert law.llogl_finite and not law.llog2l_finite
    assert law.truncated_at == 64 and law.probs.size == 65
    assert law.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert not OffspringLaw.log_tail(1.5).llogl_finite


def test_sampling_frequencies():
    law = OffspringLaw.from_probs([0.2, 0.5, 0.3])
    draws = law.sample(stream(3, "offspring_test"), 200_000)
    freq = np.bincount(draws, minlength=3) / draws.size
    assert np.max(np.abs(freq - law.probs)) < 0.005


laws = st.lists(st.floats(0.0, 1.0), min_size=2, max_size=8).filter(lambda p: sum(p[1:]) > 1e-3).map(
    lambda p: np.array(p) / sum(p))


@settings(max_examples=50, deadline=None)
@given(laws, st.floats(0.0, 1.0))
def test_generating_function_properties(p, s):
    law = OffspringLaw(p)
    assert law.generating(np.array(1.0)) == pytest.approx(1.0, abs=1e-12)
    assert law.generating(np.array(0.0)) == 0.0
    v = law.generating(np.array(s))
    assert -1e-15 <= v <= s + 1e-15
    q = law.size_biased()
    assert q.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(q.probs, (np.arange(p.size) + 1) * p / (law.mean + 1))
