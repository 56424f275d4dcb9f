import numpy as np
import pytest

from fscx.stats import iqm_iqr, paired_sign_test, sign_test


def test_sign_test_all_positive():
    r = sign_test(np.ones(10))
    assert r.p_value == pytest.approx(9.765625e-4)
    assert (r.above, r.n) == (10, 10)


def test_sign_test_drops_ties():
    r = sign_test([0, 0, 1, 1, -1])
    assert r.n == 3 and r.above == 2
    assert r.p_value == pytest.approx(0.5)
    assert not sign_test([0.0, 0.0]).defined


def test_paired_sign_test_direction():
    assert paired_sign_test([2, 3, 4], [1, 1, 1]).p_value == pytest.approx(0.125)
    assert paired_sign_test([1, 1, 1], [2, 3, 4]).p_value == pytest.approx(1.0)


def test_iqm_matches_trimmed_mean():
    x = np.arange(1, 101, dtype=float)
    s = iqm_iqr(x)
    assert s.iqm == pytest.approx(x[25:75].mean())
    assert s.iqr == pytest.approx(np.percentile(x, 75) - np.percentile(x, 25))
