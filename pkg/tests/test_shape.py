import pytest
from hypothesis import given
from hypothesis import strategies as st

from ketembed.shape import FactoredShape, ceil_root, param_count_report, solve_shape


@given(st.integers(1, 10**12), st.integers(1, 6))
def test_ceil_root_is_exact(x, n):
    q = ceil_root(x, n)
    assert q**n >= x
    assert q == 1 or (q - 1) ** n < x


@pytest.mark.parametrize(
    "args,q,t,count",
    [
        ((81, 16, 4, 5), 2, 3, 120),
        ((118655, 300, 4, 1), 5, 19, 380),
        ((118655, 300, 2, 2), 18, 345, 24_840),
    ],
)
def test_solve_shape(args, q, t, count):
    s = solve_shape(*args)
    assert (s.q, s.t, s.param_count) == (q, t, count)


def test_exact_powers_are_not_rounded_up():
    s = solve_shape(4**4, 2**8, 4, 1)
    assert (s.q, s.t) == (4, 4)


def test_ket_shape_counts_per_word_factors():
    s = FactoredShape.for_ket(30428, 256, 4, 1)
    assert s.q == 4 and s.t == 0
    assert s.param_count == 486_848


def test_small_leaf_dim_warns():
    with pytest.warns(UserWarning, match="leaf dimension"):
        FactoredShape.for_ket(10, 4, 2, 1)


@pytest.mark.parametrize(
    "kw",
    [
        dict(d=0, p=4, n=2, r=1, q=2),
        dict(d=4, p=4, n=2, r=0, q=2),
        dict(d=4, p=9, n=2, r=1, q=2),
        dict(d=10, p=4, n=2, r=1, q=2, t=3),
        dict(d=4, p=1, n=1, r=1, q=1),
    ],
)
def test_invalid_shapes(kw):
    with pytest.raises(ValueError):
        FactoredShape(**kw)


def test_report_uses_d_times_p_by_default():
    s = solve_shape(118655, 300, 4, 1)
    assert param_count_report(s) == (380, 93_675)


def test_report_with_narrower_baseline():
    s = solve_shape(30428, 400, 2, 10)
    assert param_count_report(s) == (70_000, 174)
    assert param_count_report(s, baseline_dim=256) == (70_000, 111)


def test_report_with_layernorm_adds_node_parameters():
    s = FactoredShape.for_ket(1, 256, 4, 5)
    # internal nodes of dims 16, 16, 256 -> gain + bias each
    assert param_count_report(s, with_layernorm=True)[0] == 80 + 2 * (16 + 16 + 256)
