import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import engel_law, heisenberg_law
from sublab import (
    CarnotGroupSpec, HomogeneousNorm, InvalidInputError, SingularityError, bcdh_product,
    dilate, gauge_harmonic_candidate, get_group, group_inverse, left_invariant_frame, load_group,
)
from sublab.groups import catalog_names, dynkin_words

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def points(n):
    return arrays(np.float64, (n,), elements=finite)


# -- catalog and derived quantities ------------------------------------------

@pytest.mark.parametrize("name, n, q, sigma", [
    ("heisenberg", 3, 4, (1, 1, 2)),
    ("engel", 4, 7, (1, 1, 2, 3)),
    ("free23", 6, 9, (1, 1, 1, 2, 2, 2)),
    ("euclidean2", 2, 2, (1, 1)),
])
def test_dimensions(name, n, q, sigma):
    g = get_group(name)
    assert g.dim == n
    assert g.homogeneous_dim == q
    assert tuple(g.weights) == sigma


def test_unknown_group():
    with pytest.raises(InvalidInputError, match="unknown group"):
        get_group("nilpotent-mystery")
    assert "heisenberg" in catalog_names()


def test_heisenberg_product_example(heis):
    np.testing.assert_allclose(bcdh_product(heis, [1, 0, 0], [0, 1, 0]), [1, 1, 0.5])


def test_engel_product_example():
    g = get_group("engel")
    np.testing.assert_allclose(bcdh_product(g, [1, 0, 0, 0], [0, 1, 0, 0]), [1, 1, 0.5, 1 / 12])


def test_matches_hand_written_laws(rng):
    h, e = get_group("heisenberg"), get_group("engel")
    x, y = rng.normal(size=(2, 500, 3))
    np.testing.assert_allclose(bcdh_product(h, x, y), heisenberg_law(x, y), atol=1e-13)
    x, y = rng.normal(size=(2, 500, 4))
    np.testing.assert_allclose(bcdh_product(e, x, y), engel_law(x, y), atol=1e-13)


def test_dynkin_words_degree_two():
    # log(e^X e^Y) = X + Y + [X, Y] / 4 - [Y, X] / 4 + ... in left-normed words
    words = dict(dynkin_words(2))
    assert words == {(0,): 1, (1,): 1, (0, 1): Fraction(1, 4), (1, 0): Fraction(-1, 4)}


def test_heisenberg_frame(heis):
    f = left_invariant_frame(heis, [1.0, 2.0, 0.0])
    np.testing.assert_allclose(f, [[1, 0], [0, 1], [-1, 0.5]])


def test_frame_is_derivative_of_right_translation(any_group, rng):
    x = rng.normal(size=any_group.dim)
    f = left_invariant_frame(any_group, x)
    d = 1e-6
    for i in range(any_group.horizontal_dim):
        e = np.zeros(any_group.dim)
        e[i] = d
        num = (bcdh_product(any_group, x, e) - bcdh_product(any_group, x, -e)) / (2 * d)
        np.testing.assert_allclose(f[:, i], num, atol=1e-8)


# -- validation ----------------------------------------------------------------

def test_rejects_broken_grading():
    with pytest.raises(InvalidInputError, match="grading"):
        CarnotGroupSpec((2, 1), ((0, 1, 1, 1.0),))


def test_rejects_non_generating_first_layer():
    with pytest.raises(InvalidInputError, match="span"):
        CarnotGroupSpec((2, 1), ())


def test_rejects_jacobi_violation():
    # [e0,e1]=e3, [e0,e3]=e4, [e1,e3]=e4 with [e0,e2] nonzero but no compensating term
    with pytest.raises(InvalidInputError):
        CarnotGroupSpec((3, 1, 1), ((0, 1, 3, 1.0), (1, 2, 3, 1.0), (0, 3, 4, 1.0), (2, 3, 4, 5.0)))


def test_json_roundtrip(tmp_path, any_group):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(any_group.to_dict()))
    assert load_group(str(path)) == any_group


def test_json_step_mismatch():
    with pytest.raises(InvalidInputError, match="step"):
        CarnotGroupSpec.from_dict({"step": 3, "layer_dims": [2, 1], "brackets": [[0, 1, 2, 1]]})


def test_custom_spec_matches_catalog():
    g = load_group({"layer_dims": [2, 1], "brackets": [[1, 0, 2, -1.0]]})
    assert g.brackets == get_group("heisenberg").brackets


# -- norms ------------------------------------------------------------------------

def test_gauge_examples(heis):
    assert HomogeneousNorm(heis, "gauge16")([0, 0, 1]) == pytest.approx(2.0)
    assert HomogeneousNorm(heis, "gaugerho")([1, 0, 0]) == pytest.approx(1.0)
    assert HomogeneousNorm(heis, "layermax")([0.5, 0, 0.81]) == pytest.approx(0.9)


def test_gauge_needs_step_two():
    with pytest.raises(InvalidInputError):
        HomogeneousNorm(get_group("engel"), "gauge16")


def test_harmonic_candidate_singular(heis):
    n = HomogeneousNorm(heis, "gauge16")
    with pytest.raises(SingularityError):
        gauge_harmonic_candidate(heis, n, [0, 0, 0])
    assert gauge_harmonic_candidate(heis, n, [1, 0, 0]) == pytest.approx(1.0)


def test_dilate_rejects_nonpositive(heis):
    with pytest.raises(InvalidInputError):
        dilate(heis, 0.0, [1, 0, 0])


# -- algebraic properties (hypothesis) -----------------------------------------------

@pytest.mark.parametrize("name", ["heisenberg", "engel", "free23"])
@settings(max_examples=60, deadline=None)
@given(data=st.data())
def test_group_axioms(name, data):
    g = get_group(name)
    x, y, z = (data.draw(points(g.dim)) for _ in range(3))
    lhs = bcdh_product(g, bcdh_product(g, x, y), z)
    rhs = bcdh_product(g, x, bcdh_product(g, y, z))
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
    np.testing.assert_allclose(bcdh_product(g, x, group_inverse(x)), 0, atol=1e-12)
    np.testing.assert_allclose(bcdh_product(g, x, np.zeros(g.dim)), x, atol=0)


@pytest.mark.parametrize("name", ["heisenberg", "engel", "free23"])
@settings(max_examples=60, deadline=None)
@given(data=st.data(), a=st.floats(0.05, 20))
def test_dilation_is_automorphism(name, data, a):
    g = get_group(name)
    x, y = data.draw(points(g.dim)), data.draw(points(g.dim))
    lhs = dilate(g, a, bcdh_product(g, x, y))
    rhs = bcdh_product(g, dilate(g, a, x), dilate(g, a, y))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-9)


@pytest.mark.parametrize("name, kind", [("heisenberg", "gauge16"), ("heisenberg", "gaugerho"),
                                        ("free23", "gauge16"), ("engel", "layermax")])
@settings(max_examples=60, deadline=None)
@given(data=st.data(), a=st.floats(0.05, 20))
def test_norm_homogeneous_and_symmetric(name, kind, data, a):
    g = get_group(name)
    n = HomogeneousNorm(g, kind)
    x = data.draw(points(g.dim))
    assert n(dilate(g, a, x)) == pytest.approx(a * n(x), rel=1e-10, abs=1e-12)
    assert n(group_inverse(x)) == pytest.approx(n(x), abs=0)
