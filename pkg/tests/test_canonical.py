import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from detaudit.canonical import CanonicalError, canonical_serialize, payload_digest


def test_sorts_map_keys():
    assert canonical_serialize({"b": 1, "a": 2}) == b'{"a":2,"b":1}'


def test_shortest_round_trip_decimal():
    # repr is Python's shortest round-trip rendering; 0.1 must come back as "0.1"
    assert canonical_serialize(0.1) == b"0.1"
    assert canonical_serialize(1.0) == b"1.0"
    third = 1.0 / 3.0
    out = canonical_serialize(third).decode()
    assert float(out) == third
    assert out == repr(third)


def test_nan_and_inf_rejected():
    with pytest.raises(CanonicalError):
        canonical_serialize({"x": float("nan")})
    with pytest.raises(CanonicalError):
        canonical_serialize([1.0, float("inf")])


def test_non_string_keys_rejected():
    with pytest.raises(CanonicalError):
        canonical_serialize({1: "a"})


def test_no_whitespace_and_utf8():
    data = {"k": ["a", 1, True, None], "u": "naïve"}
    out = canonical_serialize(data)
    assert b" " not in out
    assert "naïve".encode("utf-8") in out


json_values = st.recursive(
    st.none()
    | st.booleans()
    | st.integers(min_value=-(2**53), max_value=2**53)
    | st.floats(allow_nan=False, allow_infinity=False)
    | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=20,
)


@given(json_values)
def test_deterministic_and_parseable(value):
    first = canonical_serialize(value)
    second = canonical_serialize(value)
    assert first == second
    loaded = json.loads(first)
    # round-trip through the shortest decimal is exact
    assert canonical_serialize(loaded) == first


@given(json_values)
def test_digest_ignores_key_insertion_order(value):
    if not isinstance(value, dict) or len(value) < 2:
        value = {"a": value, "b": 1}
    reordered = dict(reversed(list(value.items())))
    assert payload_digest(value) == payload_digest(reordered)


def test_negative_zero_is_stable():
    assert canonical_serialize(-0.0) == b"-0.0"
    assert canonical_serialize(0.0) == b"0.0"


def test_rejects_unsupported_types():
    with pytest.raises(CanonicalError):
        canonical_serialize({"x": {1, 2}})
    assert math.isfinite(1.0)  # keep math import honest
