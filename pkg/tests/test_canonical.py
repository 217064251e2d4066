import hashlib
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioquorum.canonical import canonicalize, decode_canonical, parse_hex, sha256_canonical
from bioquorum.errors import MalformedEncoding, UnsupportedValue

scalars = st.one_of(st.booleans(), st.integers(min_value=-(2**70), max_value=2**70), st.text(max_size=12))
docs = st.recursive(
    scalars,
    lambda inner: st.one_of(st.lists(inner, max_size=4), st.dictionaries(st.text(max_size=6), inner, max_size=4)),
    max_leaves=20,
)


def _oracle(doc):
    # stdlib json with sorted keys is an independent encoder for byte-free documents
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def test_known_vector():
    assert canonicalize({"b": 1, "a": [True, b"\x01\xff"]}) == b'{"a":[true,"01ff"],"b":1}'


def test_hash_vector():
    assert sha256_canonical({"x": 1}) == hashlib.sha256(b'{"x":1}').digest()


@given(docs)
def test_matches_stdlib_oracle(doc):
    assert canonicalize(doc) == _oracle(doc)


@given(docs)
def test_round_trip(doc):
    data = canonicalize(doc)
    assert decode_canonical(data) == doc
    assert canonicalize(decode_canonical(data)) == data


@given(st.dictionaries(st.text(max_size=5), st.integers(), min_size=2, max_size=6))
def test_key_order_irrelevant(d):
    reversed_d = dict(reversed(list(d.items())))
    assert canonicalize(d) == canonicalize(reversed_d)


@pytest.mark.parametrize("bad", [1.5, None, {1: 2}, {"a": None}, [0.0], object()])
def test_unsupported(bad):
    with pytest.raises(UnsupportedValue):
        canonicalize(bad)


@pytest.mark.parametrize("data", [
    b'{"b":1,"a":2}',
    b'{"a": 1}',
    b'{"a":1,"a":1}',
    b'{"a":1.0}',
    b'{"a":null}',
    b'"\\u0041"',
    b"\xff",
    b"[1,]",
])
def test_decode_rejects_non_canonical(data):
    with pytest.raises(MalformedEncoding):
        decode_canonical(data)


def test_parse_hex():
    assert parse_hex("00ff", 2) == b"\x00\xff"
    for bad in ("0", "0G", "FF", 12):
        with pytest.raises(MalformedEncoding):
            parse_hex(bad)
    with pytest.raises(MalformedEncoding):
        parse_hex("00", 2)
