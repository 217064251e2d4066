import dataclasses
import hashlib
import pickle

import pytest
from hypothesis import given
from hypothesis import strategies as st

from bioquorum.errors import MalformedEncoding, PrivacyViolation
from bioquorum.identity import (
    Credential,
    Did,
    Issuer,
    KeyPair,
    find_biometric_keys,
    generate_identity,
    issue_credential,
    verify_credential,
    verify_signature,
)

CID = "sha256:" + "ab" * 32


def test_did_derivation():
    did, keys = generate_identity(b"\x01" * 32)
    assert str(did) == "did:ciph:" + hashlib.sha256(keys.public_key).hexdigest()[:32]
    assert did.controls(keys.public_key)
    assert not did.controls(KeyPair.from_seed(b"\x02" * 32).public_key)
    assert Did.parse(str(did)) == did


@pytest.mark.parametrize("text", ["did:ciph:xyz", "did:CIPH:" + "0" * 32, "ciph:" + "0" * 32, "did:ciph:" + "0" * 31])
def test_did_parse_rejects(text):
    with pytest.raises(MalformedEncoding):
        Did.parse(text)


def test_keypair_hides_private_key():
    keys = KeyPair.from_seed(b"\x03" * 32)
    assert "_sk" not in repr(keys) and keys.public_key.hex() in repr(keys)
    with pytest.raises(TypeError):
        pickle.dumps(keys)
    with pytest.raises(ValueError):
        KeyPair.from_seed(b"short")


@given(st.binary(max_size=64))
def test_sign_verify(msg):
    keys = KeyPair.from_seed(b"\x04" * 32)
    sig = keys.sign(msg)
    assert verify_signature(keys.public_key, sig, msg)
    assert not verify_signature(keys.public_key, sig, msg + b"x")


def test_issue_and_verify(issuer):
    subject, _ = generate_identity(b"\x05" * 32)
    cred = issue_credential(subject, issuer, {"role": "member"}, CID, 1000)
    assert cred.issuer_did == issuer.did and cred.scheme == "ed25519"
    assert verify_credential(cred, issuer.keys.public_key)
    assert Credential.from_wire(cred.to_wire()) == cred
    other = Issuer.from_seed(b"\x06" * 32)
    assert not verify_credential(cred, other.keys.public_key)


def test_every_field_is_signed(issuer):
    subject, _ = generate_identity(b"\x05" * 32)
    cred = issue_credential(subject, issuer, {"role": "member"}, CID, 1000)
    changes = {
        "credential_id": b"\x00" * 16,
        "subject_did": generate_identity(b"\x07" * 32)[0],
        "attributes": {"role": "admin"},
        "metadata_cid": "sha256:" + "cd" * 32,
        "issued_at": 1001,
    }
    for name, value in changes.items():
        assert not verify_credential(dataclasses.replace(cred, **{name: value}), issuer.keys.public_key), name


def test_attributes_refuse_biometric_names(issuer):
    subject, _ = generate_identity(b"\x05" * 32)
    with pytest.raises(PrivacyViolation):
        issue_credential(subject, issuer, {"Embedding": "x"}, CID, 1)


def test_find_biometric_keys_nested():
    doc = {"a": [{"template": 1}], "b": {"EMBEDDING": 2}, "c": "embedding"}
    assert sorted(find_biometric_keys(doc)) == ["a[0].template", "b.EMBEDDING"]


def test_credential_ids_unique(issuer):
    subject, _ = generate_identity(b"\x05" * 32)
    ids = {issuer.next_credential_id(subject, 5) for _ in range(50)}
    assert len(ids) == 50


@pytest.mark.parametrize("field,value", [("issued_at", "1"), ("metadata_cid", "nope"), ("credential_id", "00")])
def test_from_document_rejects(issuer, field, value):
    subject, _ = generate_identity(b"\x05" * 32)
    doc = issue_credential(subject, issuer, {}, CID, 1).to_document()
    doc["credential_id"] = doc["credential_id"].hex()
    doc["signature"] = doc["signature"].hex()
    Credential.from_document(dict(doc))
    doc[field] = value
    with pytest.raises(MalformedEncoding):
        Credential.from_document(doc)
