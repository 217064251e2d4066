import pytest

from bioquorum.biometric import make_profile, sample_embedding
from bioquorum.canonical import canonicalize, decode_canonical
from bioquorum.device import Wallet, build_metadata, enrol_wallet
from bioquorum.errors import DeviceUntrusted, MalformedEncoding, MatchRejected
from bioquorum.identity import verify_credential
from bioquorum.proof import DeviceAttestation
from bioquorum.trust import Cid


@pytest.fixture
def wallet(issuer):
    return enrol_wallet(issuer, b"\x21" * 32, b"face", 1234, {"role": "staff"})


def test_credential_points_at_metadata(wallet, issuer):
    assert str(Cid.of(canonicalize(wallet.metadata))) == wallet.credential.metadata_cid
    assert wallet.metadata == build_metadata(wallet.credential.credential_id, wallet.did, issuer.did, 1234,
                                             {"role": "staff"})
    assert wallet.metadata["claims"] == ["role"] and "staff" not in repr(wallet.metadata)
    assert verify_credential(wallet.credential, issuer.keys.public_key)


def test_wallet_round_trip(wallet):
    again = Wallet.from_document(decode_canonical(wallet.to_bytes()))
    assert again == wallet
    with pytest.raises(MalformedEncoding):
        Wallet.from_document({"credential": {}})


def test_owner_authenticates_and_impostor_does_not(wallet):
    req = wallet.authenticate(wallet.capture(b"p1"), b"\x01" * 32, 0)
    assert req.subject_public_key == wallet.keys.public_key
    with pytest.raises(MatchRejected):
        wallet.authenticate(sample_embedding(make_profile(b"other"), 0.05, b"p"), b"\x01" * 32, 0)
    with pytest.raises(DeviceUntrusted):
        wallet.authenticate(wallet.capture(b"p1"), b"\x01" * 32, 0, DeviceAttestation(liveness_ok=False))


def test_template_sealed(wallet):
    assert wallet.capture(b"p").to_wire() not in wallet.to_bytes()
    assert "template" not in wallet.metadata and "embedding" not in wallet.metadata
