"""HTTP surface vs in-process dispatch: the two must be byte-identical.

Every (method, path, body) probe is sent through both a TestClient against
the FastAPI app and the corresponding dispatch function; status codes and
body bytes must agree exactly, including every error shape.
"""

from __future__ import annotations

import os

import pytest
from starlette.testclient import TestClient

from sealedagg import aggregation, crypto, wire
from sealedagg.clients import EnclaveClient, HttpTransport
from sealedagg.enclave import EnclaveCore
from sealedagg.middleware import MiddlewareCore
from sealedagg.plain import PlainCore
from sealedagg.service import create_enclave_app, create_middleware_app, create_plain_app
from sealedagg.service.dispatch import (
    enclave_dispatch,
    middleware_dispatch,
    plain_dispatch,
)

SPEC = aggregation.Sum()


@pytest.fixture()
def enclave_pair(recipient_pair, manufacturer):
    """(TestClient, dispatch) over one shared EnclaveCore."""
    core = EnclaveCore(SPEC, recipient_pair.public_key, manufacturer)
    return TestClient(create_enclave_app(core)), enclave_dispatch(core), core


def assert_parity(client, dispatch, method, path, body):
    http = client.request(method, path, content=body)
    status, local = dispatch(method, path, body)
    assert http.status_code == status, (method, path, http.status_code, status)
    assert http.content == local, (method, path, http.content, local)
    return status, local


ENCLAVE_PROBES = [
    ("GET", wire.ROUTE_CHANNEL, None),
    ("POST", "/v1/unknown", b"{}"),
    ("GET", wire.ROUTE_DATA, None),  # wrong method
    ("POST", wire.ROUTE_DATA, b"{not json"),
    ("POST", wire.ROUTE_DATA, b'{"records":7}'),
    ("POST", wire.ROUTE_DATA, b'{"records":[]}'),
    ("POST", wire.ROUTE_ATTEST, b'{"nonce_b64":"@@@"}'),
    ("POST", wire.ROUTE_ATTEST, b'{"nonce_b64":"AAAA"}'),  # wrong nonce length
    ("POST", wire.ROUTE_KEYS, b'{"wrapped_key_b64":"AA=="}'),
]


@pytest.mark.parametrize("method,path,body", ENCLAVE_PROBES)
def test_enclave_surface_parity(enclave_pair, method, path, body):
    client, dispatch, _ = enclave_pair
    assert_parity(client, dispatch, method, path, body)


def test_enclave_trigger_parity_modulo_fresh_seal(enclave_pair):
    # the sealed envelope uses a fresh key per call, so success bodies differ;
    # both surfaces must still return 200 with a well-formed sealed box
    client, dispatch, _ = enclave_pair
    http = client.post(wire.ROUTE_TRIGGER, content=b"{}")
    status, local = dispatch("POST", wire.ROUTE_TRIGGER, b"{}")
    assert http.status_code == status == 200
    for raw in (http.content, local):
        box = wire.decode(raw, wire.SealedBoxMsg)
        assert len(wire.b64d(box.wrapped_key_b64)) == 256


def test_enclave_attest_same_bytes_modulo_nonce(enclave_pair):
    # quotes over the same nonce from the same instance are identical
    # (Ed25519 is deterministic), so even success bodies match exactly
    client, dispatch, _ = enclave_pair
    nonce = wire.b64e(bytes(16))
    body = wire.encode(wire.AttestChallengeMsg(nonce_b64=nonce))
    status, local = assert_parity(client, dispatch, "POST", wire.ROUTE_ATTEST, body)
    assert status == 200


def test_middleware_surface_parity(manufacturer, recipient_pair):
    mw = MiddlewareCore()
    client = TestClient(create_middleware_app(mw, enclave=None))
    dispatch = middleware_dispatch(mw, None)
    probes = [
        ("GET", wire.ROUTE_STATS, None),
        ("POST", wire.ROUTE_RECORDS, b"{}"),
        ("POST", wire.ROUTE_FORWARD, b"{}"),  # no enclave configured -> 502
        ("POST", "/v1/missing", b"{}"),
    ]
    for probe in probes:
        assert_parity(client, dispatch, *probe)


def test_plain_surface_parity():
    core = PlainCore(SPEC)
    client = TestClient(create_plain_app(core))
    dispatch = plain_dispatch(core)
    probes = [
        ("POST", wire.ROUTE_DATA, wire.encode(wire.PlainBatchMsg(records=[]))),
        ("POST", wire.ROUTE_TRIGGER, b"{}"),
        ("POST", wire.ROUTE_KEYS, b"{}"),  # not part of the plain surface
        ("GET", wire.ROUTE_CHANNEL, None),
        ("POST", wire.ROUTE_ATTEST, b"{}"),
    ]
    for probe in probes:
        assert_parity(client, dispatch, *probe)


def test_plain_service_has_no_crypto_routes():
    client = TestClient(create_plain_app(PlainCore(SPEC)))
    for path in (wire.ROUTE_CHANNEL, wire.ROUTE_KEYS, wire.ROUTE_ATTEST):
        response = client.post(path, content=b"{}")
        assert response.status_code == 404
        assert response.json()["error"]["code"] == "not-found"


def test_body_size_ceiling_http_and_local(recipient_pair, manufacturer):
    core = EnclaveCore(SPEC, recipient_pair.public_key, manufacturer)
    client = TestClient(create_enclave_app(core, max_body_bytes=2048))
    dispatch = enclave_dispatch(core, max_body_bytes=2048)
    big = b'{"records":[' + b" " * 4096 + b"]}"
    http = client.post(wire.ROUTE_DATA, content=big)
    status, local = dispatch("POST", wire.ROUTE_DATA, big)
    assert http.status_code == status == 413
    assert http.content == local
    assert b"size-error" in local


def test_success_bodies_are_canonical(enclave_pair):
    client, _, core = enclave_pair
    raw = client.get(wire.ROUTE_CHANNEL).content
    msg = wire.decode(raw, wire.ChannelInfoMsg)
    assert wire.encode(msg) == raw  # canonical: re-encoding is the identity
    assert wire.b64d(msg.channel_pub_b64) == core.channel_pub_der()


def test_full_protocol_over_http(recipient_pair, manufacturer):
    """End to end across two TestClient-backed services."""
    from sealedagg.actors import RecipientActor, UserActor
    from sealedagg.clients import MiddlewareClient

    recipient = RecipientActor(recipient_pair, manufacturer.public_key)
    identity, core = recipient.deploy(SPEC, manufacturer)
    enclave = EnclaveClient(HttpTransport(TestClient(create_enclave_app(core))))
    mw_core = MiddlewareCore()
    middleware = MiddlewareClient(
        HttpTransport(TestClient(create_middleware_app(mw_core, enclave=enclave)))
    )
    total = 0
    for i in range(4):
        user = UserActor(f"user-{i}", middleware, identity, manufacturer.public_key)
        assert user.authorize(enclave).authorized
        user.submit(str(100 + i).encode())
        total += 100 + i
    ack = middleware.forward()
    assert ack.accepted == 4
    collected = recipient.collect(enclave, SPEC)
    assert collected.result_text == str(total)
    assert collected.included_user_count == 4
