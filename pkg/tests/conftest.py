from __future__ import annotations

import pathlib

import pytest

from sealedagg import crypto
from sealedagg.svm import load_svm_model, parse_sparse_vector

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def manufacturer():
    return crypto.generate_signing_keypair()


@pytest.fixture(scope="session")
def recipient_pair():
    # RSA keygen is the slowest primitive here; share one pair across tests
    # that don't care about key identity.
    return crypto.generate_rsa_keypair()


@pytest.fixture(scope="session")
def packaged_model():
    from sealedagg.bench import packaged_model_text

    return load_svm_model(packaged_model_text())


@pytest.fixture(scope="session")
def holdout_rows():
    """(expected_label, sparse_vector) pairs frozen at fixture-generation time."""
    rows = []
    for line in (FIXTURES / "svm_holdout.txt").read_text().splitlines():
        label, _, rest = line.partition(" ")
        rows.append((int(label), parse_sparse_vector(rest)))
    return rows
