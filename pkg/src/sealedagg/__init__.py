"""Confidential multi-user aggregation with a simulated attested enclave.

Users encrypt their data under their own symmetric keys, an untrusted
middleware stores only ciphertext, and a simulated trusted-execution
enclave decrypts, aggregates, and seals the result so that only the
recipient can open it. Remote attestation lets users check what code
holds their keys before releasing them.
"""

__version__ = "0.1.0"
