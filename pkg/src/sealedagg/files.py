"""On-disk artifact formats used by the command-line tools.

Everything is either JSON (identities, trust anchors, user keys, deploy
configs, sealed results) or PEM (recipient RSA keys). These formats are
part of the documented surface; see docs/protocol.md.
"""

from __future__ import annotations

import json
from pathlib import Path

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import rsa
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey

from . import aggregation, wire
from .attestation import EnclaveIdentity
from .crypto import DataKey, RsaKeyPair, load_verify_key, verify_key_raw
from .errors import DecodeError, InvalidArgument
from .svm import load_svm_model


def _read_json(path: str | Path) -> dict:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DecodeError(f"{path}: {exc}") from None
    if not isinstance(obj, dict):
        raise DecodeError(f"{path}: expected a JSON object")
    return obj


def _write_json(path: str | Path, obj: dict) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- enclave identity --------------------------------------------------------


def save_identity(path: str | Path, identity: EnclaveIdentity) -> None:
    _write_json(
        path,
        {
            "protocol_version": identity.protocol_version,
            "aggregation_spec_digest_hex": identity.aggregation_spec_digest.hex(),
            "recipient_pub_digest_hex": identity.recipient_pub_digest.hex(),
            "model_digest_hex": identity.model_digest.hex(),
        },
    )


def load_identity(path: str | Path) -> EnclaveIdentity:
    obj = _read_json(path)
    try:
        return EnclaveIdentity(
            protocol_version=int(obj["protocol_version"]),
            aggregation_spec_digest=bytes.fromhex(obj["aggregation_spec_digest_hex"]),
            recipient_pub_digest=bytes.fromhex(obj["recipient_pub_digest_hex"]),
            model_digest=bytes.fromhex(obj["model_digest_hex"]),
        )
    except (KeyError, ValueError, TypeError, InvalidArgument) as exc:
        raise DecodeError(f"{path}: bad identity file: {exc}") from None


# -- trust anchor ------------------------------------------------------------


def save_trust_anchor(path: str | Path, manufacturer_pub: Ed25519PublicKey) -> None:
    _write_json(path, {"manufacturer_pub_b64": wire.b64e(verify_key_raw(manufacturer_pub))})


def load_trust_anchor(path: str | Path) -> Ed25519PublicKey:
    obj = _read_json(path)
    try:
        return load_verify_key(wire.b64d(obj["manufacturer_pub_b64"], length=32))
    except (KeyError, ValueError, InvalidArgument) as exc:
        raise DecodeError(f"{path}: bad trust anchor file: {exc}") from None


# -- user key ----------------------------------------------------------------


def save_user_key(path: str | Path, user_id: str, key: DataKey) -> None:
    _write_json(path, {"user_id": user_id, "key_b64": wire.b64e(key.key_bytes)})


def load_user_key(path: str | Path) -> tuple[str, DataKey]:
    obj = _read_json(path)
    try:
        return str(obj["user_id"]), DataKey(wire.b64d(obj["key_b64"], length=32))
    except (KeyError, ValueError, InvalidArgument) as exc:
        raise DecodeError(f"{path}: bad user key file: {exc}") from None


# -- recipient RSA keys ------------------------------------------------------


def save_recipient_keypair(dir_path: str | Path, pair: RsaKeyPair) -> tuple[Path, Path]:
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)
    priv_path = out / "recipient_private.pem"
    pub_path = out / "recipient_public.pem"
    priv_path.write_bytes(
        pair.private_key.private_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PrivateFormat.PKCS8,
            encryption_algorithm=serialization.NoEncryption(),
        )
    )
    pub_path.write_bytes(
        pair.public_key.public_bytes(
            encoding=serialization.Encoding.PEM,
            format=serialization.PublicFormat.SubjectPublicKeyInfo,
        )
    )
    return priv_path, pub_path


def load_private_key_pem(path: str | Path) -> rsa.RSAPrivateKey:
    try:
        key = serialization.load_pem_private_key(Path(path).read_bytes(), password=None)
    except (OSError, ValueError, TypeError) as exc:
        raise DecodeError(f"{path}: bad private key: {exc}") from None
    if not isinstance(key, rsa.RSAPrivateKey):
        raise DecodeError(f"{path}: expected an RSA private key")
    return key


def load_public_key_pem(path: str | Path) -> rsa.RSAPublicKey:
    try:
        key = serialization.load_pem_public_key(Path(path).read_bytes())
    except (OSError, ValueError, TypeError) as exc:
        raise DecodeError(f"{path}: bad public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey):
        raise DecodeError(f"{path}: expected an RSA public key")
    return key


# -- deployment config -------------------------------------------------------

FUNCTION_CHOICES = ("sum", "histogram", "lsf", "svm", "zone-count")


def spec_to_config(spec: aggregation.AggregationSpec) -> dict:
    if isinstance(spec, aggregation.Sum):
        return {"function": "sum", "params": {}}
    if isinstance(spec, aggregation.Histogram):
        return {
            "function": "histogram",
            "params": {"min": spec.min, "max": spec.max, "bins": spec.bins},
        }
    if isinstance(spec, aggregation.Lsf):
        return {"function": "lsf", "params": {}}
    if isinstance(spec, aggregation.SvmClassify):
        return {"function": "svm", "params": {}}
    if isinstance(spec, aggregation.ZoneCount):
        return {
            "function": "zone-count",
            "params": {"grid_side": spec.grid_side, "zone_side": spec.zone_side},
        }
    raise InvalidArgument(f"unknown aggregation spec {spec!r}")


def spec_from_config(obj: dict, model_text: str | None) -> aggregation.AggregationSpec:
    function = obj.get("function")
    params = obj.get("params", {})
    if function == "sum":
        return aggregation.Sum()
    if function == "histogram":
        return aggregation.Histogram(
            min=float(params["min"]), max=float(params["max"]), bins=int(params["bins"])
        )
    if function == "lsf":
        return aggregation.Lsf()
    if function == "svm":
        if not model_text:
            raise InvalidArgument("svm deployment requires a model")
        return aggregation.SvmClassify(model=load_svm_model(model_text))
    if function == "zone-count":
        return aggregation.ZoneCount(
            grid_side=int(params["grid_side"]), zone_side=int(params["zone_side"])
        )
    raise DecodeError(f"unknown function {function!r}")


def save_deploy_config(
    path: str | Path,
    spec: aggregation.AggregationSpec,
    recipient_pub_pem: str,
    model_text: str | None,
) -> None:
    obj = spec_to_config(spec)
    obj["recipient_pub_pem"] = recipient_pub_pem
    if model_text is not None:
        obj["model_text"] = model_text
    _write_json(path, obj)


def load_deploy_config(
    path: str | Path,
) -> tuple[aggregation.AggregationSpec, rsa.RSAPublicKey, bytes | None]:
    obj = _read_json(path)
    model_text = obj.get("model_text")
    spec = spec_from_config(obj, model_text)
    try:
        pem = obj["recipient_pub_pem"].encode("utf-8")
        key = serialization.load_pem_public_key(pem)
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise DecodeError(f"{path}: bad recipient public key: {exc}") from None
    if not isinstance(key, rsa.RSAPublicKey):
        raise DecodeError(f"{path}: expected an RSA public key")
    model_bytes = model_text.encode("utf-8") if model_text is not None else None
    return spec, key, model_bytes


# -- sealed result -----------------------------------------------------------


def save_result_msg(path: str | Path, msg: wire.ResultMsg) -> None:
    Path(path).write_bytes(wire.encode(msg))


def load_result_msg(path: str | Path) -> wire.ResultMsg:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    return wire.decode(data, wire.ResultMsg)
