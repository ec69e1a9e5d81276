"""Support-vector classification over sparse feature vectors.

The model format is the plain-text one emitted by the original libsvm
tooling: a short header (svm_type, kernel_type, gamma, nr_class, total_sv,
rho, label, nr_sv) followed by an ``SV`` line and one line per support
vector holding its dual coefficient and ``index:value`` pairs with
1-based, strictly increasing indices. Only two-class c_svc models with
linear or rbf kernels are supported.

Prediction follows the standard decision rule: with decision value
``d = sum_i coef_i * K(sv_i, x) - rho`` the predicted label is
``labels[0]`` when ``d > 0`` and ``labels[1]`` otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DecodeError, InvalidArgument

#: A sparse feature vector: ((index, value), ...), indices 1-based, strictly increasing.
SparseVector = tuple[tuple[int, float], ...]

_KERNELS = ("linear", "rbf")


@dataclass(frozen=True)
class SvmModel:
    kernel: str
    gamma: float | None
    support_vectors: tuple[SparseVector, ...]
    coefficients: tuple[float, ...]
    rho: float
    labels: tuple[int, int]

    def __post_init__(self) -> None:
        if self.kernel not in _KERNELS:
            raise InvalidArgument(f"kernel must be one of {_KERNELS}")
        if self.kernel == "rbf":
            if self.gamma is None or not math.isfinite(self.gamma) or self.gamma <= 0:
                raise InvalidArgument("rbf kernel needs a finite positive gamma")
        if len(self.support_vectors) == 0:
            raise InvalidArgument("model must contain at least one support vector")
        if len(self.coefficients) != len(self.support_vectors):
            raise InvalidArgument("one dual coefficient per support vector required")
        if len(self.labels) != 2 or self.labels[0] == self.labels[1]:
            raise InvalidArgument("exactly two distinct class labels required")
        if not math.isfinite(self.rho):
            raise InvalidArgument("rho must be finite")
        for sv in self.support_vectors:
            validate_sparse_vector(sv)
        for c in self.coefficients:
            if not math.isfinite(c):
                raise InvalidArgument("dual coefficients must be finite")


def validate_sparse_vector(vec: SparseVector) -> None:
    prev = 0
    for idx, value in vec:
        if idx <= prev:
            raise InvalidArgument("feature indices must be 1-based and strictly increasing")
        if not math.isfinite(value):
            raise InvalidArgument("feature values must be finite")
        prev = idx


def parse_sparse_vector(text: str) -> SparseVector:
    """Parse ``index:value`` pairs separated by whitespace.

    Raises:
        DecodeError: malformed pair, non-integer index, non-finite value,
            or indices out of order.
    """
    pairs: list[tuple[int, float]] = []
    for token in text.split():
        idx_s, sep, val_s = token.partition(":")
        if not sep:
            raise DecodeError(f"sparse vector: missing ':' in {token!r}")
        try:
            idx = int(idx_s)
            value = float(val_s)
        except ValueError:
            raise DecodeError(f"sparse vector: bad pair {token!r}") from None
        pairs.append((idx, value))
    vec = tuple(pairs)
    try:
        validate_sparse_vector(vec)
    except InvalidArgument as exc:
        raise DecodeError(f"sparse vector: {exc}") from None
    return vec


def _dot(u: SparseVector, v: SparseVector) -> float:
    i = j = 0
    total = 0.0
    while i < len(u) and j < len(v):
        ui, uv = u[i]
        vi, vv = v[j]
        if ui == vi:
            total += uv * vv
            i += 1
            j += 1
        elif ui < vi:
            i += 1
        else:
            j += 1
    return total


def _sq_distance(u: SparseVector, v: SparseVector) -> float:
    i = j = 0
    total = 0.0
    while i < len(u) or j < len(v):
        if j >= len(v) or (i < len(u) and u[i][0] < v[j][0]):
            total += u[i][1] * u[i][1]
            i += 1
        elif i >= len(u) or v[j][0] < u[i][0]:
            total += v[j][1] * v[j][1]
            j += 1
        else:
            d = u[i][1] - v[j][1]
            total += d * d
            i += 1
            j += 1
    return total


def kernel_value(model: SvmModel, sv: SparseVector, x: SparseVector) -> float:
    if model.kernel == "linear":
        return _dot(sv, x)
    return math.exp(-model.gamma * _sq_distance(sv, x))


def decision_value(model: SvmModel, x: SparseVector) -> float:
    total = 0.0
    for coef, sv in zip(model.coefficients, model.support_vectors):
        total += coef * kernel_value(model, sv, x)
    return total - model.rho


def svm_predict(model: SvmModel, x: SparseVector) -> int:
    """Predicted class label for one sparse feature vector."""
    validate_sparse_vector(x)
    return model.labels[0] if decision_value(model, x) > 0 else model.labels[1]


# ---------------------------------------------------------------------------
# Model file format
# ---------------------------------------------------------------------------


def load_svm_model(text: str) -> SvmModel:
    """Parse a libsvm-style plain-text model.

    Raises:
        DecodeError: on grammar violations, unsupported svm/kernel types,
            more than two classes, or count mismatches.
    """
    header: dict[str, str] = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line:
            continue
        if line == "SV":
            break
        key, _, value = line.partition(" ")
        if not value:
            raise DecodeError(f"model header: bad line {line!r}")
        header[key] = value.strip()
    else:
        raise DecodeError("model header: missing SV section")

    def need(key: str) -> str:
        if key not in header:
            raise DecodeError(f"model header: missing {key}")
        return header[key]

    if need("svm_type") != "c_svc":
        raise DecodeError(f"model header: unsupported svm_type {header['svm_type']!r}")
    kernel = need("kernel_type")
    if kernel not in _KERNELS:
        raise DecodeError(f"model header: unsupported kernel_type {kernel!r}")
    try:
        nr_class = int(need("nr_class"))
        total_sv = int(need("total_sv"))
        rho = float(need("rho"))
        labels = tuple(int(t) for t in need("label").split())
        nr_sv = tuple(int(t) for t in need("nr_sv").split())
        gamma = float(header["gamma"]) if "gamma" in header else None
    except ValueError as exc:
        raise DecodeError(f"model header: {exc}") from None
    if nr_class != 2 or len(labels) != 2 or len(nr_sv) != 2:
        raise DecodeError("model header: only two-class models are supported")
    if sum(nr_sv) != total_sv:
        raise DecodeError("model header: nr_sv does not sum to total_sv")
    if kernel == "rbf" and gamma is None:
        raise DecodeError("model header: rbf kernel requires gamma")

    coefficients: list[float] = []
    support_vectors: list[SparseVector] = []
    for raw in lines[i:]:
        line = raw.strip()
        if not line:
            continue
        coef_s, _, rest = line.partition(" ")
        try:
            coef = float(coef_s)
        except ValueError:
            raise DecodeError(f"support vector: bad coefficient {coef_s!r}") from None
        coefficients.append(coef)
        support_vectors.append(parse_sparse_vector(rest))
    if len(support_vectors) != total_sv:
        raise DecodeError(
            f"support vectors: expected {total_sv}, found {len(support_vectors)}"
        )
    try:
        return SvmModel(
            kernel=kernel,
            gamma=gamma,
            support_vectors=tuple(support_vectors),
            coefficients=tuple(coefficients),
            rho=rho,
            labels=(labels[0], labels[1]),
        )
    except InvalidArgument as exc:
        raise DecodeError(f"model: {exc}") from None


def format_svm_model(model: SvmModel) -> str:
    """Serialize a model back to the plain-text format (round-trips load)."""
    out = ["svm_type c_svc", f"kernel_type {model.kernel}"]
    if model.gamma is not None:
        out.append(f"gamma {model.gamma!r}")
    out.append("nr_class 2")
    out.append(f"total_sv {len(model.support_vectors)}")
    out.append(f"rho {model.rho!r}")
    out.append(f"label {model.labels[0]} {model.labels[1]}")
    positive = sum(1 for c in model.coefficients if c > 0)
    out.append(f"nr_sv {positive} {len(model.coefficients) - positive}")
    out.append("SV")
    for coef, sv in zip(model.coefficients, model.support_vectors):
        pairs = " ".join(f"{idx}:{value!r}" for idx, value in sv)
        out.append(f"{coef!r} {pairs}".rstrip())
    return "\n".join(out) + "\n"
