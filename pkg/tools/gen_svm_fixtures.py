#!/usr/bin/env python3
"""Regenerate the packaged SVM fixtures.

Trains a small RBF classifier on the first 100 rows of the scikit-learn
breast-cancer dataset (features min-max scaled to [-1, 1] using the training
slice), exports it to the plain-text model format, and writes:

  src/sealedagg/data/svm_model.txt   the classifier used by the benchmark
  src/sealedagg/data/svm_rows.txt    83 unlabeled feature rows (bench inputs)
  tests/fixtures/svm_holdout.txt     30 labeled rows for regression tests

Run from the repository root after an editable install:

  python3 tools/gen_svm_fixtures.py

The script verifies that the exported file, parsed and evaluated by
sealedagg.svm, reproduces the sklearn predictions exactly before writing
anything.
"""

from __future__ import annotations

import pathlib
import sys

import numpy as np
from sklearn.datasets import load_breast_cancer
from sklearn.svm import SVC

from sealedagg.svm import SvmModel, format_svm_model, load_svm_model, svm_predict

ROOT = pathlib.Path(__file__).resolve().parent.parent

TRAIN = slice(0, 100)
HOLDOUT = slice(100, 130)
BENCH = slice(130, 213)

GAMMA = 0.1
C = 1.0

# Original UCI breast-cancer coding: 2 = benign, 4 = malignant.  sklearn's
# copy uses 0 = malignant, 1 = benign.
LABEL_BENIGN = 2
LABEL_MALIGNANT = 4


def scale_to_unit(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    safe = np.where(span == 0.0, 1.0, span)
    scaled = -1.0 + 2.0 * (x - lo) / safe
    return np.where(span == 0.0, 0.0, scaled)


def to_sparse(row: np.ndarray) -> tuple[tuple[int, float], ...]:
    return tuple((i + 1, float(v)) for i, v in enumerate(row) if v != 0.0)


def sparse_text(row: np.ndarray) -> str:
    return " ".join(f"{i + 1}:{float(v)!r}" for i, v in enumerate(row) if v != 0.0)


def main() -> int:
    data = load_breast_cancer()
    x_all = np.asarray(data.data, dtype=float)
    y_all = np.where(data.target == 1, LABEL_BENIGN, LABEL_MALIGNANT)

    lo = x_all[TRAIN].min(axis=0)
    hi = x_all[TRAIN].max(axis=0)
    x_scaled = scale_to_unit(x_all, lo, hi)

    clf = SVC(kernel="rbf", gamma=GAMMA, C=C)
    clf.fit(x_scaled[TRAIN], y_all[TRAIN])
    assert list(clf.classes_) == [LABEL_BENIGN, LABEL_MALIGNANT], clf.classes_

    # sklearn: decision(x) = sum(dual_coef_ * K) + intercept_, predicting
    # classes_[1] when positive.  The file format stores the function for
    # label[0]-vs-label[1], so exporting with label order (2, 4) flips signs.
    model = SvmModel(
        kernel="rbf",
        gamma=GAMMA,
        support_vectors=tuple(to_sparse(sv) for sv in clf.support_vectors_),
        coefficients=tuple(float(-c) for c in clf.dual_coef_[0]),
        rho=float(clf.intercept_[0]),
        labels=(LABEL_BENIGN, LABEL_MALIGNANT),
    )
    text = format_svm_model(model)

    reparsed = load_svm_model(text)
    holdout_rows = x_scaled[HOLDOUT]
    expected = clf.predict(holdout_rows)
    got = [svm_predict(reparsed, to_sparse(row)) for row in holdout_rows]
    mismatches = int(np.sum(np.asarray(got) != expected))
    if mismatches:
        print(f"self-check FAILED: {mismatches} prediction mismatches", file=sys.stderr)
        return 1
    bench_rows = x_scaled[BENCH]
    bench_pred = clf.predict(bench_rows)
    bench_got = [svm_predict(reparsed, to_sparse(row)) for row in bench_rows]
    if list(bench_pred) != bench_got:
        print("self-check FAILED on bench rows", file=sys.stderr)
        return 1

    data_dir = ROOT / "src" / "sealedagg" / "data"
    fixture_dir = ROOT / "tests" / "fixtures"
    data_dir.mkdir(parents=True, exist_ok=True)
    fixture_dir.mkdir(parents=True, exist_ok=True)

    (data_dir / "svm_model.txt").write_text(text)
    (data_dir / "svm_rows.txt").write_text(
        "".join(sparse_text(row) + "\n" for row in bench_rows)
    )
    (fixture_dir / "svm_holdout.txt").write_text(
        "".join(
            f"{int(label)} {sparse_text(row)}\n"
            for label, row in zip(expected, holdout_rows)
        )
    )

    counts = {int(v): int((expected == v).sum()) for v in np.unique(expected)}
    print(
        f"model: {len(model.support_vectors)} SVs, rho={model.rho!r}; "
        f"holdout labels {counts}; bench rows {len(bench_rows)}"
    )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
