"""Evaluation metrics and report assembly.

Per-class abundance error (RNMSE), per-class reconstruction error (RE), the
confusion matrix after aligning estimated nonlinear classes by ascending
energy, and hyperparameter relative errors. Per-class breakdowns are keyed on
the true labels.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


def align_by_energy(z_hat, s2_hat, n_classes):
    """Relabel nonlinear classes by ascending estimated energy; class 0 is fixed.

    Returns the relabeled field and the reordered energies. Makes confusion
    matrices well defined despite the a-priori exchangeability of the
    nonlinear classes.
    """
    s2_hat = np.asarray(s2_hat, dtype=np.float64)
    if s2_hat.shape[0] != n_classes - 1:
        raise InvalidInputError("need one energy per nonlinear class")
    order = np.argsort(s2_hat, kind="stable")
    mapping = np.zeros(n_classes, dtype=np.int64)
    for new_idx, old_idx in enumerate(order):
        mapping[old_idx + 1] = new_idx + 1
    return mapping[np.asarray(z_hat, dtype=np.int64)], s2_hat[order]


def rnmse_per_class(A_hat, A_true, z_true, n_classes):
    """Root normalized mean-square abundance error per true class.

    RNMSE_k = sqrt( sum_{n in class k} ||a_hat_n - a_n||^2 / (N_k R) ).
    Empty classes are reported as NaN (absent), not zero.
    """
    A_hat = np.asarray(A_hat, dtype=np.float64)
    A_true = np.asarray(A_true, dtype=np.float64)
    if A_hat.shape != A_true.shape:
        raise InvalidInputError("abundance matrices differ in shape")
    R = A_true.shape[0]
    d2 = np.sum((A_hat - A_true) ** 2, axis=0)
    out = np.full(n_classes, np.nan)
    for k in range(n_classes):
        idx = np.flatnonzero(z_true == k)
        if idx.size:
            out[k] = np.sqrt(d2[idx].sum() / (idx.size * R))
    if np.all(np.isnan(out)):
        raise InvalidInputError("every class is empty")
    return out


def re_per_class(Y_hat, Y, z, n_classes):
    """Per-class reconstruction error sqrt( sum ||y_hat - y||^2 / (N_k L) )."""
    Y_hat = np.asarray(Y_hat, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if Y_hat.shape != Y.shape:
        raise InvalidInputError("spectra matrices differ in shape")
    L = Y.shape[0]
    d2 = np.sum((Y_hat - Y) ** 2, axis=0)
    out = np.full(n_classes, np.nan)
    for k in range(n_classes):
        idx = np.flatnonzero(z == k)
        if idx.size:
            out[k] = np.sqrt(d2[idx].sum() / (idx.size * L))
    return out


def confusion_and_accuracy(z_hat, z_true, s2_hat, n_classes):
    """(K x K counts, overall accuracy) after energy-alignment of z_hat.

    Row i, column j counts pixels with true class i estimated as class j;
    accuracy is the diagonal fraction.
    """
    z_true = np.asarray(z_true, dtype=np.int64)
    z_hat = np.asarray(z_hat, dtype=np.int64)
    if z_true.shape != z_hat.shape:
        raise InvalidInputError("label vectors differ in length")
    if z_true.min() < 0 or z_true.max() >= n_classes \
            or z_hat.min() < 0 or z_hat.max() >= n_classes:
        raise InvalidInputError("labels out of range")
    z_aligned, _ = align_by_energy(z_hat, s2_hat, n_classes)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (z_true, z_aligned), 1)
    accuracy = float(np.trace(conf)) / z_true.shape[0]
    return conf, accuracy


def hyperparam_errors(s2_hat, s2_true):
    """Elementwise relative errors |s2_hat - s2| / s2 after ascending alignment."""
    s2_hat = np.sort(np.asarray(s2_hat, dtype=np.float64))
    s2_true = np.asarray(s2_true, dtype=np.float64)
    if s2_hat.shape != s2_true.shape:
        raise InvalidInputError("energy vectors differ in length")
    if np.any(s2_true == 0.0):
        raise InvalidInputError("true energies must be nonzero")
    return np.abs(s2_hat - s2_true) / np.abs(s2_true)


@dataclass
class EvalReport:
    rnmse: np.ndarray
    rnmse_baseline: np.ndarray
    re: np.ndarray
    re_baseline: np.ndarray
    confusion: np.ndarray
    accuracy: float
    s2_errors: np.ndarray
    sigma2_mean_rel_error: float
    metadata: dict = field(default_factory=dict)

    def to_dict(self):
        def listify(a):
            if a is None:
                return None
            return [None if (isinstance(v, float) and np.isnan(v)) else v
                    for v in np.asarray(a, dtype=np.float64).tolist()]

        return {
            "rnmse_per_class": listify(self.rnmse),
            "rnmse_per_class_baseline": listify(self.rnmse_baseline),
            "re_per_class": listify(self.re),
            "re_per_class_baseline": listify(self.re_baseline),
            "confusion_matrix": np.asarray(self.confusion).tolist(),
            "classification_accuracy": self.accuracy,
            "s2_relative_errors": listify(self.s2_errors),
            "sigma2_mean_relative_error": self.sigma2_mean_rel_error,
            "metadata": self.metadata,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_markdown(self):
        k_axis = range(self.confusion.shape[0])
        lines = ["# Unmixing evaluation report", ""]
        lines.append("## Abundance RNMSE per true class (x 1e-2)")
        lines.append("| method | " + " | ".join(f"class {k}" for k in k_axis) + " |")
        lines.append("|---" * (len(self.confusion) + 1) + "|")

        def fmt_row(name, vals):
            cells = ["-" if (v is None or np.isnan(v)) else f"{100 * v:.2f}" for v in vals]
            return f"| {name} | " + " | ".join(cells) + " |"

        lines.append(fmt_row("sampler", self.rnmse))
        if self.rnmse_baseline is not None:
            lines.append(fmt_row("fcls", self.rnmse_baseline))
        lines.append("")
        lines.append("## Reconstruction error per true class (x 1e-2)")
        lines.append("| method | " + " | ".join(f"class {k}" for k in k_axis) + " |")
        lines.append("|---" * (len(self.confusion) + 1) + "|")
        lines.append(fmt_row("sampler", self.re))
        if self.re_baseline is not None:
            lines.append(fmt_row("fcls", self.re_baseline))
        lines.append("")
        lines.append(f"## Confusion matrix (accuracy {self.accuracy:.4f})")
        lines.append("| true \\ est | " + " | ".join(str(k) for k in k_axis) + " |")
        lines.append("|---" * (len(self.confusion) + 1) + "|")
        for i, row in enumerate(np.asarray(self.confusion)):
            lines.append(f"| {i} | " + " | ".join(str(int(v)) for v in row) + " |")
        lines.append("")
        if self.s2_errors is not None:
            vals = ", ".join(f"{100 * v:.2f}%" for v in self.s2_errors)
            lines.append(f"Nonlinearity energy relative errors: {vals}")
        if self.sigma2_mean_rel_error is not None:
            lines.append(
                f"Noise variance mean relative error: {100 * self.sigma2_mean_rel_error:.2f}%"
            )
        lines.append("")
        return "\n".join(lines)
