"""File formats and directory layouts.

Images travel as a small binary cube format (magic ``HSC1``, three u32
little-endian dims L, W, H, then float64 little-endian samples, band-major
within pixel, pixels row-major). Everything else is CSV at full float
precision, plus plain P2 PGM for rendered maps.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .model import HyperspectralImage

CUBE_MAGIC = b"HSC1"

DATASET_FILES = (
    "image.hsc", "endmembers.csv", "truth_abundances.csv", "truth_labels.csv",
    "truth_phi.csv", "truth_sigma2.csv", "truth_s2.csv", "spec.json",
)


def write_cube(path, image):
    """Write a HyperspectralImage to the binary cube format."""
    L, N = image.data.shape
    payload = np.ascontiguousarray(image.data.T, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<III", L, image.width, image.height))
        fh.write(payload)


def read_cube(path):
    """Read the binary cube format back into a HyperspectralImage."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != CUBE_MAGIC:
        raise InvalidInputError(f"{path}: not a cube file (bad magic)")
    L, W, H = struct.unpack("<III", raw[4:16])
    expected = 16 + 8 * L * W * H
    if len(raw) != expected:
        raise InvalidInputError(
            f"{path}: payload is {len(raw) - 16} bytes, expected {expected - 16}"
        )
    data = np.frombuffer(raw[16:], dtype="<f8").reshape(W * H, L).T
    return HyperspectralImage(width=W, height=H, data=np.ascontiguousarray(data))


def write_matrix_csv(path, arr, fmt="%.17g"):
    arr = np.atleast_2d(np.asarray(arr))
    np.savetxt(path, arr, delimiter=",", fmt=fmt)


def read_matrix_csv(path, dtype=np.float64):
    path = Path(path)
    if not path.exists():
        raise InvalidInputError(f"missing file: {path}")
    try:
        arr = np.loadtxt(path, delimiter=",", dtype=dtype, ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}")
    return arr


def read_endmembers_csv(path):
    """L x R endmember matrix from a headerless CSV; validates rectangularity."""
    arr = read_matrix_csv(path)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{path}: non-finite endmember values")
    return arr


def write_labels_csv(path, labels, width, height):
    write_matrix_csv(path, np.asarray(labels).reshape(height, width), fmt="%d")


def read_labels_csv(path):
    return read_matrix_csv(path, dtype=np.int64)


def write_pgm(path, grid):
    """Plain (P2) PGM of an integer grid already scaled to 0..255."""
    grid = np.asarray(grid, dtype=np.int64)
    if grid.min() < 0 or grid.max() > 255:
        raise InvalidInputError("PGM values must be within 0..255")
    H, W = grid.shape
    lines = ["P2", f"{W} {H}", "255"]
    lines += [" ".join(str(v) for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path):
    tokens = []
    for line in Path(path).read_text().splitlines():
        body = line.split("#", 1)[0].strip()
        if body:
            tokens.extend(body.split())
    if not tokens or tokens[0] != "P2":
        raise InvalidInputError(f"{path}: not a plain P2 PGM")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if vals.size != W * H:
        raise InvalidInputError(f"{path}: expected {W * H} samples, found {vals.size}")
    if maxval != 255:
        raise InvalidInputError(f"{path}: only maxval 255 is supported")
    return vals.reshape(H, W)


def labels_to_gray(labels_grid, n_classes):
    """Map class indices to evenly spaced gray levels over 0..255."""
    if n_classes < 2:
        return np.zeros_like(np.asarray(labels_grid), dtype=np.int64)
    scale = 255.0 / (n_classes - 1)
    return np.rint(np.asarray(labels_grid) * scale).astype(np.int64)


def gray_to_labels(grid, n_classes):
    scale = 255.0 / (n_classes - 1)
    return np.rint(np.asarray(grid) / scale).astype(np.int64)


# ---------------------------------------------------------------------------
# run-config files: flat key=value, CLI flags take precedence

RUN_CONFIG_KEYS = {
    "scenario", "width", "height", "bands", "r", "classes", "beta", "seed",
    "s2", "gbm_gamma_min", "gbm_gamma_max", "b", "rca_s2", "noise",
    "iters", "burnin", "gamma", "nu", "neighborhood", "thin", "inner_sweeps",
    "endmembers", "algo",
}


def read_run_config(path):
    """Parse a flat key=value config file; unknown keys are rejected."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise InvalidInputError(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in RUN_CONFIG_KEYS:
            raise InvalidInputError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def write_dataset(dirpath, dataset):
    """Write the synthetic dataset directory layout."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    image = HyperspectralImage(width=dataset.width, height=dataset.height, data=dataset.Y)
    write_cube(d / "image.hsc", image)
    write_matrix_csv(d / "endmembers.csv", dataset.endmembers)
    write_matrix_csv(d / "truth_abundances.csv", dataset.abundances)
    write_labels_csv(d / "truth_labels.csv", dataset.labels, dataset.width, dataset.height)
    write_matrix_csv(d / "truth_phi.csv", dataset.phi)
    write_matrix_csv(d / "truth_sigma2.csv", dataset.sigma2.reshape(1, -1))
    write_matrix_csv(d / "truth_s2.csv", np.asarray(dataset.s2).reshape(1, -1))
    (d / "spec.json").write_text(json.dumps(dataset.spec.to_dict(), indent=2, sort_keys=True))


def read_dataset_truth(dirpath):
    """Load the ground-truth pieces of a dataset directory, checking presence."""
    d = Path(dirpath)
    for name in DATASET_FILES:
        if not (d / name).exists():
            raise InvalidInputError(f"missing truth component: {d / name}")
    truth = {
        "image": read_cube(d / "image.hsc"),
        "endmembers": read_endmembers_csv(d / "endmembers.csv"),
        "abundances": read_matrix_csv(d / "truth_abundances.csv"),
        "labels": read_labels_csv(d / "truth_labels.csv").ravel(),
        "phi": read_matrix_csv(d / "truth_phi.csv"),
        "sigma2": read_matrix_csv(d / "truth_sigma2.csv").ravel(),
        "s2": read_matrix_csv(d / "truth_s2.csv").ravel(),
        "spec": json.loads((d / "spec.json").read_text()),
    }
    return truth


def write_results(dirpath, estimates, meta, n_classes):
    """Write sampler estimates plus the chain metadata echo."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    zmap = estimates.z_map
    write_labels_csv(d / "labels_map.csv", zmap.labels, zmap.width, zmap.height)
    write_pgm(d / "labels_map.pgm", labels_to_gray(zmap.as_grid(), n_classes))
    write_matrix_csv(d / "abundances.csv", estimates.A_mmse.values)
    write_matrix_csv(d / "sigma2.csv", estimates.sigma2_mmse.reshape(1, -1))
    write_matrix_csv(d / "s2.csv", estimates.s2_mmse.reshape(1, -1))
    write_matrix_csv(d / "label_posterior.csv", estimates.label_posterior)
    (d / "chain_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def read_results(dirpath):
    d = Path(dirpath)
    out = {"abundances": read_matrix_csv(d / "abundances.csv")}
    if (d / "labels_map.csv").exists():
        out["labels"] = read_labels_csv(d / "labels_map.csv").ravel()
        out["sigma2"] = read_matrix_csv(d / "sigma2.csv").ravel()
        out["s2"] = read_matrix_csv(d / "s2.csv").ravel()
        out["label_posterior"] = read_matrix_csv(d / "label_posterior.csv")
    if (d / "chain_meta.json").exists():
        out["meta"] = json.loads((d / "chain_meta.json").read_text())
    return out
