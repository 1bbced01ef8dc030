"""Readers and writers for the on-disk formats.

Three formats are supported, all simple and bit-exact:

* PGM images (plain ``P2`` and binary ``P5``), read as intensity grids and
  written with maxval 255;
* CSV grids (comma-separated rows of numbers, row-major);
* measure CSVs with header ``x_0,...,x_{dim-1},weight`` and one atom per
  line, printed with 17 significant digits so values round-trip exactly.

Images become measures on the pixel-center grid over [0,1]^2; the pixel at
(row, col) of a ``H x W`` image maps to atom ``row*W + col``.
"""

from __future__ import annotations

import numpy as np

from .measures import DiscreteMeasure, SupportGrid, grid_support

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_csv_grid",
    "load_image_as_measure",
    "save_measure_csv",
    "load_measure_csv",
    "load_measure",
    "measure_to_grid",
    "render_weights",
]


def _pgm_tokens(data):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    pos = 0
    while pos < len(data):
        if data[pos : pos + 1].isspace():
            pos += 1
            continue
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        end = pos
        while end < len(data) and not data[end : end + 1].isspace():
            end += 1
        yield pos, data[pos:end]
        pos = end


def read_pgm(path):
    """Read a P2/P5 PGM file into a float (H, W) intensity array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = _pgm_tokens(data)
    try:
        _, magic = next(tokens)
        if magic not in (b"P2", b"P5"):
            raise ValueError(f"{path}: not a PGM file (magic {magic!r})")
        _, w_tok = next(tokens)
        _, h_tok = next(tokens)
        maxval_pos, maxval_tok = next(tokens)
        width, height, maxval = int(w_tok), int(h_tok), int(maxval_tok)
    except (StopIteration, ValueError) as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: invalid PGM dimensions or maxval")
    if magic == b"P2":
        values = []
        for _, tok in tokens:
            values.append(int(tok))
        img = np.array(values, dtype=np.float64)
    else:
        start = maxval_pos + len(maxval_tok) + 1  # single whitespace after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.uint8
        img = np.frombuffer(
            data, dtype=dtype, count=width * height, offset=start
        ).astype(np.float64)
    if img.size != width * height:
        raise ValueError(f"{path}: pixel count does not match header")
    if (img > maxval).any():
        raise ValueError(f"{path}: pixel values exceed declared maxval")
    return img.reshape(height, width)


def write_pgm(path, gray):
    """Write a uint8 (H, W) array as a binary P5 PGM with maxval 255."""
    gray = np.asarray(gray)
    if gray.ndim != 2:
        raise ValueError("expected a 2-d gray image")
    if gray.dtype != np.uint8:
        if (gray < 0).any() or (gray > 255).any():
            raise ValueError("gray values must fit in 0..255")
        gray = np.round(gray).astype(np.uint8)
    height, width = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_csv_grid(path):
    """Read a comma-separated numeric grid into a float (H, W) array."""
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(tok) for tok in line.split(",")])
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValueError(f"{path}: ragged or empty CSV grid")
    return np.array(rows, dtype=np.float64)


def load_image_as_measure(path, normalize=True):
    """Load a grayscale image as a measure on the pixel-center grid.

    Pixel intensities become the weights, divided by their sum when
    ``normalize`` is set.  All-zero images are rejected.
    """
    path = str(path)
    if path.endswith(".pgm"):
        img = read_pgm(path)
    else:
        img = read_csv_grid(path)
    total = img.sum()
    if total <= 0.0:
        raise ValueError(f"{path}: image carries no mass")
    height, width = img.shape
    weights = img.ravel()
    if normalize:
        weights = weights / total
    return DiscreteMeasure(grid_support(width, height), weights)


def _fmt(value):
    return format(float(value), ".17g")


def save_measure_csv(path, measure):
    """Write a measure as ``x_0,...,x_{dim-1},weight`` lines."""
    atoms = measure.support.atoms
    header = ",".join(f"x_{d}" for d in range(atoms.shape[1])) + ",weight"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for atom, w in zip(atoms, measure.weights):
            fh.write(",".join(_fmt(c) for c in atom) + "," + _fmt(w) + "\n")


def load_measure_csv(path):
    """Read a measure written by :func:`save_measure_csv`."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if cols[-1] != "weight" or any(
            c != f"x_{d}" for d, c in enumerate(cols[:-1])
        ):
            raise ValueError(f"{path}: not a measure CSV (header {header!r})")
        dim = len(cols) - 1
        atoms = []
        weights = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = [float(tok) for tok in line.split(",")]
            if len(parts) != dim + 1:
                raise ValueError(f"{path}: row width does not match header")
            atoms.append(parts[:dim])
            weights.append(parts[dim])
    return DiscreteMeasure(SupportGrid(np.array(atoms)), np.array(weights))


def load_measure(path, normalize=True):
    """Load a measure from any supported file type.

    PGM files and headerless CSV grids are treated as images; a CSV whose
    first line starts with ``x_0`` is read as an atom-list measure (the
    ``normalize`` flag does not apply to those).
    """
    path = str(path)
    if path.endswith(".csv"):
        with open(path, "r", encoding="ascii") as fh:
            first = fh.readline()
        if first.startswith("x_0"):
            return load_measure_csv(path)
    return load_image_as_measure(path, normalize=normalize)


def measure_to_grid(measure):
    """Arrange a grid-supported measure's weights as an (H, W) array.

    The support must be exactly a pixel-center grid over [0,1]^2 (as
    produced by :func:`wbary.measures.grid_support`); raises otherwise.
    """
    atoms = measure.support.atoms
    if atoms.shape[1] != 2:
        raise ValueError("grid rendering needs 2-d supports")
    xs = np.unique(atoms[:, 0])
    ys = np.unique(atoms[:, 1])
    width, height = xs.size, ys.size
    if width * height != atoms.shape[0]:
        raise ValueError("support atoms do not form a rectangular grid")
    expected = grid_support(width, height).atoms
    order = np.lexsort((atoms[:, 0], atoms[:, 1]))
    if not np.array_equal(atoms[order], expected):
        raise ValueError("support atoms do not sit on the unit-square pixel grid")
    return measure.weights[order].reshape(height, width)


def render_weights(measure):
    """Quantize a grid measure to uint8 gray levels, max-normalized."""
    grid = measure_to_grid(measure)
    peak = grid.max()
    if peak <= 0.0:
        return np.zeros(grid.shape, dtype=np.uint8)
    return np.round(255.0 * grid / peak).astype(np.uint8)
