"""Matrix files, bisulfite read counts and column filtering."""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError
from .model import CLAMP_DELTA, BoundedMatrix

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "na", "nan", "null", "none"})


class ParseError(DomainError):
    """Unparseable cell; ``line`` and ``column`` are 1-based file positions."""

    def __init__(self, path, line: int, column: int, msg: str):
        super().__init__(f"{path}:{line}:{column}: {msg}")
        self.path, self.line, self.column = path, line, column


def _delimiter(path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "tsv" if str(path).lower().endswith((".tsv", ".tab", ".txt")) else "csv"
    if fmt not in ("csv", "tsv"):
        raise DomainError(f"format must be csv or tsv, got {fmt!r}")
    return "\t" if fmt == "tsv" else ","


def load_matrix(path, fmt: str | None = None, header: bool = True, rownames: bool = True,
                delta: float = CLAMP_DELTA) -> BoundedMatrix:
    """Read a numeric table into a BoundedMatrix.

    Empty cells and NA/NaN tokens become unobserved entries.  Observed values
    outside ``[delta, 1 - delta]`` are clamped; the count is logged and kept on
    the returned matrix as ``n_clamped``.

    Raises
    ------
    ParseError
        With the line and column of the first bad cell or ragged row.
    """
    delim = _delimiter(path, fmt)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delim))
    line0 = 1
    col_labels = None
    if header:
        if not rows:
            raise ParseError(path, 1, 1, "empty file")
        col_labels = rows[0][1:] if rownames else rows[0]
        rows = rows[1:]
        line0 = 2
    rows = [(n, r) for n, r in enumerate(rows, start=line0) if any(cell.strip() for cell in r)]
    if not rows:
        raise ParseError(path, line0, 1, "no data rows")
    row_labels = [] if rownames else None
    offset = 1 if rownames else 0
    width = len(rows[0][1]) - offset
    if col_labels is not None and len(col_labels) != width:
        raise ParseError(path, 1, 1, f"header has {len(col_labels)} columns, data has {width}")
    values = np.empty((len(rows), width))
    mask = np.ones((len(rows), width), dtype=bool)
    for r, (line, cells) in enumerate(rows):
        if len(cells) - offset != width:
            raise ParseError(path, line, len(cells), f"expected {width + offset} fields, found {len(cells)}")
        if rownames:
            row_labels.append(cells[0])
        for c, tok in enumerate(cells[offset:]):
            tok = tok.strip()
            if tok.lower() in MISSING_TOKENS:
                values[r, c] = np.nan
                mask[r, c] = False
                continue
            try:
                x = float(tok)
            except ValueError:
                raise ParseError(path, line, c + offset + 1, f"not a number: {tok!r}") from None
            if not math.isfinite(x):
                raise ParseError(path, line, c + offset + 1, f"non-finite value: {tok!r}")
            values[r, c] = x
    m = BoundedMatrix(values, mask, row_labels, list(col_labels) if col_labels is not None else None, delta)
    if m.n_clamped:
        log.warning("%s: clamped %d value(s) into [%g, %g]", path, m.n_clamped, delta, 1 - delta)
    return m


def save_matrix(path, m: BoundedMatrix, fmt: str | None = None) -> None:
    """Write values with 17 significant digits; unobserved entries as NA."""
    delim = _delimiter(path, fmt)
    I, J = m.shape
    cols = m.col_labels or [f"V{j + 1}" for j in range(J)]
    rows = m.row_labels or [f"R{i + 1}" for i in range(I)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delim, lineterminator="\n")
        w.writerow([""] + list(cols))
        for i in range(I):
            w.writerow([rows[i]] + [format(x, ".17g") if ok else "NA" for x, ok in zip(m.values[i], m.mask[i])])


def save_array(path, a: np.ndarray, row_labels=None, col_labels=None) -> None:
    """Labeled CSV for factor matrices and counts."""
    a = np.atleast_2d(a)
    rows = row_labels if row_labels is not None else [str(i) for i in range(a.shape[0])]
    cols = col_labels if col_labels is not None else [str(j) for j in range(a.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([""] + list(cols))
        for lab, row in zip(rows, a):
            w.writerow([lab] + [format(x, ".17g") if a.dtype.kind == "f" else str(x) for x in row])


def load_array(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(x) for x in r[1:]] for r in rows[1:]])


# ---------------------------------------------------------------------------
# bisulfite sequencing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReadCountPair:
    """Methylated reads ``d``, unmethylated reads ``u`` and smoothing ``s0``."""

    d: int
    u: int
    s0: float = 0.1

    def __post_init__(self):
        if self.d < 0 or self.u < 0:
            raise DomainError("read counts must be nonnegative")
        if not self.s0 > 0:
            raise DomainError("smoothing s0 must be positive")


def biseq_to_beta(r: ReadCountPair) -> float:
    """Smoothed methylated fraction ``(s0 + d) / (2 s0 + d + u)``."""
    return (r.s0 + r.d) / (2.0 * r.s0 + r.d + r.u)


def biseq_beta(d, u, s0: float = 0.1) -> np.ndarray:
    """Vectorised :func:`biseq_to_beta`."""
    if not s0 > 0:
        raise DomainError("smoothing s0 must be positive")
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(d < 0) or np.any(u < 0):
        raise DomainError("read counts must be nonnegative")
    return (s0 + d) / (2.0 * s0 + d + u)


BISEQ_COLUMNS = ("sample", "feature", "methylated", "unmethylated")


def load_biseq(path, s0: float = 0.1, missing: str = "zero") -> BoundedMatrix:
    """Beta values from long-format read counts.

    Columns: sample, feature, methylated, unmethylated.  Repeated
    (sample, feature) rows are summed.  Pairs with no row are treated as zero
    reads (``missing='zero'``, giving 0.5) or left unobserved (``'mask'``).
    Samples and features keep first-appearance order.
    """
    if missing not in ("zero", "mask"):
        raise DomainError("missing must be 'zero' or 'mask'")
    counts: dict = defaultdict(lambda: [0, 0])
    samples: dict = {}
    features: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=_delimiter(path, None))
        head = [h.strip().lower() for h in next(reader, [])]
        try:
            pos = [head.index(c) for c in BISEQ_COLUMNS]
        except ValueError:
            raise ParseError(path, 1, 1, f"header must contain columns {', '.join(BISEQ_COLUMNS)}") from None
        for line, row in enumerate(reader, start=2):
            if not any(x.strip() for x in row):
                continue
            if len(row) < len(head):
                raise ParseError(path, line, len(row), f"expected {len(head)} fields, found {len(row)}")
            s, f = row[pos[0]], row[pos[1]]
            vals = []
            for p in pos[2:]:
                try:
                    n = int(row[p])
                except ValueError:
                    raise ParseError(path, line, p + 1, f"not an integer count: {row[p]!r}") from None
                if n < 0:
                    raise ParseError(path, line, p + 1, "negative read count")
                vals.append(n)
            samples.setdefault(s, len(samples))
            features.setdefault(f, len(features))
            acc = counts[(s, f)]
            acc[0] += vals[0]
            acc[1] += vals[1]
    if not counts:
        raise ParseError(path, 2, 1, "no data rows")
    I, J = len(samples), len(features)
    d = np.zeros((I, J))
    u = np.zeros((I, J))
    seen = np.zeros((I, J), dtype=bool)
    for (s, f), (dm, um) in counts.items():
        i, j = samples[s], features[f]
        d[i, j], u[i, j], seen[i, j] = dm, um, True
    mask = seen if missing == "mask" else None
    return BoundedMatrix(biseq_beta(d, u, s0), mask, list(samples), list(features))


def column_variance(m: BoundedMatrix) -> np.ndarray:
    """Sample variance (ddof 1) of each column over its observed entries; 0 below two entries."""
    x = np.where(m.mask, m.values, np.nan)
    n = m.mask.sum(axis=0)
    out = np.zeros(m.shape[1])
    ok = n >= 2
    if ok.any():
        out[ok] = np.nanvar(x[:, ok], axis=0, ddof=1)
    return out


def variance_filter(m: BoundedMatrix, top_n: int) -> BoundedMatrix:
    """Keep the ``top_n`` highest-variance columns in their original order.

    Ties go to the lower column index.
    """
    J = m.shape[1]
    if not 1 <= top_n <= J:
        raise DomainError(f"top_n must lie in [1, {J}], got {top_n}")
    var = column_variance(m)
    order = np.lexsort((np.arange(J), -var))
    keep = np.sort(order[:top_n])
    cols = [m.col_labels[j] for j in keep] if m.col_labels is not None else None
    return BoundedMatrix(m.values[:, keep], m.mask[:, keep], m.row_labels, cols, m.delta)


def read_labels(path) -> list[str]:
    """One label per line (a header line named 'label' is skipped)."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if lines and lines[0].lower() == "label":
        lines = lines[1:]
    return [ln.split(",")[-1] for ln in lines]
