"""Instance ingestion: matrix-market symmetric coordinate files and edge lists."""

from __future__ import annotations

from .linalg import SparseSymmetric

FORMAT_MATRIX_MARKET = "mm"
FORMAT_EDGES = "edges"


class ParseError(ValueError):
    """Malformed input file; carries the offending line number when known."""

    def __init__(self, detail: str, line_no: int | None = None):
        self.line_no = line_no
        self.detail = detail
        prefix = f"line {line_no}: " if line_no is not None else ""
        super().__init__(prefix + detail)


def _entry(tokens: list[str], line_no: int) -> tuple[int, int, float]:
    if len(tokens) != 3:
        raise ParseError("expected 'i j value'", line_no)
    try:
        i, j = int(tokens[0]), int(tokens[1])
        v = float(tokens[2])
    except ValueError as exc:
        raise ParseError(f"unparseable entry: {exc}", line_no) from None
    if i < 1 or j < 1:
        raise ParseError("indices are 1-based and must be positive", line_no)
    return i - 1, j - 1, v


def _collect(entries, dim: int) -> SparseSymmetric:
    seen = {}
    rows, cols, vals = [], [], []
    for i, j, v, line_no in entries:
        if i >= dim or j >= dim:
            raise ParseError(f"index ({i + 1}, {j + 1}) out of range for dimension {dim}", line_no)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ParseError(
                f"duplicate entry for ({i + 1}, {j + 1}); first seen on line {seen[key]}", line_no
            )
        seen[key] = line_no
        if v != 0.0:
            rows.append(key[0])
            cols.append(key[1])
            vals.append(v)
    return SparseSymmetric.from_entries(dim, list(zip(rows, cols, vals)))


def _parse_matrix_market(lines) -> SparseSymmetric:
    header = None
    body = []
    for line_no, line in lines:
        if header is None:
            header = (line_no, line)
            continue
        stripped = line.strip()
        if not stripped or stripped.startswith("%"):
            continue
        body.append((line_no, stripped))
    if header is None:
        raise ParseError("empty file")
    tokens = header[1].strip().split()
    if len(tokens) < 5 or tokens[0].lower() != "%%matrixmarket":
        raise ParseError("missing %%MatrixMarket header", header[0])
    obj, fmt, field_kind, symmetry = (t.lower() for t in tokens[1:5])
    if obj != "matrix" or fmt != "coordinate":
        raise ParseError(f"unsupported matrix-market type '{obj} {fmt}'", header[0])
    if field_kind not in ("real", "integer"):
        raise ParseError(f"unsupported field '{field_kind}'", header[0])
    if symmetry != "symmetric":
        raise ParseError(f"symmetry must be 'symmetric', got '{symmetry}'", header[0])
    if not body:
        raise ParseError("missing size line")
    size_no, size_line = body[0]
    toks = size_line.split()
    if len(toks) != 3:
        raise ParseError("size line must be 'rows cols nnz'", size_no)
    try:
        nrows, ncols, nnz = (int(t) for t in toks)
    except ValueError:
        raise ParseError("unparseable size line", size_no) from None
    if nrows != ncols:
        raise ParseError(f"matrix must be square, got {nrows}x{ncols}", size_no)
    if nrows < 1:
        raise ParseError("dimension must be positive", size_no)
    data = body[1:]
    if len(data) != nnz:
        raise ParseError(f"expected {nnz} entries, found {len(data)}", size_no)
    entries = []
    for line_no, line in data:
        i, j, v = _entry(line.split(), line_no)
        entries.append((i, j, v, line_no))
    return _collect(entries, nrows)


def _parse_edges(lines) -> SparseSymmetric:
    entries = []
    max_idx = -1
    for line_no, line in lines:
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        i, j, v = _entry(stripped.split(), line_no)
        entries.append((i, j, v, line_no))
        max_idx = max(max_idx, i, j)
    if max_idx < 0:
        raise ParseError("no edges found")
    return _collect(entries, max_idx + 1)


def parse_matrix(path: str, fmt: str = FORMAT_MATRIX_MARKET) -> SparseSymmetric:
    """Read a symmetric sparse matrix; duplicates (after symmetrization) are
    rejected and explicit zeros dropped."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = list(enumerate(fh.read().splitlines(), start=1))
    if fmt == FORMAT_MATRIX_MARKET:
        return _parse_matrix_market(lines)
    if fmt == FORMAT_EDGES:
        return _parse_edges(lines)
    raise ParseError(f"unknown format '{fmt}'")
