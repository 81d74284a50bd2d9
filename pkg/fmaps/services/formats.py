"""On-disk formats: SPECB01 eigen-cache, FMAT01 matrices, vertex-map and functional-map text files.

All binary formats are little-endian.
"""

from pathlib import Path
from typing import Union

import numpy as np

from fmaps.models.errors import ParseError
from fmaps.models.geometry import AreaVector, EigenBasis
from fmaps.models.maps import FunctionalMap, VertexMap

PathLike = Union[str, Path]

SPEC_MAGIC = b"SPECB01"
FMAT_MAGIC = b"FMAT01"
_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")


# ============ Eigen-cache ============

def write_eigenbasis(path: PathLike, basis: EigenBasis) -> None:
    n, K = basis.phi.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(SPEC_MAGIC)
        fh.write(np.array([n, K], dtype=_U64).tobytes())
        fh.write(np.array([basis.areas.total_area], dtype=_F64).tobytes())
        fh.write(np.asarray(basis.evals, dtype=_F64).tobytes())
        fh.write(np.asarray(basis.phi, dtype=_F64).tobytes(order="F"))
        fh.write(np.asarray(basis.areas.values, dtype=_F64).tobytes())
    tmp.replace(path)


def read_eigenbasis(path: PathLike, name: str = "") -> EigenBasis:
    data = Path(path).read_bytes()
    if data[:len(SPEC_MAGIC)] != SPEC_MAGIC:
        raise ParseError(f"{path} is not an eigen-cache file")
    offset = len(SPEC_MAGIC)
    if len(data) < offset + 24:
        raise ParseError(f"{path} is truncated")
    n, K = (int(x) for x in np.frombuffer(data, dtype=_U64, count=2, offset=offset))
    offset += 16
    expected = offset + 8 * (1 + K + n * K + n)
    if len(data) != expected:
        raise ParseError(f"{path}: size {len(data)} does not match n={n}, K={K}")

    total_area = float(np.frombuffer(data, dtype=_F64, count=1, offset=offset)[0])
    offset += 8
    evals = np.frombuffer(data, dtype=_F64, count=K, offset=offset).copy()
    offset += 8 * K
    phi = np.frombuffer(data, dtype=_F64, count=n * K, offset=offset).reshape((n, K), order="F").copy()
    offset += 8 * n * K
    areas = np.frombuffer(data, dtype=_F64, count=n, offset=offset).copy()
    return EigenBasis(phi=phi, evals=evals, areas=AreaVector(values=areas, total_area=total_area), name=name)


# ============ Dense matrices ============

def write_matrix(path: PathLike, matrix: np.ndarray) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=_F64))
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(np.array([rows, cols], dtype=_U64).tobytes())
        fh.write(np.ascontiguousarray(matrix).tobytes(order="C"))


def read_matrix(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:len(FMAT_MAGIC)] != FMAT_MAGIC:
        raise ParseError(f"{path} is not an FMAT01 matrix file")
    offset = len(FMAT_MAGIC)
    if len(data) < offset + 16:
        raise ParseError(f"{path} is truncated")
    rows, cols = (int(x) for x in np.frombuffer(data, dtype=_U64, count=2, offset=offset))
    offset += 16
    if len(data) != offset + 8 * rows * cols:
        raise ParseError(f"{path}: size does not match a {rows}x{cols} matrix")
    return np.frombuffer(data, dtype=_F64, count=rows * cols, offset=offset).reshape(rows, cols).copy()


# ============ Text maps ============

def write_vertex_map(path: PathLike, vmap: VertexMap) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("".join(f"{i}\n" for i in vmap.indices.tolist()))


def read_vertex_map(path: PathLike, n_source: int = None) -> VertexMap:
    try:
        lines = [line.strip() for line in Path(path).read_text().splitlines()]
        indices = np.array([int(line) for line in lines if line], dtype=np.int64)
    except (OSError, ValueError) as e:
        raise ParseError(f"could not read vertex map {path}: {e}") from e
    return VertexMap(indices, n_source=n_source)


def write_functional_map(path: PathLike, fmap: FunctionalMap) -> None:
    k2, k1 = fmap.C.shape
    with open(path, "w", newline="\n") as fh:
        fh.write(f"{k2} {k1}\n")
        for row in fmap.C:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_functional_map(path: PathLike) -> FunctionalMap:
    try:
        lines = [line for line in Path(path).read_text().splitlines() if line.strip()]
        k2, k1 = (int(x) for x in lines[0].split())
        C = np.array([[float(x) for x in line.split()] for line in lines[1:]], dtype=np.float64)
    except (OSError, ValueError, IndexError) as e:
        raise ParseError(f"could not read functional map {path}: {e}") from e
    if C.shape != (k2, k1):
        raise ParseError(f"{path}: header says {k2}x{k1}, body is {C.shape}")
    return FunctionalMap(C)
