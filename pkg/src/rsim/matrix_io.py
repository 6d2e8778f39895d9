"""Activation matrices and their on-disk formats.

Binary layout (little-endian, no padding, no trailer)::

    b"RSM1" | uint32 version=1 | uint64 rows | uint64 cols | rows*cols float64, row-major

Text layout: a ``"<rows> <cols>"`` header line followed by ``rows`` lines of
``cols`` space-separated decimals.

A bundle is a directory holding one matrix file per layer and a
``manifest.txt`` with ``"<layer_name> <filename>"`` lines in layer order.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BundleError, DataError, FormatError, IoError

MAGIC = b"RSM1"
VERSION = 1
HEADER = struct.Struct("<4sIQQ")
MANIFEST = "manifest.txt"


@dataclass
class ActivationMatrix:
    """Neurons in rows, probe inputs in columns."""

    data: np.ndarray
    layer_name: str = ""
    model_id: str = ""

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64, order="C")
        if data.ndim != 2:
            raise FormatError(f"activation matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise FormatError(f"activation matrix must be non-empty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("activation matrix contains non-finite values")
        self.data = data

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, ActivationMatrix):
            return NotImplemented
        return (
            self.layer_name == other.layer_name
            and self.model_id == other.model_id
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass
class MatrixBundle:
    """Per-layer activation matrices of one trained model over a shared probe set."""

    model_id: str
    layers: list[ActivationMatrix] = field(default_factory=list)

    def __post_init__(self):
        names = [m.layer_name for m in self.layers]
        if len(set(names)) != len(names):
            raise BundleError(f"duplicate layer names in bundle {self.model_id!r}: {names}")
        cols = {m.cols for m in self.layers}
        if len(cols) > 1:
            raise BundleError(f"layers of bundle {self.model_id!r} disagree on cols: {sorted(cols)}")

    @property
    def layer_names(self) -> list[str]:
        return [m.layer_name for m in self.layers]

    @property
    def cols(self) -> int:
        return self.layers[0].cols

    def __getitem__(self, name: str) -> ActivationMatrix:
        for m in self.layers:
            if m.layer_name == name:
                return m
        raise KeyError(name)

    def __len__(self):
        return len(self.layers)


def as_array(m) -> np.ndarray:
    """Return the float64 data behind an ActivationMatrix or array-like."""
    if isinstance(m, ActivationMatrix):
        return m.data
    return ActivationMatrix(m).data


def _detect_format(path: Path) -> str:
    with open(path, "rb") as fh:
        head = fh.read(4)
    return "binary" if head == MAGIC else "text"


def _encode_binary(data: np.ndarray) -> bytes:
    rows, cols = data.shape
    return HEADER.pack(MAGIC, VERSION, rows, cols) + data.astype("<f8").tobytes(order="C")


def _decode_binary(raw: bytes) -> np.ndarray:
    if len(raw) < HEADER.size:
        raise FormatError(f"binary matrix truncated: {len(raw)} bytes is shorter than the header")
    magic, version, rows, cols = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    payload = len(raw) - HEADER.size
    if rows < 1 or cols < 1 or payload != rows * cols * 8:
        raise FormatError(f"header declares {rows}x{cols} but payload holds {payload} bytes")
    return np.frombuffer(raw, dtype="<f8", offset=HEADER.size).astype(np.float64).reshape(rows, cols)


def _encode_text(data: np.ndarray) -> str:
    rows, cols = data.shape
    lines = [f"{rows} {cols}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in data)
    return "\n".join(lines) + "\n"


def _decode_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise FormatError("empty text matrix")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError:
        raise FormatError(f"bad text header {lines[0]!r}") from None
    if rows < 1 or cols < 1 or len(lines) - 1 != rows:
        raise FormatError(f"header declares {rows} rows, found {len(lines) - 1}")
    out = np.empty((rows, cols), dtype=np.float64)
    for i, line in enumerate(lines[1:]):
        toks = line.split()
        if len(toks) != cols:
            raise FormatError(f"row {i} has {len(toks)} values, expected {cols}")
        try:
            out[i] = [float(t) for t in toks]
        except ValueError as exc:
            raise FormatError(f"row {i}: {exc}") from None
    return out


def load_matrix(path, format: str | None = None, layer_name: str = "", model_id: str = "") -> ActivationMatrix:
    """Read a matrix file; ``format=None`` sniffs the magic bytes."""
    path = Path(path)
    try:
        fmt = format or _detect_format(path)
        if fmt == "binary":
            data = _decode_binary(path.read_bytes())
        elif fmt == "text":
            data = _decode_text(path.read_text())
        else:
            raise ValueError(f"unknown matrix format {fmt!r}")
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    except UnicodeDecodeError:
        raise FormatError(f"{path} is neither a binary nor a text matrix") from None
    if not np.all(np.isfinite(data)):
        raise DataError(f"{path} contains non-finite values")
    return ActivationMatrix(data, layer_name=layer_name, model_id=model_id)


def save_matrix(m, path, format: str = "binary") -> None:
    data = as_array(m)
    if not np.all(np.isfinite(data)):
        raise DataError("refusing to write non-finite values")
    path = Path(path)
    try:
        if format == "binary":
            path.write_bytes(_encode_binary(data))
        elif format == "text":
            path.write_text(_encode_text(data))
        else:
            raise ValueError(f"unknown matrix format {format!r}")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_manifest(directory: Path) -> list[tuple[str, str]]:
    manifest = directory / MANIFEST
    if not manifest.is_file():
        raise FormatError(f"{directory} has no {MANIFEST}")
    entries = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"{manifest}:{lineno}: expected '<name> <file>', got {line!r}")
        entries.append((parts[0], parts[1]))
    if not entries:
        raise FormatError(f"{manifest} lists no entries")
    return entries


def _write_manifest(directory: Path, entries: Iterable[tuple[str, str]]) -> None:
    text = "".join(f"{name} {fname}\n" for name, fname in entries)
    (directory / MANIFEST).write_text(text)


def _load_entries(directory: Path, model_id: str) -> list[ActivationMatrix]:
    layers = []
    for name, fname in _read_manifest(directory):
        fpath = directory / fname
        if not fpath.is_file():
            raise FormatError(f"manifest entry {name!r} points to missing file {fname!r}")
        layers.append(load_matrix(fpath, layer_name=name, model_id=model_id))
    return layers


def load_bundle(directory, model_id: str | None = None) -> MatrixBundle:
    directory = Path(directory)
    model_id = model_id if model_id is not None else directory.name
    return MatrixBundle(model_id, _load_entries(directory, model_id))


def save_bundle(bundle: MatrixBundle, directory, format: str = "binary") -> None:
    _save_entries(bundle.layers, Path(directory), format)


def _save_entries(mats: Sequence[ActivationMatrix], directory: Path, format: str) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    ext = "rsm" if format == "binary" else "txt"
    entries = []
    for i, m in enumerate(mats):
        if not m.layer_name or any(c.isspace() for c in m.layer_name):
            raise FormatError(f"layer name {m.layer_name!r} must be non-empty without whitespace")
        fname = f"{i:03d}_{m.layer_name}.{ext}"
        save_matrix(m, directory / fname, format=format)
        entries.append((m.layer_name, fname))
    _write_manifest(directory, entries)


def save_arrays(arrays: Sequence[tuple[str, np.ndarray]], directory) -> None:
    """Write named arrays (1-D arrays stored as 1 x n) as a manifest directory.

    Unlike a bundle, the arrays may differ in column count.
    """
    mats = [ActivationMatrix(np.atleast_2d(a), layer_name=name) for name, a in arrays]
    _save_entries(mats, Path(directory), "binary")


def load_arrays(directory) -> dict[str, np.ndarray]:
    directory = Path(directory)
    return {m.layer_name: m.data for m in _load_entries(directory, directory.name)}


def bundle_dirs(directory) -> list[str]:
    """Subdirectories of ``directory`` that hold a bundle manifest, sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"{directory} is not a directory")
    return sorted(
        os.path.join(directory, d) for d in os.listdir(directory) if (directory / d / MANIFEST).is_file()
    )
