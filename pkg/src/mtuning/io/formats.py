"""On-disk formats: binary embedding tables, label/split TSV and word lists.

Embedding file layout (all little-endian)::

    b"OSPE"  version:u16  count:u64  dim:u32
    count x ( id_len:u16  id:utf-8[id_len]  values:f32[dim] )

Every writer goes through a temporary file in the target directory and an
``os.replace``, so readers never observe a half-written artifact.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..core import DataError
from ..encoder import EmbeddingTable, KeyedVectors, TokenTable
from ..tuner import SPLITS, Dataset

MAGIC = b"OSPE"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")
_IDLEN = struct.Struct("<H")
UNKNOWN_LABEL = "UNKNOWN"

EMBEDDINGS_FILE = "embeddings.ospe"
LABELS_FILE = "labels.tsv"
CLASSES_FILE = "classes.txt"
TOKENS_FILE = "tokens.ospe"
LEXICON_FILE = "lexicon.txt"


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def encode_vectors(table: KeyedVectors) -> bytes:
    """Serialise ids and vectors; values are stored as float32."""
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, len(table), table.dim))
    rows = np.asarray(table.vectors, dtype="<f4")
    for key, row in zip(table.keys, rows):
        raw = key.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise DataError(f"id too long to store: {key[:40]!r}...")
        buf.write(_IDLEN.pack(len(raw)))
        buf.write(raw)
        buf.write(row.tobytes())
    return buf.getvalue()


def decode_vectors(data: bytes, expected_dim: int | None = None, cls=KeyedVectors, source="<bytes>"):
    if len(data) < _HEADER.size:
        raise DataError(f"{source}: truncated header ({len(data)} bytes)")
    magic, version, count, dim = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DataError(f"{source}: unsupported format version {version}")
    if dim < 1:
        raise DataError(f"{source}: dimension must be >= 1")
    if expected_dim is not None and dim != expected_dim:
        raise DataError(f"{source}: dimension {dim} disagrees with expected {expected_dim}")
    pos = _HEADER.size
    row_bytes = 4 * dim
    keys, rows = [], []
    for i in range(count):
        if pos + _IDLEN.size > len(data):
            raise DataError(f"{source}: truncated at record {i} of {count}")
        (n,) = _IDLEN.unpack_from(data, pos)
        pos += _IDLEN.size
        if pos + n + row_bytes > len(data):
            raise DataError(f"{source}: truncated at record {i} of {count}")
        try:
            keys.append(data[pos:pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise DataError(f"{source}: record {i} id is not UTF-8") from exc
        pos += n
        rows.append(np.frombuffer(data, dtype="<f4", count=dim, offset=pos))
        pos += row_bytes
    if pos != len(data):
        raise DataError(f"{source}: {len(data) - pos} trailing bytes after {count} records")
    vectors = np.vstack(rows).astype(np.float64) if rows else np.zeros((0, dim))
    return cls(keys, vectors)


def write_embedding_file(path, table: KeyedVectors):
    atomic_write_bytes(path, encode_vectors(table))


def read_embedding_file(path, expected_dim: int | None = None, cls=EmbeddingTable):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return decode_vectors(data, expected_dim, cls, str(path))


def read_token_file(path, expected_dim: int | None = None) -> TokenTable:
    return read_embedding_file(path, expected_dim, TokenTable)


def write_words(path, words, header: str | None = None):
    lines = ([f"# {header}"] if header else []) + list(words)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_words(path) -> list[str]:
    """Non-empty, non-comment lines of a UTF-8 word list, in file order."""
    lines = [ln.strip() for ln in read_text(path).splitlines()]
    return [ln for ln in lines if ln and not ln.startswith("#")]


def encode_labels(dataset: Dataset) -> str:
    out = []
    for sid in dataset.embeddings.keys:
        lab = dataset.labels[sid]
        name = UNKNOWN_LABEL if lab is None else dataset.class_names[lab]
        out.append(f"{sid}\t{name}\t{dataset.splits[sid]}")
    return "\n".join(out) + "\n"


def decode_labels(text: str, class_names, source="<labels>"):
    index = {c: i for i, c in enumerate(class_names)}
    labels, splits = {}, {}
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{source}:{n}: expected 3 tab-separated fields, got {len(parts)}")
        sid, name, split = parts
        if sid in labels:
            raise DataError(f"{source}:{n}: duplicate id {sid!r}")
        if split not in SPLITS:
            raise DataError(f"{source}:{n}: unknown split {split!r}")
        if name == UNKNOWN_LABEL:
            labels[sid] = None
        elif name in index:
            labels[sid] = index[name]
        else:
            raise DataError(f"{source}:{n}: label {name!r} is not a known class")
        splits[sid] = split
    return labels, splits


def dataset_files(dataset: Dataset, tokens: TokenTable | None = None) -> dict[str, bytes]:
    """The exact bytes a dataset directory holds, keyed by file name."""
    files = {
        CLASSES_FILE: ("\n".join(dataset.class_names) + "\n").encode("utf-8"),
        EMBEDDINGS_FILE: encode_vectors(dataset.embeddings),
        LABELS_FILE: encode_labels(dataset).encode("utf-8"),
    }
    if tokens is not None:
        files[TOKENS_FILE] = encode_vectors(tokens)
    return files


def write_dataset(directory, dataset: Dataset, tokens: TokenTable | None = None,
                  lexicon=None) -> dict[str, bytes]:
    directory = Path(directory)
    files = dataset_files(dataset, tokens)
    for name, data in files.items():
        atomic_write_bytes(directory / name, data)
    if lexicon is not None:
        write_words(directory / LEXICON_FILE, lexicon)
    return files


def read_dataset(directory, expected_dim: int | None = None) -> Dataset:
    """Load ``classes.txt``, ``embeddings.ospe`` and ``labels.tsv`` from a directory.

    Embeddings are stored as float32 and widened to float64 on load, so the
    in-memory dataset equals what the file holds rather than what was written.
    """
    directory = Path(directory)
    classes = read_words(directory / CLASSES_FILE)
    table = read_embedding_file(directory / EMBEDDINGS_FILE, expected_dim)
    labels, splits = decode_labels(read_text(directory / LABELS_FILE), classes,
                                   str(directory / LABELS_FILE))
    missing = [k for k in table.keys if k not in labels]
    if missing:
        raise DataError(f"{len(missing)} embedded samples lack labels, e.g. {missing[0]!r}")
    return Dataset(table, classes, labels, splits)


def roundtrip_float32(table: KeyedVectors) -> KeyedVectors:
    """The table exactly as it reads back from disk."""
    return decode_vectors(encode_vectors(table), cls=type(table))
