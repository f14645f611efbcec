"""On-disk formats: KGE1 embeddings, score matrices, weights, walks, frequencies."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core import DataError
from .models import KIND_CODES, EmbeddingTable, GeometryConfig

MAGIC = b"KGE1"
VERSION = 1
_HEADER = struct.Struct("<4s6Id")
_KINDS_BY_CODE = {v: k for k, v in KIND_CODES.items()}


class FormatError(DataError):
    pass


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def save_embeddings(table: EmbeddingTable, path):
    """Write ``table`` in KGE1 layout plus a ``key=value`` sidecar."""
    g = table.geometry
    ent = np.ascontiguousarray(table.entity_matrix, dtype="<f4")
    rel = np.ascontiguousarray(table.relation_params, dtype="<f4")
    header = _HEADER.pack(
        MAGIC, VERSION, KIND_CODES[g.model_kind], ent.shape[0], rel.shape[0],
        ent.shape[1], rel.shape[1], float(g.gamma),
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(ent.tobytes())
        fh.write(rel.tobytes())
    lines = [
        f"model_kind={g.model_kind}",
        f"hidden_size={g.hidden_size}",
        f"gamma={g.gamma!r}",
        f"norm_p={g.norm_p}",
        f"ote_size={g.ote_size}",
    ]
    meta_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_meta(path):
    mp = meta_path(path)
    if not mp.exists():
        return {}
    out = {}
    for line in mp.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def load_embeddings(path) -> EmbeddingTable:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such embedding file: {path}")
    blob = path.read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} of {_HEADER.size} bytes)")
    magic, version, code, n_ent, n_rel, ent_dim, rel_dim, gamma = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    if code not in _KINDS_BY_CODE:
        raise FormatError(f"{path}: unknown model kind code {code}")
    expected = _HEADER.size + 4 * (n_ent * ent_dim + n_rel * rel_dim)
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    kind = _KINDS_BY_CODE[code]
    meta = _read_meta(path)
    if meta.get("model_kind", kind) != kind:
        raise FormatError(f"{path}: sidecar says {meta['model_kind']}, header says {kind}")
    ote = int(meta["ote_size"]) if "ote_size" in meta else None
    if ote is None:
        ote = rel_dim // ent_dim - 1 if kind == "NOTE" and ent_dim else 20
    norm_p = int(meta["norm_p"]) if "norm_p" in meta else None
    hidden = int(meta.get("hidden_size", ent_dim))
    try:
        geometry = GeometryConfig(kind, hidden_size=hidden, gamma=gamma, norm_p=norm_p, ote_size=ote)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if (geometry.entity_dim, geometry.relation_dim) != (ent_dim, rel_dim):
        raise FormatError(
            f"{path}: stored dims ({ent_dim}, {rel_dim}) disagree with geometry "
            f"({geometry.entity_dim}, {geometry.relation_dim})"
        )
    off = _HEADER.size
    ent = np.frombuffer(blob, dtype="<f4", count=n_ent * ent_dim, offset=off)
    off += 4 * n_ent * ent_dim
    rel = np.frombuffer(blob, dtype="<f4", count=n_rel * rel_dim, offset=off)
    return EmbeddingTable(
        ent.reshape(n_ent, ent_dim).astype(np.float32),
        rel.reshape(n_rel, rel_dim).astype(np.float32),
        geometry,
    )


def node_embedding_table(matrix: np.ndarray) -> EmbeddingTable:
    """Wrap DeepWalk vectors as a relation-less table (kind code 4)."""
    matrix = np.asarray(matrix, dtype=np.float32)
    geometry = GeometryConfig("DeepWalk", hidden_size=matrix.shape[1])
    return EmbeddingTable(matrix, np.zeros((0, 0), dtype=np.float32), geometry)


def _fmt(x) -> str:
    return repr(float(x))


def save_score_matrix(matrix, path):
    """Header ``# queries=Q candidates=C kind=NAME`` then one row per query.

    ``candidates`` is ``-1`` when rows have different lengths.
    """
    width = matrix.uniform_width()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# queries={matrix.query_count} candidates={-1 if width is None else width} "
                 f"kind={matrix.source_name}\n")
        for row in matrix.rows():
            fh.write(" ".join(_fmt(v) for v in row) + "\n")


def load_score_matrix(path):
    from .ensemble import ScoreMatrix

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such score file: {path}")
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise FormatError(f"{path}: missing header line")
        fields = dict(part.split("=", 1) for part in header[1:].split())
        rows = [np.array(line.split(), dtype=np.float64) for line in fh if line.strip()]
    if int(fields["queries"]) != len(rows):
        raise FormatError(f"{path}: header declares {fields['queries']} queries, found {len(rows)}")
    return ScoreMatrix.from_rows(fields.get("kind", path.stem), rows)


def save_weights(weights, path, extra_comments=()):
    with open(path, "w", encoding="utf-8") as fh:
        if weights.mrr is not None:
            fh.write(f"# validation_mrr={_fmt(weights.mrr)}\n")
        for line in extra_comments:
            fh.write(f"# {line}\n")
        for name in weights.order:
            fh.write(f"{name} {_fmt(weights.entries[name])}\n")


def load_weights(path):
    from .ensemble import EnsembleWeights

    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no weights file at {path}; run the ensemble command first")
    entries, order, mrr_value = {}, [], None
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            if key == "validation_mrr":
                mrr_value = float(value)
            continue
        name, value = line.split()
        entries[name] = float(value)
        order.append(name)
    return EnsembleWeights(entries, order, mrr_value)


def save_walks(walks, path):
    with open(path, "w", encoding="utf-8") as fh:
        for walk in walks:
            fh.write(" ".join(str(int(n)) for n in walk) + "\n")


def load_walks(path):
    with open(path, encoding="utf-8") as fh:
        return [[int(x) for x in line.split()] for line in fh if line.strip()]


def save_frequencies(freq: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ent in sorted(freq):
            fh.write(f"{ent}\t{freq[ent]}\n")


def load_frequencies(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ent, count = line.split()
                out[int(ent)] = int(count)
    return out
