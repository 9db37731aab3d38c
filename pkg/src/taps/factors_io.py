"""TAPS1 factor files: a JSON header followed by column-major factor blocks.

Binary layout::

    b"TAPS1\\n" | uint64 LE header length | UTF-8 JSON header | f8 LE blocks

The text variant stores the header on line two and one ``repr``-formatted
value per line, which round-trips doubles exactly.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid_basis import BasisConfig, DimensionSpec
from .td import TDField

__all__ = ["FORMAT", "FactorFileError", "dimension_from_dict", "dimension_to_dict", "load_factors", "save_factors"]

FORMAT = "TAPS1"
VERSION = 1
_MAGIC = b"TAPS1\n"
_TEXT_MAGIC = "TAPS1 text"


class FactorFileError(ValueError):
    pass


def dimension_to_dict(d: DimensionSpec) -> dict:
    return {"name": d.name, "role": d.role.value, "domain": [float(d.domain[0]), float(d.domain[1])],
            "n_elements": d.n_elements, "p": d.basis.p, "s": d.basis.s, "a": d.basis.a,
            "dirichlet": list(d.dirichlet_nodes)}


def dimension_from_dict(h: dict) -> DimensionSpec:
    return DimensionSpec(h["name"], h["role"], tuple(h["domain"]), int(h["n_elements"]),
                         BasisConfig(int(h["p"]), h.get("s"), h.get("a")), tuple(h.get("dirichlet", ())))


def _header(field: TDField, dims: dict[str, DimensionSpec], encoding: str) -> dict:
    missing = [d for d in field.dims if d not in dims]
    if missing:
        raise FactorFileError(f"no dimension description for {missing}")
    for d in field.dims:
        if dims[d].n_nodes != field.factors[d].shape[0]:
            raise FactorFileError(f"dimension {d!r}: {dims[d].n_nodes} nodes but factor has "
                                  f"{field.factors[d].shape[0]} rows")
    return {"format": FORMAT, "version": VERSION, "encoding": encoding, "field": field.name,
            "M": field.M, "dims": [dimension_to_dict(dims[d]) for d in field.dims]}


def save_factors(path, field: TDField, dims: dict[str, DimensionSpec], binary: bool = True) -> Path:
    path = Path(path)
    if binary:
        head = json.dumps(_header(field, dims, "f8-le"), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<Q", len(head)))
            fh.write(head)
            for d in field.dims:
                fh.write(np.asarray(field.factors[d], dtype="<f8").tobytes(order="F"))
    else:
        head = json.dumps(_header(field, dims, "text"), sort_keys=True)
        lines = [_TEXT_MAGIC, head]
        for d in field.dims:
            lines.extend(repr(float(v)) for v in field.factors[d].ravel(order="F"))
        path.write_text("\n".join(lines) + "\n")
    return path


def _check_header(h: dict):
    if h.get("format") != FORMAT:
        raise FactorFileError(f"not a {FORMAT} file")
    if h.get("version") != VERSION:
        raise FactorFileError(f"unsupported version {h.get('version')!r}")


def load_factors(path) -> tuple[TDField, dict[str, DimensionSpec]]:
    """Read a factor file; returns the field and the dimensions needed to rebuild its basis."""
    raw = Path(path).read_bytes()
    if raw.startswith(_MAGIC):
        if len(raw) < len(_MAGIC) + 8:
            raise FactorFileError("truncated header")
        (hlen,) = struct.unpack("<Q", raw[len(_MAGIC):len(_MAGIC) + 8])
        start = len(_MAGIC) + 8
        h = json.loads(raw[start:start + hlen].decode())
        _check_header(h)
        data = np.frombuffer(raw, dtype="<f8", offset=start + hlen)
    elif raw.startswith(_TEXT_MAGIC.encode()):
        lines = raw.decode().splitlines()
        h = json.loads(lines[1])
        _check_header(h)
        data = np.array([float(v) for v in lines[2:] if v.strip()])
    else:
        raise FactorFileError(f"{path}: unrecognized file signature")
    M = int(h["M"])
    dims = {dd["name"]: dimension_from_dict(dd) for dd in h["dims"]}
    names = [dd["name"] for dd in h["dims"]]
    expected = sum(dims[n].n_nodes * M for n in names)
    if data.size != expected:
        raise FactorFileError(f"expected {expected} values, found {data.size}")
    factors, pos = {}, 0
    for n in names:
        size = dims[n].n_nodes * M
        factors[n] = data[pos:pos + size].reshape((dims[n].n_nodes, M), order="F").astype(float)
        pos += size
    return TDField(h["field"], tuple(names), factors), dims
