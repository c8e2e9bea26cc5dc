"""Minimal PLY reader/writer.

Covers the subset this toolkit exchanges: ASCII and binary little-endian
input, binary little-endian output, scalar vertex properties of any width,
and a single list property per face element. Anything fancier (big-endian,
mixed list/scalar elements) is out of scope and raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_PLY_TO_NUMPY = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

_NUMPY_TO_PLY = {
    "int8": "char", "uint8": "uchar",
    "int16": "short", "uint16": "ushort",
    "int32": "int", "uint32": "uint",
    "float32": "float", "float64": "double",
}


class PlyError(ValueError):
    pass


@dataclass
class _ElementSpec:
    name: str
    count: int
    # scalar properties: list of (name, numpy typecode)
    scalars: list = field(default_factory=list)
    # at most one list property: (name, count typecode, item typecode)
    list_prop: tuple | None = None


@dataclass
class PlyFile:
    comments: list
    elements: dict  # element name -> dict of property name -> ndarray


def _parse_header(f) -> tuple[str, list[_ElementSpec], list[str]]:
    magic = f.readline().strip()
    if magic != b"ply":
        raise PlyError("not a PLY file")
    fmt = None
    comments: list[str] = []
    specs: list[_ElementSpec] = []
    while True:
        line = f.readline()
        if not line:
            raise PlyError("unexpected end of header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens:
            continue
        kw = tokens[0]
        if kw == "format":
            if tokens[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported PLY format {tokens[1]!r}")
            fmt = tokens[1]
        elif kw == "comment":
            comments.append(line.decode("ascii", errors="replace")[len("comment"):].strip())
        elif kw == "element":
            specs.append(_ElementSpec(name=tokens[1], count=int(tokens[2])))
        elif kw == "property":
            if not specs:
                raise PlyError("property before element")
            spec = specs[-1]
            if tokens[1] == "list":
                if spec.list_prop is not None:
                    raise PlyError("multiple list properties per element unsupported")
                spec.list_prop = (tokens[4], _PLY_TO_NUMPY[tokens[2]], _PLY_TO_NUMPY[tokens[3]])
            else:
                spec.scalars.append((tokens[2], _PLY_TO_NUMPY[tokens[1]]))
        elif kw == "end_header":
            break
        elif kw == "obj_info":
            continue
        else:
            raise PlyError(f"unsupported header keyword {kw!r}")
    if fmt is None:
        raise PlyError("missing format line")
    return fmt, specs, comments


def _read_binary_element(f, spec: _ElementSpec) -> dict:
    out: dict = {}
    if spec.list_prop is None:
        dtype = np.dtype([(name, "<" + code) for name, code in spec.scalars])
        buf = f.read(dtype.itemsize * spec.count)
        if len(buf) != dtype.itemsize * spec.count:
            raise PlyError(f"truncated element {spec.name!r}")
        rec = np.frombuffer(buf, dtype=dtype, count=spec.count)
        for name, _ in spec.scalars:
            out[name] = np.ascontiguousarray(rec[name])
        return out
    if spec.scalars:
        raise PlyError("mixed scalar/list element unsupported")
    name, ccode, icode = spec.list_prop
    csize = np.dtype(ccode).itemsize
    isize = np.dtype(icode).itemsize
    if spec.count == 0:
        out[name] = np.zeros((0, 3), dtype="<" + icode)
        return out
    head = f.read(csize)
    arity = int(np.frombuffer(head, dtype="<" + ccode)[0])
    # fast path: assume uniform arity, verified by element size; fall back to a row loop
    row = csize + arity * isize
    buf = head + f.read(row * spec.count - csize)
    if len(buf) == row * spec.count:
        rec = np.frombuffer(buf, dtype=[("n", "<" + ccode), ("v", "<" + icode, (arity,))], count=spec.count)
        if np.all(rec["n"] == arity):
            out[name] = np.ascontiguousarray(rec["v"])
            return out
    rows = []
    pos = 0
    for _ in range(spec.count):
        while True:
            if pos + csize > len(buf):
                buf += f.read(1 << 16)
                if pos + csize > len(buf):
                    raise PlyError(f"truncated list element {spec.name!r}")
            n = int(np.frombuffer(buf, dtype="<" + ccode, count=1, offset=pos)[0])
            if pos + csize + n * isize > len(buf):
                buf += f.read(1 << 16)
                continue
            rows.append(np.frombuffer(buf, dtype="<" + icode, count=n, offset=pos + csize).copy())
            pos += csize + n * isize
            break
    out[name] = rows
    return out


def _read_ascii_elements(f, specs: list[_ElementSpec]) -> dict:
    tokens = f.read().split()
    it = iter(tokens)
    elements: dict = {}
    for spec in specs:
        if spec.list_prop is not None and spec.scalars:
            raise PlyError("mixed scalar/list element unsupported")
        if spec.list_prop is None:
            cols = {name: np.empty(spec.count, dtype="<" + code) for name, code in spec.scalars}
            for i in range(spec.count):
                for name, _ in spec.scalars:
                    cols[name][i] = float(next(it))
            elements[spec.name] = cols
        else:
            name, _, icode = spec.list_prop
            rows = []
            for _ in range(spec.count):
                n = int(next(it))
                rows.append(np.array([int(next(it)) for _ in range(n)], dtype="<" + icode))
            elements[spec.name] = {name: rows}
    return elements


def read_ply(path) -> PlyFile:
    """Read a PLY file (ASCII or binary little-endian).

    List properties come back as an (n, k) array when the arity is uniform,
    otherwise as a list of 1-D index arrays.
    """
    with open(path, "rb") as f:
        fmt, specs, comments = _parse_header(f)
        if fmt == "ascii":
            elements = _read_ascii_elements(f, specs)
        else:
            elements = {spec.name: _read_binary_element(f, spec) for spec in specs}
    return PlyFile(comments=comments, elements=elements)


def write_ply(path, vertex_props: dict, faces: np.ndarray | None = None,
              comments: tuple | list = ()) -> None:
    """Write a binary little-endian PLY.

    vertex_props maps property name to a 1-D array; each array's dtype picks
    the on-disk type (use float32/int32 for this toolkit's formats). faces,
    if given, is an (m, 3) integer array written as an int32 list property.
    """
    names = list(vertex_props)
    arrays = [np.asarray(vertex_props[n]) for n in names]
    if not arrays:
        raise PlyError("no vertex properties to write")
    n = len(arrays[0])
    for name, arr in zip(names, arrays):
        if arr.ndim != 1 or len(arr) != n:
            raise PlyError(f"property {name!r} must be 1-D of length {n}")

    lines = ["ply", "format binary_little_endian 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {n}")
    for name, arr in zip(names, arrays):
        tname = _NUMPY_TO_PLY.get(arr.dtype.name)
        if tname is None:
            raise PlyError(f"unsupported dtype {arr.dtype} for property {name!r}")
        lines.append(f"property {tname} {name}")
    if faces is not None:
        faces = np.ascontiguousarray(faces, dtype="<i4")
        lines.append(f"element face {len(faces)}")
        lines.append("property list uchar int vertex_indices")
    lines.append("end_header")

    vdtype = np.dtype([(name, arr.dtype.str) for name, arr in zip(names, arrays)])
    rec = np.empty(n, dtype=vdtype)
    for name, arr in zip(names, arrays):
        rec[name] = arr

    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("ascii"))
        f.write(rec.tobytes())
        if faces is not None:
            frec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", (3,))])
            frec["n"] = 3
            frec["v"] = faces
            f.write(frec.tobytes())


def triangulate_fan(rows) -> np.ndarray:
    """Triangulate polygon index rows by fan; returns an (m, 3) int32 array."""
    if isinstance(rows, np.ndarray) and rows.ndim == 2:
        if rows.shape[1] == 3:
            return np.ascontiguousarray(rows, dtype=np.int32)
        rows = list(rows)
    tris = []
    for poly in rows:
        if len(poly) < 3:
            raise PlyError(f"face with {len(poly)} vertices")
        for i in range(1, len(poly) - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return np.array(tris, dtype=np.int32).reshape(-1, 3)
