"""STL reading and writing, binary and ASCII.

Binary layout: 80-byte header, little-endian uint32 triangle count,
then 50-byte records of 12 float32 (normal + three vertices) and a
uint16 attribute. STL stores a bare triangle soup, so parsing merges
duplicate vertices (exact equality after quantization to 1e-9 m) to
recover shared-vertex connectivity; the first occurrence's exact
coordinates are kept so that writing back is bit-faithful.
"""

import re

import numpy as np

from .mesh import TriMesh

__all__ = ["parse_stl", "write_stl", "read_stl_file", "write_stl_file"]

_RECORD = np.dtype(
    [("normal", "<f4", (3,)), ("verts", "<f4", (3, 3)), ("attr", "<u2")]
)

_QUANTUM = 1e-9  # metres


def _merge_soup(soup):
    """Triangle soup (3*n_f, 3) to TriMesh with shared vertices."""
    if len(soup) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), validate=False)
    if not np.all(np.isfinite(soup)):
        raise ValueError("non-finite coordinates in STL")
    keys = np.round(soup / _QUANTUM).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    return TriMesh(soup[first], inverse.reshape(-1, 3))


def _looks_ascii(data):
    head = data[:512].lstrip()
    if not head.startswith(b"solid"):
        return False
    # binary headers may start with "solid" too; trust the length test
    if len(data) >= 84:
        count = int(np.frombuffer(data[80:84], dtype="<u4")[0])
        if len(data) == 84 + 50 * count:
            return False
    return True


def _parse_binary(data):
    if len(data) < 84:
        raise ValueError(f"truncated STL: {len(data)} bytes, header needs 84")
    count = int(np.frombuffer(data[80:84], dtype="<u4")[0])
    if len(data) != 84 + 50 * count:
        raise ValueError(
            f"triangle count mismatch: header says {count}, "
            f"payload holds {(len(data) - 84) / 50:.1f} records"
        )
    records = np.frombuffer(data[84:], dtype=_RECORD)
    soup = records["verts"].astype(np.float64).reshape(-1, 3)
    return _merge_soup(soup)


def _parse_ascii(data):
    text = data.decode("latin-1")
    n_facets = len(re.findall(r"\bfacet\s+normal\b", text))
    triples = re.findall(r"\bvertex\s+(\S+)\s+(\S+)\s+(\S+)", text)
    if len(triples) != 3 * n_facets:
        raise ValueError(
            f"triangle count mismatch: {n_facets} facets but {len(triples)} vertices"
        )
    try:
        soup = np.array(triples, dtype=np.float64).reshape(-1, 3)
    except ValueError as exc:
        raise ValueError(f"unparseable vertex coordinate: {exc}") from None
    return _merge_soup(soup)


def parse_stl(data):
    """Parse binary or ASCII STL bytes into a TriMesh.

    Format is detected from the content: a leading "solid" marks ASCII
    unless the byte length matches the binary record layout exactly.
    """
    if isinstance(data, str):
        data = data.encode("latin-1")
    if _looks_ascii(data):
        return _parse_ascii(data)
    return _parse_binary(data)


def write_stl(mesh, format="binary", header=None, name="mesh"):
    """Serialize a TriMesh to STL bytes.

    Parameters
    ----------
    mesh : TriMesh
    format : {"binary", "ascii"}
    header : bytes, optional
        Up to 80 bytes placed in the binary header (tags, config
        hashes); padded with NUL. Ignored for ASCII.
    name : str
        Solid name for the ASCII form.
    """
    tris = mesh.vertices[mesh.faces]
    normals = mesh.face_normals if mesh.n_f else np.zeros((0, 3))

    if format == "binary":
        hdr = (header or b"binary stl")[:80].ljust(80, b"\0")
        rec = np.zeros(mesh.n_f, dtype=_RECORD)
        rec["normal"] = normals.astype("<f4")
        rec["verts"] = tris.astype("<f4")
        return hdr + np.array(mesh.n_f, dtype="<u4").tobytes() + rec.tobytes()

    if format == "ascii":
        out = [f"solid {name}"]
        for (nx, ny, nz), tri in zip(normals, tris):
            out.append(f"  facet normal {nx:.17g} {ny:.17g} {nz:.17g}")
            out.append("    outer loop")
            for x, y, z in tri:
                out.append(f"      vertex {x:.17g} {y:.17g} {z:.17g}")
            out.append("    endloop")
            out.append("  endfacet")
        out.append(f"endsolid {name}")
        return ("\n".join(out) + "\n").encode("ascii")

    raise ValueError(f"unknown STL format {format!r}")


def read_stl_file(path):
    with open(path, "rb") as fh:
        return parse_stl(fh.read())


def write_stl_file(mesh, path, format="binary", header=None, name="mesh"):
    with open(path, "wb") as fh:
        fh.write(write_stl(mesh, format=format, header=header, name=name))
