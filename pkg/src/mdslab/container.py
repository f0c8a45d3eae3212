"""On-disk tensor container: a text manifest followed by raw binary payload.

Single-tensor files start with the magic line ``mdslab-tensor 1``; multi-
tensor bundles (used for model checkpoints) start with ``mdslab-bundle 1``.
The manifest is plain ``key = value`` text so artifacts stay diffable and
readable from any language; the payload is row-major little-endian.

Supported dtypes: c64 (interleaved float32 real/imag), f32, f64, i64.
complex128 arrays are downcast to c64 on write; float and integer arrays
keep their width (ints are widened to i64).
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

TENSOR_MAGIC = "mdslab-tensor"
BUNDLE_MAGIC = "mdslab-bundle"
FORMAT_VERSION = 1

# container code -> little-endian numpy dtype
_DTYPES = {
    "c64": np.dtype("<c8"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
    "i64": np.dtype("<i8"),
}


class ContainerError(Exception):
    """Base class for tensor-container failures."""


class ContainerVersionError(ContainerError):
    """Unknown magic line or unsupported format version."""


class ContainerFormatError(ContainerError):
    """Manifest is malformed: bad keys, dtype, shape, or axis names."""


class ContainerSizeError(ContainerError):
    """Payload length does not match the declared shape (e.g. truncation)."""


def _storage_dtype(arr: np.ndarray) -> tuple[str, np.ndarray]:
    """Pick the container dtype code for an array, converting if needed."""
    if np.iscomplexobj(arr):
        return "c64", np.ascontiguousarray(arr, dtype=_DTYPES["c64"])
    if arr.dtype == np.float32:
        return "f32", np.ascontiguousarray(arr, dtype=_DTYPES["f32"])
    if np.issubdtype(arr.dtype, np.floating):
        return "f64", np.ascontiguousarray(arr, dtype=_DTYPES["f64"])
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        return "i64", np.ascontiguousarray(arr, dtype=_DTYPES["i64"])
    raise ContainerFormatError(f"unsupported array dtype {arr.dtype}")


def _atomic_write(path: str, blob: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_with_offset(lines: list[str]) -> bytes:
    """Append the ``offset`` line whose value is the final header length.

    The offset value appears inside the header, so the length is found by
    fixed-point iteration over the digit count (converges immediately).
    """
    base = "".join(line + "\n" for line in lines)
    offset = len(base) + len("offset = 0\n")
    while True:
        header = base + f"offset = {offset}\n"
        if len(header) == offset:
            return header.encode("ascii")
        offset = len(header)


def _parse_manifest(blob: bytes, magic: str) -> tuple[dict, int]:
    """Split off the text manifest; returns (key->value dict, payload offset)."""
    # The manifest is pure ASCII ending with the offset line, so decoding a
    # bounded prefix is safe even though the payload is binary.
    head = blob[:65536].decode("ascii", errors="replace")
    first, _, rest = head.partition("\n")
    parts = first.split()
    if len(parts) != 2 or parts[0] != magic:
        raise ContainerVersionError(f"not a {magic} file (magic line {first!r})")
    if parts[1] != str(FORMAT_VERSION):
        raise ContainerVersionError(f"unsupported format version {parts[1]!r}")
    fields: dict[str, list[str]] = {}
    consumed = len(first) + 1
    for line in rest.split("\n"):
        consumed += len(line) + 1
        if "=" not in line:
            raise ContainerFormatError(f"malformed manifest line {line!r}")
        key, _, value = line.partition("=")
        fields.setdefault(key.strip(), []).append(value.strip())
        if key.strip() == "offset":
            break
    else:
        raise ContainerFormatError("manifest missing offset line")
    try:
        offset = int(fields["offset"][0])
    except ValueError:
        raise ContainerFormatError("offset is not an integer") from None
    if offset < consumed:
        raise ContainerFormatError(f"offset {offset} overlaps the manifest")
    return fields, offset


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "":
        return ()
    try:
        shape = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise ContainerFormatError(f"bad shape {text!r}") from None
    if any(d < 0 for d in shape):
        raise ContainerFormatError(f"negative dimension in shape {shape}")
    return shape


def write_tensor(path: str, arr: np.ndarray,
                 axes: tuple[str, ...] | None = None) -> None:
    """Write one array as a container file (atomic replace on success)."""
    arr = np.asarray(arr)
    if axes is None:
        axes = tuple(f"dim{i}" for i in range(arr.ndim))
    if len(axes) != arr.ndim:
        raise ContainerFormatError(
            f"{len(axes)} axis names for a {arr.ndim}-D tensor")
    for name in axes:
        if not name or any(c.isspace() or c == "," for c in name):
            raise ContainerFormatError(f"bad axis name {name!r}")
    code, data = _storage_dtype(arr)
    lines = [
        f"{TENSOR_MAGIC} {FORMAT_VERSION}",
        f"dtype = {code}",
        "shape = " + ",".join(str(d) for d in arr.shape),
        "axes = " + ",".join(axes),
        "byteorder = little",
    ]
    _atomic_write(path, _header_with_offset(lines) + data.tobytes())


def read_tensor(path: str) -> tuple[np.ndarray, tuple[str, ...]]:
    """Read a container file; returns (array, axis names)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, offset = _parse_manifest(blob, TENSOR_MAGIC)
    for key in ("dtype", "shape", "axes", "byteorder"):
        if key not in fields:
            raise ContainerFormatError(f"manifest missing {key!r}")
    if fields["byteorder"][0] != "little":
        raise ContainerFormatError(
            f"unsupported byte order {fields['byteorder'][0]!r}")
    code = fields["dtype"][0]
    if code not in _DTYPES:
        raise ContainerFormatError(f"unknown dtype code {code!r}")
    shape = _parse_shape(fields["shape"][0])
    axes_text = fields["axes"][0]
    axes = tuple(axes_text.split(",")) if axes_text else ()
    if len(axes) != len(shape):
        raise ContainerFormatError(
            f"{len(axes)} axis names for shape {shape}")
    dtype = _DTYPES[code]
    expected = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
    payload = blob[offset:]
    if len(payload) != expected:
        raise ContainerSizeError(
            f"payload is {len(payload)} bytes, shape {shape} as {code} "
            f"needs {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape(shape)
    return arr.copy(), axes


def write_bundle(path: str, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays as one bundle file (checkpoint format).

    The manifest lists, per entry, name dtype shape and the byte offset of
    the entry relative to the payload start; entries are stored contiguous
    in listed order.
    """
    entries = []
    rel = 0
    payload = bytearray()
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise ContainerFormatError(f"bad tensor name {name!r}")
        code, data = _storage_dtype(np.asarray(arr))
        raw = data.tobytes()
        shape_text = ",".join(str(d) for d in data.shape)
        entries.append(f"item = {name} {code} [{shape_text}] {rel}")
        payload += raw
        rel += len(raw)
    lines = [
        f"{BUNDLE_MAGIC} {FORMAT_VERSION}",
        f"count = {len(tensors)}",
        "byteorder = little",
        *entries,
    ]
    _atomic_write(path, _header_with_offset(lines) + bytes(payload))


def read_bundle(path: str) -> dict[str, np.ndarray]:
    """Read a bundle file back into an ordered name -> array dict."""
    with open(path, "rb") as fh:
        blob = fh.read()
    fields, offset = _parse_manifest(blob, BUNDLE_MAGIC)
    if "count" not in fields:
        raise ContainerFormatError("manifest missing 'count'")
    try:
        count = int(fields["count"][0])
    except ValueError:
        raise ContainerFormatError("count is not an integer") from None
    items = fields.get("item", [])
    if len(items) != count:
        raise ContainerFormatError(
            f"manifest declares {count} items but lists {len(items)}")
    payload = blob[offset:]
    out: dict[str, np.ndarray] = {}
    for item in items:
        parts = item.split()
        if len(parts) != 4:
            raise ContainerFormatError(f"malformed item line {item!r}")
        name, code, shape_text, rel_text = parts
        if code not in _DTYPES:
            raise ContainerFormatError(f"unknown dtype code {code!r}")
        if not (shape_text.startswith("[") and shape_text.endswith("]")):
            raise ContainerFormatError(f"malformed shape {shape_text!r}")
        shape = _parse_shape(shape_text[1:-1])
        try:
            rel = int(rel_text)
        except ValueError:
            raise ContainerFormatError(f"bad offset {rel_text!r}") from None
        dtype = _DTYPES[code]
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        chunk = payload[rel:rel + nbytes]
        if len(chunk) != nbytes:
            raise ContainerSizeError(
                f"item {name!r} needs {nbytes} bytes at offset {rel}, "
                f"payload has {len(payload)}")
        if name in out:
            raise ContainerFormatError(f"duplicate tensor name {name!r}")
        out[name] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
    return out
