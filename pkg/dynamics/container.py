"""
The "VCNO" container: flat binary array files plus a JSON `meta` document.

Every array file is laid out as

    magic "VCNO" | u16 version | u8 dtype tag | u8 rank | rank x u64 dims | payload

with all integers little-endian and the payload in row-major little-endian
order. A container is a directory holding `meta.json` and one
`<name>.vcno` file per array. Datasets, checkpoints and episode records all
share this format.
"""
import json
import logging
import os
import struct

import numpy as np
from frozendict import frozendict

from dynamics.exceptions import ContainerFormatError

logger = logging.getLogger(__name__)

MAGIC = b"VCNO"
FORMAT_VERSION = 1
SCHEMA_VERSION = 1
META_FILE = "meta.json"
ARRAY_SUFFIX = ".vcno"

_HEADER = struct.Struct("<4sHBB")
_DIM = struct.Struct("<Q")

DTYPE_TAGS = frozendict({
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<i8"),
    4: np.dtype("u1"),
})
_TAG_FOR_KIND = frozendict({dtype.str: tag for tag, dtype in DTYPE_TAGS.items()})


def encode_array(array):
    """
    Serialize an array into VCNO bytes.

    Args:
        array: A numpy array whose dtype is float32, float64, int64 or uint8.

    Returns:
        The encoded bytes.
    """
    array = np.asarray(array)
    little = array.dtype.newbyteorder("<") if array.dtype.byteorder == ">" else array.dtype
    tag = _TAG_FOR_KIND.get(np.dtype(little).str)
    if tag is None:
        raise ContainerFormatError(f"Unsupported dtype for VCNO container: {array.dtype}")
    if array.ndim > 255:
        raise ContainerFormatError(f"Rank {array.ndim} exceeds the container limit")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, tag, array.ndim)
    dims = b"".join(_DIM.pack(d) for d in array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes(order="C")
    return header + dims + payload


def decode_array(data):
    """Parse VCNO bytes back into a numpy array."""
    if len(data) < _HEADER.size:
        raise ContainerFormatError("Truncated VCNO header")
    magic, version, tag, rank = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ContainerFormatError(f"Bad magic {magic!r}")
    if version > FORMAT_VERSION:
        raise ContainerFormatError(f"Unsupported VCNO version {version}")
    if tag not in DTYPE_TAGS:
        raise ContainerFormatError(f"Unknown dtype tag {tag}")
    offset = _HEADER.size
    shape = []
    for _ in range(rank):
        (dim,) = _DIM.unpack_from(data, offset)
        shape.append(dim)
        offset += _DIM.size
    dtype = DTYPE_TAGS[tag]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - offset != expected:
        raise ContainerFormatError(
            f"Payload holds {len(data) - offset} bytes, header implies {expected}"
        )
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).copy()


def write_array(path, array):
    with open(path, "wb") as f:
        f.write(encode_array(array))


def read_array(path):
    with open(path, "rb") as f:
        return decode_array(f.read())


def save_container(directory, meta, arrays):
    """
    Write a container directory.

    Args:
        directory: Target directory; created if missing.
        meta: JSON-serializable dict. `schema_version` and the array names
            are added to it.
        arrays: Mapping of array name to numpy array.

    Returns:
        The directory path.
    """
    try:
        os.makedirs(directory, exist_ok=True)
        for name, array in arrays.items():
            write_array(os.path.join(directory, name + ARRAY_SUFFIX), array)
        full_meta = dict(meta)
        full_meta["schema_version"] = SCHEMA_VERSION
        full_meta["arrays"] = sorted(arrays)
        with open(os.path.join(directory, META_FILE), "w") as f:
            json.dump(full_meta, f, indent=2, sort_keys=True)
            f.write("\n")
    except OSError as e:
        raise OSError(f"Failed to write container at {directory}: {e}") from e
    logger.debug(f"saved container {directory} with arrays {sorted(arrays)}")
    return directory


def load_meta(directory):
    with open(os.path.join(directory, META_FILE)) as f:
        meta = json.load(f)
    if meta.get("schema_version", 0) > SCHEMA_VERSION:
        raise ContainerFormatError(
            f"Container schema {meta['schema_version']} is newer than {SCHEMA_VERSION}"
        )
    return meta


def load_container(directory):
    """
    Read a container directory written by `save_container`.

    Returns:
        A `(meta, arrays)` tuple.
    """
    meta = load_meta(directory)
    arrays = {
        name: read_array(os.path.join(directory, name + ARRAY_SUFFIX))
        for name in meta.get("arrays", [])
    }
    return meta, arrays
