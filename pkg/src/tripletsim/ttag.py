"""Binary time-tag file format.

Little-endian layout:

    offset 0   magic   4 bytes  "TTAG"
    offset 4   version u16      currently 1
    offset 6   resolution u64   femtoseconds per tick
    offset 14  count   u64      number of records
    offset 22  records          count x (channel u8, timestamp u64)

Timestamps are ticks since run start and must be non-decreasing; the header
resolution makes files self-describing.  Writes go through a temp file and
an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import TtagFormatError
from .simulate import TimeTagStream

__all__ = ["read_ttag", "write_ttag", "TTAG_MAGIC", "TTAG_VERSION"]

TTAG_MAGIC = b"TTAG"
TTAG_VERSION = 1
_HEADER = struct.Struct("<4sHQQ")
_RECORD_DTYPE = np.dtype([("channel", "<u1"), ("timestamp", "<u8")])
RECORD_SIZE = _RECORD_DTYPE.itemsize  # 9 bytes


def write_ttag(path, stream: TimeTagStream) -> None:
    """Serialize a stream; atomic (temp file + rename) and byte-deterministic."""
    if len(stream.timestamps) and int(stream.timestamps.min()) < 0:
        raise ValueError("timestamps must be >= 0 for serialization")
    resolution_fs = int(round(stream.resolution_s * 1e15))
    if resolution_fs <= 0:
        raise ValueError("resolution below 1 fs cannot be stored")
    records = np.empty(len(stream.timestamps), dtype=_RECORD_DTYPE)
    records["channel"] = stream.channels
    records["timestamp"] = stream.timestamps.astype(np.uint64)
    header = _HEADER.pack(TTAG_MAGIC, TTAG_VERSION, resolution_fs, len(records))

    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".ttag-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(records.tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def read_ttag(path) -> TimeTagStream:
    """Parse a file back into a stream, validating structure and ordering."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TtagFormatError(
            f"truncated header: file ends at byte {len(blob)}, need {_HEADER.size}",
            byte_offset=len(blob),
        )
    magic, version, resolution_fs, count = _HEADER.unpack_from(blob, 0)
    if magic != TTAG_MAGIC:
        raise TtagFormatError(
            f"bad magic {magic!r} at byte offset 0", byte_offset=0
        )
    if version != TTAG_VERSION:
        raise TtagFormatError(
            f"unsupported format version {version} at byte offset 4", byte_offset=4
        )
    if resolution_fs == 0:
        raise TtagFormatError(
            "zero tick resolution at byte offset 6", byte_offset=6
        )
    payload = len(blob) - _HEADER.size
    expected = count * RECORD_SIZE
    if payload != expected:
        bad = _HEADER.size + (payload // RECORD_SIZE) * RECORD_SIZE
        raise TtagFormatError(
            f"payload holds {payload} bytes but header promises {count} records "
            f"({expected} bytes); file breaks at byte offset {min(bad, len(blob))}",
            byte_offset=min(bad, len(blob)),
        )
    records = np.frombuffer(blob, dtype=_RECORD_DTYPE, count=count, offset=_HEADER.size)
    timestamps = records["timestamp"].astype(np.int64)
    if len(timestamps):
        bad = np.nonzero(np.diff(timestamps) < 0)[0]
        if bad.size:
            k = int(bad[0]) + 1
            raise TtagFormatError(
                f"timestamps decrease at record {k} (byte offset {_HEADER.size + k * RECORD_SIZE})",
                byte_offset=_HEADER.size + k * RECORD_SIZE,
            )
    return TimeTagStream(
        resolution_s=resolution_fs * 1e-15,
        channels=records["channel"].copy(),
        timestamps=timestamps,
    )
