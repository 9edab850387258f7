#!/usr/bin/env python3
"""Writes tests/fixtures/tiny.embx with struct and zlib only.

The C++ encoder must reproduce these bytes exactly, so keep this writer
independent of the library.
"""
import pathlib
import struct
import zlib

SOURCES = [("alpha", 2), ("beta", 1)]
NUM_CLASSES = 3
LABELS = [0, 2, 1]
GROUPS = [7, -1, 7]
FEATURES = {
    "alpha": [[1.0, -2.5], [0.25, 0.0], [3.5, -0.125]],
    "beta": [[0.5], [-1.0], [2.0]],
}


def build() -> bytes:
    out = bytearray(b"DVME")
    out += struct.pack("<II", 1, len(SOURCES))
    for name, dim in SOURCES:
        raw = name.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw + struct.pack("<I", dim)
    out += struct.pack("<IBQ", NUM_CLASSES, 1, len(LABELS))
    for i, label in enumerate(LABELS):
        out += struct.pack("<Hq", label, GROUPS[i])
        for name, dim in SOURCES:
            out += struct.pack("<%df" % dim, *FEATURES[name][i])
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


if __name__ == "__main__":
    target = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "tiny.embx"
    target.write_bytes(build())
    print(f"wrote {target} ({target.stat().st_size} bytes)")
