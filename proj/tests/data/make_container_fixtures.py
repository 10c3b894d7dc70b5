"""Writes the container fixtures used by the tensor-store tests.

Kept independent of the C++ serializer on purpose: the golden file is the
reference the library output is compared against.
"""
import json
import struct


def container(header, payload):
    text = json.dumps(header, separators=(",", ":"), sort_keys=True).encode()
    return struct.pack("<Q", len(text)) + text + payload


def write(name, blob):
    with open(name, "wb") as f:
        f.write(blob)


golden = container(
    {"t": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
    struct.pack("<4f", 1.0, 2.0, 3.0, 4.0),
)
write("golden_2x2_f32.stc", golden)

write(
    "overlapping_offsets.stc",
    container(
        {
            "a": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]},
            "b": {"dtype": "F32", "shape": [2], "data_offsets": [4, 12]},
        },
        struct.pack("<3f", 1.0, 2.0, 3.0),
    ),
)

write(
    "truncated_payload.stc",
    container(
        {"t": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}},
        struct.pack("<2f", 1.0, 2.0),
    ),
)

write(
    "unknown_dtype.stc",
    container(
        {"t": {"dtype": "I32", "shape": [1], "data_offsets": [0, 4]}},
        struct.pack("<i", 7),
    ),
)

write(
    "nan_value.stc",
    container(
        {"t": {"dtype": "F32", "shape": [2], "data_offsets": [0, 8]}},
        struct.pack("<2f", 1.0, float("nan")),
    ),
)
