"""Self-describing tensor container.

Layout (documented here and in the README):

    CGMTENSORS 1\n
    tensor <name> <ndim> <dim0> ... <dimK> <byte-offset>\n   (one per tensor)
    end\n
    <payload>

The header is UTF-8 text; names contain no whitespace. Offsets are byte
positions into the payload, which is the concatenation of all tensors as
little-endian 64-bit floats in row-major order. Writing the same tensors
twice produces byte-identical files.
"""

import numpy as np

MAGIC = "CGMTENSORS 1"


def save_tensors(path, tensors):
    """Write an ordered mapping of name -> array."""
    items = list(tensors.items())
    header = [MAGIC]
    offset = 0
    payload = []
    for name, arr in items:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"tensor name {name!r} contains whitespace")
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        header.append(f"tensor {name} {arr.ndim}{' ' + dims if dims else ''} {offset}")
        payload.append(arr.astype("<f8").tobytes(order="C"))
        offset += arr.size * 8
    header.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        for chunk in payload:
            fh.write(chunk)


def load_tensors(path):
    """Read a container back into an ordered dict of name -> float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    end_marker = b"\nend\n"
    split = blob.find(end_marker)
    if split < 0 or not blob.startswith(MAGIC.encode("utf-8")):
        raise ValueError(f"{path}: not a tensor container")
    header = blob[:split].decode("utf-8").splitlines()[1:]
    payload = blob[split + len(end_marker):]
    out = {}
    for line in header:
        parts = line.split()
        if parts[0] != "tensor" or len(parts) < 4:
            raise ValueError(f"{path}: bad header line {line!r}")
        name = parts[1]
        ndim = int(parts[2])
        shape = tuple(int(d) for d in parts[3:3 + ndim])
        offset = int(parts[3 + ndim])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        out[name] = arr.reshape(shape).astype(np.float64)
    return out
