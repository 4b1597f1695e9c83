"""Binary and JSON serialization.

Two formats cover everything:

* Tensor files ("SYT3"): magic bytes, little-endian u64 dimension, then
  dim^3 float64 entries in row-major order. Bit-exact round trips.
* Section containers ("SYC1"): magic bytes, u32 section count, then per
  section a length-prefixed ascii name, u8 ndim, u64 shape, float64 data.
  Whitening maps (sections W, B, EIGVALS) and moment sets (M1, M2, M3,
  PROV) share this container.

A JSON debug form {"dim": k, "entries": [...]} exists for tensors; JSON
floats round-trip exactly through Python's repr.
"""

import json
import struct

import numpy as np

from .errors import SerializationError
from .moments import MomentSet, Provenance
from .tensor3 import SymTensor3
from .whitening import WhiteningMap

_TENSOR_MAGIC = b"SYT3"
_CONTAINER_MAGIC = b"SYC1"


def save_tensor3(path, T: SymTensor3) -> None:
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<Q", T.dim))
        fh.write(np.ascontiguousarray(T.entries, dtype="<f8").tobytes())


def load_tensor3(path) -> SymTensor3:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _TENSOR_MAGIC:
            raise SerializationError(f"bad magic {magic!r}, expected {_TENSOR_MAGIC!r}")
        (dim,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != dim**3:
        raise SerializationError(f"expected {dim**3} entries, found {data.size}")
    return SymTensor3(data.reshape(dim, dim, dim).astype(np.float64))


def tensor3_to_json(T: SymTensor3) -> str:
    return json.dumps({"dim": T.dim, "entries": T.entries.ravel().tolist()})


def tensor3_from_json(text: str) -> SymTensor3:
    obj = json.loads(text)
    dim = int(obj["dim"])
    entries = np.asarray(obj["entries"], dtype=np.float64)
    if entries.size != dim**3:
        raise SerializationError("entry count does not match dim^3")
    return SymTensor3(entries.reshape(dim, dim, dim))


def save_arrays(path, arrays: dict) -> None:
    """Write named float64 arrays to a section container, order preserved."""
    with open(path, "wb") as fh:
        fh.write(_CONTAINER_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            raw = name.encode("ascii")
            if not 1 <= len(raw) <= 255:
                raise SerializationError(f"bad section name {name!r}")
            arr = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
            fh.write(struct.pack("<B", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for s in arr.shape:
                fh.write(struct.pack("<Q", s))
            fh.write(arr.tobytes())


def load_arrays(path) -> dict:
    out: dict = {}
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CONTAINER_MAGIC:
            raise SerializationError(f"bad magic {magic!r}, expected {_CONTAINER_MAGIC!r}")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<B", fh.read(1))
            name = fh.read(name_len).decode("ascii")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<Q", fh.read(8))[0] for _ in range(ndim))
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(8 * n), dtype="<f8")
            if data.size != n:
                raise SerializationError(f"truncated section {name!r}")
            out[name] = data.reshape(shape).astype(np.float64)
    return out


def save_whitening_map(path, wmap: WhiteningMap) -> None:
    save_arrays(path, {"W": wmap.W, "B": wmap.B, "EIGVALS": wmap.eigvals_used})


def load_whitening_map(path) -> WhiteningMap:
    arrs = load_arrays(path)
    try:
        W, B, eig = arrs["W"], arrs["B"], arrs["EIGVALS"]
    except KeyError as exc:
        raise SerializationError(f"missing section {exc}") from None
    return WhiteningMap(W=W, B=B, eigvals_used=eig, rank_k=W.shape[1])


def save_moment_set(path, ms: MomentSet) -> None:
    arrs = {"M2": ms.m2, "M3": ms.m3.entries}
    if ms.m1 is not None:
        arrs["M1"] = ms.m1
    is_emp = 1.0 if ms.provenance.kind == "empirical" else 0.0
    arrs["PROV"] = np.array([is_emp, float(ms.provenance.sample_count or 0)])
    save_arrays(path, arrs)


def load_moment_set(path) -> MomentSet:
    arrs = load_arrays(path)
    try:
        m2, m3 = arrs["M2"], arrs["M3"]
    except KeyError as exc:
        raise SerializationError(f"missing section {exc}") from None
    prov_raw = arrs.get("PROV", np.zeros(2))
    if prov_raw[0] > 0:
        prov = Provenance.empirical(int(prov_raw[1]))
    else:
        prov = Provenance.population()
    return MomentSet(m2=m2, m3=SymTensor3(m3), m1=arrs.get("M1"), provenance=prov)


def save_samples_csv(path, X: np.ndarray) -> None:
    """Rows of float64 samples; %.17g preserves every double exactly."""
    np.savetxt(path, np.atleast_2d(np.asarray(X, dtype=np.float64)), fmt="%.17g", delimiter=",")


def load_samples_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))


def save_int_csv(path, X: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(X, dtype=np.int64)), fmt="%d", delimiter=",")


def load_int_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.int64))
