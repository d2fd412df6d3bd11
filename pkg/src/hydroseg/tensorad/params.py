"""Named parameter storage and the MPAR checkpoint format."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ArgumentError, FormatError
from .core import Tensor

MPAR_MAGIC = b"MPAR"
MPAR_VERSION = 1


class ParamStore:
    """Ordered name -> parameter tensor map with momentum buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.momentum: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise ArgumentError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=self.dtype), requires_grad=True, name=name)
        self.params[name] = t
        self.momentum[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def count(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def state(self) -> dict:
        return {k: t.data.copy() for k, t in self.params.items()}

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore(dtype)
        for k, t in self.params.items():
            out.add(k, t.data)
        return out

    def update(self, other: "ParamStore", prefix: str = ""):
        """Copy every parameter of ``other`` in under ``prefix``."""
        for k, t in other.items():
            self.add(prefix + k, t.data)

    def subset(self, prefix: str) -> "ParamStore":
        out = ParamStore(self.dtype)
        for k, t in self.params.items():
            if k.startswith(prefix):
                out.add(k[len(prefix):], t.data)
        return out

    def equals(self, other: "ParamStore") -> bool:
        return list(self.params) == list(other.params) and all(
            np.array_equal(t.data, other.params[k].data) for k, t in self.params.items()
        )

    # ---------------------------------------------------------------- MPAR

    def save(self, path) -> None:
        chunks = [MPAR_MAGIC, struct.pack("<II", MPAR_VERSION, len(self.params))]
        for name, t in self.params.items():
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise ArgumentError(f"parameter name too long: {name[:40]}...")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<I", t.ndim))
            chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
            chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
        Path(path).write_bytes(b"".join(chunks))

    @classmethod
    def load(cls, path, dtype=np.float32) -> "ParamStore":
        raw = Path(path).read_bytes()
        pos = 0

        def take(n, what):
            nonlocal pos
            if pos + n > len(raw):
                raise FormatError(f"truncated checkpoint while reading {what}", pos)
            chunk = raw[pos:pos + n]
            pos += n
            return chunk

        if take(4, "magic") != MPAR_MAGIC:
            raise FormatError("bad magic, expected b'MPAR'", 0)
        version, count = struct.unpack("<II", take(8, "header"))
        if version != MPAR_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", 4)
        store = cls(dtype)
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2, "name length"))
            name = take(nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", take(4, "rank"))
            shape = struct.unpack(f"<{rank}I", take(4 * rank, "extents"))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(take(4 * n, f"data of {name}"), dtype="<f4").reshape(shape)
            store.add(name, data)
        if pos != len(raw):
            raise FormatError(f"{len(raw) - pos} trailing bytes after last parameter", pos)
        return store
