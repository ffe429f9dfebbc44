"""Named parameter collections with reproducible initialization."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..rng import substream
from .array import DiffArray

PARAM_MAGIC = b"STMM"
PARAM_VERSION = 1


class ModelParams:
    """Ordered mapping name -> DiffArray leaf, with per-name seeded init.

    Each tensor is initialized from a stream derived from (seed, name), so
    adding or reordering parameters never perturbs the others.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self._store: dict[str, DiffArray] = {}

    def __contains__(self, name: str) -> bool:
        return name in self._store

    def __getitem__(self, name: str) -> DiffArray:
        return self._store[name]

    def names(self) -> list[str]:
        return list(self._store)

    def items(self):
        return self._store.items()

    def add(self, name: str, values: np.ndarray) -> DiffArray:
        if name in self._store:
            raise ValidationError(f"duplicate parameter name {name!r}")
        arr = DiffArray(np.asarray(values, dtype=np.float64), requires_grad=True)
        self._store[name] = arr
        return arr

    def glorot(self, name: str, fan_in: int, fan_out: int, shape=None) -> DiffArray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        rng = substream(self.seed, "init", name)
        shape = (fan_in, fan_out) if shape is None else shape
        return self.add(name, rng.uniform(-limit, limit, size=shape))

    def zeros(self, name: str, shape) -> DiffArray:
        return self.add(name, np.zeros(shape))

    def zero_grad(self):
        for arr in self._store.values():
            arr.zero_grad()

    def clone(self) -> "ModelParams":
        out = ModelParams(seed=self.seed)
        for name, arr in self._store.items():
            out.add(name, arr.values.copy())
        return out

    def save(self, path, hyperparameters: dict | None = None) -> None:
        """Binary tensor container plus a JSON manifest of names/shapes."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        manifest = {"seed": self.seed, "tensors": [], "hyperparameters": hyperparameters or {}}
        with path.open("wb") as fh:
            fh.write(PARAM_MAGIC)
            fh.write(struct.pack("<H", PARAM_VERSION))
            fh.write(struct.pack("<I", len(self._store)))
            for name, arr in self._store.items():
                manifest["tensors"].append({"name": name, "shape": list(arr.shape)})
                fh.write(np.ascontiguousarray(arr.values, dtype="<f8").tobytes())
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> tuple["ModelParams", dict]:
        path = Path(path)
        manifest = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
        raw = path.read_bytes()
        if raw[:4] != PARAM_MAGIC:
            raise ValidationError(f"{path}: bad magic {raw[:4]!r}")
        (version,) = struct.unpack_from("<H", raw, 4)
        if version != PARAM_VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        (count,) = struct.unpack_from("<I", raw, 6)
        if count != len(manifest["tensors"]):
            raise ValidationError(f"{path}: tensor count mismatch")
        out = cls(seed=manifest["seed"])
        offset = 10
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            size = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
            out.add(entry["name"], values)
            offset += size * 8
        return out, manifest.get("hyperparameters", {})
