"""Dual-mode hardware abstraction: chip and array parameters read from TOML or JSON."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_SWITCH_METHOD = "change the input of global IA and IA'"

_REQUIRED = ("n_cim", "grid", "array_h", "array_w", "mem_data_per_cycle", "buffer_bytes",
             "switch_m_to_c_cycles", "switch_c_to_m_cycles", "weight_write_cycles",
             "read_cycles", "write_cycles")
_OPTIONAL = ("op_per_cycle", "main_data_per_cycle", "extern_bw_bits", "internal_bw_bits",
             "element_bits", "switch_method")
_LATENCIES = ("switch_m_to_c_cycles", "switch_c_to_m_cycles", "weight_write_cycles",
              "read_cycles", "write_cycles")


class HardwareConfigError(ValueError):
    pass


@dataclass(frozen=True)
class HardwareAbstraction:
    n_cim: int
    grid: tuple[int, int]
    array_h: int
    array_w: int
    op_per_cycle: int
    mem_data_per_cycle: int
    main_data_per_cycle: int
    buffer_bytes: int
    switch_m_to_c_cycles: int
    switch_c_to_m_cycles: int
    weight_write_cycles: int
    read_cycles: int
    write_cycles: int
    element_bits: int = 8
    extern_bw_bits: int | None = None
    internal_bw_bits: int | None = None
    switch_method: str = DEFAULT_SWITCH_METHOD
    provenance: tuple[tuple[str, str], ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        for name in ("n_cim", "array_h", "array_w", "op_per_cycle", "mem_data_per_cycle",
                     "main_data_per_cycle", "buffer_bytes", "element_bits"):
            _positive(name, getattr(self, name))
        for name in _LATENCIES:
            _non_negative(name, getattr(self, name))
        rows, cols = self.grid
        _positive("grid rows", rows)
        _positive("grid cols", cols)
        if rows * cols != self.n_cim:
            raise HardwareConfigError(
                f"grid {rows}x{cols} holds {rows * cols} arrays but n_cim = {self.n_cim}")
        if self.element_bits % 8:
            raise HardwareConfigError("element_bits must be a multiple of 8")

    @property
    def array_cells(self) -> int:
        return self.array_h * self.array_w

    @property
    def element_bytes(self) -> int:
        return self.element_bits // 8

    def coord(self, index: int) -> tuple[int, int]:
        """Row-major array index -> (x, y)."""
        return divmod(index, self.grid[1])

    def in_grid(self, addr: tuple[int, int]) -> bool:
        x, y = addr
        return 0 <= x < self.grid[0] and 0 <= y < self.grid[1]

    def coords(self) -> list[tuple[int, int]]:
        return [self.coord(i) for i in range(self.n_cim)]

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d.pop("provenance")
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _positive(name: str, v: Any) -> None:
    if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
        raise HardwareConfigError(f"{name} must be a positive integer, got {v!r}")


def _non_negative(name: str, v: Any) -> None:
    if not isinstance(v, int) or isinstance(v, bool) or v < 0:
        raise HardwareConfigError(f"{name} must be a non-negative integer, got {v!r}")


def hw_from_dict(raw: dict[str, Any]) -> HardwareAbstraction:
    unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
    if unknown:
        raise HardwareConfigError(f"unknown keys {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in raw]
    if missing:
        raise HardwareConfigError(f"missing keys {missing}")
    grid = raw["grid"]
    if not (isinstance(grid, (list, tuple)) and len(grid) == 2):
        raise HardwareConfigError(f"grid must be [rows, cols], got {grid!r}")

    notes = []
    element_bits = raw.get("element_bits", 8)
    if "element_bits" not in raw:
        notes.append(("element_bits", "default 8"))
    _positive("element_bits", element_bits)

    op_per_cycle = raw.get("op_per_cycle")
    if op_per_cycle is None:
        _positive("array_h", raw["array_h"])
        _positive("array_w", raw["array_w"])
        op_per_cycle = raw["array_h"] * raw["array_w"]
        notes.append(("op_per_cycle", "derived: array_h * array_w"))

    main = raw.get("main_data_per_cycle")
    if main is None:
        if "extern_bw_bits" not in raw or "internal_bw_bits" not in raw:
            raise HardwareConfigError(
                "main_data_per_cycle missing and cannot be derived without "
                "extern_bw_bits and internal_bw_bits")
        _non_negative("extern_bw_bits", raw["extern_bw_bits"])
        _non_negative("internal_bw_bits", raw["internal_bw_bits"])
        main = (raw["extern_bw_bits"] + raw["internal_bw_bits"]) // element_bits
        notes.append(("main_data_per_cycle",
                      "derived: (extern_bw_bits + internal_bw_bits) // element_bits"))

    return HardwareAbstraction(
        n_cim=raw["n_cim"],
        grid=(grid[0], grid[1]),
        array_h=raw["array_h"],
        array_w=raw["array_w"],
        op_per_cycle=op_per_cycle,
        mem_data_per_cycle=raw["mem_data_per_cycle"],
        main_data_per_cycle=main,
        buffer_bytes=raw["buffer_bytes"],
        switch_m_to_c_cycles=raw["switch_m_to_c_cycles"],
        switch_c_to_m_cycles=raw["switch_c_to_m_cycles"],
        weight_write_cycles=raw["weight_write_cycles"],
        read_cycles=raw["read_cycles"],
        write_cycles=raw["write_cycles"],
        element_bits=element_bits,
        extern_bw_bits=raw.get("extern_bw_bits"),
        internal_bw_bits=raw.get("internal_bw_bits"),
        switch_method=raw.get("switch_method", DEFAULT_SWITCH_METHOD),
        provenance=tuple(notes),
    )


def load_hw(path: str | Path) -> HardwareAbstraction:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".toml":
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise HardwareConfigError(f"{path}: cannot parse: {exc}") from exc
    if not isinstance(raw, dict):
        raise HardwareConfigError(f"{path}: top level must be a table")
    return hw_from_dict(raw)
