"""Deterministic output formats: CSV tables, P5 masks/heatmaps, JSON manifests.

Numbers are rendered with repr-faithful %.17g formatting so that identical
inputs always produce byte-identical files, which is what the determinism
guarantees are asserted against.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import subprocess
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .regions import Grid


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def write_table_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating))
                              else str(v) for v in row))
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def write_value_field_csv(path, field) -> None:
    grid = field.grid
    centers = grid.centers()
    header = [f"x{k + 1}" for k in range(grid.dim)] + ["value", "std_err", "trunc_bound"]
    vals = field.values.ravel()
    ses = field.std_errs.ravel()
    tb = field.truncation_bound.ravel()
    rows = (list(centers[i]) + [vals[i], ses[i], tb[i]] for i in range(len(centers)))
    write_table_csv(path, header, rows)


def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def write_mask_pgm(path, mask: np.ndarray, grid: Grid) -> None:
    """Binary P5 with 255 inside the region, plus a bounding-box sidecar."""
    mask = np.asarray(mask, bool)
    if mask.ndim != 2:
        raise ValueError("PGM masks are two-dimensional")
    data = (mask.astype(np.uint8) * 255).tobytes()
    header = f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data)
    _sidecar(path).write_bytes(json.dumps(
        {"lower": list(grid.lower), "upper": list(grid.upper),
         "counts": list(grid.counts), "kind": "mask"},
        sort_keys=True, indent=2).encode("ascii"))


def write_heatmap_pgm(path, values: np.ndarray, grid: Grid) -> None:
    values = np.asarray(values, float)
    if values.ndim != 2:
        raise ValueError("PGM heatmaps are two-dimensional")
    lo, hi = float(values.min()), float(values.max())
    scaled = np.zeros_like(values) if hi <= lo else (values - lo) / (hi - lo)
    data = np.round(scaled * 255).astype(np.uint8).tobytes()
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data)
    _sidecar(path).write_bytes(json.dumps(
        {"lower": list(grid.lower), "upper": list(grid.upper),
         "counts": list(grid.counts), "kind": "heatmap",
         "value_min": lo, "value_max": hi},
        sort_keys=True, indent=2).encode("ascii"))


def read_mask_pgm(path) -> tuple[np.ndarray, Grid]:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError("expected a binary P5 file")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while raw[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1   # single whitespace after maxval
    width, height, maxval = fields
    if maxval > 255:
        raise ValueError("16-bit PGM not supported")
    pixels = np.frombuffer(raw[pos:pos + width * height], np.uint8)
    mask = (pixels >= 128).reshape(height, width)
    meta = json.loads(_sidecar(path).read_text())
    grid = Grid(lower=tuple(meta["lower"]), upper=tuple(meta["upper"]),
                counts=tuple(meta["counts"]))
    if tuple(grid.counts) != mask.shape:
        raise ValueError("sidecar counts disagree with PGM dimensions")
    return mask, grid


def config_digest(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def git_describe(cwd=".") -> str | None:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, cwd=cwd, timeout=5)
        return out.stdout.strip() or None
    except (OSError, subprocess.SubprocessError):
        return None


def write_manifest(path, payload: dict) -> None:
    Path(path).write_bytes(json.dumps(payload, sort_keys=True, indent=2,
                                      default=str).encode("ascii"))


@contextmanager
def atomic_bundle(final_dir):
    """Stage outputs in a temp dir, then rename into place in one move."""
    final_dir = Path(final_dir)
    final_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".stage-", dir=final_dir.parent))
    try:
        yield tmp
        if final_dir.exists():
            shutil.rmtree(final_dir)
        os.rename(tmp, final_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
