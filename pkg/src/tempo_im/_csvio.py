"""CSV output with ``#`` metadata headers and fixed 17-digit number formatting."""

from __future__ import annotations

import os
from collections.abc import Iterable, Mapping


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        return "%.17g" % x
    if isinstance(x, complex):
        return "%.17g%+.17gj" % (x.real, x.imag)
    if hasattr(x, "dtype"):
        return fmt(x.item())
    return str(x)


def write_csv(
    path: str | os.PathLike,
    columns: list[str],
    rows: Iterable[Iterable],
    meta: Mapping[str, object] | None = None,
) -> None:
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}: {val}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_csv(path: str | os.PathLike) -> tuple[dict[str, str], list[str], list[list[str]]]:
    meta, cols, rows = {}, [], []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(":")
                meta[key.strip()] = val.strip()
            elif not cols:
                cols = line.split(",")
            elif line:
                rows.append(line.split(","))
    return meta, cols, rows
