"""Entropy measures: per-location visitor entropy and the per-user triple of
random, visit-frequency, and sequence-order entropies."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..core.grid import GridSystem, encode_points
from ..errors import EmptyInputError


def location_entropies(df: pd.DataFrame, grid: GridSystem) -> dict:
    """log2(distinct visitors) per visited cell; unvisited cells are omitted."""
    if df.empty:
        raise EmptyInputError("empty dataset")
    rows, cols = encode_points(grid, df["lat"].to_numpy(), df["lon"].to_numpy())
    visitors: dict[tuple, set] = {}
    for cell_r, cell_c, uid in zip(rows, cols, df["user_id"]):
        visitors.setdefault((int(cell_r), int(cell_c)), set()).add(uid)
    return {cell: float(np.log2(len(users))) for cell, users in visitors.items()}


def random_location_entropy(df: pd.DataFrame, grid: GridSystem, cell: tuple) -> float:
    return location_entropies(df, grid)[cell]


def mean_location_entropy(df: pd.DataFrame, grid: GridSystem) -> float:
    values = location_entropies(df, grid).values()
    return float(np.mean(list(values)))


def _encode_symbols(sequence) -> str:
    """Map arbitrary hashable symbols onto a string for C-speed substring search."""
    codes: dict = {}
    out = []
    for symbol in sequence:
        idx = codes.setdefault(symbol, len(codes))
        out.append(chr(idx))
    return "".join(out)


def lz_match_lengths(sequence) -> list[int]:
    """Lambda_i: length of the shortest substring starting at i that never
    occurs in sequence[:i]; n - i + 1 when every available one does."""
    text = _encode_symbols(sequence)
    n = len(text)
    lengths = []
    for i in range(n):
        prefix = text[:i]
        lo, hi = 1, n - i + 1  # invariant: length lo-1 seen, length hi unseen
        while lo < hi:
            mid = (lo + hi) // 2
            if i + mid <= n and prefix.find(text[i : i + mid]) >= 0:
                lo = mid + 1
            else:
                hi = mid
        lengths.append(lo)
    return lengths


def lz_entropy(sequence) -> float:
    """Entropy-rate estimate n*log2(n) / sum(Lambda_i), in bits per symbol."""
    n = len(sequence)
    if n == 0:
        raise EmptyInputError("cannot estimate entropy of an empty sequence")
    if n == 1:
        return 0.0
    return float(n * np.log2(n) / sum(lz_match_lengths(sequence)))


@dataclass(frozen=True)
class UserEntropies:
    random: float
    uncorrelated: float
    actual: float


def user_entropies(sequence) -> UserEntropies:
    """(E_rand, E_unc, E_act) for one user's time-ordered cell sequence."""
    sequence = list(sequence)
    if not sequence:
        raise EmptyInputError("empty visit sequence")
    counts = np.array(list(Counter(sequence).values()), dtype=float)
    freqs = counts / counts.sum()
    e_rand = float(np.log2(len(counts)))
    e_unc = float(-(freqs * np.log2(freqs)).sum())
    return UserEntropies(random=e_rand, uncorrelated=e_unc, actual=lz_entropy(sequence))


def user_sequences(df: pd.DataFrame, grid: GridSystem) -> dict:
    """Each user's cells concatenated in (day, hour) order."""
    if df.empty:
        raise EmptyInputError("empty dataset")
    work = df.sort_values(["user_id", "day", "hour"], kind="mergesort")
    rows, cols = encode_points(grid, work["lat"].to_numpy(), work["lon"].to_numpy())
    out: dict[str, list] = {}
    for uid, r, c in zip(work["user_id"], rows, cols):
        out.setdefault(str(uid), []).append((int(r), int(c)))
    return out
