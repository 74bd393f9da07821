"""Measurement ingestion and empirical-density construction.

Input CSVs come in two shapes: complex transmission sweeps with header
``freq_hz,s21_real,s21_imag`` (converted to received power as
|S21|^2 * P_tx) or pre-computed powers with header ``power_mw``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DomainError
from .mixture import MixtureModel, sample as _mixture_sample

__all__ = [
    "S21Record",
    "PowerSamples",
    "EmpiricalPdf",
    "SyntheticData",
    "load_s21_csv",
    "load_power_csv",
    "load_samples",
    "s21_to_power",
    "build_empirical_pdf",
    "synth_generate",
]

S21_HEADER = ["freq_hz", "s21_real", "s21_imag"]
POWER_HEADER = ["power_mw"]


@dataclass(frozen=True)
class S21Record:
    """One complex forward-transmission measurement."""

    frequency_hz: float
    s21: complex

    def __post_init__(self):
        if not (np.isfinite(self.frequency_hz) and self.frequency_hz > 0):
            raise DataError(f"frequency must be finite and positive, got {self.frequency_hz}")
        if not (np.isfinite(self.s21.real) and np.isfinite(self.s21.imag)):
            raise DataError(f"s21 must be finite, got {self.s21}")


@dataclass
class PowerSamples:
    """Received powers in milliwatts, all strictly positive."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise DataError("power samples must be a 1-D array")
        if self.values.size and (not np.all(np.isfinite(self.values)) or np.any(self.values <= 0)):
            raise DataError("power samples must be finite and strictly positive")

    @property
    def n(self) -> int:
        return self.values.size


class EmpiricalPdf:
    """Binned, normalized density estimate of received powers."""

    def __init__(self, bin_edges, densities):
        edges = np.asarray(bin_edges, dtype=float)
        dens = np.asarray(densities, dtype=float)
        if edges.ndim != 1 or dens.ndim != 1 or edges.size != dens.size + 1:
            raise DataError("need B+1 edges for B densities")
        if not np.all(np.isfinite(edges)) or np.any(np.diff(edges) <= 0):
            raise DataError("bin edges must be finite and strictly increasing")
        if not np.all(np.isfinite(dens)) or np.any(dens < 0):
            raise DataError("densities must be finite and non-negative")
        mass = float(np.sum(dens * np.diff(edges)))
        if abs(mass - 1.0) > 1e-9:
            raise DataError(f"densities must integrate to 1, got {mass!r}")
        edges.setflags(write=False)
        dens.setflags(write=False)
        self.bin_edges = edges
        self.densities = dens

    @property
    def bins(self) -> int:
        return self.densities.size

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.widths

    def __eq__(self, other):
        return (
            isinstance(other, EmpiricalPdf)
            and np.array_equal(self.bin_edges, other.bin_edges)
            and np.array_equal(self.densities, other.densities)
        )

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["edge_low", "edge_high", "density"])
            for lo, hi, d in zip(self.bin_edges[:-1], self.bin_edges[1:], self.densities):
                writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(d))])

    @classmethod
    def from_csv(cls, path) -> "EmpiricalPdf":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["edge_low", "edge_high", "density"]:
            raise DataError(f"{path}: expected header edge_low,edge_high,density")
        lo = [float(r[0]) for r in rows[1:]]
        hi = [float(r[1]) for r in rows[1:]]
        dens = [float(r[2]) for r in rows[1:]]
        return cls(np.append(lo, hi[-1]), dens)


def _read_rows(path, header: list[str]):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if [c.strip() for c in first] != header:
            raise DataError(f"{path}: expected header {','.join(header)}, got {','.join(first)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return rows


def _parse_field(raw: str, path, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DataError(f"{path}, line {line}: non-numeric field {raw!r}") from None
    if not np.isfinite(value):
        raise DataError(f"{path}, line {line}: non-finite field {raw!r}")
    return value


def load_s21_csv(path) -> list[S21Record]:
    """Parse a transmission sweep; malformed rows are reported with
    their line number (header is line 1)."""
    records = []
    for i, row in enumerate(_read_rows(path, S21_HEADER)):
        line = i + 2
        if len(row) != 3:
            raise DataError(f"{path}, line {line}: expected 3 fields, got {len(row)}")
        freq = _parse_field(row[0], path, line)
        re = _parse_field(row[1], path, line)
        im = _parse_field(row[2], path, line)
        if freq <= 0:
            raise DataError(f"{path}, line {line}: frequency must be positive")
        records.append(S21Record(freq, complex(re, im)))
    return records


def load_power_csv(path) -> PowerSamples:
    """Parse a pre-computed received-power column."""
    values = []
    for i, row in enumerate(_read_rows(path, POWER_HEADER)):
        line = i + 2
        if len(row) != 1:
            raise DataError(f"{path}, line {line}: expected 1 field, got {len(row)}")
        value = _parse_field(row[0], path, line)
        if value <= 0:
            raise DataError(f"{path}, line {line}: power must be positive")
        values.append(value)
    return PowerSamples(np.asarray(values), label=str(path))


def load_samples(path, p_tx_mw: float = 1.0) -> PowerSamples:
    """Load either CSV shape, converting sweeps to received power."""
    try:
        with open(path, newline="") as fh:
            first = fh.readline().strip()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = [c.strip() for c in first.split(",")]
    if header == POWER_HEADER:
        return load_power_csv(path)
    if header == S21_HEADER:
        samples = s21_to_power(load_s21_csv(path), p_tx_mw)
        samples.label = str(path)
        return samples
    raise DataError(f"{path}: unrecognized header {first!r}")


def s21_to_power(records, p_tx_mw: float = 1.0) -> PowerSamples:
    """Received power |S21|^2 * P_tx per record; zero-magnitude entries
    are dropped with a warning since the log-domain fitters cannot take
    exact zeros."""
    if not (np.isfinite(p_tx_mw) and p_tx_mw > 0):
        raise DomainError(f"p_tx_mw must be finite and positive, got {p_tx_mw}")
    s21 = np.asarray([r.s21 for r in records], dtype=complex)
    powers = np.abs(s21) ** 2 * p_tx_mw
    zero = powers == 0
    if np.any(zero):
        warnings.warn(f"dropped {int(zero.sum())} zero-magnitude sample(s)", stacklevel=2)
        powers = powers[~zero]
    return PowerSamples(powers)


def build_empirical_pdf(samples: PowerSamples, bins: int = 100) -> EmpiricalPdf:
    """Equal-width histogram over [min, max], right-most edge inclusive,
    normalized to integrate to 1."""
    if bins < 2:
        raise DomainError(f"bins must be >= 2, got {bins}")
    x = samples.values
    if x.size == 0:
        raise DataError("no samples to bin")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        raise DataError("degenerate range: all samples equal")
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    densities = counts / (x.size * np.diff(edges))
    return EmpiricalPdf(edges, densities)


@dataclass
class SyntheticData:
    """Synthetic powers together with the mixture that generated them."""

    samples: PowerSamples
    truth: MixtureModel
    seed: int


def synth_generate(model: MixtureModel, n: int, seed: int) -> SyntheticData:
    """Draw n synthetic received powers from a known mixture, keeping
    the ground truth alongside for oracle checks."""
    values = _mixture_sample(model, n, seed)
    return SyntheticData(PowerSamples(values, label=f"synthetic(seed={seed})"), model, seed)
