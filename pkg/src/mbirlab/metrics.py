"""Reconstruction quality metrics and their CSV table."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import Image
from .errors import ShapeError

CSV_HEADER = ("name", "psnr_db", "rmse", "runtime_seconds", "iterations")


def rmse(x: Image, ref: Image) -> float:
    if (x.rows, x.cols, x.frames) != (ref.rows, ref.cols, ref.frames):
        raise ShapeError("images differ in shape")
    return float(np.sqrt(np.mean((x.data - ref.data) ** 2)))


def psnr(x: Image, ref: Image, peak=1.0) -> float:
    """20 log10(peak / rmse); infinite for an exact match."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = rmse(x, ref)
    if err == 0.0:
        return float("inf")
    return float(20.0 * np.log10(peak / err))


@dataclass
class MetricsRow:
    name: str
    psnr_db: float
    rmse: float
    runtime_seconds: float
    iterations: int

    def as_csv_row(self):
        p = "inf" if np.isinf(self.psnr_db) else repr(float(self.psnr_db))
        return (self.name, p, repr(float(self.rmse)),
                repr(float(self.runtime_seconds)), str(self.iterations))


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv_row())


def read_metrics_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != CSV_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        for rec in reader:
            out.append(MetricsRow(rec[0], float(rec[1]), float(rec[2]),
                                  float(rec[3]), int(rec[4])))
    return out
