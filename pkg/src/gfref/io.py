"""CSV ingestion of geostatistical data and access to the shipped fixtures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .designs import SpatialDesign
from .likelihoods import DataVector

__all__ = ["DatasetError", "Dataset", "load_dataset", "fixture_path", "write_dataset", "FIXTURES"]

FIXTURES = ("grid10", "uniform100", "incomplete14", "uniform600_nu15")


class DatasetError(ValueError):
    """Malformed input file; the message carries the offending line numbers."""


@dataclass(frozen=True)
class Dataset:
    data: DataVector
    source: str
    columns: tuple

    @property
    def design(self) -> SpatialDesign:
        return self.data.design

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.data.p


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture CSV (see ``FIXTURES``)."""
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return Path(str(resources.files("gfref") / "data" / f"{name}.csv"))


def load_dataset(path, x="x", y="y", z="z", covariates=None) -> Dataset:
    """Read a CSV with header ``x,y,z[,f2,...]``.

    Every column other than the coordinates and the response is a covariate
    unless ``covariates`` names them explicitly; the intercept is added here.
    Line numbers in errors count the header as line 1.
    """
    path = str(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as err:
        raise DatasetError(f"{path}: cannot open ({err.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        missing = [c for c in (x, y, z) if c not in header]
        if missing:
            raise DatasetError(f"{path}:1: missing column(s) {', '.join(missing)}")
        if covariates is None:
            covariates = [h for h in header if h not in (x, y, z)]
        else:
            absent = [c for c in covariates if c not in header]
            if absent:
                raise DatasetError(f"{path}:1: missing covariate column(s) {', '.join(absent)}")
        cols = [header.index(c) for c in (x, y, z, *covariates)]
        rows, lines = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, found {len(rec)}")
            try:
                vals = [float(rec[j]) for j in cols]
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric value") from None
            if not np.all(np.isfinite(vals)):
                raise DatasetError(f"{path}:{lineno}: missing or non-finite value")
            rows.append(vals)
            lines.append(lineno)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    arr = np.array(rows)
    seen = {}
    for (sx, sy), ln in zip(arr[:, :2], lines):
        key = (sx, sy)
        if key in seen:
            raise DatasetError(f"{path}: duplicate coordinates ({sx:g}, {sy:g}) on lines {seen[key]} and {ln}")
        seen[key] = ln
    X = np.column_stack([np.ones(len(arr)), arr[:, 3:]])
    try:
        design = SpatialDesign(arr[:, :2], X)
    except ValueError as err:
        raise DatasetError(f"{path}: {err}") from None
    return Dataset(DataVector(arr[:, 2], design), path, (x, y, z, *covariates))


def write_dataset(path, data: DataVector, covariate_names=None):
    """Write ``x,y,z[,f2,...]``; the intercept column is not written."""
    X = data.design.covariates[:, 1:]
    names = covariate_names or [f"f{j + 2}" for j in range(X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "z", *names])
        for (sx, sy), zz, row in zip(data.design.locations, data.z, X):
            w.writerow([repr(float(sx)), repr(float(sy)), repr(float(zz)), *(repr(float(v)) for v in row)])
