"""Reader for the canonical simulation trace CSV format.

A trace is a header row of column names followed by one sample per row;
values are plain decimal text. This module knows only column names, never
scenario semantics.
"""

import io

import numpy as np


class MissingColumn(ValueError):
    """A required column is absent from the trace header."""

    def __init__(self, name, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"missing column '{name}'{where}")
        self.name = name


class TraceData:
    def __init__(self, columns, data, path=None):
        self.columns = list(columns)
        self.data = np.asarray(data, dtype=float)
        self.path = path

    @classmethod
    def read(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            if not header:
                raise ValueError(f"{path}: empty trace file")
            columns = header.split(",")
            body = fh.read()
        if body.strip():
            data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
        else:
            data = np.empty((0, len(columns)))
        return cls(columns, data, path=path)

    @property
    def n_samples(self):
        return self.data.shape[0]

    @property
    def t(self):
        return self.column("t")

    def has(self, name):
        return name in self.columns

    def column(self, name):
        if name not in self.columns:
            raise MissingColumn(name, self.path)
        return self.data[:, self.columns.index(name)]

    def channels(self, prefix):
        """Columns named prefix_1, prefix_2, ... in channel order."""
        names = []
        i = 1
        while f"{prefix}_{i}" in self.columns:
            names.append(f"{prefix}_{i}")
            i += 1
        return names

    def require(self, *names):
        for name in names:
            if name not in self.columns:
                raise MissingColumn(name, self.path)
