"""Offline stand-in for the small part of pandas generated scripts use."""

import csv


class DataFrame:
    def __init__(self, data=(), columns=None):
        rows = [list(r) for r in data]
        self.columns = list(columns) if columns else list(range(len(rows[0]) if rows else 0))
        self._cols = {c: [r[i] for r in rows] for i, c in enumerate(self.columns)}
        self._len = len(rows)

    def __len__(self):
        return self._len

    def __getitem__(self, col):
        return self._cols[col]

    def __setitem__(self, col, values):
        if col not in self._cols:
            self.columns.append(col)
        self._cols[col] = list(values)

    def _rows(self):
        for i in range(self._len):
            yield {c: self._cols[c][i] for c in self.columns}

    def apply(self, func, axis=0):
        if axis != 1:
            raise NotImplementedError("only row-wise apply is stubbed")
        return [func(row) for row in self._rows()]

    def to_csv(self, path, index=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(([""] if index else []) + self.columns)
            for i, row in enumerate(self._rows()):
                w.writerow(([i] if index else []) + [row[c] for c in self.columns])
