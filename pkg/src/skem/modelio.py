"""Plain-text persistence for shared-kernel and composite models.

Grammar (whitespace-separated tokens, one record per line, ``#`` comments)::

    model      := "skem-model 1" NL
                  "dimension" M NL
                  "num_components" K NL
                  "num_classes" L NL
                  ( "component" k NL
                    "mean" f{M} NL
                    "covariance" f{M*M} NL ){K}      # row-major
                  "weights" f{K*L} NL                # row-major K x L
                  "end" NL
    composite  := "skem-composite 1" NL
                  "num_groups" G NL
                  ( "group" g NL
                    "features" i+ NL                 # 0-based table columns
                    model ){G}

Reals are written with 17 significant digits in scientific notation so a
round trip reproduces every double exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterator

import numpy as np

from .classifier import CompositeModel
from .errors import ModelFormatError
from .mixture import SharedKernelModel

__all__ = [
    "format_model",
    "parse_model",
    "format_composite",
    "parse_composite",
    "save_model",
    "load_model",
    "save_composite",
    "load_composite",
]

MODEL_HEADER = "skem-model 1"
COMPOSITE_HEADER = "skem-composite 1"


def _fmt(values) -> str:
    return " ".join(f"{float(v):.16e}" for v in np.ravel(values))


def format_model(model: SharedKernelModel) -> str:
    lines = [
        MODEL_HEADER,
        f"dimension {model.dimension}",
        f"num_components {model.num_components}",
        f"num_classes {model.num_classes}",
    ]
    for k, comp in enumerate(model.components, start=1):
        lines.append(f"component {k}")
        lines.append("mean " + _fmt(comp.mean))
        lines.append("covariance " + _fmt(comp.covariance))
    lines.append("weights " + _fmt(model.weights))
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Lines:
    def __init__(self, text: str):
        self._it: Iterator[list[str]] = (
            line.split("#", 1)[0].split()
            for line in text.splitlines()
        )
        self.lineno = 0

    def next(self, keyword: str | None = None) -> list[str]:
        for toks in self._it:
            self.lineno += 1
            if not toks:
                continue
            if keyword is not None and toks[0] != keyword:
                raise ModelFormatError(f"line {self.lineno}: expected '{keyword}', got '{toks[0]}'")
            return toks
        raise ModelFormatError(f"unexpected end of model text (wanted '{keyword}')")

    def integer(self, keyword: str) -> int:
        toks = self.next(keyword)
        if len(toks) != 2:
            raise ModelFormatError(f"line {self.lineno}: '{keyword}' takes one integer")
        try:
            return int(toks[1])
        except ValueError as exc:
            raise ModelFormatError(f"line {self.lineno}: bad integer {toks[1]!r}") from exc

    def reals(self, keyword: str, count: int) -> np.ndarray:
        toks = self.next(keyword)[1:]
        if len(toks) != count:
            raise ModelFormatError(
                f"line {self.lineno}: '{keyword}' needs {count} values, got {len(toks)}"
            )
        try:
            return np.array([float(t) for t in toks])
        except ValueError as exc:
            raise ModelFormatError(f"line {self.lineno}: bad real in '{keyword}'") from exc


def _parse_model(lines: _Lines) -> SharedKernelModel:
    header = " ".join(lines.next())
    if header != MODEL_HEADER:
        raise ModelFormatError(f"line {lines.lineno}: expected '{MODEL_HEADER}'")
    M = lines.integer("dimension")
    K = lines.integer("num_components")
    L = lines.integer("num_classes")
    if min(M, K, L) < 1:
        raise ModelFormatError("dimension, num_components and num_classes must be >= 1")
    means, covs = [], []
    for k in range(1, K + 1):
        if lines.integer("component") != k:
            raise ModelFormatError(f"line {lines.lineno}: components out of order")
        means.append(lines.reals("mean", M))
        covs.append(lines.reals("covariance", M * M).reshape(M, M))
    weights = lines.reals("weights", K * L).reshape(K, L)
    lines.next("end")
    try:
        return SharedKernelModel.from_arrays(np.array(means), np.array(covs), weights)
    except ValueError as exc:
        raise ModelFormatError(f"invalid model parameters: {exc}") from exc


def parse_model(text: str) -> SharedKernelModel:
    return _parse_model(_Lines(text))


def format_composite(model: CompositeModel) -> str:
    parts = [COMPOSITE_HEADER + "\n", f"num_groups {len(model.groups)}\n"]
    for g, (idx, sub) in enumerate(model.groups, start=1):
        parts.append(f"group {g}\n")
        parts.append("features " + " ".join(str(i) for i in idx) + "\n")
        parts.append(format_model(sub))
    return "".join(parts)


def parse_composite(text: str) -> CompositeModel:
    lines = _Lines(text)
    header = " ".join(lines.next())
    if header != COMPOSITE_HEADER:
        raise ModelFormatError(f"expected '{COMPOSITE_HEADER}' header")
    G = lines.integer("num_groups")
    groups = []
    for g in range(1, G + 1):
        if lines.integer("group") != g:
            raise ModelFormatError(f"line {lines.lineno}: groups out of order")
        try:
            idx = tuple(int(t) for t in lines.next("features")[1:])
        except ValueError as exc:
            raise ModelFormatError(f"line {lines.lineno}: bad feature index") from exc
        groups.append((idx, _parse_model(lines)))
    try:
        return CompositeModel(tuple(groups))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from exc


def save_model(model: SharedKernelModel, path) -> Path:
    path = Path(path)
    path.write_text(format_model(model))
    return path


def load_model(path) -> SharedKernelModel:
    return parse_model(Path(path).read_text())


def save_composite(model: CompositeModel, path) -> Path:
    path = Path(path)
    path.write_text(format_composite(model))
    return path


def load_composite(path) -> CompositeModel:
    return parse_composite(Path(path).read_text())
