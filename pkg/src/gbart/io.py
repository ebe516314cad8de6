"""Text serialization of forests and covariate scalings.

A forest file holds one or more posterior draws.  Each draw starts with a
header record and is followed by one record per node; every record is a line
of space-separated ``key=value`` fields::

    forest draw=0 model=gaussian trees=2 features=3 sigma_mu=0.14 split_probs=0.2,0.3,0.5 nuisance.sigma=1.02
    node tree=0 path=. kind=branch feature=2 cutpoint=0.41
    node tree=0 path=L kind=leaf value=-0.3
    node tree=0 path=R kind=leaf value=0.25
    node tree=1 path=. kind=leaf value=0.0

The root path is written as ``.``.  Floats carry 17 significant digits, so a
round trip reproduces every value exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable

import numpy as np

from .data import Scaling, format_float
from .errors import StructureError, ValidationError
from .tree import DecisionTree, Forest, SplitRule, TreeNode


class ForestParseError(ValidationError):
    """A forest file is malformed; the message names the offending line."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class ForestDraw:
    """One posterior draw as stored on disk."""

    forest: Forest
    model: str
    nuisance: dict[str, float]
    draw: int = 0


# ---------------------------------------------------------------------------
# Writing


def _node_record(t: int, node: TreeNode) -> str:
    path = node.path or "."
    if node.is_leaf:
        return f"node tree={t} path={path} kind=leaf value={format_float(node.leaf_value)}"
    rule = node.rule
    return (f"node tree={t} path={path} kind=branch feature={rule.feature} "
            f"cutpoint={format_float(rule.cutpoint)}")


def write_forest(fh: IO[str], forest: Forest, model: str, nuisance: dict | None = None, draw: int = 0) -> None:
    """Append one draw to an open text stream."""
    fields = [
        "forest", f"draw={draw}", f"model={model}", f"trees={forest.num_trees}",
        f"features={forest.num_features}", f"sigma_mu={format_float(forest.sigma_mu)}",
        "split_probs=" + ",".join(format_float(v) for v in forest.split_probs),
    ]
    fields += [f"nuisance.{k}={format_float(v)}" for k, v in (nuisance or {}).items()]
    lines = [" ".join(fields)]
    for t, tree in enumerate(forest.trees):
        lines.extend(_node_record(t, tree[p]) for p in sorted(tree, key=lambda p: (len(p), p)))
    fh.write("\n".join(lines) + "\n")


def save_forest(path: str | Path, forest: Forest, model: str, nuisance: dict | None = None) -> None:
    with open(path, "w") as fh:
        write_forest(fh, forest, model, nuisance)


def save_forests(path: str | Path, draws: Iterable[ForestDraw]) -> None:
    with open(path, "w") as fh:
        for d in draws:
            write_forest(fh, d.forest, d.model, d.nuisance, d.draw)


# ---------------------------------------------------------------------------
# Reading


def _fields(line: str, lineno: int) -> tuple[str, dict[str, str]]:
    kind, *rest = line.split()
    out = {}
    for token in rest:
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise ForestParseError(lineno, f"expected key=value, got {token!r}")
        if key in out:
            raise ForestParseError(lineno, f"duplicate field {key!r}")
        out[key] = value
    return kind, out


def _get(fields: dict, key: str, lineno: int, conv=str):
    try:
        raw = fields[key]
    except KeyError:
        raise ForestParseError(lineno, f"missing field {key!r}") from None
    try:
        return conv(raw)
    except ValueError:
        raise ForestParseError(lineno, f"field {key}={raw!r} is not a valid {conv.__name__}") from None


class _DrawBuilder:
    def __init__(self, fields: dict, lineno: int):
        self.lineno = lineno
        self.model = _get(fields, "model", lineno)
        self.draw = _get(fields, "draw", lineno, int) if "draw" in fields else 0
        self.num_trees = _get(fields, "trees", lineno, int)
        self.num_features = _get(fields, "features", lineno, int)
        self.sigma_mu = _get(fields, "sigma_mu", lineno, float)
        raw = _get(fields, "split_probs", lineno)
        try:
            self.split_probs = np.array([float(v) for v in raw.split(",")])
        except ValueError:
            raise ForestParseError(lineno, f"split_probs={raw!r} is not a list of numbers") from None
        if len(self.split_probs) != self.num_features:
            raise ForestParseError(lineno, f"split_probs has {len(self.split_probs)} entries, expected {self.num_features}")
        self.nuisance = {k[len("nuisance."):]: _get(fields, k, lineno, float)
                         for k in fields if k.startswith("nuisance.")}
        self.nodes: list[dict[str, TreeNode]] = [{} for _ in range(max(self.num_trees, 0))]

    def add_node(self, fields: dict, lineno: int) -> None:
        t = _get(fields, "tree", lineno, int)
        if not 0 <= t < self.num_trees:
            raise ForestParseError(lineno, f"tree index {t} outside 0..{self.num_trees - 1}")
        path = _get(fields, "path", lineno)
        if path == ".":
            path = ""
        elif set(path) - {"L", "R"}:
            raise ForestParseError(lineno, f"path {path!r} is not a string over L and R")
        if path in self.nodes[t]:
            raise ForestParseError(lineno, f"duplicate node {path or '.'} in tree {t}")
        kind = _get(fields, "kind", lineno)
        if kind == "leaf":
            node = TreeNode(path, None, _get(fields, "value", lineno, float))
        elif kind == "branch":
            feature = _get(fields, "feature", lineno, int)
            if not 0 <= feature < self.num_features:
                raise ForestParseError(lineno, f"feature {feature} outside 0..{self.num_features - 1}")
            node = TreeNode(path, SplitRule(feature, _get(fields, "cutpoint", lineno, float)))
        else:
            raise ForestParseError(lineno, f"unknown node kind {kind!r}")
        self.nodes[t][path] = node

    def build(self) -> ForestDraw:
        trees = []
        for t, nodes in enumerate(self.nodes):
            try:
                trees.append(DecisionTree(nodes))
            except StructureError as exc:
                raise ForestParseError(self.lineno, f"tree {t}: {exc}") from None
        try:
            forest = Forest(tuple(trees), self.sigma_mu, self.split_probs)
        except ValueError as exc:
            raise ForestParseError(self.lineno, str(exc)) from None
        return ForestDraw(forest, self.model, self.nuisance, self.draw)


def read_forests(fh: IO[str], model: str | None = None) -> list[ForestDraw]:
    """Parse every draw in a stream; ``model`` (if given) must match each header."""
    draws, current = [], None
    for lineno, raw in enumerate(fh, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, fields = _fields(line, lineno)
        if kind == "forest":
            if current is not None:
                draws.append(current.build())
            current = _DrawBuilder(fields, lineno)
            if model is not None and current.model != model:
                raise ValidationError(f"line {lineno}: forest was fitted with model {current.model!r}, not {model!r}")
        elif kind == "node":
            if current is None:
                raise ForestParseError(lineno, "node record before any forest header")
            current.add_node(fields, lineno)
        else:
            raise ForestParseError(lineno, f"unknown record type {kind!r}")
    if current is not None:
        draws.append(current.build())
    if not draws:
        raise ValidationError("the forest file holds no draws")
    return draws


def load_forests(path: str | Path, model: str | None = None) -> list[ForestDraw]:
    with open(path) as fh:
        return read_forests(fh, model)


def load_forest(path: str | Path, model: str | None = None) -> Forest:
    """Load a file holding a single draw."""
    draws = load_forests(path, model)
    if len(draws) != 1:
        raise ValidationError(f"{path}: expected one forest, found {len(draws)}")
    return draws[0].forest


# ---------------------------------------------------------------------------
# Scaling records


def save_scaling(path: str | Path, scaling: Scaling) -> None:
    """One line per covariate: ``name method lower upper [knot ...]``."""
    with open(path, "w") as fh:
        fh.write("# column method lower upper [knots]\n")
        for j in range(len(scaling.lower)):
            parts = [f"x{j + 1}", scaling.method, format_float(scaling.lower[j]), format_float(scaling.upper[j])]
            if scaling.method == "quantile":
                parts += [format_float(v) for v in scaling.knots[j]]
            fh.write(" ".join(parts) + "\n")


def load_scaling(path: str | Path) -> Scaling:
    lower, upper, knots, methods = [], [], [], set()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) < 4:
                raise ValidationError(f"{path}: line {lineno}: expected column, method, lower, upper")
            methods.add(parts[1])
            try:
                values = [float(v) for v in parts[2:]]
            except ValueError:
                raise ValidationError(f"{path}: line {lineno}: non-numeric scaling value") from None
            lower.append(values[0])
            upper.append(values[1])
            knots.append(np.array(values[2:]))
    if len(methods) != 1:
        raise ValidationError(f"{path}: expected a single scaling method, found {sorted(methods)}")
    method = methods.pop()
    return Scaling(method, np.array(lower), np.array(upper), knots if method == "quantile" else [])
