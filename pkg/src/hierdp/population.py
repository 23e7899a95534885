"""Dataset schema, region hierarchy, and population construction.

A population is a table of individual records. Each record carries M
discretized integer features and the id of a leaf region of an L-level
region hierarchy tree. Ancestor regions are always derived from the tree,
never stored per record.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError, ValidationError

__all__ = [
    "FeatureSchema",
    "RegionTree",
    "Population",
    "ingest_csv",
    "export_csv",
    "generate_population",
]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names and their categorical domain sizes.

    Feature m takes integer values 0..sizes[m]-1.
    """

    names: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        if len(self.names) != len(self.sizes):
            raise SchemaError("names and sizes must have equal length")
        if len(self.names) == 0:
            raise SchemaError("schema needs at least one feature")
        if len(set(self.names)) != len(self.names):
            raise SchemaError("feature names must be unique")
        for name, size in zip(self.names, self.sizes):
            if size < 2:
                raise SchemaError(f"feature {name!r}: domain size must be >= 2, got {size}")

    @property
    def num_features(self) -> int:
        return len(self.names)

    @classmethod
    def from_pairs(cls, pairs) -> "FeatureSchema":
        """Build from [(name, size), ...] as used in config documents."""
        names = tuple(str(p[0]) for p in pairs)
        sizes = tuple(int(p[1]) for p in pairs)
        return cls(names, sizes)

    def to_pairs(self) -> list[list]:
        return [[n, s] for n, s in zip(self.names, self.sizes)]


class RegionTree:
    """An L-level region hierarchy.

    Level 1 holds the single root; every leaf sits at level L. Nodes are
    ordered level by level (root first), and that order fixes the column
    order of answer tables.
    """

    def __init__(self, nodes: list[tuple[str, str | None]]):
        parent: dict[str, str | None] = {}
        for region_id, par in nodes:
            if region_id in parent:
                raise ValidationError(f"duplicate region id {region_id!r}")
            parent[region_id] = par

        roots = [r for r, p in parent.items() if p is None]
        if len(roots) != 1:
            raise ValidationError(f"tree must have exactly one root, found {len(roots)}")
        self.root = roots[0]

        children: dict[str, list[str]] = {r: [] for r in parent}
        for region_id, par in parent.items():
            if par is None:
                continue
            if par not in parent:
                raise ValidationError(f"region {region_id!r} has unknown parent {par!r}")
            children[par].append(region_id)

        # depth-assign by BFS; detect unreachable nodes (cycles / forests)
        depth = {self.root: 1}
        frontier = [self.root]
        order: list[str] = []
        while frontier:
            nxt: list[str] = []
            for node in frontier:
                order.append(node)
                for child in children[node]:
                    depth[child] = depth[node] + 1
                    nxt.append(child)
            frontier = nxt
        if len(order) != len(parent):
            raise ValidationError("tree contains nodes unreachable from the root")

        self.levels_count = max(depth.values())
        childless = [r for r in parent if not children[r]]
        for r in childless:
            if depth[r] != self.levels_count:
                raise ValidationError(
                    f"all leaves must sit at level {self.levels_count}; {r!r} is at level {depth[r]}"
                )

        self.parent = parent
        self.children = children
        self.depth = depth
        self.node_ids: list[str] = order  # level order
        self.node_index = {r: i for i, r in enumerate(order)}
        self.levels: list[list[str]] = [
            [r for r in order if depth[r] == l] for l in range(1, self.levels_count + 1)
        ]
        self.leaves: list[str] = self.levels[-1]
        self.leaf_index = {r: i for i, r in enumerate(self.leaves)}

        # membership[i, j] = 1 iff leaf j descends from (or is) node i
        member = np.zeros((len(order), len(self.leaves)), dtype=np.int64)
        for j, leaf in enumerate(self.leaves):
            node = leaf
            while node is not None:
                member[self.node_index[node], j] = 1
                node = parent[node]
        self.leaf_membership = member

    @property
    def num_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def num_leaves(self) -> int:
        return len(self.leaves)

    def ancestor_at_level(self, region_id: str, level: int) -> str:
        """Ancestor of `region_id` at 1-based level `level`."""
        node = region_id
        while self.depth[node] > level:
            node = self.parent[node]
        if self.depth[node] != level:
            raise ValidationError(f"{region_id!r} has no ancestor at level {level}")
        return node

    @classmethod
    def from_branching(cls, branching: list[int]) -> "RegionTree":
        """Uniform tree: root plus `branching[l]` children per node at level l+1.

        Node ids are path-like: root, root/0, root/0/1, ...
        """
        nodes: list[tuple[str, str | None]] = [("root", None)]
        frontier = ["root"]
        for width in branching:
            nxt = []
            for node in frontier:
                for i in range(int(width)):
                    child = f"{node}/{i}"
                    nodes.append((child, node))
                    nxt.append(child)
            frontier = nxt
        return cls(nodes)

    @classmethod
    def from_config(cls, doc) -> "RegionTree":
        """Accept either {"branching": [...]} or {"nodes": [{"id","parent"},...]}"""
        if isinstance(doc, dict) and "branching" in doc:
            return cls.from_branching(doc["branching"])
        if isinstance(doc, dict) and "nodes" in doc:
            return cls([(str(n["id"]), n.get("parent")) for n in doc["nodes"]])
        raise SchemaError("tree config must contain 'branching' or 'nodes'")

    def to_config(self) -> dict:
        return {"nodes": [{"id": r, "parent": self.parent[r]} for r in self.node_ids]}


@dataclass(frozen=True)
class Population:
    """Immutable record table with schema and region hierarchy.

    `values[i, m]` is feature m of person i; `leaf_idx[i]` indexes into
    `tree.leaves`. Person ids are the row order 0..n-1.
    """

    schema: FeatureSchema
    tree: RegionTree
    values: np.ndarray
    leaf_idx: np.ndarray
    _sealed: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.int64))
        object.__setattr__(self, "leaf_idx", np.ascontiguousarray(self.leaf_idx, dtype=np.int64))
        self.values.setflags(write=False)
        self.leaf_idx.setflags(write=False)
        self.validate()

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def validate(self) -> None:
        """Full re-validation: shapes, domains, and region references."""
        if self.values.ndim != 2 or self.values.shape[1] != self.schema.num_features:
            raise ValidationError("record table shape does not match schema")
        if self.values.shape[0] < 1:
            raise ValidationError("population must contain at least one record")
        if self.leaf_idx.shape != (self.values.shape[0],):
            raise ValidationError("region column length does not match record count")
        for m, size in enumerate(self.schema.sizes):
            col = self.values[:, m]
            bad = np.nonzero((col < 0) | (col >= size))[0]
            if bad.size:
                raise ValidationError(
                    f"row {bad[0]}, feature {self.schema.names[m]!r}: "
                    f"value {col[bad[0]]} outside domain 0..{size - 1}"
                )
        bad = np.nonzero((self.leaf_idx < 0) | (self.leaf_idx >= self.tree.num_leaves))[0]
        if bad.size:
            raise ValidationError(f"row {bad[0]}: region index {self.leaf_idx[bad[0]]} is not a tree leaf")

    def region_ids(self) -> list[str]:
        """Per-record leaf region ids."""
        leaves = self.tree.leaves
        return [leaves[i] for i in self.leaf_idx]


def ingest_csv(path, schema: FeatureSchema, region_column: str, tree: RegionTree) -> Population:
    """Read a UTF-8 comma-separated file into a Population.

    The header must contain every schema feature plus `region_column`;
    all feature cells must be integers within their domains and every
    region cell a leaf of `tree`.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        col_of = {name: i for i, name in enumerate(header)}
        missing = [c for c in (*schema.names, region_column) if c not in col_of]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        feat_cols = [col_of[name] for name in schema.names]
        region_col = col_of[region_column]

        values: list[list[int]] = []
        leaf_idx: list[int] = []
        for rownum, row in enumerate(reader):
            rec = []
            for m, col in enumerate(feat_cols):
                try:
                    v = int(row[col])
                except (ValueError, IndexError):
                    raise ValidationError(
                        f"{path}: row {rownum}, column {schema.names[m]!r}: not an integer"
                    ) from None
                if not (0 <= v < schema.sizes[m]):
                    raise ValidationError(
                        f"{path}: row {rownum}, column {schema.names[m]!r}: "
                        f"value {v} outside domain 0..{schema.sizes[m] - 1}"
                    )
                rec.append(v)
            region = row[region_col]
            if region not in tree.leaf_index:
                raise ValidationError(
                    f"{path}: row {rownum}: region {region!r} is not a leaf of the region tree"
                )
            values.append(rec)
            leaf_idx.append(tree.leaf_index[region])

    if not values:
        raise ValidationError(f"{path}: no data rows")
    return Population(schema, tree, np.asarray(values), np.asarray(leaf_idx))


def export_csv(population: Population, path, region_column: str = "region") -> None:
    """Write a Population in the same format `ingest_csv` reads."""
    leaves = population.tree.leaves
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*population.schema.names, region_column])
        for row, leaf in zip(population.values, population.leaf_idx):
            writer.writerow([*map(int, row), leaves[leaf]])


def _leaf_weights(num_leaves: int) -> np.ndarray:
    # fixed non-uniform assignment: weight of leaf j proportional to j+1
    w = np.arange(1, num_leaves + 1, dtype=np.float64)
    return w / w.sum()


def generate_population(
    seed: int,
    n: int,
    schema: FeatureSchema,
    tree: RegionTree,
    correlation: float = 0.0,
) -> Population:
    """Seeded synthetic population from a planted pairwise-correlation model.

    Feature 0 is uniform; each later feature copies its predecessor
    (mod its own domain size) with probability `correlation` and is
    uniform otherwise, so consecutive features are pairwise correlated
    with a closed-form joint. Regions follow a fixed non-uniform
    categorical over leaves. Pure function of its arguments.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not (0.0 <= correlation <= 1.0):
        raise ValidationError("correlation must lie in [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    values = np.empty((n, schema.num_features), dtype=np.int64)
    values[:, 0] = rng.integers(0, schema.sizes[0], size=n)
    for m in range(1, schema.num_features):
        size = schema.sizes[m]
        fresh = rng.integers(0, size, size=n)
        copy = rng.random(n) < correlation
        values[:, m] = np.where(copy, values[:, m - 1] % size, fresh)
    leaf_idx = rng.choice(tree.num_leaves, size=n, p=_leaf_weights(tree.num_leaves))
    return Population(schema, tree, values, leaf_idx)
