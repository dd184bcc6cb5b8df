"""Hornbostel-Sachs taxonomy, depth truncation and the joint instrument/group label space."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np


class TaxonomyError(ValueError):
    """Structural problem in a taxonomy document or tree."""


class UnknownLabelError(KeyError):
    pass


@dataclass(frozen=True)
class TaxonomyNode:
    code: str
    name: str

    @property
    def parent_code(self) -> str:
        return self.code[:-1]

    @property
    def depth(self) -> int:
        return len(self.code)


@dataclass(frozen=True)
class Taxonomy:
    """A rooted tree of Hornbostel-Sachs nodes keyed by digit code.

    The root (empty code) is implicit; every listed node hangs below it through
    its code prefixes.
    """

    nodes: Mapping[str, TaxonomyNode]
    instrument_assignments: Mapping[str, str]

    def __post_init__(self):
        _validate(self.nodes, self.instrument_assignments)

    @property
    def max_depth(self) -> int:
        return max(n.depth for n in self.nodes.values())

    def name(self, code: str) -> str:
        return self.nodes[code].name

    def children(self, code: str) -> list[TaxonomyNode]:
        return sorted(
            (n for n in self.nodes.values() if n.parent_code == code), key=lambda n: n.code
        )


def _validate(nodes: Mapping[str, TaxonomyNode], assignments: Mapping[str, str]) -> None:
    if not nodes:
        raise TaxonomyError("taxonomy has no nodes")
    for code, node in nodes.items():
        if code != node.code:
            raise TaxonomyError(f"node key {code!r} does not match node code {node.code!r}")
        if not code or not code.isdigit():
            raise TaxonomyError(f"node code {code!r} is not a non-empty digit string")
        # every non-top-level node needs its parent, otherwise it is a second root
        if node.depth > 1 and node.parent_code not in nodes:
            raise TaxonomyError(
                f"node {code!r} ({node.name}) has no parent {node.parent_code!r}: multiple roots"
            )
    for instrument, code in assignments.items():
        if code not in nodes:
            raise TaxonomyError(f"instrument {instrument!r} assigned to unknown code {code!r}")


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse the line-oriented ``NODE <code> <name>`` / ``ASSIGN <instrument> <code>`` format.

    Instrument names may contain spaces; the code is always the last token.
    """
    nodes: dict[str, TaxonomyNode] = {}
    assignments: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "NODE":
            code, _, name = rest.partition(" ")
            name = name.strip()
            if not code or not name:
                raise TaxonomyError(f"line {lineno}: expected 'NODE <code> <name>'")
            if code in nodes:
                raise TaxonomyError(f"line {lineno}: duplicate code {code!r}")
            nodes[code] = TaxonomyNode(code, name)
        elif keyword == "ASSIGN":
            instrument, _, code = rest.rpartition(" ")
            instrument = instrument.strip()
            if not instrument or not code:
                raise TaxonomyError(f"line {lineno}: expected 'ASSIGN <instrument> <code>'")
            if instrument in assignments:
                raise TaxonomyError(f"line {lineno}: instrument {instrument!r} assigned twice")
            assignments[instrument] = code
        else:
            raise TaxonomyError(f"line {lineno}: unknown record type {keyword!r}")
    return Taxonomy(nodes, assignments)


def load_taxonomy(source: str | Path) -> Taxonomy:
    return parse_taxonomy(Path(source).read_text(encoding="utf-8"))


def default_taxonomy() -> Taxonomy:
    """The bundled Hornbostel-Sachs tree over MedleyDB instrument names."""
    text = resources.files("hierinst").joinpath("data/medleydb_taxonomy.txt").read_text("utf-8")
    return parse_taxonomy(text)


def dump_taxonomy(taxonomy: Taxonomy) -> str:
    lines = [f"NODE {n.code} {n.name}" for n in sorted(taxonomy.nodes.values(), key=lambda n: n.code)]
    lines += [f"ASSIGN {i} {c}" for i, c in sorted(taxonomy.instrument_assignments.items())]
    return "\n".join(lines) + "\n"


def truncate(taxonomy: Taxonomy, depth: int) -> Taxonomy:
    if depth < 1:
        raise ValueError(f"depth must be >= 1, got {depth}")
    nodes = {c: n for c, n in taxonomy.nodes.items() if n.depth <= depth}
    assignments = {i: c[:depth] for i, c in taxonomy.instrument_assignments.items()}
    return Taxonomy(nodes, assignments)


@dataclass(frozen=True)
class LabelSpace:
    """Ordered index over instruments followed by groups.

    Instruments come first in lexicographic order, then group codes in code
    order. ``group_names`` maps a group code to its human-readable name.
    """

    instruments: tuple[str, ...]
    groups: tuple[str, ...]
    instrument_group: Mapping[str, str]
    group_names: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        overlap = set(self.instruments) & set(self.groups)
        if overlap:
            raise TaxonomyError(f"labels used both as instrument and group: {sorted(overlap)}")
        for inst in self.instruments:
            if self.instrument_group.get(inst) not in self.groups:
                raise TaxonomyError(f"instrument {inst!r} has no group in the label space")
        object.__setattr__(
            self, "index", {lab: k for k, lab in enumerate(self.labels)}
        )

    @property
    def labels(self) -> tuple[str, ...]:
        return self.instruments + self.groups

    @property
    def dim(self) -> int:
        return len(self.instruments) + len(self.groups)

    @property
    def instrument_indices(self) -> np.ndarray:
        return np.arange(len(self.instruments))

    @property
    def group_indices(self) -> np.ndarray:
        return np.arange(len(self.instruments), self.dim)

    @property
    def instrument_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[: len(self.instruments)] = True
        return mask

    def members(self, group: str) -> list[str]:
        return [i for i in self.instruments if self.instrument_group[i] == group]

    def display_name(self, label: str) -> str:
        return self.group_names.get(label, label)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for inst in self.instruments:
            h.update(f"I\t{inst}\t{self.instrument_group[inst]}\n".encode())
        for g in self.groups:
            h.update(f"G\t{g}\n".encode())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "instruments": list(self.instruments),
            "groups": list(self.groups),
            "instrument_group": dict(self.instrument_group),
            "group_names": dict(self.group_names),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LabelSpace":
        return cls(
            tuple(d["instruments"]),
            tuple(d["groups"]),
            dict(d["instrument_group"]),
            dict(d.get("group_names", {})),
        )


def build_label_space(taxonomy: Taxonomy, depth: int) -> LabelSpace:
    instrument_group = {}
    for inst, code in taxonomy.instrument_assignments.items():
        if len(code) < depth:
            raise TaxonomyError(
                f"instrument {inst!r} is assigned to {code!r}, above depth {depth}"
            )
        instrument_group[inst] = code[:depth]
    groups = tuple(sorted(set(instrument_group.values())))
    missing = [g for g in groups if g not in taxonomy.nodes]
    if missing:
        raise TaxonomyError(f"group codes without a node: {missing}")
    return LabelSpace(
        instruments=tuple(sorted(instrument_group)),
        groups=groups,
        instrument_group=instrument_group,
        group_names={g: taxonomy.nodes[g].name for g in groups},
    )


def group_of(space: LabelSpace, instrument: str) -> str:
    try:
        return space.instrument_group[instrument]
    except KeyError:
        raise UnknownLabelError(f"unknown instrument {instrument!r}") from None


def expand_labels(space: LabelSpace, active_instruments: Iterable[str]) -> np.ndarray:
    vec = np.zeros(space.dim, dtype=np.uint8)
    for inst in active_instruments:
        if inst not in space.instrument_group:
            raise UnknownLabelError(f"unknown instrument {inst!r}")
        vec[space.index[inst]] = 1
        vec[space.index[space.instrument_group[inst]]] = 1
    return vec


def hierarchy_closure(space: LabelSpace, labels: np.ndarray) -> np.ndarray:
    """Vectorized expand_labels for a (N, |I|) instrument matrix -> (N, D)."""
    labels = np.asarray(labels)
    n_inst = len(space.instruments)
    out = np.zeros((labels.shape[0], space.dim), dtype=np.uint8)
    out[:, :n_inst] = labels[:, :n_inst] > 0
    for k, g in enumerate(space.groups):
        cols = [space.index[i] for i in space.members(g)]
        out[:, n_inst + k] = out[:, cols].any(axis=1)
    return out
