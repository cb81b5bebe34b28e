"""Cascade datasets organized in generations.

A cascade is an ordered list of generations, each generation a non-empty set
of failed component ids. Generation 0 holds the initial failures. Datasets are
stored one JSON record per line::

    {"cascade_id": 0, "generations": [[3], [4], [2, 3]]}
"""

from __future__ import annotations

import csv
import io
import json
import warnings
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, TextIO

__all__ = [
    "Cascade",
    "CascadeDataset",
    "DatasetStats",
    "ParseError",
    "ValidationError",
    "RepeatedComponentWarning",
    "parse_cascades",
    "read_cascades",
    "write_cascades",
    "load_label_map",
    "filter_multi_generation",
    "dataset_stats",
    "ending_metrics",
    "write_stats_csv",
]


class ValidationError(ValueError):
    """A record is well formed but violates a dataset invariant."""


class ParseError(ValueError):
    """A line of a cascade file could not be decoded."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class RepeatedComponentWarning(UserWarning):
    """A component fails in more than one generation of the same cascade."""


def _canonical(gen) -> tuple[int, ...]:
    return tuple(sorted(set(int(c) for c in gen)))


@dataclass(frozen=True)
class Cascade:
    """One cascade; ``generations[g]`` is the sorted tuple of ids failed in generation g."""

    cascade_id: int
    generations: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.cascade_id < 0:
            raise ValidationError(f"negative cascade_id {self.cascade_id}")
        if not self.generations:
            raise ValidationError(f"cascade {self.cascade_id} has no generations")
        gens = tuple(_canonical(g) for g in self.generations)
        for g, gen in enumerate(gens):
            if not gen:
                raise ValidationError(
                    f"cascade {self.cascade_id}: generation {g} is empty"
                )
            if gen[0] < 0:
                raise ValidationError(
                    f"cascade {self.cascade_id}: negative component id {gen[0]}"
                )
        object.__setattr__(self, "generations", gens)

    @property
    def ending_generation(self) -> int:
        return len(self.generations) - 1

    def repeated_components(self) -> set[int]:
        """Component ids that appear in more than one generation."""
        seen = Counter(c for gen in self.generations for c in gen)
        return {c for c, n in seen.items() if n > 1}


@dataclass(frozen=True)
class CascadeDataset:
    cascades: tuple[Cascade, ...] = ()

    def __post_init__(self):
        cascades = tuple(self.cascades)
        ids = [c.cascade_id for c in cascades]
        if len(set(ids)) != len(ids):
            dup = next(i for i, n in Counter(ids).items() if n > 1)
            raise ValidationError(f"repeated cascade_id {dup}")
        object.__setattr__(self, "cascades", cascades)

    def __len__(self):
        return len(self.cascades)

    def __iter__(self):
        return iter(self.cascades)

    @cached_property
    def component_universe(self) -> frozenset[int]:
        return frozenset(c for cas in self.cascades for gen in cas.generations for c in gen)

    def head(self, m: int) -> "CascadeDataset":
        """The first ``m`` cascades in file order."""
        return CascadeDataset(self.cascades[:m])

    @classmethod
    def from_lists(cls, generation_lists) -> "CascadeDataset":
        """Build a dataset from nested lists, numbering cascades from 0."""
        return cls(tuple(Cascade(i, tuple(map(tuple, g))) for i, g in enumerate(generation_lists)))


@dataclass(frozen=True)
class DatasetStats:
    cascade_count: int
    ending_generation_histogram: dict[int, int] = field(default_factory=dict)
    component_failure_frequency: dict[int, int] = field(default_factory=dict)


def load_label_map(stream: TextIO) -> dict[str, int]:
    """Read a sidecar ``{"label": id, ...}`` dictionary mapping string labels to ids."""
    mapping = json.load(stream)
    if not isinstance(mapping, dict):
        raise ValidationError("label map must be a JSON object")
    return {str(k): int(v) for k, v in mapping.items()}


def _component(value, labels, lineno):
    if isinstance(value, bool):
        raise ParseError(lineno, f"invalid component id {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, str) and labels is not None:
        try:
            return labels[value]
        except KeyError:
            raise ParseError(lineno, f"unknown component label {value!r}") from None
    raise ParseError(lineno, f"invalid component id {value!r}")


def parse_cascades(
    lines: Iterable[str], labels: Mapping[str, int] | None = None
) -> CascadeDataset:
    """Parse line-delimited cascade records.

    Parameters
    ----------
    lines : iterable of str
        Text stream or any iterable of lines. Blank lines are skipped.
    labels : mapping, optional
        Maps string component labels to integer ids.

    Returns
    -------
    CascadeDataset
        Cascades in file order with per-generation duplicates removed.

    Raises
    ------
    ParseError
        Undecodable line or missing/mistyped field (carries the line number).
    ValidationError
        Empty generation list, empty generation or repeated cascade_id.
    """
    cascades = []
    seen_ids = {}
    repeats = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, exc.msg) from None
        if not isinstance(rec, dict) or "cascade_id" not in rec or "generations" not in rec:
            raise ParseError(lineno, "record needs 'cascade_id' and 'generations'")
        cid, gens = rec["cascade_id"], rec["generations"]
        if not isinstance(cid, int) or isinstance(cid, bool):
            raise ParseError(lineno, f"cascade_id must be an integer, got {cid!r}")
        if not isinstance(gens, list) or not all(isinstance(g, list) for g in gens):
            raise ParseError(lineno, "generations must be a list of lists")
        if cid in seen_ids:
            raise ValidationError(
                f"line {lineno}: repeated cascade_id {cid} (first on line {seen_ids[cid]})"
            )
        seen_ids[cid] = lineno
        gens = [[_component(c, labels, lineno) for c in g] for g in gens]
        try:
            cascade = Cascade(cid, tuple(map(tuple, gens)))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        if cascade.repeated_components():
            repeats += 1
        cascades.append(cascade)
    if repeats:
        warnings.warn(
            f"{repeats} cascade(s) contain a component failing in more than one generation",
            RepeatedComponentWarning,
            stacklevel=2,
        )
    return CascadeDataset(tuple(cascades))


def read_cascades(path, labels=None) -> CascadeDataset:
    with open(path, encoding="utf-8") as fh:
        return parse_cascades(fh, labels)


def write_cascades(ds: CascadeDataset, out) -> None:
    """Emit ``ds`` as JSON lines to a path or text stream (ids ascending)."""
    if isinstance(out, (str, bytes)) or hasattr(out, "__fspath__"):
        with open(out, "w", encoding="utf-8") as fh:
            write_cascades(ds, fh)
        return
    for cas in ds.cascades:
        rec = {"cascade_id": cas.cascade_id, "generations": [list(g) for g in cas.generations]}
        out.write(json.dumps(rec, separators=(",", ":")))
        out.write("\n")


def filter_multi_generation(ds: CascadeDataset) -> CascadeDataset:
    """Drop cascades that stop at generation 0."""
    return CascadeDataset(tuple(c for c in ds.cascades if len(c.generations) >= 2))


def dataset_stats(ds: CascadeDataset) -> DatasetStats:
    """Ending-generation histogram and per-component failure counts.

    A component's frequency counts (cascade, generation) pairs that contain it.
    """
    hist = Counter(c.ending_generation for c in ds.cascades)
    freq = Counter(comp for c in ds.cascades for gen in c.generations for comp in gen)
    return DatasetStats(
        cascade_count=len(ds),
        ending_generation_histogram=dict(sorted(hist.items())),
        component_failure_frequency=dict(sorted(freq.items())),
    )


def ending_metrics(ds: CascadeDataset, large_threshold: int = 3):
    """Distribution of the ending generation and the large-cascade probability.

    Returns
    -------
    distribution : dict
        ``{g: fraction of cascades whose last generation index is g}``.
    large : float
        Probability that the ending generation exceeds ``large_threshold``.
    """
    m = len(ds)
    if m == 0:
        raise ValueError("empty dataset")
    hist = Counter(c.ending_generation for c in ds.cascades)
    distribution = {g: n / m for g, n in sorted(hist.items())}
    large = sum(n for g, n in hist.items() if g > large_threshold) / m
    return distribution, large


def write_stats_csv(stats: DatasetStats, ending_out: TextIO, component_out: TextIO) -> None:
    """Write the two stats CSVs (ending generation, component frequency)."""
    m = stats.cascade_count
    w = csv.writer(ending_out, lineterminator="\n")
    w.writerow(["ending_generation", "count", "probability"])
    for g, n in sorted(stats.ending_generation_histogram.items()):
        w.writerow([g, n, repr(n / m) if m else "0.0"])
    w = csv.writer(component_out, lineterminator="\n")
    w.writerow(["component_id", "failure_count"])
    for c, n in sorted(stats.component_failure_frequency.items()):
        w.writerow([c, n])


def dumps(ds: CascadeDataset) -> str:
    buf = io.StringIO()
    write_cascades(ds, buf)
    return buf.getvalue()
