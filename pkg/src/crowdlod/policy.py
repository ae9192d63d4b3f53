"""Per-agent representation/LoD scheduling and memory accounting.

Agents are binned into the five viewing-distance bands by their screen
footprint (agent screen height over the full-detail reference height), a LoD
is picked per band, and a policy table then chooses the cheapest
representation that observers confuse with the mesh at least at chance rate.
Memory counts each distinct (representation, LoD) asset once, since instances
share assets.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from ._util import parse_size

log = logging.getLogger(__name__)

BANDS = ("D0", "D1", "D2", "D3", "D4")
BAND_ANCHORS = {"D0": 1.0, "D1": 0.8, "D2": 0.6, "D3": 0.4, "D4": 0.2}
# midpoints between neighbouring anchors
BAND_EDGES = (0.9, 0.7, 0.5, 0.3)
LODS = (0, 1, 2, 3)
REPRESENTATIONS = ("Mesh", "Gaussian", "Impostor", "NeRF")
CHANCE = 0.25

_ALIASES = {
    "m": "Mesh", "mesh": "Mesh",
    "g": "Gaussian", "gaussian": "Gaussian", "3dgs": "Gaussian", "3d gaussian": "Gaussian",
    "gs": "Gaussian",
    "i": "Impostor", "impostor": "Impostor", "imposter": "Impostor",
    "n": "NeRF", "nerf": "NeRF",
}

DEFAULT_LOD_RULE = {"D0": 0, "D1": 1, "D2": 2, "D3": 3, "D4": 3}


class PolicyError(ValueError):
    pass


def representation(name: str) -> str:
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise PolicyError(f"unknown representation {name!r}") from None


def parse_lod(value) -> int:
    s = str(value).strip().upper()
    if s.startswith("LOD"):
        s = s[3:]
    elif s.startswith("L"):
        s = s[1:]
    lod = int(s)
    if lod not in LODS:
        raise PolicyError(f"LoD must be 0..3, got {value!r}")
    return lod


class Asset(NamedTuple):
    representation: str
    lod: int

    def __str__(self):
        return f"{self.representation} L{self.lod}"


class AgentView(NamedTuple):
    agent_id: str
    footprint_ratio: float


def band_of(footprint_ratio: float) -> str:
    """Nearest distance band, with boundaries at the anchor midpoints."""
    if not footprint_ratio > 0:
        raise PolicyError(f"footprint ratio must be positive, got {footprint_ratio}")
    for band, edge in zip(BANDS, BAND_EDGES):
        if footprint_ratio >= edge:
            return band
    return BANDS[-1]


# -- catalog --------------------------------------------------------------------

@dataclass
class AssetCatalog:
    sizes: Dict[Asset, int]

    def __post_init__(self):
        for a, s in self.sizes.items():
            if s <= 0:
                raise PolicyError(f"asset {a} has non-positive size {s}")

    def size(self, asset) -> int:
        asset = Asset(*asset)
        try:
            return self.sizes[asset]
        except KeyError:
            raise PolicyError(f"catalog has no entry for {asset}") from None

    def __contains__(self, asset):
        return Asset(*asset) in self.sizes

    def by_size(self) -> List[Asset]:
        """Assets from largest to smallest (ties by name, then LoD)."""
        return sorted(self.sizes, key=lambda a: (-self.sizes[a], a.representation, a.lod))

    @classmethod
    def from_dict(cls, doc) -> "AssetCatalog":
        sizes = {}
        for rep, row in doc["sizes"].items():
            if isinstance(row, dict):
                items = [(parse_lod(k), v) for k, v in row.items()]
            else:
                items = list(enumerate(row))
            for lod, v in items:
                sizes[Asset(representation(rep), lod)] = parse_size(v)
        return cls(sizes)

    @classmethod
    def load(cls, path) -> "AssetCatalog":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "AssetCatalog":
        text = resources.files("crowdlod").joinpath("data/default_catalog.json").read_text()
        return cls.from_dict(json.loads(text))


# -- policy table ---------------------------------------------------------------

@dataclass
class PolicyTable:
    entries: Dict[Tuple[str, int], List[Tuple[str, float]]]
    threshold: float = CHANCE
    lod_rule: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_LOD_RULE))

    def __post_init__(self):
        for key, row in self.entries.items():
            if not row:
                raise PolicyError(f"policy entry {key} is empty")
            for rep, score in row:
                if not 0 <= score <= 1:
                    raise PolicyError(f"score {score} for {rep} at {key} is outside [0, 1]")

    def row(self, band: str, lod: int):
        try:
            return self.entries[(band, lod)]
        except KeyError:
            raise PolicyError(f"policy has no entry for ({band}, L{lod})") from None

    @classmethod
    def from_dict(cls, doc) -> "PolicyTable":
        entries = {}
        for band, per_lod in doc["entries"].items():
            for lod, row in per_lod.items():
                entries[(band, parse_lod(lod))] = [(representation(r), float(s)) for r, s in row]
        rule = {b: parse_lod(v) for b, v in doc.get("lod_rule", DEFAULT_LOD_RULE).items()}
        return cls(entries, float(doc.get("threshold", CHANCE)), rule)

    def to_dict(self) -> dict:
        out = {}
        for (band, lod), row in self.entries.items():
            out.setdefault(band, {})[f"L{lod}"] = [[r, s] for r, s in row]
        return {"threshold": self.threshold,
                "lod_rule": {b: f"L{v}" for b, v in self.lod_rule.items()},
                "entries": out}

    @classmethod
    def load(cls, path) -> "PolicyTable":
        return cls.from_dict(json.loads(Path(path).read_text()))

    @classmethod
    def default(cls) -> "PolicyTable":
        text = resources.files("crowdlod").joinpath("data/default_policy.json").read_text()
        return cls.from_dict(json.loads(text))


def select(band: str, lod: int, policy: PolicyTable, catalog: AssetCatalog) -> Asset:
    """Cheapest representation scoring at least the threshold.

    If none qualifies the highest-scoring one is used. Ties fall to catalog
    size and then to the entry order of the policy row.
    """
    row = policy.row(band, lod)
    ok = [(catalog.size((rep, lod)), i, rep) for i, (rep, score) in enumerate(row)
          if score >= policy.threshold]
    if ok:
        return Asset(min(ok)[2], lod)
    best = max(range(len(row)), key=lambda i: (row[i][1], -i))
    return Asset(row[best][0], lod)


# -- memory ---------------------------------------------------------------------

@dataclass
class MemoryReport:
    per_representation: Dict[str, int]
    distinct_total: int
    per_instance_total: int
    instances: Dict[Asset, int]
    budget: Optional[int] = None
    overflow: bool = False

    def to_dict(self) -> dict:
        return {
            "distinct_total_bytes": self.distinct_total,
            "per_instance_total_bytes": self.per_instance_total,
            "per_representation_bytes": dict(sorted(self.per_representation.items())),
            "instances": {str(a): n for a, n in sorted(self.instances.items())},
            "budget_bytes": self.budget,
            "overflow": self.overflow,
        }


def memory_report(assignment, catalog: AssetCatalog) -> MemoryReport:
    """Byte totals for an ``agent -> asset`` mapping (or a plain asset list)."""
    assets = assignment.values() if isinstance(assignment, dict) else assignment
    counts: Dict[Asset, int] = {}
    for a in assets:
        a = Asset(*a)
        counts[a] = counts.get(a, 0) + 1
    per_rep: Dict[str, int] = {}
    distinct = per_instance = 0
    for a, n in counts.items():
        s = catalog.size(a)
        per_rep[a.representation] = per_rep.get(a.representation, 0) + s
        distinct += s
        per_instance += s * n
    return MemoryReport(per_rep, distinct, per_instance, counts)


def _distinct_bytes(assignment, catalog):
    return sum(catalog.size(a) for a in set(assignment.values()))


LodRule = Union[Callable[[float], int], Dict[str, int]]


def schedule_crowd(agents: Sequence[AgentView], policy: PolicyTable, catalog: AssetCatalog,
                   lod_rule: Optional[LodRule] = None, memory_budget: Optional[int] = None):
    """Assign an asset to every agent, then relieve memory if over budget.

    Relief visits agents from the farthest (smallest footprint) inwards and
    moves each one step to a cheaper asset, preferring one already in use
    (free to share) over the next cheaper catalog entry. Passes repeat until
    the distinct-asset total fits or nobody can get cheaper, in which case
    the report's ``overflow`` flag is set.

    Returns ``(assignment, report)`` where ``assignment`` maps agent id to
    :class:`Asset`.
    """
    agents = [AgentView(*a) for a in agents]
    if not agents:
        raise PolicyError("no agents to schedule")
    ids = [a.agent_id for a in agents]
    if len(set(ids)) != len(ids):
        raise PolicyError("agent ids must be unique")
    rule = lod_rule if lod_rule is not None else policy.lod_rule
    if isinstance(rule, dict):
        table = rule
        rule = lambda ratio: table[band_of(ratio)]  # noqa: E731

    assignment = {}
    for a in agents:
        band = band_of(a.footprint_ratio)
        assignment[a.agent_id] = select(band, rule(a.footprint_ratio), policy, catalog)

    overflow = False
    if memory_budget is not None and _distinct_bytes(assignment, catalog) > memory_budget:
        overflow = not _relieve(assignment, agents, catalog, memory_budget)
        log.info("budget relief: %d bytes after relief (budget %d)",
                 _distinct_bytes(assignment, catalog), memory_budget)

    report = memory_report(assignment, catalog)
    report.budget = memory_budget
    report.overflow = overflow
    return assignment, report


def _relieve(assignment, agents, catalog, budget) -> bool:
    order = sorted(agents, key=lambda a: (a.footprint_ratio, str(a.agent_id)))
    ladder = catalog.by_size()
    while True:
        moved = False
        for a in order:
            if _distinct_bytes(assignment, catalog) <= budget:
                return True
            cur = catalog.size(assignment[a.agent_id])
            in_use = set(assignment.values())
            cheaper = [x for x in ladder if catalog.sizes[x] < cur]
            if not cheaper:
                continue
            shared = [x for x in cheaper if x in in_use]
            assignment[a.agent_id] = shared[0] if shared else cheaper[0]
            moved = True
        if _distinct_bytes(assignment, catalog) <= budget:
            return True
        if not moved:
            return False


def read_agents(path) -> List[AgentView]:
    """``id,footprint_ratio`` rows; a header line is skipped."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                ratio = float(row[1])
            except ValueError:
                continue  # header
            out.append(AgentView(row[0].strip(), ratio))
    return out
