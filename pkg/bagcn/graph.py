"""Skeleton topologies and the paired focus/diffusion graphs.

A topology is an undirected bone tree with a designated center joint. Bones
are oriented by hop distance to the center (ties: the lower joint index is
treated as closer). The focus graph carries messages from closer to farther
joints, the diffusion graph the opposite way. Matrices follow the
``A[receiver, sender]`` convention and are stacked in ``SUBSETS`` order
(root, closer, far).
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import voluptuous as vol

from .const import (
    GRAPH_DIRECTED,
    GRAPH_KINDS,
    GRAPH_UNDIRECTED,
    NORMALIZATION_ALPHA,
    SUBSET_CLOSER,
    SUBSET_FAR,
    SUBSET_ROOT,
    SUBSETS,
)
from .errors import TopologyError

_LOGGER = logging.getLogger(__name__)

ROOT = SUBSETS.index(SUBSET_ROOT)
CLOSER = SUBSETS.index(SUBSET_CLOSER)
FAR = SUBSETS.index(SUBSET_FAR)

TOPOLOGY_SCHEMA = vol.Schema(
    {
        vol.Optional("name", default=""): str,
        vol.Required("num_joints"): vol.All(vol.Coerce(int), vol.Range(min=1)),
        vol.Optional("bones", default=list): [
            vol.All([vol.Coerce(int)], vol.Length(min=2, max=2))
        ],
        vol.Required("center"): vol.All(vol.Coerce(int), vol.Range(min=0)),
    }
)


@dataclass(frozen=True)
class SkeletonTopology:
    """Undirected skeleton: joint count, bone list and center joint."""

    num_joints: int
    bones: tuple[tuple[int, int], ...]
    center: int
    name: str = ""

    def __post_init__(self) -> None:
        bones = tuple((int(i), int(j)) for i, j in self.bones)
        object.__setattr__(self, "bones", bones)
        if self.num_joints < 1:
            raise TopologyError(f"topology needs at least one joint, got {self.num_joints}")
        if not 0 <= self.center < self.num_joints:
            raise TopologyError(f"center joint {self.center} outside [0, {self.num_joints})")
        seen: set[tuple[int, int]] = set()
        for i, j in bones:
            if not (0 <= i < self.num_joints and 0 <= j < self.num_joints):
                raise TopologyError(f"bone ({i}, {j}) outside [0, {self.num_joints})")
            if i == j:
                raise TopologyError(f"bone ({i}, {j}) is a self-loop")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise TopologyError(f"duplicate bone ({i}, {j})")
            seen.add(key)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.bones:
            adj[i].append(j)
            adj[j].append(i)
        return [sorted(n) for n in adj]

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> SkeletonTopology:
        try:
            valid = TOPOLOGY_SCHEMA(raw)
        except vol.Invalid as err:
            raise TopologyError(f"invalid topology: {err}") from err
        return cls(
            num_joints=valid["num_joints"],
            bones=tuple(tuple(b) for b in valid["bones"]),  # type: ignore[misc]
            center=valid["center"],
            name=valid["name"],
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "num_joints": self.num_joints,
            "bones": [list(b) for b in self.bones],
            "center": self.center,
        }

    def permuted(self, perm: np.ndarray | list[int]) -> SkeletonTopology:
        """Relabel joints: old joint ``k`` becomes ``perm[k]``."""
        p = [int(x) for x in perm]
        return SkeletonTopology(
            self.num_joints, tuple((p[i], p[j]) for i, j in self.bones), p[self.center], self.name
        )


@dataclass(frozen=True)
class BoneVector:
    """Coordinate difference along one oriented bone, per frame."""

    source: int
    destination: int
    values: np.ndarray


@dataclass(frozen=True)
class DirectedGraphs:
    """Unnormalized focus and diffusion subset stacks, each (3, V, V)."""

    focus: np.ndarray
    diffusion: np.ndarray


@dataclass(frozen=True)
class PartitionedAdjacency:
    """Normalized subset stacks for both graph convolutions of a block."""

    focus: np.ndarray
    diffusion: np.ndarray
    raw: DirectedGraphs
    kind: str = GRAPH_DIRECTED

    @property
    def num_joints(self) -> int:
        return int(self.focus.shape[-1])


def hop_distances(topo: SkeletonTopology) -> np.ndarray:
    """Breadth-first hop count from the center joint to every joint."""
    dist = np.full(topo.num_joints, -1, dtype=np.int64)
    dist[topo.center] = 0
    adj = topo.neighbors()
    queue = deque([topo.center])
    while queue:
        joint = queue.popleft()
        for nxt in adj[joint]:
            if dist[nxt] < 0:
                dist[nxt] = dist[joint] + 1
                queue.append(nxt)
    unreached = np.flatnonzero(dist < 0)
    if unreached.size:
        raise TopologyError(
            f"topology {topo.name or '<unnamed>'} is disconnected: joints "
            f"{unreached.tolist()} unreachable from center {topo.center}"
        )
    return dist


def oriented_bones(topo: SkeletonTopology, hops: np.ndarray | None = None) -> list[tuple[int, int]]:
    """Bones as ``(closer, farther)`` pairs, in the topology's bone order."""
    if hops is None:
        hops = hop_distances(topo)
    return [
        (i, j) if (hops[i], i) < (hops[j], j) else (j, i)
        for i, j in topo.bones
    ]


def build_directed_graphs(topo: SkeletonTopology) -> DirectedGraphs:
    v = topo.num_joints
    focus = np.zeros((len(SUBSETS), v, v))
    diffusion = np.zeros((len(SUBSETS), v, v))
    focus[ROOT] = np.eye(v)
    diffusion[ROOT] = np.eye(v)
    for near, far in oriented_bones(topo):
        focus[CLOSER, far, near] = 1.0
        diffusion[FAR, near, far] = 1.0
    return DirectedGraphs(focus, diffusion)


def normalize_adjacency(a: np.ndarray, alpha: float = NORMALIZATION_ALPHA) -> np.ndarray:
    """Row normalization by in-degree plus ``alpha``; zero rows stay zero."""
    degree = a.sum(axis=-1, keepdims=True) + alpha
    return a / degree


def build_partitioned_adjacency(
    topo: SkeletonTopology, kind: str = GRAPH_DIRECTED
) -> PartitionedAdjacency:
    """Normalized adjacency for a block.

    ``directed`` gives the focus/diffusion pair. ``undirected`` gives both
    convolutions the same conventional partition: identity, centripetal and
    centrifugal edges.
    """
    if kind not in GRAPH_KINDS:
        raise TopologyError(f"unknown graph kind {kind!r}")
    raw = build_directed_graphs(topo)
    if kind == GRAPH_UNDIRECTED:
        both = np.stack([raw.focus[ROOT], raw.focus[CLOSER], raw.diffusion[FAR]])
        focus, diffusion = both, both
    else:
        focus, diffusion = raw.focus, raw.diffusion
    adjacency = PartitionedAdjacency(
        focus=normalize_adjacency(focus),
        diffusion=normalize_adjacency(diffusion),
        raw=raw,
        kind=kind,
    )
    adjacency.focus.flags.writeable = False
    adjacency.diffusion.flags.writeable = False
    return adjacency


def bone_vectors(coords: np.ndarray, topo: SkeletonTopology) -> list[BoneVector]:
    """Per-bone differences for ``coords`` shaped ``(..., V, C)``."""
    return [
        BoneVector(near, far, coords[..., far, :] - coords[..., near, :])
        for near, far in oriented_bones(topo)
    ]


def compute_bones(
    coords: np.ndarray, topo: SkeletonTopology, confidence: bool = False
) -> np.ndarray:
    """Joint-aligned bone features for ``coords`` shaped ``(..., V, C)``.

    Each bone is stored at its farther joint; the center keeps zeros. With
    ``confidence`` the last channel holds the smaller endpoint confidence
    instead of a difference.
    """
    if coords.shape[-2] != topo.num_joints:
        raise TopologyError(
            f"coordinates have {coords.shape[-2]} joints, topology has {topo.num_joints}"
        )
    bones = np.zeros_like(coords, dtype=np.float64)
    for bone in bone_vectors(coords, topo):
        bones[..., bone.destination, :] = bone.values
        if confidence:
            bones[..., bone.destination, -1] = np.minimum(
                coords[..., bone.destination, -1], coords[..., bone.source, -1]
            )
    return bones


def available_presets() -> list[str]:
    return sorted(
        p.name.removesuffix(".json")
        for p in resources.files("bagcn.presets").iterdir()
        if p.name.endswith(".json")
    )


def load_topology(source: str | Path | dict[str, Any]) -> SkeletonTopology:
    """Load a topology from a preset name, a JSON file or a dict."""
    if isinstance(source, dict):
        topo = SkeletonTopology.from_dict(source)
    else:
        text = _read_topology_text(source)
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise TopologyError(f"topology {source}: invalid JSON: {err}") from err
        raw.setdefault("name", Path(str(source)).stem)
        topo = SkeletonTopology.from_dict(raw)
    hop_distances(topo)
    return topo


def _read_topology_text(source: str | Path) -> str:
    name = str(source)
    if isinstance(source, str) and name in available_presets():
        return resources.files("bagcn.presets").joinpath(f"{name}.json").read_text("utf-8")
    try:
        return Path(source).read_text("utf-8")
    except OSError as err:
        raise TopologyError(
            f"unknown topology {name!r}: not a preset ({', '.join(available_presets())}) "
            "and not a readable file"
        ) from err
