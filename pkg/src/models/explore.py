# src/models/explore.py - Pydantic models for topology exploration results

from typing import Literal

from pydantic import BaseModel, Field

from .ontology import HyperedgeSummary


class Neighbor(BaseModel):
    edge_id: str
    label: str
    direction: Literal["in", "out"]
    node_id: str
    description: str
    join_spec: str


class AdjacencyReport(BaseModel):
    node: str
    source: str
    description: str
    neighbors: list[Neighbor] = Field(default_factory=list)
    incident_hyperedges: list[HyperedgeSummary] = Field(default_factory=list)


class PathElement(BaseModel):
    id: str
    kind: Literal["base", "hyperedge"]


class PathResult(BaseModel):
    paths: list[list[PathElement]] = Field(default_factory=list)
    depth_bound: int
    truncated: bool = False

    def id_paths(self) -> list[tuple[str, ...]]:
        return [tuple(e.id for e in path) for path in self.paths]
