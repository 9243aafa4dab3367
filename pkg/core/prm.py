# core/prm.py
"""Lazy probabilistic roadmap in joint space for the lift-to-lift transit."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import networkx as nx
import numpy as np
from scipy.spatial import cKDTree

from core.collision import CollisionBody, min_clearance
from core.config import PrmCfg
from core.errors import InputError
from core.kinematics import KinematicChain, random_config

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PrmResult:
    samples: list[np.ndarray]
    ok: bool
    reason: str = ""
    stats: dict = field(default_factory=dict)


def edge_subdivisions(q_a: np.ndarray, q_b: np.ndarray, cfg: PrmCfg) -> int:
    """
    Pieces an edge is cut into so that no joint moves more than
    ``max_joint_step`` and no link point moves more than ``cartesian_step``
    (bounded by ``reach`` times the summed joint motion).
    """
    dq = np.abs(np.asarray(q_b) - np.asarray(q_a))
    n = max(dq.max() / cfg.max_joint_step, dq.sum() * cfg.reach / cfg.cartesian_step)
    return max(1, int(np.ceil(n - 1e-12)))


def densify(q_a: np.ndarray, q_b: np.ndarray, cfg: PrmCfg) -> list[np.ndarray]:
    """Intermediate configs from q_a (excluded) to q_b (included)."""
    n = edge_subdivisions(q_a, q_b, cfg)
    return [q_a + (q_b - q_a) * (i / n) for i in range(1, n + 1)]


class _Checker:
    def __init__(self, chain: KinematicChain, environment: Sequence[CollisionBody]):
        self.chain = chain
        self.environment = tuple(environment)
        self.calls = 0

    def free(self, q: np.ndarray) -> bool:
        self.calls += 1
        return min_clearance(self.chain, q, self.environment) > 0.0

    def edge(self, q_a: np.ndarray, q_b: np.ndarray, cfg: PrmCfg) -> Optional[list[np.ndarray]]:
        pts = densify(q_a, q_b, cfg)
        for q in pts:
            if not self.free(q):
                return None
        return pts


def prm_connect(
    chain: KinematicChain,
    q_from,
    q_to,
    environment: Sequence[CollisionBody],
    cfg: PrmCfg = PrmCfg(),
    seed: int = 0,
) -> PrmResult:
    """
    Connect two collision-free configs. The straight edge is tried first;
    otherwise a roadmap of ``cfg.samples`` configs with ``cfg.neighbors``
    nearest connections is searched shortest-path first, checking nodes and
    edges only when they lie on the current best path.
    """
    q_from = chain.check_config(q_from).copy()
    q_to = chain.check_config(q_to).copy()
    checker = _Checker(chain, environment)
    if not (checker.free(q_from) and checker.free(q_to)):
        raise InputError("transit endpoints must be collision-free")
    if np.array_equal(q_from, q_to):
        return PrmResult([q_from], True, stats={"direct": True, "checks": checker.calls})

    direct = checker.edge(q_from, q_to, cfg)
    if direct is not None:
        return PrmResult([q_from] + direct, True, stats={"direct": True, "checks": checker.calls})

    rng = np.random.default_rng(seed)
    nodes = np.vstack([q_from, q_to] + [random_config(chain, rng) for _ in range(cfg.samples)])
    tree = cKDTree(nodes)
    k = min(cfg.neighbors + 1, len(nodes))
    dist, idx = tree.query(nodes, k=k)
    G = nx.Graph()
    G.add_nodes_from(range(len(nodes)))
    for i in range(len(nodes)):
        for d, j in zip(dist[i][1:], idx[i][1:]):
            G.add_edge(i, int(j), weight=float(d))

    node_ok = {0: True, 1: True}
    edge_pts: dict[tuple[int, int], list[np.ndarray]] = {}
    rejected_nodes = rejected_edges = 0
    while True:
        try:
            path = nx.shortest_path(G, 0, 1, weight="weight")
        except nx.NetworkXNoPath:
            stats = {
                "direct": False,
                "nodes": len(nodes),
                "rejected_nodes": rejected_nodes,
                "rejected_edges": rejected_edges,
                "checks": checker.calls,
            }
            log.info("prm: no path (%s)", stats)
            return PrmResult([q_from], False, "no path within sample budget", stats)

        bad = False
        for i in path:
            if i not in node_ok:
                node_ok[i] = checker.free(nodes[i])
            if not node_ok[i]:
                G.remove_node(i)
                rejected_nodes += 1
                bad = True
        if bad:
            continue
        for a, b in zip(path[:-1], path[1:]):
            key = (a, b)
            if key in edge_pts:
                continue
            pts = checker.edge(nodes[a], nodes[b], cfg)
            if pts is None:
                G.remove_edge(a, b)
                rejected_edges += 1
                bad = True
                break
            edge_pts[key] = pts
        if bad:
            continue

        samples = [q_from]
        for a, b in zip(path[:-1], path[1:]):
            samples.extend(edge_pts[(a, b)])
        stats = {
            "direct": False,
            "nodes": len(nodes),
            "path_nodes": len(path),
            "rejected_nodes": rejected_nodes,
            "rejected_edges": rejected_edges,
            "checks": checker.calls,
        }
        log.debug("prm: path with %d samples (%s)", len(samples), stats)
        return PrmResult(samples, True, stats=stats)
