#!/usr/bin/env python3
"""
Feasible-configuration counts by brute force.

Recomputes the number of distinct vertex -> node assignments that satisfy the
distance threshold on every communication edge, straight from coordinates and
itertools, and compares it with enumerate_feasible. The unit-square counts
pinned in tests/test_topology.py come from this script.

Usage: python scripts/brute_force_feasible_count.py
"""

import itertools
import math
import os
import sys

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import structlog

from app.utils.topology_utils import CommGraph, NodeLayout, build_distance_matrix, enumerate_feasible

logger = structlog.get_logger()

UNIT_SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
GRID_2X4 = [(float(c), float(r)) for r in range(2) for c in range(4)]


def star_edges(m):
    return [(v, 0) for v in range(1, m)]


def line_edges(m):
    return [(v, v - 1) for v in range(1, m)]


def brute_force_count(coords, edges, m, threshold):
    """Count straight from coordinates: normalise by the largest pairwise distance."""
    largest = max(math.dist(a, b) for a, b in itertools.combinations(coords, 2))
    count = 0
    for combo in itertools.permutations(range(len(coords)), m):
        if all(math.dist(coords[combo[v]], coords[combo[p]]) / largest <= threshold + 1e-12 for v, p in edges):
            count += 1
    return count


def library_count(coords, kind, m, threshold):
    D = build_distance_matrix(NodeLayout(coords=np.array(coords)))
    graph = CommGraph.star(m) if kind == "star" else CommGraph.line(m)
    return len(enumerate_feasible(D, graph, threshold))


CASES = [
    ("unit square", UNIT_SQUARE, "star", 3, 0.75),
    ("unit square", UNIT_SQUARE, "line", 3, 0.75),
    ("unit square", UNIT_SQUARE, "star", 3, 1.0),
    ("unit square", UNIT_SQUARE, "star", 3, 0.0),
    ("2x4 grid", GRID_2X4, "star", 3, 0.35),
    ("2x4 grid", GRID_2X4, "line", 3, 0.35),
    ("2x4 grid", GRID_2X4, "line", 4, 0.5),
    ("2x4 grid", GRID_2X4, "star", 2, 0.3),
]


def run_counts():
    print("🔢 Feasible configuration counts (brute force vs enumerate_feasible)")
    print("=" * 70)
    mismatches = 0
    for name, coords, kind, m, threshold in CASES:
        edges = star_edges(m) if kind == "star" else line_edges(m)
        expected = brute_force_count(coords, edges, m, threshold)
        actual = library_count(coords, kind, m, threshold)
        status = "✅" if expected == actual else "❌"
        mismatches += expected != actual
        print(f"{status} {name:<12} {kind:<5} M={m} T={threshold:<5} brute={expected:<5} library={actual}")
        if expected != actual:
            logger.error("feasible_count_mismatch", case=name, kind=kind, M=m, T=threshold,
                         brute_force=expected, library=actual)
    print("=" * 70)
    if mismatches:
        print(f"❌ {mismatches} mismatching case(s)")
        return False
    print("🎉 All counts agree")
    return True


if __name__ == "__main__":
    sys.exit(0 if run_counts() else 1)
