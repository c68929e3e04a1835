"""Storage policy for per-node model caches during DFS.

A node keeps only the single-step state for the token it consumed. Its first
child runs on the transient full cache produced when the node was evaluated;
just before a second child is expanded, the node rebuilds its full cache by
walking parent pointers to the nearest ancestor that still holds one, and
keeps it for any further children. A greedy chain of only-children therefore
stores no full caches at all.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable


@dataclass(eq=False)
class LedgerNode:
    step: Hashable
    parent: "LedgerNode | None"
    full: tuple | None = None
    children_started: int = 0
    materializations: int = 0


@dataclass
class CacheLedger:
    reconstitutions: int = 0
    reconstitution_steps: int = 0
    stored: int = 0
    peak_stored: int = 0
    max_materializations: int = 0
    materialized: list = field(default_factory=list, repr=False)
    record_materialized: bool = False

    def root(self, step: Hashable) -> LedgerNode:
        return LedgerNode(step, None)

    def enter_child(self, parent: LedgerNode, step: Hashable) -> tuple[LedgerNode, Any]:
        """Register the start of ``parent``'s next child expansion.

        Returns the new node and, when the parent had to rebuild its cache for
        this child, the rebuilt cache (else ``None``).
        """
        parent.children_started += 1
        rebuilt = None
        if parent.children_started == 2:
            rebuilt = self._reconstitute(parent)
        return LedgerNode(step, parent), rebuilt

    def _reconstitute(self, node: LedgerNode) -> tuple:
        steps = []
        cur = node
        while cur is not None and cur.full is None:
            steps.append(cur.step)
            cur = cur.parent
        base = cur.full if cur is not None else ()
        node.full = base + tuple(reversed(steps))
        self.reconstitution_steps += len(steps)
        self.reconstitutions += 1
        node.materializations += 1
        self.max_materializations = max(self.max_materializations, node.materializations)
        self.stored += 1
        self.peak_stored = max(self.peak_stored, self.stored)
        if self.record_materialized:
            self.materialized.append(node.full)
        return node.full

    def leave(self, node: LedgerNode) -> None:
        if node.full is not None:
            node.full = None
            self.stored -= 1
