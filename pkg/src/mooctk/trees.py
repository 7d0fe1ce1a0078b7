"""Problem-forest numbering and reconstruction, plus reply-thread rebuilding.

A problem module (homework, quiz, ...) is a rooted ordered tree whose leaves
receive submissions. Numbering assigns each node a unique id in depth-first
preorder and records parent id plus 1-based sibling order, which is enough to
rebuild the exact topology later.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .schema import Collaboration, Problem


class TreeStructureError(ValueError):
    """Raised when parent-pointer rows do not form the expected forest."""

    def __init__(self, message: str, offender: int | None = None):
        super().__init__(message)
        self.offender = offender


@dataclass
class ProblemNode:
    """One node of a hierarchical problem description."""

    name: str
    children: list["ProblemNode"] = field(default_factory=list)
    order: int | None = None
    type_name: str | None = None
    uri: str | None = None
    release: int | None = None
    soft_deadline: int | None = None
    hard_deadline: int | None = None
    max_submissions: int | None = None
    problem_id: int | None = None

    def leaves(self) -> list["ProblemNode"]:
        if not self.children:
            return [self]
        out = []
        for child in self.children:
            out.extend(child.leaves())
        return out

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children)


def number_problem_tree(
    root: ProblemNode,
    type_id_of,
    start_id: int = 1,
) -> list[Problem]:
    """Assign dense ids to a problem tree in depth-first preorder.

    The root row gets a null parent and no order id; every child row carries its
    parent's id and a 1-based sibling order. ``type_id_of`` maps a type name to
    a problem_type_id (children without a type inherit the root's).

    Raises TreeStructureError if two siblings carry the same explicit order.
    """
    rows: list[Problem] = []
    next_id = start_id

    def walk(node: ProblemNode, parent_id: int | None, order: int | None, inherited_type: str | None):
        nonlocal next_id
        node_id = next_id
        next_id += 1
        node.problem_id = node_id
        type_name = node.type_name or inherited_type
        rows.append(
            Problem(
                problem_id=node_id,
                problem_parent_id=parent_id,
                order_id=order,
                problem_name=node.name,
                problem_type_id=type_id_of(type_name),
                problem_release_timestamp=node.release,
                problem_soft_deadline_timestamp=node.soft_deadline,
                problem_hard_deadline_timestamp=node.hard_deadline,
                problem_max_submission=node.max_submissions,
            )
        )
        orders = [
            child.order if child.order is not None else position
            for position, child in enumerate(node.children, start=1)
        ]
        if len(set(orders)) != len(orders):
            raise TreeStructureError(
                f"duplicate sibling order under {node.name!r}", offender=node_id
            )
        for child, child_order in sorted(zip(node.children, orders), key=lambda p: p[1]):
            walk(child, node_id, child_order, type_name)

    walk(root, None, None, root.type_name)
    return rows


def _check_forest(ids: set[int], parent_of: dict[int, int | None], what: str):
    """Reject dangling parents and cycles; parent chains must reach null in
    at most len(ids) steps."""
    for node_id, parent in parent_of.items():
        if parent is not None and parent not in ids:
            raise TreeStructureError(
                f"{what} {node_id} has dangling parent {parent}", offender=node_id
            )
    state: dict[int, int] = {}  # 0 visiting, 1 done

    def resolve(node_id: int):
        chain = []
        cur = node_id
        while cur is not None and state.get(cur) != 1:
            if state.get(cur) == 0:
                raise TreeStructureError(f"{what} {cur} is part of a parent cycle", offender=cur)
            state[cur] = 0
            chain.append(cur)
            cur = parent_of[cur]
        for c in chain:
            state[c] = 1

    for node_id in ids:
        resolve(node_id)


def reconstruct_problem_tree(rows: list[Problem], type_name_of=None) -> list[ProblemNode]:
    """Rebuild the ordered problem forest from table rows.

    Returns the root nodes; children are sorted by order_id. Raises
    TreeStructureError naming the offending problem_id on cycles or dangling
    parents.
    """
    ids = {r.problem_id for r in rows}
    parent_of = {r.problem_id: r.problem_parent_id for r in rows}
    _check_forest(ids, parent_of, "problem")

    nodes: dict[int, ProblemNode] = {}
    for r in rows:
        nodes[r.problem_id] = ProblemNode(
            name=r.problem_name,
            order=r.order_id,
            type_name=type_name_of(r.problem_type_id) if type_name_of else None,
            release=r.problem_release_timestamp,
            soft_deadline=r.problem_soft_deadline_timestamp,
            hard_deadline=r.problem_hard_deadline_timestamp,
            max_submissions=r.problem_max_submission,
            problem_id=r.problem_id,
        )
    roots = []
    for r in rows:
        node = nodes[r.problem_id]
        if r.problem_parent_id is None:
            roots.append(node)
        else:
            nodes[r.problem_parent_id].children.append(node)
    for node in nodes.values():
        node.children.sort(key=lambda c: (c.order if c.order is not None else 0, c.problem_id))
    roots.sort(key=lambda n: n.problem_id)
    return roots


def same_topology(a: ProblemNode, b: ProblemNode) -> bool:
    """Structural equality: names, sibling order, and shape."""
    if a.name != b.name or len(a.children) != len(b.children):
        return False
    return all(same_topology(x, y) for x, y in zip(a.children, b.children))


@dataclass
class ThreadNode:
    post: Collaboration
    children: list["ThreadNode"] = field(default_factory=list)


def reconstruct_thread(rows: list[Collaboration], root_id: int) -> ThreadNode:
    """Rebuild the reply tree under ``root_id``; children ordered by timestamp.

    Raises TreeStructureError when root_id is missing or a row points at a
    parent that is not present.
    """
    by_id = {r.collaboration_id: r for r in rows}
    if root_id not in by_id:
        raise TreeStructureError(f"thread root {root_id} not present", offender=root_id)
    _check_forest(
        set(by_id), {r.collaboration_id: r.collaboration_parent_id for r in rows}, "collaboration"
    )
    nodes = {cid: ThreadNode(post=row) for cid, row in by_id.items()}
    for row in rows:
        if row.collaboration_parent_id is not None and row.collaboration_id != root_id:
            nodes[row.collaboration_parent_id].children.append(nodes[row.collaboration_id])
    for node in nodes.values():
        node.children.sort(key=lambda n: (n.post.collaboration_timestamp, n.post.collaboration_id))
    return nodes[root_id]
