from __future__ import annotations

import random

import pytest

from mooctk.schema import Collaboration, Problem
from mooctk.trees import (
    ProblemNode,
    TreeStructureError,
    number_problem_tree,
    reconstruct_problem_tree,
    reconstruct_thread,
    same_topology,
)

from .oracles import random_forum, random_problem_tree


def leaf(n):
    return ProblemNode(name=n)


def hw_fixture():
    # homework with two problems: 4 sub-problems and 3 sub-problems
    return ProblemNode(
        name="homework 1",
        type_name="homework",
        children=[
            ProblemNode(name="p1", children=[leaf(f"p1.{i}") for i in range(1, 5)]),
            ProblemNode(name="p2", children=[leaf(f"p2.{i}") for i in range(1, 4)]),
        ],
    )


def test_numbering_matches_two_branch_homework():
    rows = number_problem_tree(hw_fixture(), lambda name: 1)
    assert len(rows) == 10
    root = rows[0]
    assert root.problem_parent_id is None and root.order_id is None
    by_name = {r.problem_name: r for r in rows}
    assert by_name["p1"].problem_parent_id == root.problem_id
    assert by_name["p2"].problem_parent_id == root.problem_id
    p1_leaves = [r for r in rows if r.problem_parent_id == by_name["p1"].problem_id]
    p2_leaves = [r for r in rows if r.problem_parent_id == by_name["p2"].problem_id]
    assert sorted(r.order_id for r in p1_leaves) == [1, 2, 3, 4]
    assert sorted(r.order_id for r in p2_leaves) == [1, 2, 3]
    # dense unique ids
    assert sorted(r.problem_id for r in rows) == list(range(rows[0].problem_id, rows[0].problem_id + 10))


def test_single_node_tree():
    rows = number_problem_tree(ProblemNode(name="quiz"), lambda name: 1)
    assert len(rows) == 1
    assert rows[0].problem_parent_id is None
    assert rows[0].order_id is None


def test_duplicate_sibling_order_rejected():
    tree = ProblemNode(
        name="hw",
        children=[ProblemNode(name="a", order=1), ProblemNode(name="b", order=1)],
    )
    with pytest.raises(TreeStructureError):
        number_problem_tree(tree, lambda name: 1)


def test_reconstruct_two_branch_homework():
    rows = number_problem_tree(hw_fixture(), lambda name: 1)
    roots = reconstruct_problem_tree(rows)
    assert len(roots) == 1
    assert same_topology(roots[0], hw_fixture())


def test_reconstruct_rejects_self_parent():
    rows = [Problem(problem_id=1, problem_parent_id=1, order_id=None, problem_name="x", problem_type_id=1)]
    with pytest.raises(TreeStructureError) as err:
        reconstruct_problem_tree(rows)
    assert err.value.offender == 1


def test_reconstruct_rejects_dangling_parent():
    rows = [Problem(problem_id=2, problem_parent_id=99, order_id=1, problem_name="x", problem_type_id=1)]
    with pytest.raises(TreeStructureError) as err:
        reconstruct_problem_tree(rows)
    assert err.value.offender == 2


def test_round_trip_random_trees():
    rng = random.Random(20260310)
    for _ in range(200):
        tree = random_problem_tree(rng, max_nodes=50)
        rows = number_problem_tree(tree, lambda name: 1, start_id=rng.randint(1, 500))
        assert len(rows) == tree.node_count()
        roots = reconstruct_problem_tree(rows)
        assert len(roots) == 1
        assert same_topology(roots[0], tree)


def make_thread_rows(raw):
    return [
        Collaboration(
            collaboration_id=post_id,
            user_id=1,
            collaboration_type_id=1 if parent is None else 2,
            collaboration_parent_id=parent,
            collaboration_timestamp=ts,
        )
        for post_id, parent, ts in raw
    ]


def test_thread_question_with_two_replies():
    rows = make_thread_rows([(1, None, 1000), (2, 1, 2000), (3, 1, 3000)])
    thread = reconstruct_thread(rows, root_id=1)
    assert [child.post.collaboration_id for child in thread.children] == [2, 3]


def test_thread_singleton():
    rows = make_thread_rows([(5, None, 1000)])
    thread = reconstruct_thread(rows, root_id=5)
    assert thread.post.collaboration_id == 5 and thread.children == []


def test_thread_dangling_parent_rejected():
    rows = make_thread_rows([(1, None, 1000), (2, 7, 2000)])
    with pytest.raises(TreeStructureError):
        reconstruct_thread(rows, root_id=1)


def test_thread_random_forums_match_generator():
    rng = random.Random(99)
    for _ in range(50):
        raw = random_forum(rng, max_posts=200)
        rows = make_thread_rows(raw)
        parent_of = {post_id: parent for post_id, parent, _ in raw}
        roots = [post_id for post_id, parent, _ in raw if parent is None]
        for root in roots:
            thread = reconstruct_thread(rows, root)
            stack = [thread]
            while stack:
                node = stack.pop()
                for child in node.children:
                    assert parent_of[child.post.collaboration_id] == node.post.collaboration_id
                    stack.append(child)
