import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import knapsack_reference
from slicechain.admission import (
    AdmissionDecision,
    AdmissionInstance,
    brute_force_oracle,
    instance_from_requests,
    read_instance,
    solve_exact,
    solve_greedy,
    write_instance,
)
from slicechain.contracts import GeneralRequest


def inst(demands, prices, capacity):
    return AdmissionInstance(tuple(map(tuple, demands)), tuple(map(tuple, prices)), tuple(capacity))


def test_revenue_is_sum_of_prices():
    i = inst([[1, 1]], [[2, 3]], [5, 5])
    assert i.revenues == (5,)
    with pytest.raises(ValueError):
        AdmissionInstance(((1, 1),), ((2, 3),), (5, 5), revenues=(4,))


@pytest.mark.parametrize("bad", [
    dict(demands=[[1]], prices=[[1, 1]], capacity=[1]),
    dict(demands=[[-1]], prices=[[1]], capacity=[1]),
    dict(demands=[[1], [1]], prices=[[1]], capacity=[1]),
    dict(demands=[], prices=[], capacity=[]),
])
def test_instance_validation(bad):
    with pytest.raises(ValueError):
        inst(**bad)


def test_hand_example_greedy_is_suboptimal():
    # one dense small item crowds out two that together fill capacity
    i = inst([[6], [5], [5]], [[7], [5], [5]], [10])
    assert solve_greedy(i).objective == 7
    exact = solve_exact(i)
    assert exact.y == (0, 1, 1) and exact.objective == 10


def test_multi_type_example():
    i = inst([[3, 1], [1, 3], [2, 2]], [[4, 0], [0, 4], [1, 2]], [4, 4])
    assert solve_exact(i).objective == brute_force_oracle(i) == 8


def test_zero_demand_always_admitted_and_oversized_never():
    i = inst([[0, 0], [9, 1]], [[1, 0], [100, 0]], [5, 5])
    d = solve_exact(i)
    assert d.y == (1, 0)
    d.check(i)


def test_decision_expands_whole_requests():
    i = inst([[1, 1, 1]], [[1, 1, 1]], [2, 2, 2])
    d = solve_exact(i)
    assert d.x == ((1, 1, 1),)
    d.check(i)


def test_check_catches_overfull():
    i = inst([[3]], [[1]], [2])
    with pytest.raises(AssertionError):
        AdmissionDecision.from_admitted(i, [1]).check(i)


def test_brute_force_limit():
    i = inst([[1]] * 21, [[1]] * 21, [5])
    with pytest.raises(ValueError):
        brute_force_oracle(i)


instances = st.integers(1, 4).flatmap(lambda I: st.integers(0, 10).flatmap(lambda J: st.tuples(
    st.lists(st.lists(st.integers(0, 12), min_size=I, max_size=I), min_size=J, max_size=J),
    st.lists(st.lists(st.integers(0, 9), min_size=I, max_size=I), min_size=J, max_size=J),
    st.lists(st.integers(0, 30), min_size=I, max_size=I),
)))


@settings(max_examples=150)
@given(instances)
def test_exact_matches_enumeration(data):
    demands, prices, capacity = data
    i = inst(demands, prices, capacity)
    d = solve_exact(i)
    d.check(i)
    best = knapsack_reference(i.demands, i.revenues, i.capacity)
    assert d.objective == best == brute_force_oracle(i)
    g = solve_greedy(i)
    g.check(i)
    assert g.objective <= d.objective


def test_float_instance():
    i = inst([[0.5, 1.5], [1.0, 0.2]], [[0.3, 0.3], [1.1, 0.0]], [1.2, 1.6])
    assert solve_exact(i).objective == pytest.approx(brute_force_oracle(i))


def test_from_requests():
    reqs = [GeneralRequest("a", (1, 2), (3, 4)), GeneralRequest("b", (2, 2), (1, 1))]
    i = instance_from_requests(reqs, (3, 4))
    assert i.J == 2 and i.I == 2 and i.revenues == (7, 2)


def test_text_round_trip():
    i = inst([[1, 2], [3, 4]], [[5, 6], [7, 8.5]], [10, 20])
    buf = io.StringIO()
    write_instance(i, buf)
    assert read_instance(buf.getvalue()) == i


def test_reader_skips_comments():
    text = "# header\n2 1\n5 5  # capacity\n\n1 2\n3 4\n"
    assert read_instance(text) == inst([[1, 2]], [[3, 4]], [5, 5])


@pytest.mark.parametrize("text,needle", [
    ("", "empty"),
    ("2 1\n5 5\n1 x\n3 4\n", "line 3"),
    ("2\n", "line 1"),
    ("2 1\n5 5\n1 2\n", "expected 4 data lines"),
    ("2 1\n5 5\n1 2 3\n3 4\n", "line 3: expected 2 values"),
])
def test_reader_errors(text, needle):
    with pytest.raises(ValueError, match=needle):
        read_instance(text)
