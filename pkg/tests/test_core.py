import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from socsim.core import (AgentStore, Event, EventQueue, OpinionState, aggregate, decode_event,
                         encode_event, member_count)
from socsim.errors import EmptyQueue, MixedTick, PastTimestamp
from socsim.rng import counter_choice, counter_uniform, stream


def test_queue_orders_by_time_then_priority_then_seq():
    q = EventQueue()
    q.enqueue(Event(5, "a", priority=1))
    q.enqueue(Event(5, "b", priority=0))
    q.enqueue(Event(3, "c", priority=9))
    q.enqueue(Event(5, "d", priority=0))
    assert [q.pop().kind for _ in range(4)] == ["c", "b", "d", "a"]


def test_queue_assigns_unique_increasing_seq():
    q = EventQueue()
    seqs = [q.enqueue(Event(0, "x")).seq for _ in range(5)]
    assert seqs == [0, 1, 2, 3, 4]


def test_pop_empty_raises():
    with pytest.raises(EmptyQueue):
        EventQueue().pop()
    with pytest.raises(EmptyQueue):
        EventQueue().pop_tick_batch()


def test_enqueue_in_the_past_rejected():
    q = EventQueue()
    q.current_tick = 4
    with pytest.raises(PastTimestamp):
        q.enqueue(Event(3, "late"))
    q.enqueue(Event(4, "now"))


def test_pop_tick_batch_takes_only_earliest_tick():
    q = EventQueue()
    for t in (2, 1, 1, 3):
        q.enqueue(Event(t, "e"))
    tick, batch = q.pop_tick_batch()
    assert tick == 1 and len(batch) == 2 and len(q) == 2


events_st = st.lists(st.tuples(st.integers(0, 20), st.integers(-3, 3)), min_size=0, max_size=200)


@given(events_st)
def test_property_pop_order_is_lexicographic(items):
    q = EventQueue()
    for t, p in items:
        q.enqueue(Event(t, "e", priority=p))
    keys = [q.pop().sort_key for _ in range(len(items))]
    assert keys == sorted(keys)
    assert len({k[2] for k in keys}) == len(keys)


def _batch(spec):
    q = EventQueue()
    for key, prio, target in spec:
        q.enqueue(Event(7, "k" if key else "plain", priority=prio, targets=(target,),
                        payload={"v": target}, agg_key=key))
    return q.pop_tick_batch()[1]


batch_st = st.lists(st.tuples(st.sampled_from([None, "a", "b"]), st.integers(0, 3), st.integers(0, 50)),
                    min_size=1, max_size=40)


@given(batch_st)
def test_property_aggregate_conserves_members(spec):
    batch = _batch(spec)
    merged = aggregate(batch)
    assert sum(member_count(e) for e in merged) == len(batch)
    member_payloads = sorted(v for e in merged for v in (m["v"] for m in e.members()))
    assert member_payloads == sorted(e.payload["v"] for e in batch)
    assert len({e.agg_key for e in merged if e.agg_key}) == sum(1 for e in merged if e.agg_key)


@given(batch_st)
def test_property_aggregate_is_idempotent(spec):
    once = aggregate(_batch(spec))
    twice = aggregate(once)
    assert [encode_event(e) for e in once] == [encode_event(e) for e in twice]


@given(batch_st)
def test_property_merged_priority_and_seq_are_member_minimum(spec):
    batch = _batch(spec)
    for e in aggregate(batch):
        if e.merged:
            assert e.priority == min(e.payload["member_priorities"])
            assert e.seq == min(e.payload["member_seqs"])


def test_aggregate_examples():
    assert aggregate([]) == []
    q = EventQueue()
    e = q.enqueue(Event(1, "solo", agg_key="k", targets=(3,)))
    out = aggregate([e])
    assert len(out) == 1 and member_count(out[0]) == 1
    with pytest.raises(MixedTick):
        aggregate([Event(1, "a", seq=0), Event(2, "b", seq=1)])


payload_st = st.recursive(
    st.none() | st.booleans() | st.integers(-2**40, 2**40) | st.text(max_size=8)
    | st.floats(allow_nan=False, allow_infinity=False),
    lambda c: st.lists(c, max_size=3) | st.dictionaries(st.text(max_size=5), c, max_size=3), max_leaves=10)


@given(st.integers(0, 10**6), st.integers(-5, 5), st.lists(st.integers(0, 99), max_size=4),
       st.dictionaries(st.text(max_size=6), payload_st, max_size=4), st.none() | st.text(min_size=1, max_size=4),
       st.integers(0, 10**9))
def test_property_event_roundtrip(t, p, targets, payload, key, seq):
    e = Event(t, "kind", priority=p, initiators=(1,), targets=targets, payload=payload, agg_key=key, seq=seq)
    assert decode_event(encode_event(e)) == e


def test_agent_store_write_guard():
    store = AgentStore([{"a": 1}], ["text"], profile_index=[0, 0, 0])
    store.add_column("internal", "x", np.zeros(3))
    with pytest.raises(RuntimeError):
        store.set_internal(0, "x", 1.0)
    with store.writable():
        store.set_internal(1, "x", 2.0)
    assert store[1].internal["x"] == 2.0
    assert store[0].profile is store[2].profile  # shared pool row
    with pytest.raises(TypeError):
        store[0].profile["a"] = 2


def test_agent_store_column_length_checked():
    store = AgentStore([{}], ["t"])
    with pytest.raises(ValueError):
        store.add_column("external", "y", np.zeros(2))


def test_opinion_parse():
    assert OpinionState.parse("Agree") is OpinionState.AGREE
    assert OpinionState.parse(" neutral ") is OpinionState.NEUTRAL
    assert OpinionState.parse(np.int8(1)) is OpinionState.DISAGREE
    for bad in ("maybe", 7, True):
        with pytest.raises(ValueError):
            OpinionState.parse(bad)


def test_rng_streams_are_keyed_and_reproducible():
    a = stream(1, "x", 0).random(4)
    assert np.array_equal(a, stream(1, "x", 0).random(4))
    assert not np.array_equal(a, stream(1, "x", 1).random(4))
    assert not np.array_equal(a, stream(2, "x", 0).random(4))
    u = counter_uniform(3, "t", [5, 9])
    assert np.array_equal(u[[1]], counter_uniform(3, "t", [9]))  # per-counter, order independent
    c = counter_choice(3, "t", np.arange(10_000), 3)
    assert set(np.unique(c)) == {0, 1, 2}
    assert np.all(np.abs(np.bincount(c) / 10_000 - 1 / 3) < 0.03)
