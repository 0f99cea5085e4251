"""Transport behavior: matched messaging, reductions, failure reporting."""
import numpy as np
import pytest

from propsim.core import DecompGrid, EngineError
from propsim.engine import TrafficStats, encode_frame, run


def _pingpong(ctx):
    other = 1 - ctx.rank
    block = np.full((3, 2), float(ctx.rank + 1), order="F")
    ctx.send(other, block, phase=0, step=0)
    return float(ctx.receive(other, phase=0, step=0).sum())


def test_frame_layout_is_pinned():
    frame = encode_frame(1, 2, 3, 4, b"xy")
    assert frame[:8] == (18).to_bytes(8, "little")
    assert frame[8:24] == b"".join(n.to_bytes(4, "little") for n in (1, 2, 3, 4))
    assert frame[24:] == b"xy"


def test_single_rank_runs_inline():
    out = run(DecompGrid(), lambda ctx: ctx.rank + 41)
    assert out[0].value == 41
    assert out[0].traffic.messages == 0


def test_thread_pingpong_and_traffic():
    out = run(DecompGrid(n_pv=2), _pingpong)
    assert out[0].value == 12.0  # six elements of 2.0 from the peer
    assert out[1].value == 6.0
    for r in (0, 1):
        assert out[r].traffic.messages == 1
        assert out[r].traffic.elements == 6
        assert out[r].traffic.nbytes == 48
        assert out[r].traffic.by_phase == {0: (1, 6, 48)}


def test_process_transport_matches_thread():
    by_thread = run(DecompGrid(n_pv=2), _pingpong, transport="thread")
    by_process = run(DecompGrid(n_pv=2), _pingpong, transport="process")
    for r in (0, 1):
        assert by_thread[r].value == by_process[r].value
        assert by_thread[r].traffic == by_process[r].traffic


def test_process_payload_larger_than_socket_buffer():
    def fn(ctx):
        if ctx.rank == 0:
            ctx.send(1, np.arange(524288, dtype=np.float64), phase=0, step=0)
            return 0.0
        return float(ctx.receive(0, phase=0, step=0)[-1])

    out = run(DecompGrid(n_pv=2), fn, transport="process")
    assert out[1].value == 524287.0


def test_receive_is_keyed_not_ordered():
    def fn(ctx):
        if ctx.rank == 0:
            ctx.send(1, np.zeros(3), phase=0, step=0)
            ctx.send(1, np.zeros(4), phase=0, step=1)
            ctx.send(1, np.zeros(5), phase=7, step=0)
            return None
        a = ctx.receive(0, phase=7, step=0)
        b = ctx.receive(0, phase=0, step=1)
        c = ctx.receive(0, phase=0, step=0)
        return (a.size, b.size, c.size)

    for transport in ("thread", "process"):
        out = run(DecompGrid(n_pv=2), fn, transport=transport)
        assert out[1].value == (5, 4, 3)


def test_sent_arrays_are_isolated_copies():
    def fn(ctx):
        if ctx.rank == 0:
            block = np.ones(4)
            ctx.send(1, block, phase=0, step=0)
            block[:] = -1.0  # must not reach the receiver
            ctx.send(1, np.zeros(1), phase=0, step=1)
            return None
        got = ctx.receive(0, phase=0, step=0)
        ctx.receive(0, phase=0, step=1)
        return float(got.sum())

    assert run(DecompGrid(n_pv=2), fn)[1].value == 4.0


def _reduce_fn(ctx):
    # float32 spacing at 2**24 makes the fold order visible in the result
    seed = 16777216.0 if ctx.coords.p_f == 0 else 1.0
    part = np.full(3, seed, dtype=np.float32)
    return ctx.reduce_field_axis(part, phase=2, step=5)


def test_reduce_field_axis_folds_ascending():
    out = run(DecompGrid(n_pf=4), _reduce_fn)
    for r in range(4):
        assert out[r].value.dtype == np.float32
        assert np.array_equal(out[r].value, np.full(3, 16777216.0, dtype=np.float32))


def test_reduce_field_axis_per_slab():
    def fn(ctx):
        part = np.array([10.0 ** ctx.coords.p_f + ctx.coords.p_v])
        return ctx.reduce_field_axis(part, phase=1, step=0)

    out = run(DecompGrid(n_pf=2, n_pv=2), fn)
    for r, res in out.items():
        p_v = (r // 2) % 2
        assert res.value[0] == 11.0 + 2 * p_v  # reduction stays inside the slab


def test_reduce_noop_without_field_split():
    out = run(DecompGrid(n_pv=2), lambda ctx: ctx.reduce_field_axis(np.ones(2), phase=0, step=0))
    assert np.array_equal(out[0].value, np.ones(2))
    assert out[0].traffic.messages == 0


@pytest.mark.parametrize("transport", ["thread", "process"])
def test_delay_injection_leaves_results_alone(transport):
    grid = DecompGrid(n_pf=3, n_pv=2)
    base = run(grid, _reduce_fn, transport=transport)
    for seed in (1, 99):
        jittered = run(grid, _reduce_fn, transport=transport, inject_delay=0.003, delay_seed=seed)
        for r in base:
            assert np.array_equal(base[r].value, jittered[r].value)


def test_unmatched_receive_times_out():
    def fn(ctx):
        if ctx.rank == 0:
            return ctx.receive(1, phase=0, step=0)
        return None

    with pytest.raises(EngineError, match="rank 0"):
        run(DecompGrid(n_pv=2), fn, timeout=0.4)


def test_worker_exception_surfaces_with_rank():
    def fn(ctx):
        if ctx.rank == 1:
            raise ValueError("boom")
        return 7

    for transport in ("thread", "process"):
        with pytest.raises(EngineError, match="rank 1"):
            run(DecompGrid(n_pv=2), fn, transport=transport, timeout=3.0)


def test_bad_transport_rejected():
    from propsim.core import ConfigError

    with pytest.raises(ConfigError):
        run(DecompGrid(), lambda ctx: None, transport="carrier-pigeon")


def test_traffic_merge():
    a = TrafficStats()
    a.count(0, np.zeros(4))
    b = TrafficStats()
    b.count(0, np.zeros(2, dtype=np.float32))
    b.count(3, "handshake")
    a.merge(b)
    assert a.messages == 3
    assert a.elements == 6
    assert a.nbytes == 40
    assert a.by_phase == {0: (2, 6, 40), 3: (1, 0, 0)}
