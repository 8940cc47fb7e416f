import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgtsmac import protocol as proto
from sgtsmac.protocol import (
    BACKOFF_US,
    DOZE,
    ChannelAccessFailure,
    Frame,
    FrameKind,
    FrameTooLong,
    NodeMachine,
    NodeState,
    NotSynchronized,
    Role,
    csma_ca_attempt,
    csma_ca_process,
    energy_tick,
    energy_total,
    on_slot_boundary,
    request_gts,
    run_cap_contention,
    sync_to_superbeacon,
)
from sgtsmac.schedule import (
    LevelOutOfRange,
    ScheduleTable,
    SlotRequest,
    SuperframeConfig,
    allocate_gbs,
    allocate_gts,
    merge_sgts,
)


def demo_table():
    t = ScheduleTable.empty(SuperframeConfig(n_max=1))
    t, _ = allocate_gbs(t, 1)  # slot 4
    t, a = allocate_gts(t, SlotRequest(11, 1, 0))  # slot 1
    t, b = allocate_gts(t, SlotRequest(12, 1, 1))  # slot 2, phase 0
    return t, a, b


def synced(node_id, role=Role.NODE, parent=1, table=None, epoch=0):
    n = NodeMachine(node_id, role, parent=parent)
    n.synced_superframe = 0
    n.view = table
    n.view_epoch = epoch
    return n


def data(src, dst, t=0, via="gts"):
    return Frame(FrameKind.DATA, src, dst, proto.DATA_SYMBOLS, 1, t, via)


# -- slot decisions ------------------------------------------------------------

def test_superbeacon_slot():
    t, _, _ = demo_table()
    pan = NodeMachine(0, Role.PAN)
    assert on_slot_boundary(pan, t, 0, 0).kind == "transmit-superbeacon"
    assert on_slot_boundary(synced(11, table=t), t, 0, 0).kind == "listen"


def test_gbs_slot_roles():
    t, _, _ = demo_table()
    assert on_slot_boundary(synced(1, Role.COORDINATOR, None, t), t, 0, 4).kind == "transmit-beacon"
    child = on_slot_boundary(synced(11, table=t), t, 0, 4)
    assert child.kind == "listen" and child.expected == 1
    assert on_slot_boundary(synced(21, parent=2, table=t), t, 0, 4) == DOZE


def test_gts_owner_transmits_only_with_a_frame():
    t, a, _ = demo_table()
    n = synced(11, table=t)
    assert on_slot_boundary(n, t, 0, a.slot_index) == DOZE
    f = data(11, 1)
    n.pending.append(f)
    act = on_slot_boundary(n, t, 0, a.slot_index, now_us=0)
    assert act.kind == "transmit-data" and act.frame == f and act.allocation == a
    peer = on_slot_boundary(synced(1, Role.COORDINATOR, None, t), t, 0, a.slot_index)
    assert peer.kind == "listen" and peer.expected == 11


def test_frame_not_sent_before_it_exists():
    t, a, _ = demo_table()
    n = synced(11, table=t)
    n.pending.append(data(11, 1, t=5000))
    assert on_slot_boundary(n, t, 0, a.slot_index, now_us=960) == DOZE


def test_level1_slot_skipped_in_odd_superframes():
    t, _, b = demo_table()
    n = synced(12, table=t)
    n.pending.append(data(12, 1))
    assert on_slot_boundary(n, t, 0, b.slot_index).kind == "transmit-data"
    assert on_slot_boundary(n, t, 1, b.slot_index) == DOZE


def test_others_doze_in_foreign_gts_unless_measuring():
    t, a, _ = demo_table()
    other = synced(2, Role.COORDINATOR, None, t)
    assert on_slot_boundary(other, t, 0, a.slot_index) == DOZE
    act = on_slot_boundary(other, t, 0, a.slot_index, measure=True)
    assert act.kind == "listen" and act.measure


def test_stale_view_abstains():
    t, a, _ = demo_table()
    n = synced(11, table=t, epoch=0)
    n.pending.append(data(11, 1))
    # counter 2 is in horizon epoch 1; the node has not yet seen that epoch's table
    n.synced_superframe = 1
    assert on_slot_boundary(n, t, 2, a.slot_index) == DOZE


def test_not_synchronized():
    t, _, _ = demo_table()
    n = NodeMachine(11, Role.NODE, parent=1)
    with pytest.raises(NotSynchronized):
        on_slot_boundary(n, t, 0, 1)
    n = synced(11, table=t)
    with pytest.raises(NotSynchronized):
        on_slot_boundary(n, t, 3, 1)  # more than one horizon (2) since last beacon


def test_sgts_both_owners_transmit():
    t = ScheduleTable.empty(SuperframeConfig(n_max=0))
    t, a = allocate_gts(t, SlotRequest(11, 1, 0))
    t, b = allocate_gts(t, SlotRequest(21, 2, 0))
    t, kept, moved = merge_sgts(t, a, b)
    for node, peer in ((11, 1), (21, 2)):
        n = synced(node, parent=peer, table=t)
        n.pending.append(data(node, peer))
        assert on_slot_boundary(n, t, 0, kept.slot_index).kind == "transmit-data"
    rx = on_slot_boundary(synced(2, Role.COORDINATOR, None, t), t, 0, kept.slot_index)
    assert rx.kind == "listen" and rx.expected == 21


def test_cap_behaviour():
    t, _, _ = demo_table()
    n = synced(11, table=t)
    assert on_slot_boundary(n, t, 0, 7) == DOZE
    f = data(11, 1, via="cap")
    n.pending.append(f)
    act = on_slot_boundary(n, t, 0, 7)
    assert act.contend and act.frame == f
    assert on_slot_boundary(synced(1, Role.COORDINATOR, None, t), t, 0, 7).kind == "listen"


# -- CSMA/CA -------------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 15))
def test_csma_idle_channel_timing(seed, slots):
    window = (0, slots * 960)
    rng = np.random.default_rng(seed)
    try:
        start = csma_ca_attempt(NodeMachine(1, Role.NODE), data(1, 0, via="cap"), window, rng)
    except ChannelAccessFailure:
        return
    # backoff boundaries, two CCAs, and the frame ends inside the CAP
    assert start % BACKOFF_US == 0
    assert start >= 2 * BACKOFF_US
    assert start <= (2 ** proto.MAC_MIN_BE - 1 + 2) * BACKOFF_US
    assert start + data(1, 0).duration_us <= window[1]


def test_csma_gives_up_after_max_backoffs():
    rng = np.random.default_rng(0)
    proc = csma_ca_process((0, 10**7), 640, rng)
    ccas = 0
    t = next(proc)
    with pytest.raises(ChannelAccessFailure, match="busy"):
        while True:
            ccas += 1
            t = proc.send(False)
    assert ccas == proto.MAC_MAX_CSMA_BACKOFFS + 1


def test_csma_busy_then_idle_needs_two_clear_ccas():
    rng = np.random.default_rng(1)
    proc = csma_ca_process((0, 10**6), 640, rng)
    t0 = next(proc)
    t1 = proc.send(False)  # busy: new backoff
    assert t1 > t0
    t2 = proc.send(True)
    assert t2 == t1 + BACKOFF_US
    with pytest.raises(StopIteration) as done:
        proc.send(True)
    assert done.value.value == t2 + BACKOFF_US


def test_frame_longer_than_cap():
    with pytest.raises(FrameTooLong):
        next(csma_ca_process((0, 500), 640, np.random.default_rng(0)))


def test_contention_defers_to_busy_channel():
    frames = [(i, data(i, 0, via="cap"), np.random.default_rng(i)) for i in range(1, 6)]
    txs, failures = run_cap_contention(frames, (0, 14 * 960))
    assert len(txs) + len(failures) == 5
    for a, b in zip(txs, txs[1:]):
        # a node only starts after the channel cleared, unless both passed CCA together
        assert b.start >= a.end or b.start == a.start


def test_contention_is_deterministic():
    def go():
        frames = [(i, data(i, 0, via="cap"), np.random.default_rng(40 + i)) for i in range(1, 8)]
        return run_cap_contention(frames, (0, 12 * 960))

    assert go() == go()


# -- signalling, sync, energy -------------------------------------------------

def test_request_gts_frames():
    n = NodeMachine(11, Role.NODE, parent=1)
    f = request_gts(n, 2, n_max=3)
    assert f.kind is FrameKind.GTS_REQUEST and f.destination == 1
    assert f.body == SlotRequest(11, 1, 2, "uplink")
    g = request_gts(n, 0, "downlink", n_max=3)
    assert g.body.owner == 1 and g.body.peer == 11
    assert list(n.pending) == [f, g]
    with pytest.raises(LevelOutOfRange):
        request_gts(n, 4, n_max=3)


def test_sync_offsets_add_along_chain():
    coord = NodeMachine(1, Role.COORDINATOR, clock_offset_us=-3)
    sync_to_superbeacon(coord, arrival_us=15360, beacon_slot_start_us=15360, counter=1)
    assert coord.effective_offset_us == -3
    child = NodeMachine(11, Role.NODE, parent=1, clock_offset_us=2)
    # the coordinator's beacon in slot 4 arrives 3 us early
    sync_to_superbeacon(child, arrival_us=15360 + 3840 - 3, beacon_slot_start_us=15360 + 3840, counter=1)
    assert child.effective_offset_us == -1
    assert child.synced_superframe == 1


def test_energy_accounting():
    n = NodeMachine(1, Role.NODE)
    energy_tick(n, NodeState.DOZING, 1000)
    energy_tick(n, NodeState.LISTENING, 960)
    energy_tick(n, NodeState.TRANSMITTING, 640)
    energy_tick(n, NodeState.DOZING, 320)
    energy_tick(n, NodeState.TRANSMITTING, 640)
    assert n.energy[NodeState.WAKING] == 2 * proto.WAKEUP_US
    assert n.energy[NodeState.DOZING] == 1320
    want = (1320 * 40 + 960 * 37000 + 1280 * 30000 + 660 * 37000) / 1e6
    assert energy_total(n) == pytest.approx(want)
    with pytest.raises(ValueError):
        energy_tick(n, NodeState.DOZING, -1)
