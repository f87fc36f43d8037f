"""Deterministic discrete-event engine.

Events live in a binary heap keyed by ``(due, seq)``; ``seq`` is assigned at
insertion, so simultaneous events run in the order they were scheduled and the
run never depends on container iteration order.  All times in the heap are
true nanoseconds; every node converts through its own clocks.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field

from slotsync.channel import (
    DetectionModel,
    HostLink,
    PropagationModel,
    Purpose,
    RngStream,
    detect_arrival,
    propagation_delay,
)
from slotsync.config import Scenario
from slotsync.jit import (
    EnqueueResult,
    JitConfig,
    OwnedSlots,
    RadioTxQueue,
    RttEstimate,
    TargetTooSoon,
    arm_tx_timer,
    compute_t_adv,
    freshness_ok,
    probe_rtt,
    radio_enqueue,
)
from slotsync.protocol import (
    FLAG_REPLY,
    FLAG_REQUEST,
    ApState,
    BeaconPayload,
    DataPacketPayload,
    SlotAddress,
    SyncState,
    ap_make_beacon,
    device_on_beacon,
    drift_metric,
    schedule_synchronized_event,
)
from slotsync.sim.metrics import MetricsReport, RttCollector, record_alignment
from slotsync.timebase import Axis, ClockModel, SampleCounter, TimeInstant, as_ppm

EVENT_KINDS = (
    "beacon_tx",
    "tx_timer_fire",
    "radio_submit",
    "radio_tx_fire",
    "radio_rx_arrival",
    "host_rx_delivery",
    "probe",
    "event_sync_fire",
    "metrics_flush",
)

_ECHO = struct.Struct("<qq")  # (seq, requester host_tx_time) carried by replies


class CausalityError(RuntimeError):
    pass


@dataclass(slots=True)
class Packet:
    sender: int
    dest: int | None  # None for beacons
    timestamp: int  # sender radio ns
    gen_true: int
    payload: BeaconPayload | DataPacketPayload

    @property
    def is_beacon(self) -> bool:
        return self.dest is None


@dataclass
class NodeRuntime:
    id: int
    role: str
    clock: ClockModel
    host_clock: ClockModel
    counter: SampleCounter
    link: HostLink
    jit: JitConfig
    rtt_estimate: RttEstimate
    t_adv: int
    queue: RadioTxQueue
    owned: OwnedSlots
    tx_prep: int
    rx_decode: int
    rng: dict[Purpose, RngStream]
    sync: SyncState | None = None
    ap: ApState | None = None
    last_delivery: int = -1
    in_flight: int = 0
    seq: int = 0
    drift_origin: tuple[int, int] | None = None
    next_event: int = 1

    @property
    def is_ap(self) -> bool:
        return self.role == "ap"

    @property
    def axis(self) -> Axis:
        return self.clock.axis


class Engine:
    def __init__(self, scenario: Scenario, seed: int | None = None, trace: bool = False):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else int(seed)
        self.phy = phy = scenario.phy_config()
        self.T = phy.sample_period
        self.frame_ns = phy.frame_ns
        self.n_frames = scenario.horizon_frames()
        self.end = self.n_frames * self.frame_ns
        self.compensate = scenario.sync.compensation
        self.detection = scenario.detection_model()
        self.loopback = DetectionModel(0.0, 0.0)
        self.warmup = scenario.metrics.warmup_frames

        self.ap_id = scenario.ap.id
        self.device_ids = [n.id for n in scenario.devices]
        to_hub, from_hub = {}, {}
        for d in self.device_ids:
            to_hub[d], from_hub[d] = scenario.propagation_to_ap(d)
        self.propagation = PropagationModel.star(self.ap_id, to_hub, from_hub)

        drift_node = scenario.metrics.drift_node
        if drift_node is None and self.device_ids:
            drift_node = min(self.device_ids)
        self.report = MetricsReport(
            sample_period=self.T,
            drift_node=drift_node,
            rtt=RttCollector(cap=scenario.metrics.raw_cap),
            trace=[] if trace else None,
        )
        self.noise_free = self.detection.jitter_samples == 0 and all(n.drift_ppm == 0 for n in scenario.nodes)
        self.forced_misses = {
            (f.node, k) for f in scenario.faults.beacon_miss for k in range(f.first_frame, f.first_frame + f.count)
        }
        self.rtt_target = scenario.rtt.pairs if scenario.rtt else None
        self.initiator = scenario.rtt.initiator if scenario.rtt else None
        self.reply_queue: list[tuple[int, int, int]] = []  # (requester, seq, host_tx_time)

        self.nodes: dict[int, NodeRuntime] = {}
        for spec in scenario.nodes:
            self.nodes[spec.id] = self._build_node(spec)
        for rt in self.nodes.values():
            self.report.t_adv[rt.id] = rt.t_adv
            est = rt.rtt_estimate
            self.report.rtt_estimates[rt.id] = {
                "mean_ns": est.mean, "deviation_ns": est.deviation, "probes": est.sample_count,
            }

        self.now = 0
        self._heap: list = []
        self._seq = 0
        self.stop = False
        self._ap_busy_until = -1
        self._handlers = {
            "beacon_tx": self._on_tx_timer_fire,
            "tx_timer_fire": self._on_tx_timer_fire,
            "radio_submit": self._on_radio_submit,
            "radio_tx_fire": self._on_radio_tx_fire,
            "radio_rx_arrival": self._on_radio_rx_arrival,
            "host_rx_delivery": self._on_host_rx_delivery,
            "probe": self._on_probe,
            "event_sync_fire": self._on_event_sync_fire,
            "metrics_flush": self._on_metrics_flush,
        }

    # --- setup ---

    def _build_node(self, spec) -> NodeRuntime:
        s = self.scenario
        host = s.host_params(spec.id)
        axis = Axis.radio(spec.id)
        clock = ClockModel(spec.initial_offset, as_ppm(spec.drift_ppm), axis=axis)
        host_clock = ClockModel(host.offset, as_ppm(host.drift_ppm), axis=Axis.host(spec.id))
        counter = SampleCounter(TimeInstant(clock.local_ns(0), axis), self.T)
        rng = {p: RngStream(self.seed, spec.id, p.value) for p in Purpose}
        link = s.host_link(spec.id)
        jit = s.jit_config(spec.id)
        est = probe_rtt(link, s.probe.count, s.probe.interval, rng[Purpose.PROBE])
        rt = NodeRuntime(
            id=spec.id,
            role=spec.role,
            clock=clock,
            host_clock=host_clock,
            counter=counter,
            link=link,
            jit=jit,
            rtt_estimate=est,
            t_adv=compute_t_adv(est, jit),
            queue=RadioTxQueue(min_lead=self.T),
            owned=OwnedSlots(s.owned_slots(spec.id)),
            tx_prep=host.tx_prep,
            rx_decode=host.rx_decode,
            rng=rng,
        )
        if spec.role == "ap":
            rt.ap = ApState(self.phy, origin=clock.local_ns(0), node_id=spec.id)
        else:
            rt.sync = SyncState(spec.id, ap_id=self.ap_id, frozen=not s.sync.enabled,
                                ewma_alpha=s.sync.ewma_alpha)
        return rt

    # --- event queue ---

    def schedule(self, due: int, kind: str, node: int, data=None) -> None:
        if due < self.now:
            raise CausalityError(f"{kind} for node {node} scheduled at {due} < now {self.now}")
        self._seq += 1
        heapq.heappush(self._heap, (due, self._seq, kind, node, data))

    def run(self) -> MetricsReport:
        ap = self.nodes[self.ap_id]
        if ap.owned:
            self._arm(ap, SlotAddress(0, 0), count_skips=False)
        for k in range(1, self.n_frames + 1):
            self.schedule(k * self.frame_ns, "metrics_flush", self.ap_id, k)
        every = self.scenario.probe.reprobe_frames
        if every:
            for k in range(every, self.n_frames, every):
                for node in self.nodes:
                    self.schedule(k * self.frame_ns, "probe", node)

        heap, handlers, end, trace = self._heap, self._handlers, self.end, self.report.trace
        while heap:
            due, seq, kind, node, data = heapq.heappop(heap)
            if due > end or (due == end and kind != "metrics_flush"):
                break
            self.now = due
            if trace is not None:
                trace.append(f"{due} {seq} {node} {kind} {_detail(kind, data)}")
            handlers[kind](node, data)
            if self.stop:
                self.report.stopped_early = True
                break
        self._finish()
        return self.report

    def _finish(self) -> None:
        r = self.report
        r.end_time_ns = self.now if r.stopped_early else self.end
        for rt in self.nodes.values():
            c = r.counters[rt.id]
            if c.get("data_submitted"):
                c["data_in_flight"] = rt.in_flight
            c["radio_late_drops"] = rt.queue.late_drop_count
            if rt.sync is not None:
                c["stale_beacons"] = rt.sync.stale_beacons
                c["negative_delay_clamps"] = rt.sync.negative_delay_clamps
                c["ptp_rounds"] = rt.sync.ptp_rounds

    # --- transmit path ---

    def _boundary(self, rt: NodeRuntime, addr: SlotAddress) -> int:
        if rt.is_ap:
            return rt.ap.boundary_ns(addr.frame, addr.slot)
        compensate = self.compensate and rt.sync.d_est is not None
        return rt.sync.boundary_ns(addr.frame, addr.slot, self.phy, compensate)

    def _arm(self, rt: NodeRuntime, addr: SlotAddress, count_skips: bool) -> None:
        """Set the wake-ahead timer for the first feasible owned slot from ``addr``."""
        radio_now = rt.clock.local_ns(self.now)
        lag = rt.link.rx.draw(rt.rng[Purpose.HOST_VIEW_LAG])
        visible = TimeInstant(radio_now - lag, rt.axis)
        limit = self.end + rt.t_adv + self.frame_ns
        while True:
            b = self._boundary(rt, addr)
            if rt.clock.true_ns(b) > limit:
                return
            try:
                wake = arm_tx_timer(TimeInstant(b, rt.axis), visible, rt.t_adv)
                break
            except TargetTooSoon:
                if count_skips:
                    self.report.count(rt.id, "slot_skips")
                addr = rt.owned.next_after(addr)
        due = max(rt.clock.true_ns(wake.ticks + lag), self.now)
        self.schedule(due, "beacon_tx" if rt.is_ap and addr.slot == 0 else "tx_timer_fire", rt.id, addr)

    def _on_tx_timer_fire(self, node: int, addr: SlotAddress) -> None:
        rt = self.nodes[node]
        timestamp = self._boundary(rt, addr)
        pkt = self._build_packet(rt, addr, timestamp)
        if pkt is not None:
            if not pkt.is_beacon:
                self.report.count(node, "data_submitted")
                rt.in_flight += 1
                if rt.sync is not None:
                    rt.sync.note_transmission(timestamp)
            else:
                self.report.count(node, "beacons_submitted")
            delay = rt.tx_prep + rt.link.tx.draw(rt.rng[Purpose.HOST_TO_RADIO])
            self.schedule(self.now + delay, "radio_submit", node, pkt)
        self._arm(rt, rt.owned.next_after(addr), count_skips=True)

    def _build_packet(self, rt: NodeRuntime, addr: SlotAddress, timestamp: int) -> Packet | None:
        host_now = rt.host_clock.local_ns(self.now)
        if rt.is_ap:
            if addr.slot == 0:
                payload, _ = ap_make_beacon(rt.ap, addr.frame)
                return Packet(rt.id, None, timestamp, self.now, payload)
            if self.reply_queue:
                dest = self.reply_queue[0][0]
                echoes = [e for e in self.reply_queue if e[0] == dest]
                self.reply_queue = [e for e in self.reply_queue if e[0] != dest]
                app = b"".join(_ECHO.pack(seq, t) for _, seq, t in echoes)
                flags = FLAG_REPLY
            else:
                dest, app, flags = rt.id, b"", 0
        else:
            dest, app = self.ap_id, b""
            flags = FLAG_REQUEST if rt.id == self.initiator else 0
        rt.seq += 1
        payload = DataPacketPayload(rt.id, dest, addr.frame, addr.slot, timestamp, host_now, flags, rt.seq, app)
        return Packet(rt.id, dest, timestamp, self.now, payload)

    def _on_radio_submit(self, node: int, pkt: Packet) -> None:
        rt = self.nodes[node]
        result = radio_enqueue(rt.queue, pkt, pkt.timestamp, rt.clock.local_ns(self.now))
        if result is EnqueueResult.ACCEPTED:
            self.schedule(max(rt.clock.true_ns(pkt.timestamp), self.now), "radio_tx_fire", node, pkt.timestamp)
            return
        name = "late" if result is EnqueueResult.LATE else "conflict"
        if pkt.is_beacon:
            self.report.count(node, f"beacon_{name}")
        else:
            self.report.count(node, f"data_{name}")
            rt.in_flight -= 1

    def _occupy_ap(self, start: int) -> None:
        if start < self._ap_busy_until:
            self.report.overlaps += 1
        self._ap_busy_until = max(self._ap_busy_until, start + self.phy.packet_ns)

    def _on_radio_tx_fire(self, node: int, timestamp: int) -> None:
        rt = self.nodes[node]
        pkt = rt.queue.pop(timestamp)
        age = self.now - pkt.gen_true
        if age > self.report.freshness_max.get(node, -1):
            self.report.freshness_max[node] = age
        if not freshness_ok(pkt.gen_true, self.now, rt.t_adv, self.T):
            self.report.freshness_violations += 1
        if pkt.is_beacon:
            receivers = self.device_ids
            self.report.count(node, "beacons_sent")
        elif rt.is_ap:
            receivers = [node] + ([pkt.dest] if pkt.dest != node else [])
        else:
            receivers = [self.ap_id]
        if rt.is_ap:
            self._occupy_ap(self.now)
        for r in receivers:
            arrival = self.now + propagation_delay(self.propagation, node, r)
            self.schedule(arrival, "radio_rx_arrival", r, pkt)

    # --- receive path ---

    def _on_radio_rx_arrival(self, node: int, pkt: Packet) -> None:
        rt = self.nodes[node]
        loopback = pkt.sender == node
        if rt.is_ap and not loopback:
            self._occupy_ap(self.now)
        local = rt.clock.local_ns(self.now)
        if pkt.is_beacon:
            if self.noise_free:
                expected = pkt.timestamp + propagation_delay(self.propagation, pkt.sender, node) + rt.clock.offset
                if local != expected:
                    self.report.eq9_violations += 1
            if (node, pkt.payload.frame) in self.forced_misses:
                self.report.count(node, "beacon_missed")
                return
        model = self.loopback if loopback else self.detection
        outcome = detect_arrival(model, TimeInstant(local, rt.axis), rt.counter, rt.rng[Purpose.DETECTION])
        if not outcome.detected:
            if pkt.is_beacon:
                self.report.count(node, "beacon_missed")
            elif node == pkt.dest:
                self.report.count(pkt.sender, "data_missed")
                self.nodes[pkt.sender].in_flight -= 1
            return
        idx = outcome.sample_index
        rx_radio = rt.counter.init_time.ticks + idx * self.T
        if pkt.is_beacon and node == self.report.drift_node:
            self._record_drift(rt, pkt.payload.frame, rx_radio)
        delay = self.phy.packet_ns + rt.link.rx.draw(rt.rng[Purpose.RADIO_TO_HOST]) + rt.rx_decode
        due = max(self.now + delay, rt.last_delivery + 1)
        rt.last_delivery = due
        self.schedule(due, "host_rx_delivery", node, (pkt, idx, rx_radio))

    def _record_drift(self, rt: NodeRuntime, frame: int, rx_radio: int) -> None:
        if rt.drift_origin is None:
            rt.drift_origin = (frame, rx_radio)
        k0, t0 = rt.drift_origin
        delta = drift_metric(t0, frame - k0, rx_radio, self.phy)
        self.report.drift_trace.append((frame, int(delta) if delta.denominator == 1 else float(delta)))

    def _on_host_rx_delivery(self, node: int, data) -> None:
        pkt, idx, rx_radio = data
        rt = self.nodes[node]
        if pkt.is_beacon:
            self._device_beacon(rt, pkt.payload, idx)
            return
        p = pkt.payload
        if rt.is_ap:
            if p.sender != node:
                rt.ap.observe_uplink(p.sender, p.tx_radio_time, rx_radio)
                if p.flags & FLAG_REQUEST:
                    self.reply_queue.append((p.sender, p.seq, p.host_tx_time))
            if p.frame >= self.warmup:
                record_alignment(self.report, p.sender, SlotAddress(p.frame, p.slot),
                                 rt.ap.boundary_ns(p.frame, p.slot), rx_radio)
        if node == pkt.dest:
            self.report.count(pkt.sender, "data_delivered")
            self.nodes[pkt.sender].in_flight -= 1
            if p.flags & FLAG_REPLY:
                self._complete_round_trips(rt, p.app)

    def _complete_round_trips(self, rt: NodeRuntime, app: bytes) -> None:
        host_now = rt.host_clock.local_ns(self.now)
        for _, sent in _ECHO.iter_unpack(app):
            self.report.rtt.add(host_now - sent)
            self.report.rtt_pairs += 1
        if self.rtt_target is not None and self.report.rtt_pairs >= self.rtt_target:
            self.stop = True

    def _device_beacon(self, rt: NodeRuntime, payload: BeaconPayload, idx: int) -> None:
        sync = rt.sync
        joined = sync.synchronized
        device_on_beacon(sync, payload, idx, rt.counter)
        if not joined and sync.synchronized:
            self.report.count(rt.id, "joined_frame", sync.anchor.frame)
            if rt.owned:
                self._arm(rt, rt.owned.first_from(SlotAddress(sync.anchor.frame, 1)), count_skips=False)
        if self.scenario.event_sync is not None and sync.o_est is not None:
            self._plan_events(rt)

    # --- event synchronization ---

    def _event_time(self, n: int) -> int:
        es = self.scenario.event_sync
        return n * es.period_frames * self.frame_ns + es.phase

    def _plan_events(self, rt: NodeRuntime) -> None:
        lead = self.scenario.event_sync.lead
        ap_now = rt.clock.local_ns(self.now) - rt.sync.o_est
        while True:
            t_e = self._event_time(rt.next_event)
            if t_e > self.end:
                return
            if t_e <= ap_now + self.T:
                self.report.count(rt.id, "events_unscheduled")
            elif t_e - ap_now <= lead:
                local = schedule_synchronized_event(rt.sync, t_e)
                due = max(rt.clock.true_ns(local.ticks), self.now)
                self.schedule(due, "event_sync_fire", rt.id, rt.next_event)
            else:
                return
            rt.next_event += 1

    def _on_event_sync_fire(self, node: int, event_id: int) -> None:
        self.report.event_fires[node][event_id] = self.now

    # --- housekeeping ---

    def _on_metrics_flush(self, node: int, frame: int) -> None:
        self.report.frames_run = frame

    def _on_probe(self, node: int, _data) -> None:
        rt = self.nodes[node]
        s = self.scenario
        rt.rtt_estimate = probe_rtt(rt.link, s.probe.count, s.probe.interval, rt.rng[Purpose.PROBE])
        rt.t_adv = compute_t_adv(rt.rtt_estimate, rt.jit)
        self.report.count(node, "reprobes")


def _detail(kind: str, data) -> str:
    if isinstance(data, SlotAddress):
        return f"f{data.frame}s{data.slot}"
    if isinstance(data, Packet):
        what = "beacon" if data.is_beacon else f"data->{data.dest}"
        return f"{what} from {data.sender} ts={data.timestamp}"
    if isinstance(data, tuple) and data and isinstance(data[0], Packet):
        return f"from {data[0].sender} sample={data[1]}"
    return "" if data is None else str(data)
