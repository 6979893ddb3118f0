"""In-process topic broker with retained values and delayed delivery.

Semantics follow MQTT where it matters to the controllers: topic-based
routing, the broker keeps only the latest value per topic and hands it to
late subscribers.  Time is whatever monotone clock the caller uses; the
simulator passes integer step counts so delivery times are exact.
"""
from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Mapping

J_PER_WH = 3600.0


def voltage_topic(bus: int) -> str:
    """Topic name for a 1-based bus number."""
    return f"voltageBus{bus}"


def energy_topic(bus: int) -> str:
    return f"energyBus{bus}"


@dataclass(frozen=True)
class EnergyModel:
    """Radio cost of one transmission, ``e = v * i * t``."""

    voltage: float = 3.3
    current: float = 0.05
    tx_duration: float = 0.01

    @property
    def joules_per_message(self) -> float:
        return self.voltage * self.current * self.tx_duration


@dataclass(order=True, frozen=True)
class SimMessage:
    deliver_time: float
    sequence: int
    topic: str = field(compare=False)
    payload: float = field(compare=False)
    publish_time: float = field(compare=False)
    # None marks the broker's own retain update.
    client: Hashable | None = field(compare=False, default=None)


class Broker:
    """Topic registry, retained store, in-flight queue and accounting."""

    def __init__(self, energy_model: EnergyModel | None = None) -> None:
        self.energy_model = energy_model or EnergyModel()
        self.subscriptions: dict[str, set[Hashable]] = defaultdict(set)
        self.retained: dict[str, float] = {}
        self._retained_seq: dict[str, int] = {}
        self._queue: list[SimMessage] = []
        self._seq = 0
        self.published_by_client: dict[Hashable, int] = defaultdict(int)
        self.published_by_topic: dict[str, int] = defaultdict(int)
        self.delivered_by_client: dict[Hashable, int] = defaultdict(int)
        self.delivered_by_topic: dict[str, int] = defaultdict(int)
        self.enqueued = 0
        self.retained_deliveries = 0

    def subscribe(self, client: Hashable, topic: str) -> float | None:
        """Register ``client`` on ``topic``; return the retained value if any.

        Subscribing twice is a no-op that still reports the retained value.
        """
        self.subscriptions[topic].add(client)
        value = self.retained.get(topic)
        if value is not None:
            self.retained_deliveries += 1
        return value

    def unsubscribe(self, client: Hashable, topic: str) -> None:
        self.subscriptions[topic].discard(client)

    def publish(self, topic: str, payload: float, now: float, delay: float = 0.0, client: Hashable | None = None) -> int:
        """Publish one value as its own transmission; return its sequence id."""
        return self.publish_frame(client, {topic: payload}, now, delay)[topic]

    def publish_frame(
        self, client: Hashable | None, payloads: Mapping[str, float], now: float, delay: float = 0.0
    ) -> dict[str, int]:
        """Send several topic updates in one radio transmission.

        The client's transmission counter grows by one per frame; each topic
        counter grows by one per update.  Returns topic -> sequence id.
        """
        if delay < 0:
            raise ValueError("delay must be non-negative")
        if not payloads:
            raise ValueError("empty frame")
        deliver = now + delay
        seqs = {}
        for topic, payload in payloads.items():
            seq = self._next_seq()
            seqs[topic] = seq
            self.published_by_topic[topic] += 1
            heapq.heappush(self._queue, SimMessage(deliver, seq, topic, payload, now, None))
            for sub in sorted(self.subscriptions.get(topic, ()), key=str):
                heapq.heappush(self._queue, SimMessage(deliver, self._next_seq(), topic, payload, now, sub))
                self.enqueued += 1
        self.published_by_client[client] += 1
        return seqs

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def drain(self, now: float) -> list[tuple[Hashable, str, float]]:
        """Remove and return every message due at or before ``now``.

        Output is ordered by ``(deliver_time, sequence)``.
        """
        out = []
        q = self._queue
        while q and q[0].deliver_time <= now:
            msg = heapq.heappop(q)
            if msg.client is None:
                if msg.sequence > self._retained_seq.get(msg.topic, -1):
                    self.retained[msg.topic] = msg.payload
                    self._retained_seq[msg.topic] = msg.sequence
                continue
            self.delivered_by_client[msg.client] += 1
            self.delivered_by_topic[msg.topic] += 1
            out.append((msg.client, msg.topic, msg.payload))
        return out

    @property
    def in_flight(self) -> int:
        return sum(1 for m in self._queue if m.client is not None)

    @property
    def next_delivery(self) -> float | None:
        return self._queue[0].deliver_time if self._queue else None

    @property
    def total_published(self) -> int:
        """Total transmissions over all clients."""
        return sum(self.published_by_client.values())

    @property
    def total_delivered(self) -> int:
        return sum(self.delivered_by_client.values())


def comms_energy(broker: Broker) -> float:
    """Radio energy of every transmission so far, in Wh."""
    return messages_energy_wh(broker.total_published, broker.energy_model)


def messages_energy_wh(count: int, model: EnergyModel | None = None) -> float:
    model = model or EnergyModel()
    return count * model.joules_per_message / J_PER_WH
