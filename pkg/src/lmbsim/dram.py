"""Open-row DRAM bank model behind a shared beat-wide bus.

Addresses interleave across banks at beat granularity, so sequential streams
rotate over all banks: bank = (addr // 64) mod banks, and each bank's open
row covers row_bytes of its own beats (row = addr // 64 // banks //
(row_bytes // 64)).  A beat hitting the open row costs t_row_hit, anything
else t_row_miss.  Per cycle the model completes services and grants the bus
to at most one finished beat (round-robin over banks, same-cycle grant
allowed), then moves ingress beats into bank queues with head-of-line
blocking on a full queue, then starts new services on idle banks, same-cycle
start allowed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError
from .queues import INF, TimedFifo

BEAT_BYTES = 64


@dataclass(frozen=True)
class DramConfig:
    num_banks: int = 16
    row_bytes: int = 4096
    t_row_hit: int = 20
    t_row_miss: int = 45
    queue_depth: int = 8
    address_bits: int = 31

    def __post_init__(self):
        if self.num_banks < 1 or self.num_banks & (self.num_banks - 1):
            raise ConfigurationError("bank count must be a power of two")
        if self.row_bytes < BEAT_BYTES or self.row_bytes % BEAT_BYTES:
            raise ConfigurationError("row bytes must be a beat multiple")
        if self.t_row_hit < 1 or self.t_row_miss < self.t_row_hit:
            raise ConfigurationError("need 1 <= t_row_hit <= t_row_miss")
        if self.queue_depth < 1:
            raise ConfigurationError("bank queue depth must be positive")
        if not 12 <= self.address_bits <= 48:
            raise ConfigurationError("address_bits out of range")


class _Bank:
    __slots__ = ("queue", "open_row", "busy_until", "current", "done",
                 "arrivals")

    def __init__(self):
        self.queue = []
        self.open_row = None
        self.busy_until = 0
        self.current = None
        self.done = None       # serviced beat waiting for the bus
        self.arrivals = []     # arrival cycles, parallel to queue


class Dram:
    def __init__(self, cfg: DramConfig):
        self.cfg = cfg
        self.banks = [_Bank() for _ in range(cfg.num_banks)]
        self.ingress = TimedFifo()   # beats from the router
        self.to_router = TimedFifo()  # completions toward the LMBs
        self._bus_rr = 0
        self._active = set()  # bank indices holding any work
        self.stats = {
            "beats": 0, "row_hits": 0, "row_misses": 0,
            "busy_cycles": 0, "hol_block_cycles": 0,
            "bus_bytes": 0, "bus_useful_bytes": 0,
            "wait_histogram": {},  # power-of-two bucket -> count
        }

    def _locate(self, addr):
        a = addr & ((1 << self.cfg.address_bits) - 1)
        line = a // BEAT_BYTES
        lines_per_row = self.cfg.row_bytes // BEAT_BYTES
        return line % self.cfg.num_banks, (line // self.cfg.num_banks) // lines_per_row

    def _bucket(self, wait):
        b = 1
        while b < wait:
            b <<= 1
        return b

    def step(self, now):
        moved = False
        active = self._active
        # 1. completions, then one bus grant
        for idx in active:
            bank = self.banks[idx]
            if bank.current is not None and bank.busy_until <= now:
                bank.done = bank.current
                bank.current = None
                moved = True
        if active:
            n = len(self.banks)
            for off in range(n):
                i = (self._bus_rr + off) % n
                bank = self.banks[i]
                if bank.done is not None:
                    beat = bank.done
                    bank.done = None
                    self._bus_rr = (i + 1) % n
                    self.stats["bus_bytes"] += BEAT_BYTES
                    self.stats["bus_useful_bytes"] += beat.useful
                    self.to_router.push(now + 1, beat)
                    if bank.current is None and not bank.queue:
                        active.discard(i)
                    moved = True
                    break
        # 2. ingress with head-of-line blocking
        while True:
            beat = self.ingress.peek(now)
            if beat is None:
                break
            bank_idx, _ = self._locate(beat.addr)
            bank = self.banks[bank_idx]
            if len(bank.queue) >= self.cfg.queue_depth:
                self.stats["hol_block_cycles"] += 1
                break
            self.ingress.pop(now)
            bank.queue.append(beat)
            bank.arrivals.append(now)
            active.add(bank_idx)
            self.stats["beats"] += 1
            moved = True
        # 3. start services, same-cycle start allowed
        for idx in active:
            bank = self.banks[idx]
            if bank.current is None and bank.done is None and bank.queue:
                beat = bank.queue.pop(0)
                arrived = bank.arrivals.pop(0)
                _, row = self._locate(beat.addr)
                if row == bank.open_row:
                    service = self.cfg.t_row_hit
                    self.stats["row_hits"] += 1
                else:
                    service = self.cfg.t_row_miss
                    self.stats["row_misses"] += 1
                bank.open_row = row
                bank.current = beat
                bank.busy_until = now + service
                self.stats["busy_cycles"] += service
                wait = now - arrived
                bucket = self._bucket(wait)
                hist = self.stats["wait_histogram"]
                hist[bucket] = hist.get(bucket, 0) + 1
                moved = True
        return moved

    def next_event(self, now):
        candidates = [self.ingress.head_ready()]
        for idx in self._active:
            bank = self.banks[idx]
            if bank.current is not None:
                candidates.append(bank.busy_until)
            if bank.done is not None or (bank.queue and bank.current is None
                                         and bank.done is None):
                candidates.append(now + 1)
        return min(candidates)

    def idle(self):
        return not self.ingress and not self.to_router and not self._active
