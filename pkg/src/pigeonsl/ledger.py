"""Traffic and client-compute counters, segmented by round, cluster and kind.

Every counter holds integer scalar units:

* ``*_activation`` and ``handoff`` count scalars a client transmits
  (``d_c`` per activation row, ``d_CL`` per parameter handoff);
* ``cut_gradient`` counts scalars the AP sends down (``d_c`` per row);
* ``*_pass`` counts client-side sample passes (one per training
  forward+backward, one per shared-set forward).
"""

from __future__ import annotations

import threading
from collections import Counter
from dataclasses import dataclass

TRAIN_ACTIVATION = "train_activation"
CUT_GRADIENT = "cut_gradient"
EVAL_ACTIVATION = "eval_activation"
VERIFY_ACTIVATION = "verify_activation"
REFERENCE_ACTIVATION = "reference_activation"
HANDOFF = "handoff"
TRAIN_PASS = "train_pass"
EVAL_PASS = "eval_pass"
VERIFY_PASS = "verify_pass"
REFERENCE_PASS = "reference_pass"
# handoff retries after a detected tamper; outside the closed-form table
ROLLBACK_HANDOFF = "rollback_handoff"
ROLLBACK_VERIFY_ACTIVATION = "rollback_verify_activation"
ROLLBACK_VERIFY_PASS = "rollback_verify_pass"
CLIENT_TURN = "client_turn"

# kinds covered by the closed-form overhead table
TABLE_COMM = (TRAIN_ACTIVATION, EVAL_ACTIVATION, VERIFY_ACTIVATION, HANDOFF)
TABLE_COMPUTE = (TRAIN_PASS, EVAL_PASS, VERIFY_PASS)

KINDS = (
    TRAIN_ACTIVATION, CUT_GRADIENT, EVAL_ACTIVATION, VERIFY_ACTIVATION, REFERENCE_ACTIVATION,
    HANDOFF, TRAIN_PASS, EVAL_PASS, VERIFY_PASS, REFERENCE_PASS,
    ROLLBACK_HANDOFF, ROLLBACK_VERIFY_ACTIVATION, ROLLBACK_VERIFY_PASS, CLIENT_TURN,
)


class TrafficLedger:
    """Monotone counters; safe for concurrent increments."""

    def __init__(self):
        self._counts: Counter = Counter()
        self._lock = threading.Lock()

    def add(self, round_: int, cluster: int, kind: str, units: int) -> None:
        if kind not in KINDS:
            raise KeyError(f"unknown ledger kind {kind!r}")
        units = int(units)
        if units < 0:
            raise ValueError("ledger counters are monotone")
        with self._lock:
            self._counts[(round_, cluster, kind)] += units

    def merge(self, round_: int, cluster: int, delta: Counter) -> None:
        for kind, units in delta.items():
            self.add(round_, cluster, kind, units)

    def scope(self, round_: int, cluster: int) -> "LedgerScope":
        return LedgerScope(self, round_, cluster)

    def total(self, *kinds: str, round_=None, cluster=None) -> int:
        with self._lock:
            items = list(self._counts.items())
        return sum(
            units
            for (r, c, k), units in items
            if (not kinds or k in kinds)
            and (round_ is None or r == round_)
            and (cluster is None or c == cluster)
        )

    def table_comm(self, **where) -> int:
        return self.total(*TABLE_COMM, **where)

    def table_compute(self, **where) -> int:
        return self.total(*TABLE_COMPUTE, **where)

    def rows(self) -> list[tuple[int, int, str, int]]:
        with self._lock:
            return sorted((r, c, k, u) for (r, c, k), u in self._counts.items())

    def snapshot(self) -> dict[str, int]:
        out = dict.fromkeys(KINDS, 0)
        for _, _, kind, units in self.rows():
            out[kind] += units
        return out


@dataclass
class LedgerScope:
    """A ledger view bound to one (round, cluster) segment."""

    ledger: TrafficLedger
    round_: int
    cluster: int

    def add(self, kind: str, units: int) -> None:
        self.ledger.add(self.round_, self.cluster, kind, units)

    def merge(self, delta: Counter) -> None:
        self.ledger.merge(self.round_, self.cluster, delta)
