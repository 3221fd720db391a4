"""Closed-form per-round communication and client-compute overheads.

Units follow the ledger: scalars transmitted by clients and client-side
sample passes (one pass costs one unit). ``D_tilde`` is the number of
training samples each client processes per turn (E * B).
"""

from __future__ import annotations

from typing import NamedTuple

from ..errors import ConfigurationError


class Overhead(NamedTuple):
    comm_selected: int
    comm_unselected: int
    comm_total: int
    compute_total: int
    # post-subround reference upload, pigeon_plus only; not part of the table
    reference_comm: int = 0
    reference_compute: int = 0


def expected_overhead(mode: str, M: int, M_bar: int, R: int, D_tilde: int, D_o: int,
                      d_c: int, d_cl: int) -> Overhead:
    if min(M, M_bar, R) < 1 or M_bar * R != M and mode != "vanilla":
        raise ConfigurationError(f"inconsistent cluster sizes M={M}, M_bar={M_bar}, R={R}")
    if mode == "vanilla":
        comm = M * D_tilde * d_c + M * d_cl
        return Overhead(comm, 0, comm, M * D_tilde)
    unselected = (M_bar * D_tilde + 2 * D_o) * d_c + (M_bar - 1) * d_cl
    if mode == "pigeon" or R == 1:
        selected = (M_bar * D_tilde + 2 * D_o) * d_c + (M_bar + R - 1) * d_cl
        total = (M * D_tilde + 2 * R * D_o) * d_c + M * d_cl
        compute = M * D_tilde + 2 * R * D_o
        return Overhead(selected, unselected if R > 1 else 0, total, compute)
    if mode == "pigeon_plus":
        selected = (M * D_tilde + 2 * D_o) * d_c + (M + R - 1) * d_cl
        updates = 2 * M - M_bar
        total = (updates * D_tilde + 2 * R * D_o) * d_c + updates * d_cl
        compute = updates * D_tilde + 2 * R * D_o
        return Overhead(selected, unselected, total, compute, D_o * d_c, D_o)
    raise ConfigurationError(f"unknown mode {mode!r}")
