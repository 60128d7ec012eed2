"""Spectral surgery: zeroing singular values by decile, mass, or explicit rank.

Ranks are 1-indexed into the descending singular values; decile 1 holds the
largest 10%.  Decile boundaries follow b_i = floor(i * count / 10), the only
deterministic reading of "ten equal-sized deciles" when count is not a
multiple of ten.  Mass-based removal strips the smallest values first (ties
broken toward the higher rank index) until the removed l1 mass reaches the
requested fraction; the order is recorded in output metadata since other
orders would satisfy the same budget.

Tied singular values at a decile boundary are split strictly by rank index
under the deterministic sign/ordering convention of `linalg`; tied subspaces
are rotation-ambiguous, so reproducibility wins over basis-invariance here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import ToolkitError
from .tensorstore import RoleKind, TensorMap, classify_role


@dataclass(frozen=True)
class DecilePartition:
    count: int
    boundaries: tuple[int, ...]  # 11 entries, b_0 = 0 .. b_10 = count

    def ranks(self, decile: int) -> range:
        """1-indexed ranks covered by a decile (1 = largest values)."""
        if not 1 <= decile <= 10:
            raise ValueError(f"decile must be in 1..10, got {decile}")
        return range(self.boundaries[decile - 1] + 1, self.boundaries[decile] + 1)

    def sizes(self) -> tuple[int, ...]:
        return tuple(self.boundaries[i + 1] - self.boundaries[i] for i in range(10))


def decile_partition(count: int) -> DecilePartition:
    if count < 1:
        raise ValueError("count must be >= 1")
    return DecilePartition(count=count, boundaries=tuple(i * count // 10 for i in range(11)))


@dataclass(frozen=True)
class SurgeryPlan:
    """Which matrices to operate on and which singular values to zero.

    Exactly one of decile / mass / ranks is set.  blocks=None targets every
    block.
    """

    kinds: tuple[RoleKind, ...]
    decile: int | None = None
    mass: float | None = None
    ranks: tuple[int, ...] | None = None
    blocks: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.kinds:
            raise ValueError("plan must target at least one matrix kind")
        object.__setattr__(self, "kinds", tuple(RoleKind(k) for k in self.kinds))
        modes = [m for m in (self.decile, self.mass, self.ranks) if m is not None]
        if len(modes) != 1:
            raise ValueError("exactly one of decile/mass/ranks must be set")
        if self.decile is not None and not 1 <= self.decile <= 10:
            raise ValueError(f"decile must be in 1..10, got {self.decile}")
        if self.mass is not None and not 0.0 <= self.mass <= 1.0:
            raise ValueError(f"mass fraction must be in [0, 1], got {self.mass}")
        if self.ranks is not None:
            object.__setattr__(self, "ranks", tuple(sorted(int(r) for r in self.ranks)))
        if self.blocks is not None:
            object.__setattr__(self, "blocks", tuple(sorted(int(b) for b in self.blocks)))

    @classmethod
    def from_json(cls, obj: dict) -> "SurgeryPlan":
        kinds = tuple(RoleKind(k) for k in obj["kinds"])
        mode = obj["mode"]
        if not isinstance(mode, dict) or len(mode) != 1:
            raise ValueError('plan "mode" must be one of {"decile": d}, {"mass": f}, {"ranks": [...]}')
        blocks_obj = obj.get("blocks", "all")
        blocks = None if blocks_obj == "all" else tuple(int(b) for b in blocks_obj)
        key, value = next(iter(mode.items()))
        if key == "decile":
            return cls(kinds=kinds, decile=int(value), blocks=blocks)
        if key == "mass":
            return cls(kinds=kinds, mass=float(value), blocks=blocks)
        if key == "ranks":
            return cls(kinds=kinds, ranks=tuple(int(r) for r in value), blocks=blocks)
        raise ValueError(f"unknown plan mode {key!r}")

    def to_json(self) -> dict:
        if self.decile is not None:
            mode: dict = {"decile": self.decile}
        elif self.mass is not None:
            mode = {"mass": self.mass}
        else:
            mode = {"ranks": list(self.ranks or ())}
        return {
            "kinds": [k.value for k in self.kinds],
            "mode": mode,
            "blocks": "all" if self.blocks is None else list(self.blocks),
        }


def remove_ranks(w: np.ndarray, ranks) -> np.ndarray:
    """Reconstruct w with the given 1-indexed singular values zeroed.

    An empty rank set returns the input unchanged (bit-identical), so empty
    plans are exact no-ops rather than SVD round-trips.
    """
    w = np.asarray(w)
    ranks = sorted(set(int(r) for r in ranks))
    if not ranks:
        return w.copy()
    k = min(w.shape)
    if ranks[0] < 1 or ranks[-1] > k:
        raise ValueError(f"ranks must lie in 1..{k}, got {ranks[0]}..{ranks[-1]}")
    dec = linalg.svd(w)
    s = dec.s.copy()
    s[np.asarray(ranks) - 1] = 0.0
    out = (dec.u[:, :k] * s) @ dec.v[:, :k].T
    return out.astype(w.dtype, copy=False)


def mass_removal_ranks(svals: np.ndarray, fraction: float) -> tuple[int, ...]:
    """Smallest-first ranks whose cumulative l1 mass reaches fraction * total."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"mass fraction must be in [0, 1], got {fraction}")
    svals = np.asarray(svals, dtype=np.float64)
    total = float(svals.sum())
    # Tolerance absorbs the rounding in fraction * total so exact hits
    # (e.g. 0.3 of [4,3,2,1]) stop where exact arithmetic would.
    target = fraction * total - 1e-12 * max(total, 1.0)
    removed: list[int] = []
    cum = 0.0
    # Descending input, so walking from the tail visits values in ascending
    # order with ties resolved toward the higher rank index.
    for rank in range(svals.size, 0, -1):
        if cum >= target:
            break
        cum += float(svals[rank - 1])
        removed.append(rank)
    return tuple(sorted(removed))


def remove_by_mass(w: np.ndarray, fraction: float) -> np.ndarray:
    svals = linalg.svd(w).s
    return remove_ranks(w, mass_removal_ranks(svals, fraction))


def smallest_fraction_ranks(count: int, fraction: float) -> tuple[int, ...]:
    """Bottom floor(fraction * count) ranks -- count-based, not mass-based."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    r = int(fraction * count)
    return tuple(range(count - r + 1, count + 1))


def plan_ranks(svals: np.ndarray, plan: SurgeryPlan) -> tuple[int, ...]:
    """Resolve a plan's mode into concrete ranks for one spectrum."""
    k = np.asarray(svals).size
    if plan.decile is not None:
        return tuple(decile_partition(k).ranks(plan.decile))
    if plan.mass is not None:
        return mass_removal_ranks(svals, plan.mass)
    assert plan.ranks is not None
    if plan.ranks and (plan.ranks[0] < 1 or plan.ranks[-1] > k):
        raise ValueError(f"plan ranks must lie in 1..{k}")
    return plan.ranks


def apply_plan(
    tmap: TensorMap,
    plan: SurgeryPlan,
    rules=None,
) -> tuple[TensorMap, list[dict]]:
    """Apply a plan to every matching matrix; untargeted tensors are shared.

    Returns the new map plus one change record per modified tensor with the
    removed ranks and the removed energy sum(nu_r^2).  Raises if nothing
    matches -- a plan that does nothing is an error, not a silent no-op.
    """
    targets: list[tuple[str, RoleKind, int | None]] = []
    for name, arr in tmap.entries.items():
        if arr.ndim != 2:
            continue
        role = classify_role(name, rules)
        if role.kind not in plan.kinds:
            continue
        if plan.blocks is not None and role.block not in plan.blocks:
            continue
        targets.append((name, role.kind, role.block))
    if not targets:
        raise ToolkitError(f"no matching tensors for plan {json.dumps(plan.to_json(), sort_keys=True)}")

    entries = dict(tmap.entries)
    changes: list[dict] = []
    for name, kind, block in sorted(targets):
        w = tmap.entries[name]
        dec = linalg.svd(w, name=name)
        ranks = plan_ranks(dec.s, plan)
        if ranks:
            s = dec.s.copy()
            idx = np.asarray(ranks) - 1
            removed_energy = float(np.sum(s[idx] ** 2))
            removed_mass = float(np.sum(s[idx]))
            s[idx] = 0.0
            k = s.size
            entries[name] = ((dec.u[:, :k] * s) @ dec.v[:, :k].T).astype(w.dtype, copy=False)
        else:
            removed_energy = 0.0
            removed_mass = 0.0
            entries[name] = w.copy()
        changes.append(
            {
                "name": name,
                "kind": kind.value,
                "block": block,
                "ranks": list(ranks),
                "energy_removed": removed_energy,
                "mass_removed": removed_mass,
            }
        )
    metadata = dict(tmap.metadata)
    metadata["surgery.plan"] = json.dumps(plan.to_json(), sort_keys=True)
    if plan.mass is not None:
        metadata["surgery.mass_order"] = "smallest-first"
    return TensorMap(entries=entries, metadata=metadata), changes
