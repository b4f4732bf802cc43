"""The five publication strategies: full materialization baseline plus the four
heuristics (abstraction, specialization, type-level, selective instance-level).
All of them are pure transformations of (catalog, inventory snapshot, policy)."""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

from .catalog import (
    DimensionKind,
    InventorySnapshot,
    InventoryState,
    ProductCatalog,
    Value,
    Variation,
    canonical_id_for,
    count_variations,
    enumerate_variations,
    price,
    price_bounds,
)

DEFAULT_HARD_CAP = 10 ** 6

HEURISTIC_NAMES = ("full", "abstraction", "specialization", "type-level", "selective")


class HeuristicError(ValueError):
    pass


class MaterializationCapExceeded(HeuristicError):
    def __init__(self, count: int, cap: int):
        super().__init__(
            f"full materialization refused: {count} variations exceed the hard cap of {cap}")
        self.count = count
        self.cap = cap


class NoAvailableVariation(HeuristicError):
    """Specialization found nothing to publish."""


class ItemKind(str, Enum):
    CONCRETE = "concrete"
    ABSTRACT = "abstract"
    PARTIAL = "partial"


@dataclass(frozen=True)
class RangeSummary:
    """Summary of a non-fixed dimension: full value list for categorical,
    min/max/count for ordinal and temporal."""

    kind: DimensionKind
    values: Optional[Tuple[Value, ...]] = None
    min_value: Optional[Value] = None
    max_value: Optional[Value] = None
    count: int = 0
    abstracted: bool = True  # False for length-1 dimensions (nothing removed)


def summarize_dimension(dim) -> RangeSummary:
    if dim.kind is DimensionKind.CATEGORICAL:
        return RangeSummary(dim.kind, values=tuple(dim.values), count=len(dim.values),
                            abstracted=dim.abstractable)
    return RangeSummary(dim.kind, min_value=min(dim.values), max_value=max(dim.values),
                        count=len(dim.values), abstracted=dim.abstractable)


@dataclass(frozen=True)
class PublicationItem:
    kind: ItemKind
    fixed: Dict[str, Value]
    ranges: Dict[str, RangeSummary]
    exact_price: Optional[Decimal]
    price_range: Optional[Tuple[Decimal, Decimal]]
    available: bool
    requires_elevation: bool

    def fixed_set_id(self) -> str:
        """Canonical string over the fixed assignments (declared order is the
        insertion order of `fixed`)."""
        return canonical_id_for(list(self.fixed), self.fixed)


def _kind_for(fixed: Dict[str, Value], catalog: ProductCatalog) -> ItemKind:
    if not fixed:
        return ItemKind.ABSTRACT
    if len(fixed) == len(catalog.dimensions):
        return ItemKind.CONCRETE
    return ItemKind.PARTIAL


def _snapshot(catalog: ProductCatalog,
              inventory: Optional[InventorySnapshot]) -> InventorySnapshot:
    if inventory is None:
        return InventoryState(catalog).snapshot()
    return inventory


def consistent_variations(catalog: ProductCatalog,
                          fixed: Dict[str, Value]) -> Iterator[Variation]:
    """Enumerate the variations consistent with a partial assignment, in
    canonical order, without touching the non-consistent rest of the space."""
    names = catalog.dimension_names
    pools = [
        [fixed[d.name]] if d.name in fixed else list(d.values)
        for d in catalog.dimensions
    ]
    for combo in itertools.product(*pools):
        assignments = dict(zip(names, combo))
        yield Variation(assignments, canonical_id_for(names, assignments))


def any_available(catalog: ProductCatalog, inventory: InventorySnapshot,
                  fixed: Dict[str, Value]) -> bool:
    return any(inventory.is_available(v.canonical_id)
               for v in consistent_variations(catalog, fixed))


def _concrete_item(catalog: ProductCatalog, inventory: InventorySnapshot,
                   v: Variation, requires_elevation: bool) -> PublicationItem:
    return PublicationItem(
        kind=ItemKind.CONCRETE,
        fixed=dict(v.assignments),
        ranges={},
        exact_price=price(catalog, v),
        price_range=None,
        available=inventory.is_available(v.canonical_id),
        requires_elevation=requires_elevation,
    )


def _ranged_item(catalog: ProductCatalog, inventory: InventorySnapshot,
                 fixed: Dict[str, Value]) -> PublicationItem:
    kind = _kind_for(fixed, catalog)
    if kind is ItemKind.CONCRETE:
        v = catalog.variation(fixed)
        return _concrete_item(catalog, inventory, v, requires_elevation=True)
    ranges = {
        d.name: summarize_dimension(d)
        for d in catalog.dimensions if d.name not in fixed
    }
    return PublicationItem(
        kind=kind,
        fixed=dict(fixed),
        ranges=ranges,
        exact_price=None,
        price_range=price_bounds(catalog, fixed),
        available=any_available(catalog, inventory, fixed),
        requires_elevation=True,
    )


def iter_full_materialization(catalog: ProductCatalog,
                              inventory: Optional[InventorySnapshot] = None,
                              hard_cap: int = DEFAULT_HARD_CAP) -> Iterator[PublicationItem]:
    """Streaming full materialization: one concrete item per variation."""
    total = count_variations(catalog)
    if total > hard_cap:
        raise MaterializationCapExceeded(total, hard_cap)
    inv = _snapshot(catalog, inventory)
    for v in enumerate_variations(catalog):
        yield _concrete_item(catalog, inv, v, requires_elevation=False)


def full_materialization(catalog: ProductCatalog,
                         inventory: Optional[InventorySnapshot] = None,
                         hard_cap: int = DEFAULT_HARD_CAP) -> List[PublicationItem]:
    return list(iter_full_materialization(catalog, inventory, hard_cap))


def abstraction(catalog: ProductCatalog,
                inventory: Optional[InventorySnapshot] = None) -> List[PublicationItem]:
    """One maximally abstract item: every dimension summarized as a range."""
    inv = _snapshot(catalog, inventory)
    return [_ranged_item(catalog, inv, {})]


class PickerPolicy(str, Enum):
    FIRST_LEXICOGRAPHIC = "first-lexicographic"
    SEEDED_RANDOM = "seeded-random"


def specialization(catalog: ProductCatalog,
                   inventory: Optional[InventorySnapshot] = None,
                   picker: PickerPolicy = PickerPolicy.FIRST_LEXICOGRAPHIC,
                   picker_seed: int = 0) -> List[PublicationItem]:
    """Publish exactly one concrete, currently AVAILABLE variation as a
    representative. Elevated so clients can search for sibling variations."""
    inv = _snapshot(catalog, inventory)
    if picker is PickerPolicy.FIRST_LEXICOGRAPHIC:
        chosen = next(
            (v for v in enumerate_variations(catalog) if inv.is_available(v.canonical_id)),
            None)
    elif picker is PickerPolicy.SEEDED_RANDOM:
        # Reservoir sampling keeps memory flat over big catalogs.
        rng = random.Random(picker_seed)
        chosen = None
        seen = 0
        for v in enumerate_variations(catalog):
            if not inv.is_available(v.canonical_id):
                continue
            seen += 1
            if rng.randrange(seen) == 0:
                chosen = v
    else:
        raise HeuristicError(f"unknown picker policy {picker!r}")
    if chosen is None:
        raise NoAvailableVariation("no available variation in inventory")
    return [_concrete_item(catalog, inv, chosen, requires_elevation=True)]


def type_level_materialization(catalog: ProductCatalog,
                               inventory: Optional[InventorySnapshot] = None
                               ) -> List[PublicationItem]:
    """One item per value per dimension: sum of dimension lengths items."""
    inv = _snapshot(catalog, inventory)
    return [
        _ranged_item(catalog, inv, {d.name: v})
        for d in catalog.dimensions
        for v in d.values
    ]


class ClassificationMode(str, Enum):
    THRESHOLD = "threshold"
    BUDGET = "budget"


@dataclass(frozen=True)
class ClassificationPolicy:
    mode: ClassificationMode = ClassificationMode.THRESHOLD
    length_threshold: int = 5
    byte_budget: int = 50_000
    est_item_bytes: int = 600

    def __post_init__(self):
        if self.mode is ClassificationMode.THRESHOLD and self.length_threshold < 1:
            raise HeuristicError("length_threshold must be >= 1")
        if self.mode is ClassificationMode.BUDGET and self.byte_budget < self.est_item_bytes:
            raise HeuristicError("byte_budget must cover at least one item")


@dataclass(frozen=True)
class DimensionClassification:
    short: Tuple[str, ...]
    long: Tuple[str, ...]
    policy: ClassificationPolicy


def classify_dimensions(catalog: ProductCatalog,
                        policy: ClassificationPolicy) -> DimensionClassification:
    # Only abstractable dimensions (length > 1) are candidates for the short
    # side: a single-valued dimension carries no variation to materialize, and
    # keeping it on the range side keeps item shapes stable when a dimension
    # degenerates to one value.
    if policy.mode is ClassificationMode.THRESHOLD:
        short = [d.name for d in catalog.dimensions
                 if d.abstractable and len(d.values) <= policy.length_threshold]
    else:
        # Greedy by ascending length, declaration order breaking ties; stop
        # when the projected item count would blow the byte budget.
        order = sorted((i for i in range(len(catalog.dimensions))
                        if catalog.dimensions[i].abstractable),
                       key=lambda i: (len(catalog.dimensions[i].values), i))
        short_idx = []
        projected = 1
        for i in order:
            projected_next = projected * len(catalog.dimensions[i].values)
            if projected_next * policy.est_item_bytes > policy.byte_budget:
                break
            short_idx.append(i)
            projected = projected_next
        short = [catalog.dimensions[i].name for i in sorted(short_idx)]
    long = [d.name for d in catalog.dimensions if d.name not in short]
    return DimensionClassification(tuple(short), tuple(long), policy)


def selective_instance_materialization(catalog: ProductCatalog,
                                       classification: DimensionClassification,
                                       inventory: Optional[InventorySnapshot] = None
                                       ) -> List[PublicationItem]:
    """Full Cartesian product over the short dimensions only; long dimensions
    stay as ranges looked up through the attached service."""
    declared = set(catalog.dimension_names)
    if set(classification.short) | set(classification.long) != declared \
            or set(classification.short) & set(classification.long):
        raise HeuristicError("classification must partition the catalog's dimensions")
    inv = _snapshot(catalog, inventory)
    short_dims = [d for d in catalog.dimensions if d.name in classification.short]
    items = []
    for combo in itertools.product(*(d.values for d in short_dims)):
        fixed = {d.name: v for d, v in zip(short_dims, combo)}
        items.append(_ranged_item(catalog, inv, fixed))
    return items


@dataclass
class HeuristicPolicies:
    """Everything a heuristic run needs beyond the catalog."""

    classification: ClassificationPolicy = field(default_factory=ClassificationPolicy)
    picker: PickerPolicy = PickerPolicy.FIRST_LEXICOGRAPHIC
    picker_seed: int = 0
    hard_cap: int = DEFAULT_HARD_CAP


def publication_items(catalog: ProductCatalog, heuristic: str,
                      inventory: Optional[InventorySnapshot] = None,
                      policies: Optional[HeuristicPolicies] = None
                      ) -> Iterator[PublicationItem]:
    """Dispatch by stable heuristic name. Streaming for `full`."""
    policies = policies or HeuristicPolicies()
    if heuristic == "full":
        return iter_full_materialization(catalog, inventory, policies.hard_cap)
    if heuristic == "abstraction":
        return iter(abstraction(catalog, inventory))
    if heuristic == "specialization":
        return iter(specialization(catalog, inventory, policies.picker,
                                   policies.picker_seed))
    if heuristic == "type-level":
        return iter(type_level_materialization(catalog, inventory))
    if heuristic == "selective":
        classification = classify_dimensions(catalog, policies.classification)
        return iter(selective_instance_materialization(catalog, classification, inventory))
    raise HeuristicError(f"unknown heuristic {heuristic!r}")


def expected_count(catalog: ProductCatalog, heuristic: str,
                   policies: Optional[HeuristicPolicies] = None) -> int:
    """Closed-form item count per heuristic; no enumeration."""
    policies = policies or HeuristicPolicies()
    if heuristic == "full":
        return count_variations(catalog)
    if heuristic in ("abstraction", "specialization"):
        return 1
    if heuristic == "type-level":
        return sum(len(d.values) for d in catalog.dimensions)
    if heuristic == "selective":
        classification = classify_dimensions(catalog, policies.classification)
        n = 1
        for name in classification.short:
            n *= len(catalog.dimension(name).values)
        return n
    raise HeuristicError(f"unknown heuristic {heuristic!r}")
