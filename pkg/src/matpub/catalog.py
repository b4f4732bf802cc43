"""Multi-dimensional product model: dimensions, variation enumeration, pricing,
and seeded pseudo-inventory."""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union
from urllib.parse import quote, unquote

Value = Union[str, int]

TWO_PLACES = Decimal("0.01")


class CatalogError(ValueError):
    """Invalid catalog definition."""


class ValidationError(CatalogError):
    """A value or variation does not belong to the catalog."""


class DimensionKind(str, Enum):
    CATEGORICAL = "categorical"
    TEMPORAL = "temporal"
    ORDINAL = "ordinal"


@dataclass(frozen=True)
class DimensionDef:
    """One axis of product variation. `values` is the ordered list of admissible
    literals: strings for categorical, ISO-8601 date strings for temporal,
    integers for ordinal."""

    name: str
    kind: DimensionKind
    values: Tuple[Value, ...]
    display_label: str = ""

    def __post_init__(self):
        if not self.name:
            raise CatalogError("dimension name must be non-empty")
        if not self.values:
            raise CatalogError(f"dimension {self.name!r}: values must be non-empty")
        if len(set(self.values)) != len(self.values):
            raise CatalogError(f"dimension {self.name!r}: duplicate values")
        for v in self.values:
            if self.kind is DimensionKind.ORDINAL:
                if not isinstance(v, int):
                    raise CatalogError(f"dimension {self.name!r}: ordinal values must be integers")
            else:
                if not isinstance(v, str):
                    raise CatalogError(f"dimension {self.name!r}: values must be strings")
            if self.kind is DimensionKind.TEMPORAL:
                try:
                    date.fromisoformat(v)
                except ValueError as exc:
                    raise CatalogError(f"dimension {self.name!r}: bad date {v!r}") from exc

    @property
    def length(self) -> int:
        return len(self.values)

    @property
    def abstractable(self) -> bool:
        # Abstracting a length-1 dimension removes no information.
        return len(self.values) > 1


@dataclass
class PricingModel:
    """Additive pricing: price(v) = base_price + sum of per-(dimension, value)
    deltas. Values without a modifier contribute zero."""

    base_price: Decimal
    currency: str
    modifiers: Dict[Tuple[str, Value], Decimal] = field(default_factory=dict)

    def delta(self, dimension: str, value: Value) -> Decimal:
        return self.modifiers.get((dimension, value), Decimal("0"))


@dataclass(frozen=True)
class Variation:
    """One fully specified combination of dimension values."""

    assignments: Dict[str, Value]
    canonical_id: str

    def __eq__(self, other):
        return isinstance(other, Variation) and self.canonical_id == other.canonical_id

    def __hash__(self):
        return hash(self.canonical_id)


def _enc(part: Value) -> str:
    return quote(str(part), safe="")


def canonical_id_for(dimension_names: List[str], assignments: Dict[str, Value]) -> str:
    """Join `name=value` pairs with `|` in the given dimension order,
    percent-encoding names and values so the separators stay unambiguous."""
    return "|".join(f"{_enc(n)}={_enc(assignments[n])}" for n in dimension_names)


@dataclass
class ProductCatalog:
    product_name: str
    description: str
    image_url: str
    area_served: str
    dimensions: List[DimensionDef]
    pricing: PricingModel
    inventory_seed: int
    base_availability_rate: float

    def __post_init__(self):
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise CatalogError("dimension names must be unique")
        if not self.dimensions:
            raise CatalogError("catalog needs at least one dimension")
        if not 0.0 <= self.base_availability_rate <= 1.0:
            raise CatalogError("availability rate must be in [0, 1]")
        if self.inventory_seed < 0 or self.inventory_seed >= 2 ** 64:
            raise CatalogError("inventory seed must be a 64-bit unsigned integer")
        lo, _ = price_bounds(self, {})
        if lo <= 0:
            raise CatalogError(f"pricing drives some variation to {lo} <= 0")

    @property
    def dimension_names(self) -> List[str]:
        return [d.name for d in self.dimensions]

    def dimension(self, name: str) -> DimensionDef:
        for d in self.dimensions:
            if d.name == name:
                return d
        raise ValidationError(f"unknown dimension {name!r}")

    def variation(self, assignments: Dict[str, Value]) -> Variation:
        """Build (and validate) a Variation from a full assignment."""
        if set(assignments) != set(self.dimension_names):
            raise ValidationError("assignments must cover every dimension exactly once")
        for d in self.dimensions:
            if assignments[d.name] not in d.values:
                raise ValidationError(
                    f"value {assignments[d.name]!r} not in dimension {d.name!r}")
        ordered = {d.name: assignments[d.name] for d in self.dimensions}
        return Variation(ordered, canonical_id_for(self.dimension_names, ordered))


def count_variations(catalog: ProductCatalog) -> int:
    """Product of dimension lengths; O(#dimensions), no enumeration."""
    n = 1
    for d in catalog.dimensions:
        n *= len(d.values)
    return n


def enumerate_variations(catalog: ProductCatalog,
                         limit: Optional[int] = None) -> Iterator[Variation]:
    """Yield variations in lexicographic order of declared dimension order and
    declared value order. Streaming: memory is bounded by one variation."""
    if limit is not None and limit < 0:
        raise ValueError("limit must be >= 0")
    names = catalog.dimension_names
    # Pre-encode each (name, value) pair once; the cross product then only joins.
    parts = [
        [(v, f"{_enc(d.name)}={_enc(v)}") for v in d.values]
        for d in catalog.dimensions
    ]
    gen = (
        Variation(
            {n: c[0] for n, c in zip(names, combo)},
            "|".join(c[1] for c in combo),
        )
        for combo in itertools.product(*parts)
    )
    return itertools.islice(gen, limit) if limit is not None else gen


def parse_canonical_id(catalog: ProductCatalog, canonical_id: str) -> Dict[str, Value]:
    """Inverse of canonical id construction; validates against the catalog."""
    assignments: Dict[str, Value] = {}
    for piece in canonical_id.split("|"):
        if "=" not in piece:
            raise ValidationError(f"malformed canonical id segment {piece!r}")
        raw_name, raw_value = piece.split("=", 1)
        name = unquote(raw_name)
        dim = catalog.dimension(name)
        value: Value = unquote(raw_value)
        if dim.kind is DimensionKind.ORDINAL:
            try:
                value = int(value)
            except ValueError as exc:
                raise ValidationError(f"non-integer ordinal value {value!r}") from exc
        if name in assignments:
            raise ValidationError(f"dimension {name!r} repeated in canonical id")
        assignments[name] = value
    return catalog.variation(assignments).assignments


def price(catalog: ProductCatalog, v: Variation) -> Decimal:
    total = catalog.pricing.base_price
    for d in catalog.dimensions:
        if d.name not in v.assignments:
            raise ValidationError(f"variation missing dimension {d.name!r}")
        value = v.assignments[d.name]
        if value not in d.values:
            raise ValidationError(f"value {value!r} not in dimension {d.name!r}")
        total += catalog.pricing.delta(d.name, value)
    return total.quantize(TWO_PLACES)


def price_bounds(catalog: ProductCatalog,
                 fixed: Dict[str, Value]) -> Tuple[Decimal, Decimal]:
    """Exact min/max of price over all variations consistent with `fixed`.
    Closed form: pricing is additive, so bounds decompose per dimension."""
    lo = hi = catalog.pricing.base_price
    for d in catalog.dimensions:
        if d.name in fixed:
            delta = catalog.pricing.delta(d.name, fixed[d.name])
            lo += delta
            hi += delta
        else:
            deltas = [catalog.pricing.delta(d.name, v) for v in d.values]
            lo += min(deltas)
            hi += max(deltas)
    return lo.quantize(TWO_PLACES), hi.quantize(TWO_PLACES)


def availability_score(seed: int, canonical_id: str) -> float:
    """Keyed hash of the canonical id mapped to [0, 1)."""
    digest = hashlib.blake2b(
        canonical_id.encode("utf-8"),
        key=seed.to_bytes(8, "big"),
        digest_size=8,
    ).digest()
    return int.from_bytes(digest, "big") / 2 ** 64


def initial_availability(catalog: ProductCatalog, v: Variation) -> bool:
    return availability_score(catalog.inventory_seed, v.canonical_id) < catalog.base_availability_rate


@dataclass(frozen=True)
class InventorySnapshot:
    """Immutable view of inventory at one epoch."""

    seed: int
    rate: float
    epoch: int
    overrides: Dict[str, bool]

    def is_available(self, canonical_id: str) -> bool:
        got = self.overrides.get(canonical_id)
        if got is not None:
            return got
        return availability_score(self.seed, canonical_id) < self.rate


class InventoryState:
    """Seeded pseudo-inventory. Initial availability is a pure function of
    (seed, canonical_id, rate); bookings are stored as overrides. Not
    thread-safe by itself: the resolver serializes mutations."""

    def __init__(self, catalog: ProductCatalog, seed: Optional[int] = None):
        self.catalog = catalog
        self.seed = catalog.inventory_seed if seed is None else seed
        self.rate = catalog.base_availability_rate
        self.epoch = 0
        self._overrides: Dict[str, bool] = {}

    def is_available(self, canonical_id: str) -> bool:
        got = self._overrides.get(canonical_id)
        if got is not None:
            return got
        return availability_score(self.seed, canonical_id) < self.rate

    def book(self, canonical_id: str) -> bool:
        """Mark unavailable. Returns True iff the booking was confirmed (the
        variation was available); epoch advances only on confirmation."""
        if not self.is_available(canonical_id):
            return False
        self._overrides[canonical_id] = False
        self.epoch += 1
        return True

    def reset(self, seed: Optional[int] = None):
        if seed is not None:
            self.seed = seed
        self._overrides.clear()
        self.epoch = 0

    def snapshot(self) -> InventorySnapshot:
        return InventorySnapshot(self.seed, self.rate, self.epoch, dict(self._overrides))


def _expand_values(kind: DimensionKind, spec) -> Tuple[Value, ...]:
    """Catalog files may give values as an explicit list or, for temporal and
    ordinal dimensions, as {"start": ..., "count": n} which is pre-expanded
    here so every later stage sees plain value lists."""
    if isinstance(spec, list):
        return tuple(spec)
    if isinstance(spec, dict):
        count = int(spec["count"])
        if kind is DimensionKind.TEMPORAL:
            start = date.fromisoformat(spec["start"])
            return tuple((start + timedelta(days=i)).isoformat() for i in range(count))
        if kind is DimensionKind.ORDINAL:
            start = int(spec["start"])
            step = int(spec.get("step", 1))
            return tuple(start + i * step for i in range(count))
    raise CatalogError(f"cannot expand values spec {spec!r} for kind {kind.value}")


def catalog_from_dict(doc: dict) -> ProductCatalog:
    try:
        product = doc["product"]
        dims = [
            DimensionDef(
                name=d["name"],
                kind=DimensionKind(d["kind"]),
                values=_expand_values(DimensionKind(d["kind"]), d["values"]),
                display_label=d.get("label", d["name"]),
            )
            for d in doc["dimensions"]
        ]
        pricing_doc = doc["pricing"]
        modifiers = {
            (m["dimension"], m["value"]): Decimal(str(m["delta"]))
            for m in pricing_doc.get("modifiers", [])
        }
        pricing = PricingModel(
            base_price=Decimal(str(pricing_doc["base"])),
            currency=pricing_doc["currency"],
            modifiers=modifiers,
        )
        inventory = doc["inventory"]
        return ProductCatalog(
            product_name=product["name"],
            description=product.get("description", ""),
            image_url=product.get("image", ""),
            area_served=product.get("area_served", ""),
            dimensions=dims,
            pricing=pricing,
            inventory_seed=int(inventory["seed"]),
            base_availability_rate=float(inventory["availability_rate"]),
        )
    except (KeyError, TypeError) as exc:
        raise CatalogError(f"malformed catalog document: {exc}") from exc


def load_catalog(path: Union[str, Path]) -> ProductCatalog:
    with open(path, "r", encoding="utf-8") as fh:
        return catalog_from_dict(json.load(fh))


def resize_dimension(catalog: ProductCatalog, name: str, length: int) -> ProductCatalog:
    """Return a copy of the catalog with the named dimension regrown to
    `length` values from its first value (daily dates for temporal, step-1
    integers for ordinal, first-n or synthesized labels for categorical).
    Modifiers on dropped values are dropped with them."""
    if length < 1:
        raise CatalogError("dimension length must be >= 1")
    dim = catalog.dimension(name)
    if dim.kind is DimensionKind.TEMPORAL:
        start = date.fromisoformat(dim.values[0])
        values: Tuple[Value, ...] = tuple(
            (start + timedelta(days=i)).isoformat() for i in range(length))
    elif dim.kind is DimensionKind.ORDINAL:
        start = dim.values[0]
        step = dim.values[1] - dim.values[0] if len(dim.values) > 1 else 1
        values = tuple(start + i * step for i in range(length))
    else:
        values = tuple(dim.values[:length]) + tuple(
            f"{name}-{i}" for i in range(len(dim.values), length))
    new_dims = [
        DimensionDef(d.name, d.kind, values, d.display_label) if d.name == name else d
        for d in catalog.dimensions
    ]
    value_sets = {d.name: set(d.values) for d in new_dims}
    new_modifiers = {
        (dname, v): delta
        for (dname, v), delta in catalog.pricing.modifiers.items()
        if v in value_sets[dname]
    }
    return ProductCatalog(
        product_name=catalog.product_name,
        description=catalog.description,
        image_url=catalog.image_url,
        area_served=catalog.area_served,
        dimensions=new_dims,
        pricing=PricingModel(catalog.pricing.base_price, catalog.pricing.currency,
                             new_modifiers),
        inventory_seed=catalog.inventory_seed,
        base_availability_rate=catalog.base_availability_rate,
    )
