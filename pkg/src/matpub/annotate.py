"""JSON-LD serialization of publication items, the elevation step (attaching a
SearchAction service description), annotated HTML page rendering, and the
content-conformity checker."""
from __future__ import annotations

import hashlib
import html
import io
import json
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from html.parser import HTMLParser
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from .catalog import DimensionKind, ProductCatalog, Value
from .heuristics import ItemKind, PublicationItem, RangeSummary

SCHEMA_CONTEXT = "https://schema.org"
IN_STOCK = "https://schema.org/InStock"
OUT_OF_STOCK = "https://schema.org/OutOfStock"


class AnnotateError(ValueError):
    pass


class ElevationError(AnnotateError):
    """Item does not require (or is missing) elevation."""


class PageNotFound(LookupError):
    """Requested page is out of range."""


class ActionKind(str, Enum):
    SEARCH = "search"
    BOOK = "book"


class OutputType(str, Enum):
    OFFER = "offer"
    BOOKING_CONFIRMATION = "booking_confirmation"


@dataclass(frozen=True)
class InputParam:
    name: str
    value_domain: RangeSummary
    required: bool = True


@dataclass(frozen=True)
class ServiceDescription:
    action_kind: ActionKind
    target_url_template: str
    inputs: Tuple[InputParam, ...]
    output_type: OutputType


def elevate(item: PublicationItem, endpoint_base: str,
            catalog: ProductCatalog) -> ServiceDescription:
    """Attach a search-service description. Inputs cover the non-fixed
    dimensions; concrete elevated items (the specialization case) instead get
    inputs over ALL dimensions so clients can discover sibling variations."""
    if not item.requires_elevation:
        raise ElevationError("item does not require elevation")
    if item.kind is ItemKind.CONCRETE:
        input_names = catalog.dimension_names
    else:
        input_names = [d.name for d in catalog.dimensions if d.name not in item.fixed]
    from .heuristics import summarize_dimension
    params = tuple(
        InputParam(name, summarize_dimension(catalog.dimension(name)), required=True)
        for name in input_names
    )
    base = endpoint_base.rstrip("/")
    if params:
        template = f"{base}/api/search{{?{','.join(p.name for p in params)}}}"
    else:
        template = f"{base}/api/search"
    return ServiceDescription(ActionKind.SEARCH, template, params, OutputType.OFFER)


@dataclass(frozen=True)
class Annotation:
    item: PublicationItem
    jsonld: bytes
    byte_size: int
    dom_anchor_id: str


def dom_anchor_id(item: PublicationItem) -> str:
    """Stable element id: hash of the item's canonical fixed-set string."""
    digest = hashlib.blake2b(item.fixed_set_id().encode("utf-8"), digest_size=6)
    return f"p-{digest.hexdigest()}"


def _money(amount: Decimal) -> str:
    return f"{amount:.2f}"


def _range_property(name: str, summary: RangeSummary) -> dict:
    prop: dict = {"@type": "PropertyValue", "name": name}
    if summary.kind is DimensionKind.CATEGORICAL:
        prop["value"] = list(summary.values)
    else:
        prop["minValue"] = summary.min_value
        prop["maxValue"] = summary.max_value
        prop["valueReference"] = {"@type": "QuantitativeValue", "value": summary.count}
    return prop


def _action_document(service: ServiceDescription) -> dict:
    action: dict = {
        "@type": "SearchAction",
        "target": {"@type": "EntryPoint", "urlTemplate": service.target_url_template},
        "result": {"@type": "Offer"},
    }
    for param in service.inputs:
        spec: dict = {
            "@type": "PropertyValueSpecification",
            "valueName": param.name,
            "valueRequired": param.required,
        }
        action[f"{param.name}-input"] = spec
    return action


def serialize(item: PublicationItem, service: Optional[ServiceDescription],
              catalog: ProductCatalog) -> Annotation:
    """Canonical JSON-LD bytes: sorted keys, no whitespace, UTF-8."""
    if item.requires_elevation and service is None:
        raise AnnotateError("elevated item serialized without a service description")
    if not item.requires_elevation and service is not None:
        raise AnnotateError("service description attached to a non-elevated item")
    anchor = dom_anchor_id(item)
    properties = []
    for dim in catalog.dimensions:
        if dim.name in item.fixed:
            properties.append({"@type": "PropertyValue", "name": dim.name,
                               "value": item.fixed[dim.name]})
        elif dim.name in item.ranges:
            properties.append(_range_property(dim.name, item.ranges[dim.name]))
    offer: dict = {
        "@type": "Offer",
        "areaServed": catalog.area_served,
        "availability": IN_STOCK if item.available else OUT_OF_STOCK,
    }
    if item.exact_price is not None:
        offer["price"] = _money(item.exact_price)
        offer["priceCurrency"] = catalog.pricing.currency
    else:
        lo, hi = item.price_range
        offer["priceSpecification"] = {
            "@type": "PriceSpecification",
            "minPrice": _money(lo),
            "maxPrice": _money(hi),
            "priceCurrency": catalog.pricing.currency,
        }
    if service is not None:
        offer["potentialAction"] = _action_document(service)
    doc = {
        "@context": SCHEMA_CONTEXT,
        "@id": f"#{anchor}",
        "@type": "Product",
        "name": catalog.product_name,
        "description": catalog.description,
        "image": catalog.image_url,
        "additionalProperty": properties,
        "offers": offer,
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":"),
                         ensure_ascii=False).encode("utf-8")
    return Annotation(item=item, jsonld=payload, byte_size=len(payload),
                      dom_anchor_id=anchor)


# ---------------------------------------------------------------------------
# HTML rendering

_SCRIPT_OPEN = b'<script type="application/ld+json">'
_SCRIPT_CLOSE = b"</script>\n"


def _page_head(catalog: ProductCatalog, title_suffix: str = "") -> bytes:
    title = html.escape(catalog.product_name + title_suffix)
    return (
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{title}</title>\n"
        "<style>body{font-family:sans-serif;margin:2em}"
        ".product{border:1px solid #ccc;margin:1em 0;padding:1em}</style>\n"
        "</head>\n<body>\n"
        f"<h1>{html.escape(catalog.product_name)}</h1>\n"
        f"<p class=\"description\">{html.escape(catalog.description)}</p>\n"
    ).encode("utf-8")


_PAGE_TAIL = b"</body>\n</html>\n"


def _describe_range(summary: RangeSummary) -> str:
    if summary.kind is DimensionKind.CATEGORICAL:
        return "any of: " + ", ".join(str(v) for v in summary.values)
    return f"{summary.min_value} to {summary.max_value} ({summary.count} options)"


def _visible_block(annotation: Annotation, catalog: ProductCatalog) -> bytes:
    item = annotation.item
    rows = []
    for dim in catalog.dimensions:
        if dim.name in item.fixed:
            text = html.escape(str(item.fixed[dim.name]))
        else:
            text = html.escape(_describe_range(item.ranges[dim.name]))
        rows.append(f"<dt>{html.escape(dim.display_label or dim.name)}</dt>"
                    f"<dd>{text}</dd>")
    if item.exact_price is not None:
        price_text = f"{_money(item.exact_price)} {catalog.pricing.currency}"
    else:
        lo, hi = item.price_range
        price_text = f"{_money(lo)}&ndash;{_money(hi)} {catalog.pricing.currency}"
    availability = "Available" if item.available else "Currently unavailable"
    return (
        f"<div class=\"product\" id=\"{annotation.dom_anchor_id}\">\n"
        f"<h2>{html.escape(catalog.product_name)} ({item.kind.value})</h2>\n"
        f"<dl>{''.join(rows)}</dl>\n"
        f"<p class=\"price\">{price_text}</p>\n"
        f"<p class=\"availability\">{availability}</p>\n"
        "</div>\n"
    ).encode("utf-8")


def block_overhead(annotation: Annotation, catalog: ProductCatalog) -> int:
    """Bytes a rendered block adds beyond the raw annotation bytes."""
    return (len(_SCRIPT_OPEN) + len(_SCRIPT_CLOSE)
            + len(_visible_block(annotation, catalog)))


def page_shell_size(catalog: ProductCatalog) -> int:
    return len(_page_head(catalog)) + len(_PAGE_TAIL)


def render_page_stream(annotations: Iterable[Annotation], catalog: ProductCatalog,
                       write: Callable[[bytes], object]) -> int:
    """Write a bulk page through `write` without holding it in memory.
    Returns the total byte count."""
    total = 0

    def emit(chunk: bytes):
        nonlocal total
        total += len(chunk)
        write(chunk)

    emit(_page_head(catalog))
    for annotation in annotations:
        emit(_SCRIPT_OPEN)
        emit(annotation.jsonld)
        emit(_SCRIPT_CLOSE)
        emit(_visible_block(annotation, catalog))
    emit(_PAGE_TAIL)
    return total


def render_page(annotations: List[Annotation], catalog: ProductCatalog,
                page: Optional[int] = None,
                per_page: Optional[int] = None) -> bytes:
    """Bulk mode embeds every annotation; paginated mode (page, per_page both
    given, 1-based) embeds only the current page's slice."""
    if page is not None:
        if per_page is None or per_page < 1:
            raise AnnotateError("paginated mode needs per_page >= 1")
        pages = max(1, -(-len(annotations) // per_page))
        if not 1 <= page <= pages:
            raise PageNotFound(f"page {page} out of range 1..{pages}")
        annotations = annotations[(page - 1) * per_page: page * per_page]
    buf = io.BytesIO()
    render_page_stream(annotations, catalog, buf.write)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Conformity checking

@dataclass
class ConformityReport:
    conforms: bool
    orphans: List[Tuple[str, str]] = field(default_factory=list)


class ConformityScanner(HTMLParser):
    """Collects JSON-LD anchor ids and visible product element ids; can be fed
    incrementally for large pages."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.annotation_anchors: List[str] = []
        self.element_ids: List[str] = []
        self.malformed: int = 0
        self._in_jsonld = False
        self._script_buf: List[str] = []

    def handle_starttag(self, tag, attrs):
        attrs = dict(attrs)
        if tag == "script" and attrs.get("type") == "application/ld+json":
            self._in_jsonld = True
            self._script_buf = []
        elif "product" in (attrs.get("class") or "").split() and attrs.get("id"):
            self.element_ids.append(attrs["id"])

    def handle_data(self, data):
        if self._in_jsonld:
            self._script_buf.append(data)

    def handle_endtag(self, tag):
        if tag == "script" and self._in_jsonld:
            self._in_jsonld = False
            raw = "".join(self._script_buf)
            try:
                doc = json.loads(raw)
                anchor = str(doc.get("@id", "")).lstrip("#")
                if not anchor:
                    raise ValueError("missing @id")
                self.annotation_anchors.append(anchor)
            except ValueError:
                self.malformed += 1
                self.annotation_anchors.append(f"<malformed-{self.malformed}>")

    def report(self) -> ConformityReport:
        anchors = set(a for a in self.annotation_anchors if not a.startswith("<malformed-"))
        ids = set(self.element_ids)
        orphans: List[Tuple[str, str]] = []
        for a in self.annotation_anchors:
            if a.startswith("<malformed-") or a not in ids:
                orphans.append(("annotation", a))
        for eid in self.element_ids:
            if eid not in anchors:
                orphans.append(("element", eid))
        return ConformityReport(conforms=not orphans, orphans=orphans)


def conformity_check(page: bytes) -> ConformityReport:
    """True iff every embedded JSON-LD block resolves to a visible product
    element and vice versa. Malformed blocks count as orphans."""
    scanner = ConformityScanner()
    scanner.feed(page.decode("utf-8"))
    scanner.close()
    return scanner.report()
