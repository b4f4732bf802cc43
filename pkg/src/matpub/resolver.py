"""HTTP service simulating the booking engine: serves annotated pages per
heuristic and resolves search/book requests against a mutating, epoch-versioned
in-memory inventory."""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Dict, List, Optional, Tuple
from urllib.parse import parse_qsl, urlparse

from .annotate import (
    Annotation,
    PageNotFound,
    elevate,
    render_page,
    serialize,
)
from .catalog import (
    DimensionKind,
    InventorySnapshot,
    InventoryState,
    ProductCatalog,
    ValidationError,
    Value,
    parse_canonical_id,
    price,
)
from .heuristics import (
    HEURISTIC_NAMES,
    HeuristicPolicies,
    MaterializationCapExceeded,
    NoAvailableVariation,
    consistent_variations,
    publication_items,
)

EPOCH_HEADER = "X-Inventory-Epoch"
MAX_PER_PAGE = 200
DEFAULT_PER_PAGE = 50


class BadSearchRequest(ValueError):
    def __init__(self, message: str, offender: str):
        super().__init__(message)
        self.offender = offender


@dataclass
class BookingResult:
    status: str  # confirmed | already_booked | unknown_offer
    canonical_id: str
    epoch_after: int


class ResolverService:
    """Owns the inventory behind a single serialization point. All mutations
    (book, reset) are totally ordered; reads work off epoch-stamped snapshots."""

    def __init__(self, catalog: ProductCatalog,
                 policies: Optional[HeuristicPolicies] = None,
                 endpoint_base: str = "http://localhost"):
        self.catalog = catalog
        self.policies = policies or HeuristicPolicies()
        self.endpoint_base = endpoint_base
        self._inventory = InventoryState(catalog)
        self._lock = threading.Lock()

    # -- inventory -----------------------------------------------------------

    def snapshot(self) -> InventorySnapshot:
        with self._lock:
            return self._inventory.snapshot()

    def book(self, canonical_id: str) -> BookingResult:
        try:
            parse_canonical_id(self.catalog, canonical_id)
        except ValidationError:
            with self._lock:
                return BookingResult("unknown_offer", canonical_id, self._inventory.epoch)
        with self._lock:
            confirmed = self._inventory.book(canonical_id)
            epoch = self._inventory.epoch
        return BookingResult("confirmed" if confirmed else "already_booked",
                             canonical_id, epoch)

    def reset(self, seed: Optional[int] = None) -> int:
        with self._lock:
            self._inventory.reset(seed)
            return self._inventory.epoch

    # -- search --------------------------------------------------------------

    def _typed_constraints(self, raw: Dict[str, str]) -> Dict[str, Value]:
        constraints: Dict[str, Value] = {}
        names = set(self.catalog.dimension_names)
        for name, raw_value in raw.items():
            if name not in names:
                raise BadSearchRequest(f"unknown dimension {name!r}", name)
            dim = self.catalog.dimension(name)
            value: Value = raw_value
            if dim.kind is DimensionKind.ORDINAL:
                try:
                    value = int(raw_value)
                except ValueError:
                    raise BadSearchRequest(
                        f"dimension {name!r} expects an integer, got {raw_value!r}", name)
            if value not in dim.values:
                raise BadSearchRequest(
                    f"value {raw_value!r} not in dimension {name!r}", name)
            constraints[name] = value
        return constraints

    def search(self, raw_constraints: Dict[str, str], page: int = 1,
               per_page: int = DEFAULT_PER_PAGE) -> Tuple[List[dict], int, int]:
        """Available variations consistent with the constraints, in canonical
        enumeration order. Returns (offers, total_count, epoch). Constrained
        dimensions are pruned before enumeration, never scanned."""
        if page < 1:
            raise BadSearchRequest("page must be >= 1", "page")
        if not 1 <= per_page <= MAX_PER_PAGE:
            raise BadSearchRequest(f"per_page must be in [1, {MAX_PER_PAGE}]", "per_page")
        constraints = self._typed_constraints(raw_constraints)
        snapshot = self.snapshot()
        lo = (page - 1) * per_page
        hi = page * per_page
        offers: List[dict] = []
        total = 0
        for v in consistent_variations(self.catalog, constraints):
            if not snapshot.is_available(v.canonical_id):
                continue
            if lo <= total < hi:
                offers.append({
                    "canonical_id": v.canonical_id,
                    "assignments": v.assignments,
                    "price": f"{price(self.catalog, v):.2f}",
                    "currency": self.catalog.pricing.currency,
                    "available": True,
                    "book_url": f"{self.endpoint_base.rstrip('/')}/api/book",
                })
            total += 1
        return offers, total, snapshot.epoch

    # -- pages ---------------------------------------------------------------

    def annotations_for(self, heuristic: str,
                        snapshot: Optional[InventorySnapshot] = None) -> List[Annotation]:
        snapshot = snapshot or self.snapshot()
        annotations = []
        for item in publication_items(self.catalog, heuristic, snapshot, self.policies):
            service = (elevate(item, self.endpoint_base, self.catalog)
                       if item.requires_elevation else None)
            annotations.append(serialize(item, service, self.catalog))
        return annotations

    def page_html(self, heuristic: str, page: Optional[int] = None,
                  per_page: Optional[int] = None) -> Tuple[bytes, int]:
        snapshot = self.snapshot()
        annotations = self.annotations_for(heuristic, snapshot)
        body = render_page(annotations, self.catalog, page=page, per_page=per_page)
        return body, snapshot.epoch


# ---------------------------------------------------------------------------
# HTTP layer

def _json_bytes(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ": ")).encode("utf-8")


class ResolverHandler(BaseHTTPRequestHandler):
    service: ResolverService = None  # bound by make_server
    log_fn: Optional[Callable[[str], None]] = None
    protocol_version = "HTTP/1.1"

    # -- plumbing ------------------------------------------------------------

    def log_message(self, fmt, *args):
        if self.log_fn:
            self.log_fn(fmt % args)

    def _respond(self, status: int, body: bytes, content_type: str, epoch: int):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header(EPOCH_HEADER, str(epoch))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, doc, epoch: int):
        self._respond(status, _json_bytes(doc), "application/json; charset=utf-8", epoch)

    def _error(self, status: int, message: str, epoch: int, **extra):
        self._json(status, {"error": message, **extra}, epoch)

    # -- routes --------------------------------------------------------------

    def do_GET(self):
        url = urlparse(self.path)
        query = dict(parse_qsl(url.query, keep_blank_values=True))
        if url.path.startswith("/page/"):
            self._get_page(url.path[len("/page/"):], query)
        elif url.path == "/api/search":
            self._get_search(query)
        else:
            self._error(404, f"no such path {url.path!r}", self.service.snapshot().epoch)

    def _get_page(self, heuristic: str, query: Dict[str, str]):
        epoch = self.service.snapshot().epoch
        if heuristic not in HEURISTIC_NAMES:
            self._error(404, f"unknown heuristic {heuristic!r}", epoch)
            return
        page = per_page = None
        try:
            if "page" in query:
                page = int(query["page"])
                per_page = int(query.get("per_page", DEFAULT_PER_PAGE))
        except ValueError:
            self._error(400, "page and per_page must be integers", epoch)
            return
        try:
            body, epoch = self.service.page_html(heuristic, page=page, per_page=per_page)
        except MaterializationCapExceeded as exc:
            self._error(422, str(exc), epoch, count=exc.count, cap=exc.cap)
            return
        except NoAvailableVariation as exc:
            self._error(422, str(exc), epoch)
            return
        except PageNotFound as exc:
            self._error(404, str(exc), epoch)
            return
        self._respond(200, body, "text/html; charset=utf-8", epoch)

    def _get_search(self, query: Dict[str, str]):
        try:
            page = int(query.pop("page", "1"))
            per_page = int(query.pop("per_page", str(DEFAULT_PER_PAGE)))
        except ValueError:
            self._error(400, "page and per_page must be integers",
                        self.service.snapshot().epoch)
            return
        try:
            offers, total, epoch = self.service.search(query, page, per_page)
        except BadSearchRequest as exc:
            self._error(400, str(exc), self.service.snapshot().epoch,
                        offender=exc.offender)
            return
        self._json(200, {"offers": offers, "total_count": total,
                         "page": page, "per_page": per_page}, epoch)

    def do_POST(self):
        url = urlparse(self.path)
        try:
            length = int(self.headers.get("Content-Length", "0"))
            body = json.loads(self.rfile.read(length) or b"{}")
            if not isinstance(body, dict):
                raise ValueError("body must be a JSON object")
        except (ValueError, json.JSONDecodeError):
            self._error(400, "malformed JSON body", self.service.snapshot().epoch)
            return
        if url.path == "/api/book":
            canonical_id = body.get("canonical_id")
            if not isinstance(canonical_id, str) or not canonical_id:
                self._error(400, "canonical_id (string) required",
                            self.service.snapshot().epoch)
                return
            result = self.service.book(canonical_id)
            self._json(200, {"status": result.status,
                             "canonical_id": result.canonical_id,
                             "epoch_after": result.epoch_after}, result.epoch_after)
        elif url.path == "/admin/reset":
            seed = body.get("seed")
            if seed is not None and not isinstance(seed, int):
                self._error(400, "seed must be an integer",
                            self.service.snapshot().epoch)
                return
            epoch = self.service.reset(seed)
            self._json(200, {"epoch": epoch}, epoch)
        else:
            self._error(404, f"no such path {url.path!r}", self.service.snapshot().epoch)


def make_server(service: ResolverService, host: str = "127.0.0.1", port: int = 0,
                log_fn: Optional[Callable[[str], None]] = None) -> ThreadingHTTPServer:
    """Bind a threading HTTP server for the service. With port=0 the OS picks a
    free port; the service's endpoint base is updated to the bound address."""
    handler = type("BoundResolverHandler", (ResolverHandler,),
                   {"service": service, "log_fn": staticmethod(log_fn) if log_fn else None})
    server = ThreadingHTTPServer((host, port), handler, bind_and_activate=False)
    server.daemon_threads = True
    server.request_queue_size = 128  # survive concurrent client bursts
    server.server_bind()
    server.server_activate()
    service.endpoint_base = f"http://{server.server_address[0]}:{server.server_address[1]}"
    return server
