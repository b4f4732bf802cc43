"""Keeps docs/api.md honest: every JSON body shown in the document must match
the live server byte-for-byte (modulo the bound port, since the examples are
written against the default 127.0.0.1:8321)."""
import re
from pathlib import Path

import requests

from matpub.catalog import load_catalog

from conftest import EVAL_HOTEL_PATH, live_server

API_MD = Path(__file__).resolve().parent.parent / "docs" / "api.md"
JSON_BLOCK = re.compile(r"```json\n(.*?)\n```", re.S)


def documented_bodies():
    blocks = JSON_BLOCK.findall(API_MD.read_text(encoding="utf-8"))
    assert len(blocks) == 6, "api.md should show exactly six JSON bodies"
    return blocks


def test_documented_bodies_match_live_server():
    (bad_request, point, booked, empty, partial, unknown) = documented_bodies()
    catalog = load_catalog(EVAL_HOTEL_PATH)
    point_query = ("type=normal&catering=breakfast&occupancy=single"
                   "&arrival=2026-01-01&stay=1")
    with live_server(catalog) as service:
        base = service.endpoint_base

        def live(expected, response):
            assert response.text == expected.replace("127.0.0.1:8321",
                                                     base.split("//")[1])

        live(bad_request, requests.get(f"{base}/api/search?season=summer",
                                       timeout=30))
        live(point, requests.get(f"{base}/api/search?{point_query}", timeout=30))
        cid = ("type=normal|catering=breakfast|occupancy=single"
               "|arrival=2026-01-01|stay=1")
        live(booked, requests.post(f"{base}/api/book",
                                   json={"canonical_id": cid}, timeout=30))
        live(empty, requests.get(f"{base}/api/search?{point_query}", timeout=30))
        requests.post(f"{base}/admin/reset", json={}, timeout=30)
        live(partial, requests.get(
            f"{base}/api/search?occupancy=double&catering=half-board&per_page=1",
            timeout=30))
        bad_cid = ("type=penthouse|catering=breakfast|occupancy=single"
                   "|arrival=2026-01-01|stay=1")
        live(unknown, requests.post(f"{base}/api/book",
                                    json={"canonical_id": bad_cid}, timeout=30))


def test_partial_constraint_count_is_21900():
    doc = documented_bodies()[4]
    assert '"total_count": 21900' in doc
    assert 2 * 365 * 30 == 21900
