"""HTTP review service: score letters, resolve codes, log human decisions.

State lives in two append-only ND-JSON files (letters, decisions) under the
data directory; every append is flushed and fsynced before the request is
acknowledged, and a restart replays both files (a torn trailing line from a
crash is dropped). Appends are serialized through one lock; reads see a
prefix-consistent log.

API (JSON over HTTP/1.1):
    POST /api/letters                {"text": ...} -> 201 {"id": ...}
    GET  /api/letters/{id}           -> full record with predictions/resolutions
    GET  /api/letters/{id}/attention?label=CODE[&format=tsv] -> HTML or TSV
    POST /api/letters/{id}/decisions {"icd_code","action",...} -> 201 ack
    GET  /api/decisions?letter_id=&reviewer= -> ND-JSON stream
"""

from __future__ import annotations

import json
import logging
import os
import re
import secrets
import threading
from datetime import datetime, timezone
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .corpus import clean_text
from .han import MODE_HLAN, forward, predict_codes
from .snomed import (
    ONE_TO_MANY,
    SnomedResolution,
    format_resolution,
    load_icd_dictionary,
    parse_map_file,
    resolve,
)
from .text_pipeline import structure_document
from .trainer import Checkpoint
from .viz import build_viz, export_attention_tsv, render_attention_html

logger = logging.getLogger(__name__)

ACTIONS = ("accept", "reject", "replace")


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _resolution_payload(r: SnomedResolution) -> dict:
    return {
        "category": r.category,
        "candidates": [
            {"snomed_cid": c.snomed_cid, "snomed_fsn": c.snomed_fsn}
            for c in r.candidates
        ],
        "fallback_description": r.fallback_description,
    }


class SnomedTables:
    def __init__(self, maps_dir: str | Path):
        maps_dir = Path(maps_dir)
        self.one_to_one = parse_map_file(maps_dir / "icd9_snomed_1to1.tsv", "one_to_one")
        self.one_to_many = parse_map_file(maps_dir / "icd9_snomed_1toM.tsv", "one_to_many")
        self.dictionaries = []
        for name in ("D_ICD_DIAGNOSES.csv", "D_ICD_PROCEDURES.csv"):
            path = maps_dir / name
            if path.exists():
                self.dictionaries.append(load_icd_dictionary(path))

    def resolve(self, code: str, parent_first: bool = False) -> SnomedResolution:
        return resolve(code, self.one_to_one, self.one_to_many,
                       self.dictionaries, parent_first=parent_first)


class CoderService:
    """Pipeline wrapper plus the durable letter/decision store."""

    def __init__(
        self,
        data_dir: str | Path,
        checkpoint: Checkpoint | None = None,
        snomed_tables: SnomedTables | None = None,
        threshold: float = 0.5,
        parent_first: bool = False,
    ):
        self.checkpoint = checkpoint
        self.snomed = snomed_tables
        self.threshold = threshold
        self.parent_first = parent_first

        data_dir = Path(data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self._letters_path = data_dir / "letters.ndjson"
        self._decisions_path = data_dir / "decisions.ndjson"
        self._lock = threading.Lock()
        self.letters: dict[str, dict] = {}
        self.decisions: list[dict] = []
        self._replay()
        self._letters_file = open(self._letters_path, "a", encoding="utf-8")
        self._decisions_file = open(self._decisions_path, "a", encoding="utf-8")

    def close(self) -> None:
        self._letters_file.close()
        self._decisions_file.close()

    # -- persistence ---------------------------------------------------------

    def _replay(self) -> None:
        for path, sink in ((self._letters_path, "letters"),
                           (self._decisions_path, "decisions")):
            if not path.exists():
                continue
            with open(path, encoding="utf-8") as f:
                for i, line in enumerate(f):
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError:
                        # torn tail from a crash mid-append; nothing after it
                        # was ever acknowledged
                        logger.warning("%s: dropping undecodable line %d",
                                       path, i + 1)
                        continue
                    if sink == "letters":
                        self.letters[record["id"]] = record
                    else:
                        self.decisions.append(record)

    def _append(self, f, record: dict) -> None:
        f.write(json.dumps(record, sort_keys=True) + "\n")
        f.flush()
        os.fsync(f.fileno())

    # -- operations ----------------------------------------------------------

    def submit_letter(self, text: str) -> str:
        if self.checkpoint is None:
            raise ServiceError(503, "no model checkpoint loaded")
        cleaned = clean_text(text or "")
        if not cleaned:
            raise ServiceError(422, "letter is empty after cleaning")

        config = self.checkpoint.config
        doc = structure_document_from_text(cleaned, self.checkpoint.vocab,
                                           config.s_max, config.t_max)
        pred, _ = forward(doc, self.checkpoint.params, threshold=self.threshold)
        codes = predict_codes(pred, threshold=self.threshold)

        predictions = []
        for code in codes:
            resolution = (self.snomed.resolve(code, self.parent_first)
                          if self.snomed else None)
            predictions.append({
                "icd_code": code,
                "probability": pred.probability(code),
                "resolution": _resolution_payload(resolution) if resolution else None,
            })

        with self._lock:
            letter_id = secrets.token_hex(8)
            while letter_id in self.letters:
                letter_id = secrets.token_hex(8)
            record = {
                "id": letter_id,
                "created_at": _utc_now(),
                "raw_text": text,
                "cleaned_text": cleaned,
                "predictions": predictions,
            }
            self._append(self._letters_file, record)
            self.letters[letter_id] = record
        return letter_id

    def _status(self, record: dict) -> str:
        decided = {d["icd_code"] for d in self.decisions
                   if d["letter_id"] == record["id"]}
        needed = {p["icd_code"] for p in record["predictions"]}
        return "reviewed" if needed <= decided else "pending"

    def get_letter(self, letter_id: str) -> dict:
        record = self.letters.get(letter_id)
        if record is None:
            raise ServiceError(404, f"unknown letter {letter_id}")
        out = dict(record)
        out["status"] = self._status(record)
        out["attention_url"] = f"/api/letters/{letter_id}/attention"
        return out

    def record_decision(self, letter_id: str, decision: dict) -> dict:
        record = self.letters.get(letter_id)
        if record is None:
            raise ServiceError(404, f"unknown letter {letter_id}")
        action = decision.get("action")
        if action not in ACTIONS:
            raise ServiceError(422, f"action must be one of {ACTIONS}")
        icd_code = decision.get("icd_code")
        if not icd_code:
            raise ServiceError(422, "icd_code is required")

        predicted = {p["icd_code"]: p for p in record["predictions"]}
        if icd_code not in predicted and action != "replace":
            raise ServiceError(
                422, f"{icd_code} was not predicted for this letter; "
                     "only replace may introduce new codes"
            )
        chosen = decision.get("chosen_snomed_cid")
        if action == "replace" and not chosen:
            raise ServiceError(422, "replace requires chosen_snomed_cid")
        if action == "accept" and icd_code in predicted:
            resolution = predicted[icd_code].get("resolution")
            if resolution and resolution["category"] == ONE_TO_MANY and not chosen:
                raise ServiceError(
                    422, f"{icd_code} maps one-to-many; accepting requires "
                         "chosen_snomed_cid"
                )

        entry = {
            "timestamp": _utc_now(),
            "letter_id": letter_id,
            "icd_code": icd_code,
            "action": action,
            "chosen_snomed_cid": chosen,
            "reviewer": decision.get("reviewer", ""),
        }
        with self._lock:
            self._append(self._decisions_file, entry)
            self.decisions.append(entry)
        return {"ok": True, "letter_status": self._status(record)}

    def export_decisions(self, letter_id: str | None = None,
                         reviewer: str | None = None) -> list[dict]:
        out = []
        for d in self.decisions:
            if letter_id and d["letter_id"] != letter_id:
                continue
            if reviewer and d["reviewer"] != reviewer:
                continue
            out.append(d)
        return out

    # -- attention views -----------------------------------------------------

    def _viz_for(self, letter_id: str, label: str | None):
        if self.checkpoint is None:
            raise ServiceError(503, "no model checkpoint loaded")
        record = self.letters.get(letter_id)
        if record is None:
            raise ServiceError(404, f"unknown letter {letter_id}")
        config = self.checkpoint.config
        doc = structure_document_from_text(record["cleaned_text"],
                                           self.checkpoint.vocab,
                                           config.s_max, config.t_max)
        pred, att = forward(doc, self.checkpoint.params, threshold=self.threshold)
        if self.checkpoint.params.mode == MODE_HLAN and label is None:
            raise ServiceError(422, "label query parameter required in HLAN mode")
        if label is not None and label not in self.checkpoint.labels:
            raise ServiceError(422, f"unknown label {label}")

        lines = []
        for p in record["predictions"]:
            resolution = p.get("resolution")
            if resolution is None:
                lines.append(f"{p['icd_code']} ({p['probability']:.3f})")
                continue
            r = SnomedResolution(
                icd_code=p["icd_code"], category=resolution["category"],
                candidates=[_entry_from_payload(p["icd_code"], c)
                            for c in resolution["candidates"]],
                fallback_description=resolution["fallback_description"],
            )
            lines.append(format_resolution(r, probability=p["probability"]))
        return build_viz(doc, self.checkpoint.vocab, att, code_lines=lines,
                         label=label, labels=self.checkpoint.labels)

    def attention_html(self, letter_id: str, label: str | None, out_path) -> None:
        render_attention_html(self._viz_for(letter_id, label), out_path)

    def attention_tsv(self, letter_id: str, label: str | None, out_path) -> None:
        export_attention_tsv(self._viz_for(letter_id, label), out_path)


def _entry_from_payload(icd_code: str, payload: dict):
    from .snomed import MapEntry

    return MapEntry(icd_code=icd_code, icd_name="",
                    snomed_cid=payload["snomed_cid"],
                    snomed_fsn=payload["snomed_fsn"])


def structure_document_from_text(cleaned: str, vocab, s_max: int, t_max: int):
    from .corpus import LabeledNote

    note = LabeledNote(subject_id=0, hadm_id=0, text=cleaned, labels=[])
    return structure_document(note, vocab, s_max, t_max)


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

_LETTER_RE = re.compile(r"^/api/letters/([0-9a-f]{16})$")
_ATTENTION_RE = re.compile(r"^/api/letters/([0-9a-f]{16})/attention$")
_DECISIONS_RE = re.compile(r"^/api/letters/([0-9a-f]{16})/decisions$")


class _Handler(BaseHTTPRequestHandler):
    service: CoderService  # assigned by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes, content_type: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, payload) -> None:
        self._send(status, json.dumps(payload).encode(), "application/json")

    def _error(self, err: ServiceError) -> None:
        self._send_json(err.status, {"error": err.message})

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            raise ServiceError(422, "request body required")
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ServiceError(422, f"invalid JSON body: {exc}") from exc

    def do_OPTIONS(self):
        self._send(204, b"", "text/plain")

    def do_POST(self):
        url = urlparse(self.path)
        try:
            if url.path == "/api/letters":
                body = self._read_body()
                letter_id = self.service.submit_letter(body.get("text", ""))
                self._send_json(201, {"id": letter_id})
                return
            match = _DECISIONS_RE.match(url.path)
            if match:
                body = self._read_body()
                ack = self.service.record_decision(match.group(1), body)
                self._send_json(201, ack)
                return
            self._send_json(404, {"error": f"no such endpoint {url.path}"})
        except ServiceError as err:
            self._error(err)

    def do_GET(self):
        url = urlparse(self.path)
        query = {k: v[0] for k, v in parse_qs(url.query).items()}
        try:
            match = _LETTER_RE.match(url.path)
            if match:
                self._send_json(200, self.service.get_letter(match.group(1)))
                return
            match = _ATTENTION_RE.match(url.path)
            if match:
                self._attention(match.group(1), query)
                return
            if url.path == "/api/decisions":
                records = self.service.export_decisions(
                    letter_id=query.get("letter_id"),
                    reviewer=query.get("reviewer"),
                )
                body = "".join(json.dumps(r, sort_keys=True) + "\n"
                               for r in records)
                self._send(200, body.encode(), "application/x-ndjson")
                return
            if url.path == "/api/health":
                self._send_json(200, {
                    "ok": True,
                    "model_loaded": self.service.checkpoint is not None,
                })
                return
            self._send_json(404, {"error": f"no such endpoint {url.path}"})
        except ServiceError as err:
            self._error(err)

    def _attention(self, letter_id: str, query: dict) -> None:
        import io
        import tempfile

        label = query.get("label")
        fmt = query.get("format", "html")
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / f"attention.{fmt}"
            if fmt == "tsv":
                self.service.attention_tsv(letter_id, label, path)
                self._send(200, path.read_bytes(),
                           "text/tab-separated-values; charset=utf-8")
            else:
                self.service.attention_html(letter_id, label, path)
                self._send(200, path.read_bytes(), "text/html; charset=utf-8")


def make_server(service: CoderService, port: int = 8080) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(service: CoderService, port: int = 8080) -> None:
    server = make_server(service, port)
    logger.info("review service listening on port %d", server.server_port)
    try:
        server.serve_forever()
    finally:
        server.server_close()
        service.close()
