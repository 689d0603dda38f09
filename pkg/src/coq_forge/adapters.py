"""Benchmark dataset adapters.

Each adapter parses one public benchmark's release format into the
canonical Conversation representation.  All adapters share the same
repair rules: speaker labels mapped to patient/doctor, consecutive
same-speaker messages merged, half-width Chinese punctuation normalized
to full-width, and records that cannot be repaired skipped and counted.

Expected input shapes (unknown fields are ignored):

  meddialog_cn   JSON array (or JSONL) of {"id"?, "dialogue": ["病人：...",
                 "医生：...", ...]} with role prefixes inline in each line.
  imcs_v2        JSON object mapping example id to {"dialogue": [{"speaker":
                 "患者"|"医生", "sentence": str}, ...]}.
  chip_mdcfnpc   JSON array of {"dialog_id"?, "dialog": [{"speaker":
                 "患者"|"医生", "sentence": str}, ...]}.
  meddg          JSON array (or JSONL) where each record is a list of
                 {"id": "Patients"|"Doctor", "Sentence": str}.
"""
from __future__ import annotations

import json
import re
from typing import Callable, Iterable, Iterator, Optional

from .core import (
    Conversation,
    IngestCounter,
    InvalidConversation,
    Speaker,
    build_conversation,
    read_native,
)

_PATIENT_LABELS = {"患者", "病人", "patient", "patients", "user"}
_DOCTOR_LABELS = {"医生", "大夫", "doctor", "doctors"}

_HALFWIDTH = str.maketrans({",": "，", "?": "？", "!": "！", ";": "；"})
_CJK = re.compile(r"[一-鿿]")


def _normalize_punct(text: str) -> str:
    if _CJK.search(text):
        return text.translate(_HALFWIDTH)
    return text


def _map_speaker(label: str) -> Speaker:
    label = label.strip().lower()
    if label in _PATIENT_LABELS:
        return Speaker.PATIENT
    if label in _DOCTOR_LABELS:
        return Speaker.DOCTOR
    raise InvalidConversation(f"unknown speaker label {label!r}")


def _load_records(path) -> Iterator:
    """Read a JSON array file or a JSONL file of records."""
    with open(path, "r", encoding="utf-8") as fh:
        head = fh.read(1)
        fh.seek(0)
        if head == "[":
            yield from json.load(fh)
        else:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)


def _emit(turns, conv_id, source, counter) -> Optional[Conversation]:
    turns = [(s, _normalize_punct(t)) for s, t in turns]
    return build_conversation(conv_id, turns, source=source)


def _iter_meddialog_cn(path, counter: IngestCounter) -> Iterator[Conversation]:
    prefix = re.compile(r"^(病人|患者|医生)\s*[:：]\s*")
    for i, rec in enumerate(_load_records(path)):
        counter.read += 1
        try:
            turns = []
            for line in rec["dialogue"]:
                m = prefix.match(line)
                if not m:
                    continue
                turns.append((_map_speaker(m.group(1)), line[m.end():]))
            yield _emit(turns, str(rec.get("id", i)), "meddialog_cn", counter)
            counter.kept += 1
        except (InvalidConversation, KeyError, TypeError) as exc:
            counter.skip(f"record {i}: {exc}")


def _iter_imcs_v2(path, counter: IngestCounter) -> Iterator[Conversation]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    for key, rec in data.items():
        counter.read += 1
        try:
            turns = [
                (_map_speaker(u["speaker"]), u.get("sentence", ""))
                for u in rec["dialogue"]
            ]
            yield _emit(turns, str(key), "imcs_v2", counter)
            counter.kept += 1
        except (InvalidConversation, KeyError, TypeError) as exc:
            counter.skip(f"record {key}: {exc}")


def _iter_chip_mdcfnpc(path, counter: IngestCounter) -> Iterator[Conversation]:
    for i, rec in enumerate(_load_records(path)):
        counter.read += 1
        try:
            turns = [
                (_map_speaker(u["speaker"]), u.get("sentence", ""))
                for u in rec["dialog"]
            ]
            yield _emit(turns, str(rec.get("dialog_id", i)), "chip_mdcfnpc", counter)
            counter.kept += 1
        except (InvalidConversation, KeyError, TypeError) as exc:
            counter.skip(f"record {i}: {exc}")


def _iter_meddg(path, counter: IngestCounter) -> Iterator[Conversation]:
    for i, rec in enumerate(_load_records(path)):
        counter.read += 1
        try:
            turns = [
                (_map_speaker(u["id"]), u.get("Sentence", "")) for u in rec
            ]
            yield _emit(turns, str(i), "meddg", counter)
            counter.kept += 1
        except (InvalidConversation, KeyError, TypeError) as exc:
            counter.skip(f"record {i}: {exc}")


def _iter_native(path, counter: IngestCounter) -> Iterator[Conversation]:
    yield from read_native(path, counter)


_ADAPTERS: dict[str, Callable[..., Iterator[Conversation]]] = {
    "native": _iter_native,
    "meddialog_cn": _iter_meddialog_cn,
    "imcs_v2": _iter_imcs_v2,
    "chip_mdcfnpc": _iter_chip_mdcfnpc,
    "meddg": _iter_meddg,
}


def register_adapter(name: str, fn: Callable[..., Iterator[Conversation]]):
    _ADAPTERS[name] = fn


def known_formats() -> list[str]:
    return sorted(_ADAPTERS)


def read_corpus(
    path, format: str, counter: Optional[IngestCounter] = None
) -> Iterator[Conversation]:
    """Stream conversations from `path` parsed by the named format adapter.

    Unknown format names raise KeyError (config error); unreadable files
    raise OSError; malformed records are skipped and counted on `counter`.
    """
    if format not in _ADAPTERS:
        raise KeyError(
            f"unknown format {format!r}; valid formats: {', '.join(known_formats())}"
        )
    counter = counter if counter is not None else IngestCounter()
    return _ADAPTERS[format](path, counter)
