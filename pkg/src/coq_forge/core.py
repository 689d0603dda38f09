"""Domain model and native corpus format.

A Conversation is the unit flowing through the whole pipeline: an ordered
list of patient/doctor utterances with a source tag and free-form string
metadata.  The native on-disk format is JSONL, one conversation per line:

    {"id": str,
     "utterances": [{"speaker": "patient"|"doctor", "text": str}, ...],
     "source": str,
     "meta": {str: str}}

Conversations are immutable after construction and safe to share between
workers.  Stats aggregation is a mergeable accumulator so it can run
sharded over a partitioned corpus.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Iterator, Optional


class Speaker(str, Enum):
    PATIENT = "patient"
    DOCTOR = "doctor"


class AnswerKind(str, Enum):
    QUESTION = "question"
    SUGGESTION = "suggestion"


class InvalidConversation(ValueError):
    """Raised when a record cannot be repaired into a valid Conversation."""


def _normalize_text(text: str) -> str:
    # Newlines are the turn separator in serialization; they must never
    # survive inside an utterance.
    return " ".join(text.split())


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise InvalidConversation("utterance text is empty")
        if "\n" in self.text or "\r" in self.text:
            raise InvalidConversation("utterance text contains a newline")


@dataclass(frozen=True)
class Conversation:
    id: str
    utterances: tuple[Utterance, ...]
    source: str = ""
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        utts = self.utterances
        if len(utts) < 2:
            raise InvalidConversation(f"{self.id}: fewer than 2 utterances")
        if utts[0].speaker is not Speaker.PATIENT:
            raise InvalidConversation(f"{self.id}: first speaker is not patient")
        for a, b in zip(utts, utts[1:]):
            if a.speaker is b.speaker:
                raise InvalidConversation(
                    f"{self.id}: consecutive utterances share a speaker"
                )
        if not any(u.speaker is Speaker.DOCTOR for u in utts):
            raise InvalidConversation(f"{self.id}: no doctor utterance")

    def doctor_turns(self) -> list[Utterance]:
        return [u for u in self.utterances if u.speaker is Speaker.DOCTOR]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "utterances": [
                {"speaker": u.speaker.value, "text": u.text} for u in self.utterances
            ],
            "source": self.source,
            "meta": dict(self.meta),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Conversation":
        try:
            raw = [
                (Speaker(u["speaker"]), u["text"]) for u in obj["utterances"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidConversation(f"bad record: {exc}") from exc
        return build_conversation(
            id=str(obj.get("id", "")),
            turns=raw,
            source=str(obj.get("source", "")),
            meta={str(k): str(v) for k, v in (obj.get("meta") or {}).items()},
        )


def build_conversation(
    id: str,
    turns: Iterable[tuple[Speaker, str]],
    source: str = "",
    meta: Optional[dict[str, str]] = None,
) -> Conversation:
    """Repair raw (speaker, text) pairs into a valid Conversation.

    Empty texts are dropped, newlines collapsed to spaces, and consecutive
    same-speaker messages merged with a single space.  Raises
    InvalidConversation if the result still violates an invariant
    (too short, doctor-first, no doctor turn).
    """
    merged: list[tuple[Speaker, str]] = []
    for speaker, text in turns:
        text = _normalize_text(text)
        if not text:
            continue
        if merged and merged[-1][0] is speaker:
            merged[-1] = (speaker, merged[-1][1] + " " + text)
        else:
            merged.append((speaker, text))
    return Conversation(
        id=id,
        utterances=tuple(Utterance(s, t) for s, t in merged),
        source=source,
        meta=dict(meta or {}),
    )


@dataclass
class IngestCounter:
    """Skip accounting for a streaming read."""

    read: int = 0
    kept: int = 0
    skipped: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def skip(self, reason: str, limit: int = 100):
        self.skipped += 1
        if len(self.diagnostics) < limit:
            self.diagnostics.append(reason)

    def to_dict(self) -> dict:
        return {
            "read": self.read,
            "kept": self.kept,
            "skipped": self.skipped,
            "diagnostics": self.diagnostics,
        }


def read_native(path, counter: Optional[IngestCounter] = None) -> Iterator[Conversation]:
    """Stream conversations from a native JSONL corpus file.

    Malformed lines and invariant-violating records are skipped and
    counted, never fatal.  An unreadable file raises OSError.
    """
    counter = counter if counter is not None else IngestCounter()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            counter.read += 1
            try:
                conv = Conversation.from_dict(json.loads(line))
            except (json.JSONDecodeError, InvalidConversation) as exc:
                counter.skip(f"line {lineno}: {exc}")
                continue
            counter.kept += 1
            yield conv


def write_corpus(convs: Iterable[Conversation], path) -> int:
    """Write conversations to a native JSONL file; returns count written.

    read_native(write_corpus(X)) reproduces X field-for-field.
    """
    written = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for conv in convs:
                fh.write(json.dumps(conv.to_dict(), ensure_ascii=False) + "\n")
                written += 1
    except OSError as exc:
        raise OSError(f"write failed after {written} conversations: {exc}") from exc
    return written


# --- corpus statistics ---

@dataclass
class CorpusStats:
    n_conversations: int
    n_doctor_turns: int
    question_fraction: float
    suggestion_fraction: float
    turn_count_histogram: dict[int, int]
    empty: bool = False

    def to_dict(self) -> dict:
        return {
            "n_conversations": self.n_conversations,
            # The expanded (context, target) pair count equals the doctor
            # turn count; both sample notions are reported side by side.
            "n_doctor_turns": self.n_doctor_turns,
            "n_training_samples": self.n_doctor_turns,
            "question_fraction": self.question_fraction,
            "suggestion_fraction": self.suggestion_fraction,
            "turn_count_histogram": {
                str(k): v for k, v in sorted(self.turn_count_histogram.items())
            },
            "empty": self.empty,
        }


class StatsAccumulator:
    """Commutative, mergeable partial stats (safe to shard and combine)."""

    def __init__(self):
        self.n_conversations = 0
        self.n_doctor_turns = 0
        self.n_questions = 0
        self.histogram: Counter = Counter()

    def add(self, conv: Conversation, classifier: Callable[[str], AnswerKind]):
        self.n_conversations += 1
        self.histogram[len(conv.utterances)] += 1
        for u in conv.doctor_turns():
            self.n_doctor_turns += 1
            if classifier(u.text) is AnswerKind.QUESTION:
                self.n_questions += 1

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        self.n_conversations += other.n_conversations
        self.n_doctor_turns += other.n_doctor_turns
        self.n_questions += other.n_questions
        self.histogram.update(other.histogram)
        return self

    def finish(self) -> CorpusStats:
        if self.n_doctor_turns == 0:
            return CorpusStats(
                n_conversations=self.n_conversations,
                n_doctor_turns=0,
                question_fraction=0.0,
                suggestion_fraction=0.0,
                turn_count_histogram=dict(self.histogram),
                empty=True,
            )
        qf = self.n_questions / self.n_doctor_turns
        return CorpusStats(
            n_conversations=self.n_conversations,
            n_doctor_turns=self.n_doctor_turns,
            question_fraction=qf,
            suggestion_fraction=1.0 - qf,
            turn_count_histogram=dict(self.histogram),
        )


def corpus_stats(
    convs: Iterable[Conversation], classifier: Callable[[str], AnswerKind]
) -> CorpusStats:
    acc = StatsAccumulator()
    for conv in convs:
        acc.add(conv, classifier)
    return acc.finish()
