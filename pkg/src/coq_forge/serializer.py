"""Fine-tune sample serialization.

A conversation expands into one (input, target) pair per doctor turn:
the input is the role-prefixed transcript of everything before the turn,
joined by single newlines and terminated by an empty trailing "医生："
prompt; the target is the doctor turn's text.  Every emitted input
matches the grammar

    病人：... (\n医生：... \n病人：...)* \n医生：

When an input exceeds the length budget, whole oldest turns are dropped
from the front (a patient+doctor pair at a time) so the newest context
and the role grammar survive; a sample whose minimal one-patient-turn
input still exceeds the budget is skipped and counted, never cut
mid-utterance.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional

from .core import Conversation, Speaker, Utterance

PATIENT_PREFIX = "病人："
DOCTOR_PREFIX = "医生："

INPUT_GRAMMAR = re.compile(
    r"^病人：[^\n]*(?:\n医生：[^\n]*\n病人：[^\n]*)*\n医生：$"
)


@dataclass(frozen=True)
class TrainingSample:
    input: str
    target: str
    conversation_id: str
    turn_index: int


@dataclass(frozen=True)
class LengthBudget:
    max_input_units: int = 1536
    max_target_units: int = 512
    # measures string length; defaults to character count, pluggable
    # with any token counter
    counter: Callable[[str], int] = len

    def __post_init__(self):
        if self.max_input_units <= 0 or self.max_target_units <= 0:
            raise ValueError("length budget maxima must be > 0")


def expand_conversation(
    conv: Conversation,
) -> list[tuple[tuple[Utterance, ...], Utterance]]:
    """One (context, target) pair per doctor turn, in turn order."""
    pairs = []
    for i, u in enumerate(conv.utterances):
        if u.speaker is Speaker.DOCTOR:
            pairs.append((conv.utterances[:i], u))
    return pairs


def build_input(context: Iterable[Utterance]) -> str:
    """Render a context slice into the model input string."""
    context = tuple(context)
    if not context:
        raise ValueError("context is empty")
    if context[0].speaker is not Speaker.PATIENT:
        raise ValueError("context must start with a patient utterance")
    prefix = {Speaker.PATIENT: PATIENT_PREFIX, Speaker.DOCTOR: DOCTOR_PREFIX}
    lines = [prefix[u.speaker] + u.text for u in context]
    return "\n".join(lines) + "\n" + DOCTOR_PREFIX


def parse_input(text: str) -> list[Utterance]:
    """Inverse of build_input: recover the context utterance list.

    Raises ValueError on anything outside the input grammar.
    """
    if not INPUT_GRAMMAR.match(text):
        raise ValueError("string does not match the input grammar")
    lines = text.split("\n")
    if lines[-1] != DOCTOR_PREFIX:
        raise ValueError("missing trailing doctor prompt")
    out = []
    for line in lines[:-1]:
        if line.startswith(PATIENT_PREFIX):
            out.append(Utterance(Speaker.PATIENT, line[len(PATIENT_PREFIX):]))
        elif line.startswith(DOCTOR_PREFIX):
            out.append(Utterance(Speaker.DOCTOR, line[len(DOCTOR_PREFIX):]))
        else:
            raise ValueError(f"line without role prefix: {line!r}")
    return out


def truncate_context(
    context: tuple[Utterance, ...], budget: LengthBudget
) -> Optional[tuple[Utterance, ...]]:
    """Drop whole oldest turns until the rendered input fits the budget.

    Contexts alternate starting with a patient turn, so dropping a
    leading patient+doctor pair keeps the grammar intact.  Returns None
    (skip) when even the most recent patient turn alone does not fit.
    """
    context = tuple(context)
    while context:
        if budget.counter(build_input(context)) <= budget.max_input_units:
            return context
        if len(context) >= 3:
            context = context[2:]
        else:
            return None
    return None


def truncate(
    input: str, target: str, budget: LengthBudget
) -> Optional[tuple[str, str]]:
    """Budget a rendered (input, target) pair; None means skip.

    The truncated input is always a suffix of the original; the target
    is hard-cut at max_target_units.
    """
    context = parse_input(input)
    kept = truncate_context(tuple(context), budget)
    if kept is None:
        return None
    out = build_input(kept)
    if budget.counter is len:
        target = target[: budget.max_target_units]
    else:
        while target and budget.counter(target) > budget.max_target_units:
            target = target[:-1]
    return out, target


@dataclass
class SerializeReport:
    conversations: int = 0
    samples: int = 0
    skipped_over_budget: int = 0

    def to_dict(self) -> dict:
        return {
            "conversations": self.conversations,
            "samples": self.samples,
            "skipped_over_budget": self.skipped_over_budget,
        }


def serialize_conversation(
    conv: Conversation,
    budget: Optional[LengthBudget] = None,
    final_only: bool = False,
    report: Optional[SerializeReport] = None,
) -> list[TrainingSample]:
    """Expand, render, and budget one conversation into training samples."""
    budget = budget if budget is not None else LengthBudget()
    report = report if report is not None else SerializeReport()
    report.conversations += 1
    doctor_idx = [
        i for i, u in enumerate(conv.utterances) if u.speaker is Speaker.DOCTOR
    ]
    if final_only:
        doctor_idx = doctor_idx[-1:]
    samples = []
    for turn_index in doctor_idx:
        context, target = conv.utterances[:turn_index], conv.utterances[turn_index]
        kept = truncate_context(context, budget)
        if kept is None:
            report.skipped_over_budget += 1
            continue
        target_text = target.text
        if budget.counter is len:
            target_text = target_text[: budget.max_target_units]
        else:
            while target_text and budget.counter(target_text) > budget.max_target_units:
                target_text = target_text[:-1]
        samples.append(
            TrainingSample(
                input=build_input(kept),
                target=target_text,
                conversation_id=conv.id,
                turn_index=turn_index,
            )
        )
        report.samples += 1
    return samples


def serialize_corpus(
    convs: Iterable[Conversation],
    budget: Optional[LengthBudget] = None,
    final_only: bool = False,
    report: Optional[SerializeReport] = None,
) -> Iterator[TrainingSample]:
    budget = budget if budget is not None else LengthBudget()
    report = report if report is not None else SerializeReport()
    for conv in convs:
        yield from serialize_conversation(conv, budget, final_only, report)


def write_training_file(samples: Iterable[TrainingSample], path) -> int:
    """JSONL {"input", "target"} per line, UTF-8, no BOM; returns count."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(
                json.dumps({"input": s.input, "target": s.target}, ensure_ascii=False)
                + "\n"
            )
            count += 1
    return count
