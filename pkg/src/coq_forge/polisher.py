"""Stage-two data optimization: LLM polishing of doctor suggestions.

Doctor turns classified as questions are never sent to the model; they
pass through byte-identical, since the corpus exists to preserve the
questioning signal.  A failed or empty polish keeps the original text
(polishing is enhancement, not filtering) and flags the conversation.

The bundled Chinese prompt template is a reconstruction of the
production polishing prompt and can be overridden with any template
containing exactly one {history} and one {answer} placeholder.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional

from .core import AnswerKind, Conversation, Speaker, Utterance
from .llm import LlmClient, PolishError

ROLE_PREFIX = {Speaker.PATIENT: "病人：", Speaker.DOCTOR: "医生："}

POLICY_ALL = "all_suggestions"
POLICY_FINAL = "final_suggestion_only"


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    text: str
    name: str = "default"

    def __post_init__(self):
        for placeholder in ("{history}", "{answer}"):
            n = self.text.count(placeholder)
            if n != 1:
                raise TemplateError(
                    f"template {self.name!r}: {placeholder} occurs {n} times, expected 1"
                )

    @classmethod
    def from_file(cls, path, name: Optional[str] = None) -> "PromptTemplate":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text=text, name=name or Path(path).stem)


def default_template() -> PromptTemplate:
    text = resources.files("coq_forge.data").joinpath("polish_prompt.txt").read_text(
        encoding="utf-8"
    )
    return PromptTemplate(text=text, name="default")


def render_prompt(
    template: PromptTemplate, conv: Conversation, target_index: int
) -> str:
    """Fill the template with the transcript before `target_index` and the
    target doctor utterance.  Deterministic."""
    if not 0 <= target_index < len(conv.utterances):
        raise ValueError(f"target_index {target_index} out of range")
    target = conv.utterances[target_index]
    if target.speaker is not Speaker.DOCTOR:
        raise ValueError(f"utterance {target_index} is not a doctor turn")
    history = "\n".join(
        ROLE_PREFIX[u.speaker] + u.text for u in conv.utterances[:target_index]
    )
    return template.text.replace("{history}", history).replace("{answer}", target.text)


def polish_answer(client: LlmClient, prompt: str, template_name: str = "default") -> str:
    """Polished text for one prompt; cache hit issues no network call."""
    return client.polish(prompt, template_name)


@dataclass
class PolishReport:
    conversations: int = 0
    polished: int = 0
    skipped_questions: int = 0
    failed: int = 0
    already_done: int = 0

    def to_dict(self) -> dict:
        return {
            "conversations": self.conversations,
            "polished": self.polished,
            "skipped_questions": self.skipped_questions,
            "failed": self.failed,
            "already_done": self.already_done,
        }


class Checkpoint:
    """Append-only log of fully processed conversation ids for resume."""

    def __init__(self, path):
        self.path = Path(path)
        self.done: set[str] = set()
        if self.path.exists():
            self.done = {
                line.strip()
                for line in self.path.read_text(encoding="utf-8").splitlines()
                if line.strip()
            }

    def mark(self, conv_id: str):
        self.done.add(conv_id)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(conv_id + "\n")


def polish_corpus(
    convs: Iterable[Conversation],
    client: LlmClient,
    template: PromptTemplate,
    classifier: Callable[[str], AnswerKind],
    policy: str = POLICY_ALL,
    checkpoint: Optional[Checkpoint] = None,
    report: Optional[PolishReport] = None,
) -> Iterator[Conversation]:
    """Polish doctor suggestion turns across a conversation stream.

    Question turns pass through verbatim.  Under POLICY_FINAL only the
    last suggestion turn is polished.  Transient and empty-response
    failures keep the original text and flag the conversation
    "unpolished"; a fatal client error records the checkpoint and
    propagates so the run can resume.  Output order equals input order.
    """
    if policy not in (POLICY_ALL, POLICY_FINAL):
        raise ValueError(f"unknown policy {policy!r}")
    report = report if report is not None else PolishReport()
    pool = ThreadPoolExecutor(max_workers=client.config.max_in_flight)
    try:
        for conv in convs:
            if checkpoint is not None and conv.id in checkpoint.done:
                report.already_done += 1
                continue
            report.conversations += 1

            suggestion_idx = []
            for i, u in enumerate(conv.utterances):
                if u.speaker is not Speaker.DOCTOR:
                    continue
                if classifier(u.text) is AnswerKind.QUESTION:
                    report.skipped_questions += 1
                else:
                    suggestion_idx.append(i)
            if policy == POLICY_FINAL and suggestion_idx:
                suggestion_idx = suggestion_idx[-1:]

            futures = {
                i: pool.submit(
                    polish_answer, client, render_prompt(template, conv, i), template.name
                )
                for i in suggestion_idx
            }
            texts = list(u.text for u in conv.utterances)
            any_failed = False
            fatal: Optional[PolishError] = None
            for i, fut in futures.items():
                try:
                    # model output may contain newlines; utterances must not
                    texts[i] = " ".join(fut.result().split())
                    report.polished += 1
                except PolishError as exc:
                    if exc.kind == "fatal":
                        fatal = exc
                    else:
                        # keep the original answer
                        report.failed += 1
                        any_failed = True
            if fatal is not None:
                raise fatal

            meta = dict(conv.meta)
            if any_failed:
                meta["unpolished"] = "1"
            out = Conversation(
                id=conv.id,
                utterances=tuple(
                    Utterance(u.speaker, t)
                    for u, t in zip(conv.utterances, texts)
                ),
                source=conv.source,
                meta=meta,
            )
            if checkpoint is not None:
                checkpoint.mark(conv.id)
            yield out
    finally:
        pool.shutdown(wait=False, cancel_futures=True)
