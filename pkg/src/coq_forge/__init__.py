"""CoQ Forge: corpus construction and evaluation toolkit for
proactive-questioning medical dialogue models."""

from .core import (
    AnswerKind,
    Conversation,
    CorpusStats,
    InvalidConversation,
    Speaker,
    Utterance,
    build_conversation,
    corpus_stats,
    write_corpus,
)
from .adapters import read_corpus

__version__ = "0.1.0"

__all__ = [
    "AnswerKind",
    "Conversation",
    "CorpusStats",
    "InvalidConversation",
    "Speaker",
    "Utterance",
    "build_conversation",
    "corpus_stats",
    "read_corpus",
    "write_corpus",
    "__version__",
]
