"""Synthetic document generator with gold coreference clusters.

Documents are built from templated entity mentions (two-token proper names,
"the <noun>" nominals, pronouns) interleaved with filler tokens.  Entity
vocabulary is drawn from a fixed source pool or, with probability
``vocab_shift``, from a disjoint target pool, so a model trained on a
source-domain corpus degrades on a shifted target corpus in a controlled way.
Generation is fully reproducible from the seed.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .corpus import Document

__all__ = ["SynthConfig", "synth_generate"]

_SRC_SYLLABLES = ("bal", "dor", "min", "rav", "kel", "lun", "tam", "ver", "sol", "nim")
_TGT_SYLLABLES = ("zub", "phi", "gor", "wex", "qua", "ryn", "jol", "vas", "tre", "ulm")
_FILLER_WORDS = (
    "the and then near while under after before toward with walked stood "
    "spoke found carried opened crossed gathered waited watched along past "
    "beyond quietly slowly finally again still once never always perhaps "
    "garden road bridge market harbor meadow letter evening morning winter"
).split()
_MENTION_PRONOUNS = ("he", "she", "it", "they")


def _word_pool(syllables: tuple[str, ...]) -> dict[str, list[str]]:
    combos = ["".join(p) for p in itertools.product(syllables, repeat=2)]
    return {
        "first": [w.capitalize() for w in combos[:40]],
        "last": [w.capitalize() for w in combos[40:80]],
        "noun": combos[80:100],
    }


_SOURCE_POOL = _word_pool(_SRC_SYLLABLES)
_TARGET_POOL = _word_pool(_TGT_SYLLABLES)


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for synthetic corpus generation.

    ``tokens_per_doc`` is a target length: mention layout is never truncated,
    so documents can run slightly long when ``mention_rate`` is high.
    """

    n_docs: int = 20
    tokens_per_doc: int = 120
    n_entities: int = 60
    mention_rate: float = 0.25
    pronoun_rate: float = 0.15
    singleton_rate: float = 0.3
    vocab_shift: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("mention_rate", "pronoun_rate", "singleton_rate", "vocab_shift"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("n_docs", "tokens_per_doc", "n_entities"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.seed < 0:
            raise ValueError("seed must be a non-negative integer")


@dataclass(frozen=True)
class _Entity:
    first: str
    last: str
    noun: str
    pronoun: str

    def name_tokens(self) -> tuple[str, ...]:
        return (self.first, self.last)

    def nominal_tokens(self) -> tuple[str, ...]:
        return ("the", self.noun)


def _build_registry(config: SynthConfig, rng: np.random.Generator) -> list[_Entity]:
    entities = []
    for _ in range(config.n_entities):
        slots = {}
        for slot in ("first", "last", "noun"):
            pool = _TARGET_POOL if rng.random() < config.vocab_shift else _SOURCE_POOL
            slots[slot] = pool[slot][int(rng.integers(len(pool[slot])))]
        pronoun = _MENTION_PRONOUNS[int(rng.integers(len(_MENTION_PRONOUNS)))]
        entities.append(_Entity(pronoun=pronoun, **slots))
    return entities


def _plan_mentions(
    entity: _Entity, singleton: bool, config: SynthConfig, rng: np.random.Generator
) -> list[tuple[str, ...]]:
    """Token sequences for one entity's mentions, first mention first."""
    if singleton:
        form = entity.nominal_tokens() if rng.random() < 0.5 else entity.name_tokens()
        return [form]
    n_mentions = 2 + int(rng.integers(0, 3))
    mentions = [entity.name_tokens()]
    for _ in range(n_mentions - 1):
        if rng.random() < config.pronoun_rate:
            mentions.append((entity.pronoun,))
        else:
            mentions.append(entity.name_tokens())
    return mentions


def _filler(rng: np.random.Generator, count: int) -> list[str]:
    idx = rng.integers(0, len(_FILLER_WORDS), size=count)
    return [_FILLER_WORDS[i] for i in idx]


def synth_generate(config: SynthConfig) -> list[Document]:
    """Generate a corpus of documents with gold clusters.

    Each registry entity is instantiated as at most one cluster in one
    document; instantiation is all-or-nothing so ``singleton_rate=0`` never
    leaves a truncated size-1 cluster behind.
    """
    rng = np.random.default_rng(config.seed)
    registry = _build_registry(config, rng)
    # Assign singleton status up front by permutation so the realized
    # fraction matches the rate by construction; a per-entity coin flip
    # re-rolled at budget boundaries drifts because short singleton plans
    # squeeze into leftover budget more often than multi-mention ones.
    n_single = int(round(config.singleton_rate * len(registry)))
    single_flags = np.zeros(len(registry), dtype=bool)
    single_flags[:n_single] = True
    rng.shuffle(single_flags)
    cursor = 0
    carried: list[tuple[str, ...]] | None = None
    docs: list[Document] = []

    for doc_idx in range(config.n_docs):
        budget = int(config.mention_rate * config.tokens_per_doc)
        # Plan which entities this document realizes. An entity whose plan
        # overflows the current document keeps that same plan for the next
        # one rather than re-rolling it.
        planned: list[list[tuple[str, ...]]] = []
        used = 0
        while cursor < len(registry):
            if carried is None:
                entity = registry[cursor]
                carried = _plan_mentions(
                    entity, bool(single_flags[cursor]), config, rng
                )
            cost = sum(len(m) for m in carried)
            if cost > budget:
                # Cannot fit in any document; skip the entity entirely.
                carried = None
                cursor += 1
                continue
            if used + cost > budget:
                break
            planned.append(carried)
            carried = None
            used += cost
            cursor += 1

        # Interleave mention emissions across entities, preserving each
        # entity's own mention order.
        queues = [list(m) for m in planned]
        emissions: list[tuple[int, tuple[str, ...]]] = []
        while any(queues):
            nonempty = [i for i, q in enumerate(queues) if q]
            pick = nonempty[int(rng.integers(len(nonempty)))]
            emissions.append((pick, queues[pick].pop(0)))

        # Lay out tokens: filler runs between mentions, then pad to length.
        tokens: list[str] = []
        sentence_starts = [0]
        mention_spans: dict[int, list[tuple[int, int]]] = {}
        sent_len = 0
        sent_target = 8 + int(rng.integers(0, 7))

        def _maybe_break() -> None:
            nonlocal sent_len, sent_target
            if sent_len >= sent_target and tokens:
                sentence_starts.append(len(tokens))
                sent_len = 0
                sent_target = 8 + int(rng.integers(0, 7))

        for entity_idx, mention_tokens in emissions:
            for word in _filler(rng, int(rng.integers(1, 5))):
                _maybe_break()
                tokens.append(word)
                sent_len += 1
            _maybe_break()
            start = len(tokens)
            tokens.extend(mention_tokens)
            sent_len += len(mention_tokens)
            mention_spans.setdefault(entity_idx, []).append(
                (start, start + len(mention_tokens))
            )
        while len(tokens) < config.tokens_per_doc:
            _maybe_break()
            tokens.extend(_filler(rng, 1))
            sent_len += 1

        clusters = tuple(
            tuple(mention_spans[i]) for i in sorted(mention_spans)
        )
        docs.append(
            Document(
                doc_id=f"synth-{config.seed}-{doc_idx:04d}",
                tokens=tuple(tokens),
                sentence_starts=tuple(sentence_starts),
                gold_clusters=clusters,
            )
        )
    return docs
