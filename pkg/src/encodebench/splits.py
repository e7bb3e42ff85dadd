"""Nested train/validation/test fold plans that keep blocks intact.

Every scheme produces outer folds whose test sets partition the samples,
each carrying inner folds whose validation sets partition the non-test
samples. Contiguous plans never put a block on both sides of a boundary;
``shuffle_plan`` deliberately destroys that property while preserving all
fold sizes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError
from .features import block_runs


@dataclass
class InnerFold:
    train: np.ndarray
    validation: np.ndarray


@dataclass
class OuterFold:
    test: np.ndarray
    inner_folds: list[InnerFold]


@dataclass
class SplitPlan:
    outer_folds: list[OuterFold]
    mode: str  # "contiguous" | "shuffled"
    scheme: str  # "pereira" | "fedorenko" | "blank" | "generic-grouped"
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "mode": self.mode,
            "n_samples": self.n_samples,
            "outer_folds": [
                {
                    "test": fold.test.tolist(),
                    "inner_folds": [
                        {"train": f.train.tolist(), "validation": f.validation.tolist()}
                        for f in fold.inner_folds
                    ],
                }
                for fold in self.outer_folds
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SplitPlan":
        folds = [
            OuterFold(
                test=np.asarray(f["test"], dtype=np.int64),
                inner_folds=[
                    InnerFold(
                        train=np.asarray(g["train"], dtype=np.int64),
                        validation=np.asarray(g["validation"], dtype=np.int64),
                    )
                    for g in f["inner_folds"]
                ],
            )
            for f in doc["outer_folds"]
        ]
        return cls(folds, doc["mode"], doc["scheme"], doc["n_samples"])


def _as_index_array(values) -> np.ndarray:
    return np.sort(np.asarray(list(values), dtype=np.int64))


def _block_samples(block_ids) -> dict[int, np.ndarray]:
    ids = np.asarray(block_ids)
    return {int(ids[start]): np.arange(start, stop, dtype=np.int64)
            for start, stop in block_runs(ids)}


def _samples_of(blocks, lookup) -> np.ndarray:
    if not blocks:
        return np.empty(0, dtype=np.int64)
    return _as_index_array(np.concatenate([lookup[b] for b in blocks]))


def plan_pereira(categories: Sequence[int], passages_per_category: int,
                 block_ids, seed: Optional[int] = None) -> SplitPlan:
    """Category-balanced passage folds.

    Each outer fold selects one passage per category and designates the
    passages of one category half as the test set; inner folds repeat the
    construction on the remaining passages. With P passages per category
    this yields 2P outer folds of 2P-1 inner folds each (8/7 for P=4,
    6/5 for P=3). Selection order is round-robin by passage index unless a
    seed is given.
    """
    block_ids = np.asarray(block_ids, dtype=np.int64)
    lookup = _block_samples(block_ids)
    passage_order = list(lookup.keys())  # order of first appearance
    if len(categories) != len(passage_order):
        raise DataError(
            f"{len(categories)} category labels for {len(passage_order)} passages"
        )

    by_category: dict[int, list[int]] = {}
    for passage, cat in zip(passage_order, categories):
        by_category.setdefault(int(cat), []).append(passage)
    cat_order = sorted(by_category)
    sizes = {c: len(v) for c, v in by_category.items()}
    if len(set(sizes.values())) != 1:
        raise DataError(f"unequal passages per category: {sizes}")
    n_per_cat = next(iter(sizes.values()))
    if n_per_cat != passages_per_category:
        raise DataError(
            f"expected {passages_per_category} passages per category, "
            f"found {n_per_cat}"
        )

    if seed is not None:
        rng = np.random.default_rng(seed)
        cat_order = [cat_order[i] for i in rng.permutation(len(cat_order))]
        for cat in cat_order:
            passages = by_category[cat]
            by_category[cat] = [passages[i] for i in rng.permutation(len(passages))]

    split_at = math.ceil(len(cat_order) / 2)
    halves = [cat_order[:split_at], cat_order[split_at:]]
    if not halves[1]:
        raise DataError("need at least two categories")

    outer_folds = []
    for idx in range(passages_per_category):
        for half in halves:
            test_passages = {by_category[c][idx] for c in half}
            remaining = {
                c: [p for p in by_category[c] if p not in test_passages]
                for c in cat_order
            }
            inner_folds = []
            for inner_half in halves:
                n_slots = len(remaining[inner_half[0]])
                for j in range(n_slots):
                    val_passages = {remaining[c][j] for c in inner_half}
                    train_passages = [
                        p for c in cat_order for p in remaining[c]
                        if p not in val_passages
                    ]
                    inner_folds.append(InnerFold(
                        train=_samples_of(train_passages, lookup),
                        validation=_samples_of(val_passages, lookup),
                    ))
            outer_folds.append(OuterFold(
                test=_samples_of(test_passages, lookup),
                inner_folds=inner_folds,
            ))
    return SplitPlan(outer_folds, "contiguous", "pereira", int(block_ids.size))


def plan_fedorenko(n_sentences: int, sentence_blocks) -> SplitPlan:
    """Four whole sentences per test fold; inner folds likewise."""
    sentence_blocks = np.asarray(sentence_blocks, dtype=np.int64)
    lookup = _block_samples(sentence_blocks)
    sentences = list(lookup.keys())
    if len(sentences) != n_sentences:
        raise DataError(
            f"declared {n_sentences} sentences but found {len(sentences)} blocks"
        )
    if n_sentences < 8:
        raise DataError("need at least 8 sentences")

    outer_folds = []
    for start in range(0, n_sentences, 4):
        test_sentences = sentences[start:start + 4]
        remaining = [s for s in sentences if s not in test_sentences]
        inner_folds = []
        for istart in range(0, len(remaining), 4):
            val = remaining[istart:istart + 4]
            train = [s for s in remaining if s not in val]
            inner_folds.append(InnerFold(
                train=_samples_of(train, lookup),
                validation=_samples_of(val, lookup),
            ))
        outer_folds.append(OuterFold(
            test=_samples_of(test_sentences, lookup),
            inner_folds=inner_folds,
        ))
    return SplitPlan(outer_folds, "contiguous", "fedorenko",
                     int(sentence_blocks.size))


def plan_blank(story_ids) -> SplitPlan:
    """Leave-one-story-out outer folds, leave-one-remaining-story-out inner."""
    story_ids = np.asarray(story_ids, dtype=np.int64)
    lookup = _block_samples(story_ids)
    stories = list(lookup.keys())
    if len(stories) < 3:
        raise DataError("need at least 3 stories")

    outer_folds = []
    for test_story in stories:
        remaining = [s for s in stories if s != test_story]
        inner_folds = []
        for val_story in remaining:
            train = [s for s in remaining if s != val_story]
            inner_folds.append(InnerFold(
                train=_samples_of(train, lookup),
                validation=_samples_of([val_story], lookup),
            ))
        outer_folds.append(OuterFold(
            test=_samples_of([test_story], lookup),
            inner_folds=inner_folds,
        ))
    return SplitPlan(outer_folds, "contiguous", "blank", int(story_ids.size))


def plan_grouped(block_ids, n_outer: int = 5, n_inner: int = 4) -> SplitPlan:
    """Group k-fold over blocks for datasets without category, sentence,
    or story structure."""
    block_ids = np.asarray(block_ids, dtype=np.int64)
    lookup = _block_samples(block_ids)
    blocks = list(lookup.keys())
    if n_outer < 2 or n_outer > len(blocks):
        raise DataError(f"n_outer must be in [2, {len(blocks)}]")
    min_remaining = len(blocks) - math.ceil(len(blocks) / n_outer)
    if n_inner < 2 or n_inner > min_remaining:
        raise DataError(
            f"n_inner must be in [2, {min_remaining}] so every inner fold "
            "keeps training blocks"
        )

    outer_chunks = np.array_split(np.asarray(blocks), n_outer)
    outer_folds = []
    for chunk in outer_chunks:
        test_blocks = chunk.tolist()
        remaining = [b for b in blocks if b not in test_blocks]
        inner_folds = []
        for inner_chunk in np.array_split(np.asarray(remaining), n_inner):
            val = inner_chunk.tolist()
            train = [b for b in remaining if b not in val]
            inner_folds.append(InnerFold(
                train=_samples_of(train, lookup),
                validation=_samples_of(val, lookup),
            ))
        outer_folds.append(OuterFold(
            test=_samples_of(test_blocks, lookup),
            inner_folds=inner_folds,
        ))
    return SplitPlan(outer_folds, "contiguous", "generic-grouped",
                     int(block_ids.size))


def shuffle_plan(plan: SplitPlan, seed: int) -> SplitPlan:
    """Relabel samples by a seeded uniform permutation.

    Fold sizes are preserved exactly; block contiguity is deliberately
    destroyed, so samples from one block land on both sides of splits.
    """
    perm = np.random.default_rng(seed).permutation(plan.n_samples)

    def remap(indices: np.ndarray) -> np.ndarray:
        return np.sort(perm[indices])

    folds = [
        OuterFold(
            test=remap(fold.test),
            inner_folds=[
                InnerFold(train=remap(f.train), validation=remap(f.validation))
                for f in fold.inner_folds
            ],
        )
        for fold in plan.outer_folds
    ]
    return SplitPlan(folds, "shuffled", plan.scheme, plan.n_samples)


def validate_plan(plan: SplitPlan, block_ids=None) -> None:
    """Check the structural invariants; raises DataError on violation."""
    seen_test = np.zeros(plan.n_samples, dtype=bool)
    for fold in plan.outer_folds:
        test = set(fold.test.tolist())
        if seen_test[fold.test].any():
            raise DataError("outer test sets overlap")
        seen_test[fold.test] = True
        nontest = set(range(plan.n_samples)) - test
        for inner in fold.inner_folds:
            train = set(inner.train.tolist())
            val = set(inner.validation.tolist())
            if test & (train | val):
                raise DataError("test samples leaked into an inner fold")
            if train & val:
                raise DataError("inner train and validation overlap")
            if (train | val) - nontest:
                raise DataError("inner fold uses samples outside the outer fold")
    if not seen_test.all():
        raise DataError("outer test sets do not cover all samples")

    if plan.mode == "contiguous" and block_ids is not None:
        ids = np.asarray(block_ids)
        for fold in plan.outer_folds:
            test_blocks = set(ids[fold.test].tolist())
            rest = np.setdiff1d(np.arange(plan.n_samples), fold.test)
            if test_blocks & set(ids[rest].tolist()):
                raise DataError("a block id crosses a train/test boundary")
            for inner in fold.inner_folds:
                tb = set(ids[inner.train].tolist())
                vb = set(ids[inner.validation].tolist())
                if tb & vb:
                    raise DataError("a block id crosses a train/validation boundary")
