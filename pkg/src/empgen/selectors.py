"""Pluggable sentiment prediction and cause detection.

Both pretrained upstream models the pipeline would normally call are
replaced by provider interfaces: an oracle backend, a lexicon/heuristic
backend, and a file-backed fixture backend. Every provider counts its
invocations so ablation tests can prove disabled modules were never
touched.
"""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import DialogueSample, EmotionLabel, LabelSet, Utterance, tokenize
from .util import read_jsonl

_LEXICON_PATH = Path(__file__).parent / "assets" / "emotion_lexicon.json"


class FixtureMissError(KeyError):
    """A fixture-backed provider had no entry for the requested key."""


def load_lexicon(path: str | Path | None = None, labels: LabelSet | None = None) -> dict[str, list[str]]:
    """word -> emotion names; every name must exist in the label set."""
    labels = labels or LabelSet.default()
    with open(path or _LEXICON_PATH, "r", encoding="utf-8") as fh:
        lexicon = json.load(fh)
    for word, names in lexicon.items():
        for name in names:
            if name not in labels:
                raise ValueError(f"lexicon word {word!r} maps to unknown emotion {name!r}")
    return lexicon


def majority_label(samples: list[DialogueSample], labels: LabelSet) -> EmotionLabel:
    """Most frequent gold label; ties broken by label index."""
    counts = [0] * len(labels)
    for s in samples:
        counts[s.gold_emotion.index] += 1
    best = max(range(len(labels)), key=lambda i: (counts[i], -i))
    return labels.by_index(best)


class SentimentPredictor:
    """Dialogue-level sentiment label provider."""

    backend = "base"

    def __init__(self):
        self.calls = 0

    def predict(self, sample: DialogueSample) -> EmotionLabel:
        if not sample.history:
            raise ValueError("cannot predict sentiment of an empty dialogue")
        self.calls += 1
        return self._predict(sample)

    def _predict(self, sample: DialogueSample) -> EmotionLabel:
        raise NotImplementedError


class OracleSentimentPredictor(SentimentPredictor):
    backend = "oracle"

    def _predict(self, sample: DialogueSample) -> EmotionLabel:
        return sample.gold_emotion


class LexiconSentimentPredictor(SentimentPredictor):
    """Token-occurrence vote over the lexicon, ties broken by label index.

    Zero votes fall back to the corpus-majority label supplied at
    construction time.
    """

    backend = "lexicon"

    def __init__(self, lexicon: dict[str, list[str]], labels: LabelSet, fallback: EmotionLabel):
        super().__init__()
        self.lexicon = lexicon
        self.labels = labels
        self.fallback = fallback

    def _predict(self, sample: DialogueSample) -> EmotionLabel:
        votes = [0] * len(self.labels)
        for utt in sample.history:
            for tok in tokenize(utt.text):
                for name in self.lexicon.get(tok, ()):
                    votes[self.labels.get(name).index] += 1
        if max(votes) == 0:
            return self.fallback
        best = min(i for i in range(len(votes)) if votes[i] == max(votes))
        return self.labels.by_index(best)


class FixtureSentimentPredictor(SentimentPredictor):
    backend = "fixture"

    def __init__(self, path: str | Path, labels: LabelSet):
        super().__init__()
        self.labels = labels
        self.table = {rec["id"]: rec["e_ano"] for rec in read_jsonl(path)}

    def _predict(self, sample: DialogueSample) -> EmotionLabel:
        if sample.id not in self.table:
            raise FixtureMissError(f"no sentiment fixture for sample id {sample.id!r}")
        return self.labels.get(self.table[sample.id])


class CauseDetector:
    """Selects the emotion-evoking subset of the dialogue history.

    The output preserves input order, is always a subset of the history,
    and is never empty: when nothing matches, the last speaker utterance
    is returned.
    """

    backend = "base"

    def __init__(self):
        self.calls = 0

    def detect(self, sample: DialogueSample, target: EmotionLabel) -> list[Utterance]:
        self.calls += 1
        picked = self._detect(sample, target)
        if not picked:
            picked = [sample.last_utterance]
        return picked

    def _detect(self, sample: DialogueSample, target: EmotionLabel) -> list[Utterance]:
        raise NotImplementedError


class HeuristicCauseDetector(CauseDetector):
    """Keeps utterances containing at least one lexicon word of the target."""

    backend = "heuristic"

    def __init__(self, lexicon: dict[str, list[str]]):
        super().__init__()
        self.lexicon = lexicon

    def _detect(self, sample: DialogueSample, target: EmotionLabel) -> list[Utterance]:
        picked = []
        for utt in sample.history:
            for tok in tokenize(utt.text):
                if target.name in self.lexicon.get(tok, ()):
                    picked.append(utt)
                    break
        return picked


class FileCauseDetector(CauseDetector):
    """Authored cause spans looked up by sample id.

    Backs both the oracle and fixture backends: samples carry no gold
    cause annotation, so ground truth is whatever spans were authored
    alongside the corpus.
    """

    def __init__(self, path: str | Path, backend: str = "fixture"):
        super().__init__()
        self.backend = backend
        self.table = {rec["id"]: rec["cause_turn_indices"] for rec in read_jsonl(path)}

    def _detect(self, sample: DialogueSample, target: EmotionLabel) -> list[Utterance]:
        if sample.id not in self.table:
            raise FixtureMissError(f"no cause fixture for sample id {sample.id!r}")
        indices = sorted(set(self.table[sample.id]))
        for i in indices:
            if i < 0 or i >= len(sample.history):
                raise ValueError(f"cause turn index {i} out of range for sample {sample.id!r}")
        return [sample.history[i] for i in indices]


def predict_global_emotion(sample: DialogueSample, predictor: SentimentPredictor) -> EmotionLabel:
    return predictor.predict(sample)


def detect_sensible(
    sample: DialogueSample, target: EmotionLabel, detector: CauseDetector
) -> list[Utterance]:
    return detector.detect(sample, target)
