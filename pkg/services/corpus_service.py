"""
Corpus Service
Synthetic multi-speaker corpus, few-shot clone tasks and batching.

Each synthetic speaker is a small frozen random transform from token
sequences to mel frames and one auxiliary value per frame. Speakers share a
common component so pretraining on some of them transfers to unseen ones.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from config.settings import CorpusConfig
from utils.errors import ConfigError, DataError

CLONE_SPEAKER_OFFSET = 100_000
SPEAKER_SPREAD = 0.5


@dataclass
class Utterance:
    """One (tokens, target mel, target aux) triple"""
    tokens: np.ndarray
    mel: np.ndarray
    aux: np.ndarray
    speaker: int = 0

    def __len__(self) -> int:
        return int(self.tokens.shape[0])


@dataclass
class Batch:
    """Padded batch; mask marks valid frames"""
    tokens: np.ndarray
    speakers: np.ndarray
    mask: np.ndarray
    mel: np.ndarray
    aux: np.ndarray

    @property
    def size(self) -> int:
        return int(self.tokens.shape[0])


@dataclass
class Corpus:
    """Pretraining corpus: training items plus held-out items of the same speakers"""
    seed: int
    n_speakers: int
    items: List[Utterance]
    eval_items: List[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class CloneTask:
    """Few-shot target speaker: disjoint support and eval sets"""
    speaker_seed: int
    support: List[Utterance]
    eval: List[Utterance]


class SyntheticSpeaker:
    """
    Frozen reference transform for one speaker

    Frame features are a local average of token embeddings shared by every
    speaker; the speaker owns the projection to mel and aux.
    """

    def __init__(self, corpus_seed: int, speaker_seed: int, vocab_size: int, n_mel: int, feature_dim: int):
        shared = np.random.default_rng([corpus_seed, 0])
        self.token_table = shared.normal(0.0, 1.0, (vocab_size, feature_dim))
        base_mel = shared.normal(0.0, 1.0 / np.sqrt(feature_dim), (feature_dim, n_mel))
        base_aux = shared.normal(0.0, 1.0 / np.sqrt(feature_dim), feature_dim)

        own = np.random.default_rng([corpus_seed, 1, speaker_seed])
        self.mel_weight = base_mel + SPEAKER_SPREAD * own.normal(0.0, 1.0 / np.sqrt(feature_dim), (feature_dim, n_mel))
        self.mel_bias = own.normal(0.0, 0.5, n_mel)
        self.aux_weight = base_aux + SPEAKER_SPREAD * own.normal(0.0, 1.0 / np.sqrt(feature_dim), feature_dim)

    def features(self, tokens: np.ndarray) -> np.ndarray:
        embedded = self.token_table[tokens]
        padded = np.pad(embedded, ((1, 1), (0, 0)))
        return 0.5 * embedded + 0.25 * (padded[:-2] + padded[2:])

    def render(self, tokens: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Target (mel, aux) for a token sequence"""
        features = self.features(np.asarray(tokens, dtype=np.int64))
        mel = np.tanh(features @ self.mel_weight) + self.mel_bias
        aux = np.tanh(features @ self.aux_weight)
        return mel.astype(np.float32), aux.astype(np.float32)


def _draw_tokens(rng: np.random.Generator, vocab_size: int, config: CorpusConfig) -> np.ndarray:
    length = int(rng.integers(config.min_len, config.max_len + 1))
    return rng.integers(0, vocab_size, size=length).astype(np.int64)


def _draw_utterances(
    speaker: SyntheticSpeaker,
    rng: np.random.Generator,
    count: int,
    vocab_size: int,
    config: CorpusConfig,
    speaker_id: int,
    exclude: Optional[Set[bytes]] = None
) -> List[Utterance]:
    seen = set() if exclude is None else exclude
    items = []
    while len(items) < count:
        tokens = _draw_tokens(rng, vocab_size, config)
        key = tokens.tobytes()
        if key in seen:
            continue
        seen.add(key)
        mel, aux = speaker.render(tokens)
        items.append(Utterance(tokens, mel, aux, speaker_id))
    return items


def make_synthetic_corpus(
    seed: int,
    n_speakers: int,
    samples_per_speaker: int,
    vocab_size: int,
    n_mel: int,
    config: Optional[CorpusConfig] = None
) -> Corpus:
    """
    Deterministic multi-speaker pretraining corpus

    Args:
        seed: Corpus seed
        n_speakers: Number of synthetic speakers (>= 2)
        samples_per_speaker: Training utterances per speaker
        vocab_size: Token vocabulary size
        n_mel: Mel channels
        config: Sequence lengths, feature width and held-out count

    Returns:
        Corpus with n_speakers * samples_per_speaker training items
    """
    config = config or CorpusConfig()
    if n_speakers < 2:
        raise ConfigError(f"synthetic corpus needs at least 2 speakers, got {n_speakers}")
    items: List[Utterance] = []
    eval_items: List[Utterance] = []
    for speaker_id in range(n_speakers):
        speaker = SyntheticSpeaker(seed, speaker_id, vocab_size, n_mel, config.feature_dim)
        rng = np.random.default_rng([seed, 2, speaker_id])
        seen: Set[bytes] = set()
        items.extend(_draw_utterances(speaker, rng, samples_per_speaker, vocab_size, config, speaker_id, seen))
        eval_items.extend(_draw_utterances(speaker, rng, config.eval_per_speaker, vocab_size, config, speaker_id, seen))
    return Corpus(seed, n_speakers, items, eval_items)


def make_clone_task(
    corpus_seed: int,
    task_seed: int,
    vocab_size: int,
    n_mel: int,
    config: Optional[CorpusConfig] = None
) -> CloneTask:
    """
    Few-shot task for a speaker never seen in pretraining

    Support and eval sets are drawn from the same speaker and never share a
    token sequence.
    """
    config = config or CorpusConfig()
    speaker_seed = CLONE_SPEAKER_OFFSET + int(task_seed)
    speaker = SyntheticSpeaker(corpus_seed, speaker_seed, vocab_size, n_mel, config.feature_dim)
    rng = np.random.default_rng([corpus_seed, 3, speaker_seed])
    seen: Set[bytes] = set()
    support = _draw_utterances(speaker, rng, config.n_support, vocab_size, config, 0, seen)
    evaluation = _draw_utterances(speaker, rng, config.n_eval, vocab_size, config, 0, seen)
    return CloneTask(speaker_seed, support, evaluation)


def collate(items: Sequence[Utterance], speaker: Optional[int] = None) -> Batch:
    """
    Pad utterances into one batch

    Args:
        items: Utterances
        speaker: Speaker id overriding each item's own (clone tasks)

    Raises:
        DataError: on an empty item list
    """
    if not items:
        raise DataError("cannot build an empty batch")
    length = max(len(item) for item in items)
    n_mel = items[0].mel.shape[1]
    batch = len(items)
    tokens = np.zeros((batch, length), dtype=np.int64)
    mask = np.zeros((batch, length), dtype=bool)
    mel = np.zeros((batch, length, n_mel), dtype=np.float32)
    aux = np.zeros((batch, length), dtype=np.float32)
    for row, item in enumerate(items):
        n = len(item)
        tokens[row, :n] = item.tokens
        mask[row, :n] = True
        mel[row, :n] = item.mel
        aux[row, :n] = item.aux
    speakers = np.array([item.speaker if speaker is None else speaker for item in items], dtype=np.int64)
    return Batch(tokens, speakers, mask, mel, aux)


def sample_batch(
    items: Sequence[Utterance],
    batch_size: int,
    seed: int,
    step: int,
    speaker: Optional[int] = None
) -> Batch:
    """Training batch for one step, drawn without replacement from (seed, step)"""
    rng = np.random.default_rng([int(seed), int(step), 7])
    if batch_size >= len(items):
        chosen = rng.permutation(len(items))
    else:
        chosen = rng.choice(len(items), size=batch_size, replace=False)
    return collate([items[int(i)] for i in chosen], speaker)


def eval_batches(items: Sequence[Utterance], batch_size: int, speaker: Optional[int] = None) -> List[Batch]:
    """Deterministic in-order batches covering every item once"""
    return [collate(items[start:start + batch_size], speaker) for start in range(0, len(items), batch_size)]


def corpus_summary(corpus: Corpus) -> Dict[str, int]:
    return {
        "speakers": corpus.n_speakers,
        "items": len(corpus.items),
        "eval_items": len(corpus.eval_items),
        "frames": int(sum(len(item) for item in corpus.items)),
    }
