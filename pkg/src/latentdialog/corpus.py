"""Dialog corpus ingestion: tokenization, vocabulary, sample extraction.

Corpus files are UTF-8 text in one of two layouts:
  - "eou":   one conversation per line, utterances separated by a literal
             `__eou__` marker;
  - "lines": one utterance per line, conversations separated by blank lines.

Tokenization is lowercased whitespace splitting with numerals collapsed
to a NUM sentinel. Encoded utterances are BOS/EOS framed and truncated to
a maximum length (EOS kept).
"""

import hashlib
import re
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
NUM_TOKEN = "NUM"

_NUM_RE = re.compile(r"[0-9]+(?:[.,:/-][0-9]+)*")


def tokenize(text):
    """Lowercase whitespace tokens, numerals replaced by the NUM sentinel."""
    return [
        NUM_TOKEN if _NUM_RE.fullmatch(tok) else tok
        for tok in text.lower().split()
    ]


class Vocabulary:
    """Bidirectional token/id map with the four reserved ids fixed."""

    def __init__(self, tokens):
        self._id_to_token = list(RESERVED_TOKENS) + list(tokens)
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self):
        return len(self._id_to_token)

    def encode_token(self, token):
        return self._token_to_id.get(token, UNK_ID)

    def encode(self, tokens):
        return [self._token_to_id.get(t, UNK_ID) for t in tokens]

    def decode_id(self, idx):
        return self._id_to_token[idx]

    def decode(self, ids, keep_special=False):
        toks = [self._id_to_token[i] for i in ids]
        if keep_special:
            return toks
        special = set(RESERVED_TOKENS[:3])  # pad/bos/eos stripped, unk kept
        return [t for t in toks if t not in special]

    def sha256(self):
        payload = "\n".join(self._id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def save(self, path):
        """One token per line; the id of a token is its line number."""
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh]
        while lines and lines[-1] == "":
            lines.pop()
        if tuple(lines[:4]) != RESERVED_TOKENS:
            raise ValueError(
                f"{path}: first four lines must be the reserved tokens "
                f"{RESERVED_TOKENS}"
            )
        return cls(lines[4:])


def build_vocab(conversations, max_size=10000, min_freq=1):
    """Frequency-ranked vocabulary, lexicographic tie-break, OOV -> UNK."""
    counts = {}
    for conv in conversations:
        for utt in conv:
            for tok in utt:
                counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [t for t, c in ranked if c >= min_freq]
    room = max(0, max_size - len(RESERVED_TOKENS))
    return Vocabulary(keep[:room])


@dataclass
class DialogCorpus:
    """Conversations of BOS/EOS-framed token-id utterances."""

    conversations: list

    def __len__(self):
        return len(self.conversations)

    def utterances(self):
        """All utterances in corpus order (the Step-1 training stream)."""
        out = []
        for conv in self.conversations:
            out.extend(conv)
        return out


class TurnSample(NamedTuple):
    context: tuple  # tuple of utterances, possibly empty
    query: tuple
    response: tuple


def load_conversations(path, fmt="eou"):
    """Raw token stage: returns (conversations, skipped_count).

    Conversations with fewer than two utterances are skipped and counted.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    raw_convs = []
    if fmt == "eou":
        for line in text.splitlines():
            if not line.strip():
                continue
            utts = [tokenize(part) for part in line.split("__eou__")]
            raw_convs.append([u for u in utts if u])
    elif fmt == "lines":
        current = []
        for line in text.splitlines() + [""]:
            if line.strip():
                toks = tokenize(line)
                if toks:
                    current.append(toks)
            elif current:
                raw_convs.append(current)
                current = []
    else:
        raise ValueError(f"unknown corpus format: {fmt!r}")
    conversations = []
    skipped = 0
    for conv in raw_convs:
        if len(conv) >= 2:
            conversations.append(conv)
        else:
            skipped += 1
    return conversations, skipped


def encode_utterance(tokens, vocab, max_len=30):
    """BOS + ids + EOS, truncated to max_len content tokens (EOS kept)."""
    ids = vocab.encode(tokens)[:max_len]
    return tuple([BOS_ID] + ids + [EOS_ID])


def encode_corpus(conversations, vocab, max_len=30):
    encoded = [
        [encode_utterance(utt, vocab, max_len) for utt in conv]
        for conv in conversations
    ]
    return DialogCorpus(encoded)


def make_single_turn(corpus):
    """Every pair of consecutive utterances becomes (no context, q, r)."""
    samples = []
    for conv in corpus.conversations:
        for i in range(len(conv) - 1):
            samples.append(TurnSample((), conv[i], conv[i + 1]))
    return samples


def make_multi_turn(corpus, max_context_turns=8):
    """Each consecutive pair keeps its preceding utterances as context."""
    if max_context_turns < 0:
        raise ValueError("max_context_turns must be >= 0")
    samples = []
    for conv in corpus.conversations:
        for i in range(len(conv) - 1):
            lo = max(0, i - max_context_turns)
            samples.append(TurnSample(tuple(conv[lo:i]), conv[i], conv[i + 1]))
    return samples


def deduplicate(samples):
    """Keep the first occurrence of each (context, query, response)."""
    seen = set()
    kept = []
    for s in samples:
        key = (s.context, s.query, s.response)
        if key not in seen:
            seen.add(key)
            kept.append(s)
    return kept


def pad_batch(seqs, pad_id=PAD_ID):
    """Right-pad to the batch max length.

    Returns (ids [B,T] int64, lengths [B] int64, mask [B,T] float64) with
    mask 1.0 on real tokens and 0.0 on padding.
    """
    if not seqs:
        raise ValueError("pad_batch: empty batch")
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    width = int(lengths.max())
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.float64)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, lengths, mask


class TurnBatch(NamedTuple):
    query_ids: np.ndarray
    query_lengths: np.ndarray
    query_mask: np.ndarray
    response_ids: np.ndarray
    response_lengths: np.ndarray
    response_mask: np.ndarray
    contexts: list  # per-sample tuple of utterances


def batch_samples(samples, batch_size, pad_id=PAD_ID):
    """Group TurnSamples into padded batches, preserving order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        q_ids, q_len, q_mask = pad_batch([s.query for s in chunk], pad_id)
        r_ids, r_len, r_mask = pad_batch([s.response for s in chunk], pad_id)
        batches.append(
            TurnBatch(q_ids, q_len, q_mask, r_ids, r_len, r_mask,
                      [s.context for s in chunk])
        )
    return batches
