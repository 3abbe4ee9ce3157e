"""Impression-log schemas, TSV loading, history padding, batching, and a
seeded latent-factor generator that stands in for a production click log.

On-disk formats are plain text so fixtures stay inspectable and diffable:

    items.tsv    header  #items |T|=<int> d_mm=<int>
                 rows    item_id<TAB>cat1,cat2,...<TAB>f1 f2 ... f_dmm
    samples.tsv  header  #samples N=<int> n_side=<int>
                 rows    user_id<TAB>h1 h2 ...<TAB>target_id<TAB>s1,s2,...<TAB>label

History cells are stored oldest first on disk and reversed to
most-recent-first in memory, so position 0 of a padded row is always the
latest interaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

PAD_ID = 0


class DataError(ValueError):
    """Dataset contents violate a schema invariant."""


class ParseError(DataError):
    """A data file could not be parsed; message carries the line number."""


@dataclass
class ItemRecord:
    item_id: int
    cat_features: list[int]
    mm_embedding: np.ndarray


@dataclass
class ItemTable:
    """All items of a dataset plus dense arrays for batched lookups."""

    n_features: int              # categorical feature count, item id included
    d_mm: int
    records: dict[int, ItemRecord] = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def max_id(self) -> int:
        return max(self.records) if self.records else 0

    def feature_arrays(self):
        """(cat_codes, mm) arrays indexed by item id; row 0 is the pad row."""
        n = self.max_id + 1
        cat = np.zeros((n, self.n_features - 1), dtype=np.int64)
        mm = np.zeros((n, self.d_mm), dtype=np.float32)
        for rec in self.records.values():
            cat[rec.item_id] = rec.cat_features
            mm[rec.item_id] = rec.mm_embedding
        return cat, mm


@dataclass
class ImpressionSample:
    user_id: int
    history: list[int]           # oldest -> newest, length <= N
    target_item: int
    side_features: list[int]
    label: int


@dataclass
class SampleSet:
    n_positions: int             # padded history length N
    n_side: int
    samples: list[ImpressionSample] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.float32)


@dataclass
class Batch:
    history_ids: np.ndarray      # (B, N) int64, most-recent-first, 0-padded
    history_mask: np.ndarray     # (B, N) bool, True at real items
    target_ids: np.ndarray       # (B,) int64
    side_codes: np.ndarray       # (B, n_side) int64
    labels: np.ndarray           # (B,) float32

    def __len__(self):
        return self.history_ids.shape[0]


def pad_history(history, n: int):
    """Pad/truncate a history to n cells, most recent first.

    Returns (ids, mask): real ids fill the leading cells in reverse
    chronological order, remaining cells hold the pad id 0 with mask False.
    Histories longer than n keep only the n most recent interactions.
    """
    kept = list(history)[-n:] if n else []
    kept.reverse()
    ids = np.zeros(n, dtype=np.int64)
    mask = np.zeros(n, dtype=bool)
    ids[:len(kept)] = kept
    mask[:len(kept)] = True
    return ids, mask


def make_batch(samples, n_positions: int, n_side: int) -> Batch:
    b = len(samples)
    ids = np.zeros((b, n_positions), dtype=np.int64)
    mask = np.zeros((b, n_positions), dtype=bool)
    side = np.zeros((b, n_side), dtype=np.int64)
    target = np.zeros(b, dtype=np.int64)
    labels = np.zeros(b, dtype=np.float32)
    for i, s in enumerate(samples):
        ids[i], mask[i] = pad_history(s.history, n_positions)
        target[i] = s.target_item
        side[i] = s.side_features
        labels[i] = s.label
    return Batch(ids, mask, target, side, labels)


def batches(sample_set: SampleSet, batch_size: int, shuffle_seed=None):
    """Yield Batch objects covering the set; the last partial batch is kept.

    With shuffle_seed set, samples are visited in a seeded permutation;
    otherwise in original order.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(sample_set))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(order)
    samples = sample_set.samples
    for lo in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[lo:lo + batch_size]]
        yield make_batch(chunk, sample_set.n_positions, sample_set.n_side)


# ---------------------------------------------------------------------------
# text file round trip
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return "%.8g" % x


def save_items(table: ItemTable, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#items |T|={table.n_features} d_mm={table.d_mm}\n")
        for item_id in sorted(table.records):
            rec = table.records[item_id]
            cats = ",".join(str(c) for c in rec.cat_features)
            vec = " ".join(_fmt_float(v) for v in rec.mm_embedding)
            f.write(f"{item_id}\t{cats}\t{vec}\n")


def _parse_header(line, prefix, keys, path):
    parts = line.strip().split()
    if not parts or parts[0] != prefix:
        raise ParseError(f"{path}:1: expected header starting with '{prefix}'")
    got = {}
    for token in parts[1:]:
        if "=" not in token:
            raise ParseError(f"{path}:1: malformed header token '{token}'")
        key, _, value = token.partition("=")
        try:
            got[key] = int(value)
        except ValueError:
            raise ParseError(f"{path}:1: header value '{value}' is not an integer")
    for key in keys:
        if key not in got:
            raise ParseError(f"{path}:1: header missing '{key}'")
    return got


def load_items(path) -> ItemTable:
    """Load an items.tsv file; rejects duplicate ids and malformed rows."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty file, expected an #items header")
    header = _parse_header(lines[0], "#items", ("|T|", "d_mm"), path)
    n_features, d_mm = header["|T|"], header["d_mm"]
    if n_features < 1 or d_mm < 0:
        raise ParseError(f"{path}:1: |T| must be >= 1 and d_mm >= 0")
    table = ItemTable(n_features=n_features, d_mm=d_mm)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 3:
            raise ParseError(f"{path}:{lineno}: expected 3 tab-separated fields, "
                             f"got {len(cols)}")
        try:
            item_id = int(cols[0])
            cats = [int(c) for c in cols[1].split(",")] if cols[1] else []
            vec = np.array([float(v) for v in cols[2].split()], dtype=np.float32)
        except ValueError as e:
            raise ParseError(f"{path}:{lineno}: {e}")
        if item_id <= 0:
            raise ParseError(f"{path}:{lineno}: item id must be positive, got {item_id}")
        if len(cats) != n_features - 1:
            raise ParseError(f"{path}:{lineno}: expected {n_features - 1} categorical "
                             f"codes, got {len(cats)}")
        if any(c < 0 for c in cats):
            raise ParseError(f"{path}:{lineno}: categorical codes must be >= 0")
        if vec.size != d_mm:
            raise ParseError(f"{path}:{lineno}: expected {d_mm} embedding floats, "
                             f"got {vec.size}")
        if item_id in table.records:
            raise DataError(f"{path}:{lineno}: duplicate item id {item_id}")
        table.records[item_id] = ItemRecord(item_id, cats, vec)
    return table


def save_samples(sample_set: SampleSet, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"#samples N={sample_set.n_positions} n_side={sample_set.n_side}\n")
        for s in sample_set.samples:
            hist = " ".join(str(h) for h in s.history)
            side = ",".join(str(c) for c in s.side_features)
            f.write(f"{s.user_id}\t{hist}\t{s.target_item}\t{side}\t{s.label}\n")


def load_samples(path) -> SampleSet:
    """Load a samples.tsv file. Over-long histories are truncated to the N
    most recent interactions instead of raising."""
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError(f"{path}:1: empty file, expected a #samples header")
    header = _parse_header(lines[0], "#samples", ("N", "n_side"), path)
    n, n_side = header["N"], header["n_side"]
    if n < 0 or n_side < 0:
        raise ParseError(f"{path}:1: N and n_side must be >= 0")
    out = SampleSet(n_positions=n, n_side=n_side)
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 5:
            raise ParseError(f"{path}:{lineno}: expected 5 tab-separated fields, "
                             f"got {len(cols)}")
        try:
            user_id = int(cols[0])
            history = [int(h) for h in cols[1].split()] if cols[1].strip() else []
            target = int(cols[2])
            side = [int(c) for c in cols[3].split(",")] if cols[3] else []
            label = int(cols[4])
        except ValueError as e:
            raise ParseError(f"{path}:{lineno}: {e}")
        if label not in (0, 1):
            raise ParseError(f"{path}:{lineno}: label must be 0 or 1, got {label}")
        if len(side) != n_side:
            raise ParseError(f"{path}:{lineno}: expected {n_side} side codes, "
                             f"got {len(side)}")
        if any(h <= 0 for h in history) or target <= 0:
            raise ParseError(f"{path}:{lineno}: item ids must be positive")
        out.samples.append(ImpressionSample(
            user_id=user_id, history=history[-n:] if n else [],
            target_item=target, side_features=side, label=label))
    return out


def validate_references(sample_set: SampleSet, items: ItemTable):
    """Every history/target item id must exist in the item table."""
    known = items.records.keys()
    for i, s in enumerate(sample_set.samples):
        for item_id in list(s.history) + [s.target_item]:
            if item_id not in known:
                raise DataError(f"sample {i} references unknown item id {item_id}")


# ---------------------------------------------------------------------------
# synthetic impression-log generator
# ---------------------------------------------------------------------------

LATENT_DIM = 8
MM_NOISE_STD = 0.05
N_CAT_BINS = 8
N_SIDE_LEVELS = 5


def _quantile_codes(stat, n_levels):
    # codes 1..n_levels; 0 stays reserved for padding
    edges = np.quantile(stat, np.linspace(0, 1, n_levels + 1)[1:-1])
    return 1 + np.searchsorted(edges, stat)


def gen_synthetic(seed, n_users, n_items, d_mm, n_positions, n_samples,
                  positive_rate_target, alpha=3.0, beta=1.0):
    """Generate a seeded item table and impression log from a latent-factor
    click model.

    Users and items get Gaussian latent vectors; an item's multimodal
    embedding is its normalized latent vector plus small noise, padded or
    truncated to d_mm. Click probability is
    sigmoid(alpha * <u, v_target> + beta * mean_h <v_h, v_target> + bias),
    dot products scaled by 1/sqrt(latent dim), with bias calibrated so the
    expected positive rate matches positive_rate_target. Histories are drawn
    from each user's highest-affinity items, with uniformly mixed lengths
    from 0 to n_positions.

    Returns (ItemTable, list of ImpressionSample, info) where info carries
    the generator's own logits and latent vectors for oracle checks.
    """
    if min(n_users, n_items, d_mm, n_positions, n_samples) <= 0:
        raise ValueError("all generator sizes must be positive")
    if not 0.0 < positive_rate_target < 1.0:
        raise ValueError("positive_rate_target must be in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    scale = 1.0 / np.sqrt(LATENT_DIM)

    u = rng.normal(size=(n_users, LATENT_DIM))
    v = rng.normal(size=(n_items + 1, LATENT_DIM))    # row 0 unused (pad id)
    v[0] = 0.0

    # multimodal vectors: direction of v plus noise, then fit to d_mm
    norm = np.linalg.norm(v[1:], axis=1, keepdims=True)
    mm_core = v[1:] / np.maximum(norm, 1e-12)
    mm_core = mm_core + MM_NOISE_STD * rng.normal(size=mm_core.shape)
    if d_mm >= LATENT_DIM:
        mm = np.concatenate(
            [mm_core, np.zeros((n_items, d_mm - LATENT_DIM))], axis=1)
    else:
        mm = mm_core[:, :d_mm]

    popularity = expit(alpha * (u @ v[1:].T) * scale).mean(axis=0)
    cat_codes = _quantile_codes(v[1:, 0], N_CAT_BINS)
    like_level = _quantile_codes(popularity, N_SIDE_LEVELS)
    view_level = _quantile_codes(np.linalg.norm(v[1:], axis=1), N_SIDE_LEVELS)

    table = ItemTable(n_features=2, d_mm=d_mm)
    for i in range(n_items):
        table.records[i + 1] = ItemRecord(
            item_id=i + 1, cat_features=[int(cat_codes[i])],
            mm_embedding=mm[i].astype(np.float32))

    # per-user pool of high-affinity items for history sampling
    pool_size = max(n_positions, min(n_items, max(n_items // 4, 10)))
    affinity = u @ v[1:].T
    pools = np.argsort(-affinity, axis=1)[:, :pool_size] + 1

    users = rng.integers(0, n_users, size=n_samples)
    targets = rng.integers(1, n_items + 1, size=n_samples)
    histories = []
    base_logits = np.zeros(n_samples)
    for i in range(n_samples):
        length = int(rng.integers(0, n_positions + 1))
        hist = rng.choice(pools[users[i]], size=length, replace=False)
        histories.append([int(h) for h in hist])
        vt = v[targets[i]]
        logit = alpha * float(u[users[i]] @ vt) * scale
        if length:
            logit += beta * float((v[hist] @ vt).mean()) * scale
        base_logits[i] = logit

    bias = _calibrate_bias(base_logits, positive_rate_target)
    probs = expit(base_logits + bias)
    labels = (rng.random(n_samples) < probs).astype(int)

    samples = [ImpressionSample(user_id=int(users[i]), history=histories[i],
                                target_item=int(targets[i]),
                                side_features=[int(like_level[targets[i] - 1]),
                                               int(view_level[targets[i] - 1])],
                                label=int(labels[i]))
               for i in range(n_samples)]
    info = {"bias": bias, "logits": base_logits + bias,
            "user_vecs": u, "item_vecs": v}
    return table, samples, info


def _calibrate_bias(logits, target, lo=-30.0, hi=30.0):
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if expit(logits + mid).mean() < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
