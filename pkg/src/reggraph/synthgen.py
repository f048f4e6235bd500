"""Synthetic registration logs with labelled fraud rings.

Suspicious accounts come in rings that register within a short burst and
reuse ring-owned entities; everybody else draws entities from a public
pool that grows over time.  Entity counts per account are calibrated to
the census of a production registration graph (``CENSUS_*``), scaled to
``n_accounts``.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .ingest import ENTITY_FIELDS, RegistrationRecord, write_records

# production census this generator is calibrated against
CENSUS_ACCOUNTS = 111_691
CENSUS_NODES = {"email": 7_221, "address": 6_762, "phone": 4_958, "ip": 134}
CENSUS_STRUCTURAL = {"email": 29_217, "address": 104_719, "phone": 18_542, "ip": 608}
CENSUS_TEMPORAL = 135_614
REFERENCE_PREVALENCE = 0.5655

DEFAULT_ORIGIN = 1_567_382_400  # Monday 2019-09-02 00:00 UTC
WEEK = 7 * 24 * 3600


def _default_presence() -> dict:
    # per-type usage rates from the census; address is also the fallback
    # entity for accounts that drew none, so its raw rate is solved for
    rate = {k: v / CENSUS_ACCOUNTS for k, v in CENSUS_STRUCTURAL.items()}
    q = (1 - rate["email"]) * (1 - rate["phone"]) * (1 - rate["ip"])
    rate["address"] = (rate["address"] - q) / (1 - q)
    return rate


class ConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    n_accounts: int = 11_169
    suspicious_fraction: float = REFERENCE_PREVALENCE
    T: int = 16
    d_account: int = 64
    ring_size: tuple = (4, 24)
    entity_sharing: dict = field(
        default_factory=lambda: {"email": 0.5, "address": 0.5, "phone": 0.5, "ip": 0.5}
    )
    # None: calibrate per type so distinct-entity counts match the census
    benign_collision_rate: dict | float | None = None
    entity_presence: dict = field(default_factory=_default_presence)
    # types drawn from a fixed pool by everyone, ring members included
    pooled_types: tuple = ("ip",)
    feature_signal: float = 0.23
    burst_hours: int = 72
    origin: int = DEFAULT_ORIGIN
    seed: int = 0

    def validate(self):
        if self.n_accounts < 1:
            raise ConfigError("n_accounts must be positive")
        if not 0.0 < self.suspicious_fraction < 1.0:
            raise ConfigError("suspicious_fraction must lie in (0, 1)")
        lo, hi = self.ring_size
        if lo < 2 or hi < lo:
            raise ConfigError("ring sizes must satisfy 2 <= min <= max")
        if self.T < 1 or self.d_account < 1:
            raise ConfigError("T and d_account must be positive")
        if not 0.0 <= self.feature_signal <= 1.0:
            raise ConfigError("feature_signal must lie in [0, 1]")
        if not 0 < self.burst_hours <= 7 * 24:
            raise ConfigError("burst_hours must lie in (0, 168]")
        probs = dict(self.entity_sharing)
        probs.update({f"presence.{k}": v for k, v in self.entity_presence.items()})
        if isinstance(self.benign_collision_rate, dict):
            probs.update({f"collision.{k}": v for k, v in self.benign_collision_rate.items()})
        elif self.benign_collision_rate is not None:
            probs["collision"] = self.benign_collision_rate
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"probability {name}={p} outside [0, 1]")
        if self.n_suspicious < lo:
            raise ConfigError(
                f"{self.n_suspicious} suspicious accounts cannot fill a ring of size {lo}"
            )
        return self

    @property
    def n_suspicious(self) -> int:
        return int(round(self.suspicious_fraction * self.n_accounts))

    def to_json(self) -> str:
        doc = asdict(self)
        doc["ring_size"] = list(self.ring_size)
        doc["pooled_types"] = list(self.pooled_types)
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "GeneratorConfig":
        doc = dict(doc)
        if "ring_size" in doc:
            doc["ring_size"] = tuple(doc["ring_size"])
        if "pooled_types" in doc:
            doc["pooled_types"] = tuple(doc["pooled_types"])
        known = cls.__dataclass_fields__
        unknown = set(doc) - set(known)
        if unknown:
            raise ConfigError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**doc)


def _ring_sizes(n_susp: int, lo: int, hi: int, rng) -> list[int]:
    sizes, left = [], n_susp
    while left > 0:
        s = int(rng.integers(lo, hi + 1))
        if left - s < lo:
            s = left
        sizes.append(s)
        left -= s
    return sizes


def _entity_string(etype: str, k: int) -> str:
    if etype == "email":
        return f"user{k}@mail{k % 17}.example"
    if etype == "address":
        return f"{k} registry road"
    if etype == "phone":
        return f"+1 555 {k:07d}"
    return f"10.{(k >> 16) & 255}.{(k >> 8) & 255}.{k & 255}"


def generate(config: GeneratorConfig) -> list[RegistrationRecord]:
    """Draw ``config.n_accounts`` labelled records, sorted by (timestamp, account_id)."""
    return _generate(config)[0]


def ring_membership(config: GeneratorConfig) -> dict[str, int]:
    """Ground-truth ring index per generated account id (-1 for benign accounts)."""
    records, rings = _generate(config)
    return {r.account_id: int(k) for r, k in zip(records, rings)}


def _generate(config: GeneratorConfig):
    config.validate()
    ss = np.random.SeedSequence(config.seed)
    r_layout, r_time, r_ent, r_feat = (np.random.default_rng(s) for s in ss.spawn(4))
    n = config.n_accounts
    horizon = config.T * WEEK
    burst = config.burst_hours * 3600

    sizes = _ring_sizes(config.n_suspicious, *config.ring_size, r_layout)
    ring_of = np.full(n, -1, dtype=np.int64)
    ring_of[: sum(sizes)] = np.repeat(np.arange(len(sizes)), sizes)
    r_layout.shuffle(ring_of)
    suspicious = ring_of >= 0

    ts = r_time.integers(config.origin, config.origin + horizon, size=n)
    starts = r_time.integers(config.origin, config.origin + horizon - burst, size=len(sizes))
    ring_members = np.flatnonzero(suspicious)
    ts[ring_members] = starts[ring_of[ring_members]] + r_time.integers(0, burst, size=ring_members.size)
    order = np.lexsort((np.arange(n), ts))

    types = list(ENTITY_FIELDS)
    present = np.column_stack([r_ent.random(n) < config.entity_presence[t] for t in types])
    present[~present.any(axis=1), types.index("address")] = True
    shares = np.column_stack([r_ent.random(n) < config.entity_sharing[t] for t in types]) & present
    shares &= suspicious[:, None]

    scale = n / CENSUS_ACCOUNTS
    picks = {t: [None] * n for t in types}
    for j, t in enumerate(types):
        target = max(1, int(round(CENSUS_NODES[t] * scale)))
        if t in config.pooled_types:
            ring_key = r_ent.integers(0, target, size=len(sizes))
            draws = r_ent.integers(0, target, size=n)
            for i in np.flatnonzero(present[:, j]):
                picks[t][i] = int(ring_key[ring_of[i]] if shares[i, j] else draws[i])
            continue
        ring_users = np.unique(ring_of[shares[:, j]])
        public_draws = int(present[:, j].sum() - shares[:, j].sum())
        rate = config.benign_collision_rate
        if isinstance(rate, dict):
            rate = rate[t]
        if rate is None:
            fresh_wanted = max(1, target - ring_users.size)
            rate = 1.0 - fresh_wanted / public_draws if public_draws else 0.0
            rate = min(max(rate, 0.0), 1.0)
        ring_key = {int(r): k for k, r in enumerate(ring_users)}
        next_key = len(ring_key)
        public: list[int] = []
        coin = r_ent.random(n)
        which = r_ent.random(n)
        for i in order:
            if not present[i, j]:
                continue
            if shares[i, j]:
                picks[t][i] = ring_key[int(ring_of[i])]
            elif public and coin[i] < rate:
                picks[t][i] = public[int(which[i] * len(public))]
            else:
                picks[t][i] = next_key
                public.append(next_key)
                next_key += 1

    d = config.d_account
    n_active = max(1, math.ceil(0.1 * d))
    feats = r_feat.standard_normal((n, d))
    feats[:, :n_active] += np.where(suspicious, 1.0, -1.0)[:, None] * config.feature_signal

    records = []
    for rank, i in enumerate(order):
        ents = {t: _entity_string(t, picks[t][i]) for t in types if picks[t][i] is not None}
        records.append(
            RegistrationRecord(
                account_id=f"acct{rank:07d}",
                timestamp=int(ts[i]),
                features=feats[i],
                label=int(suspicious[i]),
                **ents,
            )
        )
    return records, ring_of[order]


def write_dataset(records, path, config: GeneratorConfig | None = None) -> Path:
    """Write records as JSONL plus a ``<name>.config.json`` sidecar."""
    path = Path(path)
    write_records(path, records)
    if config is not None:
        path.with_suffix(".config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    return path


@dataclass
class DatasetSummary:
    n_records: int = 0
    prevalence: float = 0.0
    reuse_histogram: dict = field(default_factory=dict)
    ring_count: int = 0


def describe(records) -> DatasetSummary:
    """Prevalence, per-type entity reuse histogram and ring count.

    Rings are connected components of two or more suspicious accounts
    linked through a shared entity.
    """
    records = list(records)
    if not records:
        return DatasetSummary(reuse_histogram={t: {} for t in ENTITY_FIELDS})
    labels = [r.label for r in records if r.label is not None]
    prevalence = float(np.mean(labels)) if labels else 0.0
    hist = {}
    for t in ENTITY_FIELDS:
        uses = Counter(getattr(r, t) for r in records if getattr(r, t))
        hist[t] = dict(sorted(Counter(uses.values()).items()))

    susp = [r for r in records if r.label == 1]
    key_ids: dict = {}
    rows, cols = [], []
    for i, r in enumerate(susp):
        for t, v in r.entities().items():
            rows.append(i)
            cols.append(key_ids.setdefault((t, v), len(key_ids)))
    rings = 0
    if susp and key_ids:
        inc = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(susp), len(key_ids)))
        _, comp = connected_components(inc @ inc.T, directed=False)
        rings = int(np.sum(np.bincount(comp) >= 2))
    return DatasetSummary(len(records), prevalence, hist, rings)
