"""Products, scales, event histories and datasets.

Everything a model consumes is built here: the size-position encoding,
the categorical vocabulary, event encoding, the synthetic marketplace
generator, the chronological split and the evaluation scenario filters.
"""

from __future__ import annotations

import bisect
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidConfig, InvalidScale, TooFewInstances, UnknownSize

MAX_POSITIONS = 30
T_MAX = 20
MAX_DAY_OFFSET = 365
PAD = 0
UNK = 1
N_EVENT_FIELDS = 6
DATASET_FORMAT = "sizerec-dataset"
DATASET_VERSION = 1


class Gender(str, Enum):
    WOMEN = "Women"
    MEN = "Men"
    UNISEX = "Unisex"
    KIDS = "Kids"


class EventType(str, Enum):
    ORDER = "Order"
    ADD2BAG = "Add2Bag"


class ReturnReason(str, Enum):
    NOT_RETURNED = "NotReturned"
    TOO_LARGE = "TooLarge"
    TOO_SMALL = "TooSmall"
    OTHER = "OtherReason"
    NOT_APPLICABLE = "NotApplicable"


class Scenario(str, Enum):
    GENERAL = "General"
    MULTIPLE_GENDER = "MultipleGender"
    VIP = "VIP"
    TRAINING_USERS = "TrainingUsers"


@dataclass(frozen=True)
class Scale:
    scale_id: str
    ordered_sizes: tuple[str, ...]

    def __post_init__(self):
        sizes = tuple(self.ordered_sizes)
        object.__setattr__(self, "ordered_sizes", sizes)
        if not sizes:
            raise InvalidScale(f"scale {self.scale_id!r} has no sizes")
        if len(set(sizes)) != len(sizes):
            raise InvalidScale(f"scale {self.scale_id!r} has duplicate size codes")
        if len(sizes) > MAX_POSITIONS:
            raise InvalidScale(f"scale {self.scale_id!r} longer than {MAX_POSITIONS}")

    def __len__(self):
        return len(self.ordered_sizes)

    def size_at(self, position: int) -> str:
        return self.ordered_sizes[position]


@dataclass(frozen=True)
class Product:
    product_id: str
    brand_id: str
    category_id: str
    scale_id: str
    gender: Gender = Gender.UNISEX


@dataclass(frozen=True)
class Event:
    event_type: EventType
    timestamp: int
    brand_id: str
    category_id: str
    scale_id: str
    size_position: int
    return_reason: ReturnReason
    # Not an encoded field; kept so scenario filters can recover product gender.
    product_id: str | None = None

    def __post_init__(self):
        if self.event_type is EventType.ADD2BAG and self.return_reason is not ReturnReason.NOT_APPLICABLE:
            raise ValueError("Add2Bag events always carry NotApplicable")
        if self.event_type is EventType.ORDER and self.return_reason is ReturnReason.NOT_APPLICABLE:
            raise ValueError("Order events never carry NotApplicable")

    def to_record(self) -> list:
        return [
            self.event_type.value,
            self.timestamp,
            self.brand_id,
            self.category_id,
            self.scale_id,
            self.size_position,
            self.return_reason.value,
            self.product_id,
        ]

    @classmethod
    def from_record(cls, rec: Sequence) -> "Event":
        return cls(
            EventType(rec[0]), int(rec[1]), rec[2], rec[3], rec[4], int(rec[5]), ReturnReason(rec[6]),
            rec[7] if len(rec) > 7 else None,
        )


EVENT_RECORD_FIELDS = [
    "event_type", "timestamp", "brand_id", "category_id", "scale_id",
    "size_position", "return_reason", "product_id",
]


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    events: tuple[Event, ...] = ()

    def __post_init__(self):
        events = tuple(self.events)
        object.__setattr__(self, "events", events)
        for prev, nxt in zip(events, events[1:]):
            if nxt.timestamp < prev.timestamp:
                raise ValueError("history events must be sorted by timestamp")

    def __len__(self):
        return len(self.events)

    def recent(self, t_max: int = T_MAX) -> "UserHistory":
        """The `t_max` most recent events, still in chronological order."""
        if len(self.events) <= t_max:
            return self
        return UserHistory(self.user_id, self.events[-t_max:])

    def only(self, event_types: Iterable[EventType]) -> "UserHistory":
        keep = set(event_types)
        return UserHistory(self.user_id, tuple(e for e in self.events if e.event_type in keep))


@dataclass(frozen=True)
class Instance:
    history: UserHistory
    product: Product
    label: int
    timestamp: int
    return_reason: ReturnReason = ReturnReason.NOT_RETURNED

    @property
    def user_id(self) -> str:
        return self.history.user_id


@dataclass
class Dataset:
    instances: list[Instance]
    scales: dict[str, Scale]
    products: dict[str, Product] = field(default_factory=dict)
    users: dict[str, tuple[Event, ...]] = field(default_factory=dict)
    census: dict[str, int] = field(default_factory=dict)
    truth: dict[str, dict[str, int]] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def num_positions(self) -> int:
        return max(len(s) for s in self.scales.values())

    def validate(self):
        for inst in self.instances:
            if inst.product.scale_id not in self.scales:
                raise InvalidConfig(f"instance references unknown scale {inst.product.scale_id!r}")
            if inst.label >= len(self.scales[inst.product.scale_id]):
                raise InvalidConfig("label outside the product's scale")
            if any(e.timestamp >= inst.timestamp for e in inst.history.events):
                raise InvalidConfig("history event not strictly before instance timestamp")


def map_size_to_position(size_code: str, scale: Scale) -> int:
    try:
        return scale.ordered_sizes.index(size_code)
    except ValueError:
        raise UnknownSize(f"{size_code!r} not in scale {scale.scale_id!r}") from None


# --------------------------------------------------------------------------
# vocabulary
# --------------------------------------------------------------------------

FIXED_FIELDS = {
    "event_type": [t.value for t in EventType],
    "return_reason": [r.value for r in ReturnReason],
    "size_position": list(range(MAX_POSITIONS)),
}
DATA_FIELDS = ("user_id", "product_id", "brand_id", "category_id", "scale_id")


class Vocabulary:
    """Per-field value -> id maps. Id 0 is PAD, id 1 is UNK; real values start at 2."""

    def __init__(self, values: dict[str, list] | None = None):
        self._ids: dict[str, dict] = {}
        self._values: dict[str, list] = {}
        for name, vals in FIXED_FIELDS.items():
            self._init_field(name, vals)
        for name in DATA_FIELDS:
            self._init_field(name, [])
        for name, vals in (values or {}).items():
            if name in FIXED_FIELDS:
                continue
            self._init_field(name, vals)

    def _init_field(self, name, vals):
        self._ids[name] = {}
        self._values[name] = []
        for v in vals:
            self.add(name, v)

    def add(self, name: str, value) -> int:
        ids = self._ids[name]
        if value not in ids:
            ids[value] = len(ids) + 2
            self._values[name].append(value)
        return ids[value]

    def lookup(self, name: str, value) -> int:
        return self._ids[name].get(value, UNK)

    def decode(self, name: str, idx: int):
        if idx == PAD:
            return "<pad>"
        if idx == UNK:
            return "<unk>"
        return self._values[name][idx - 2]

    def cardinality(self, name: str) -> int:
        return len(self._values[name]) + 2

    def fields(self) -> list[str]:
        return list(self._values)

    def to_dict(self) -> dict:
        return {name: list(vals) for name, vals in self._values.items() if name not in FIXED_FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(d)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._values == other._values


def build_vocabulary(data: Dataset | Sequence[Instance]) -> Vocabulary:
    """Vocabulary over every categorical value seen in `data` (training split)."""
    instances = data.instances if isinstance(data, Dataset) else data
    if not instances:
        raise EmptyDataset("cannot build a vocabulary from no instances")
    vocab = Vocabulary()
    for inst in instances:
        p = inst.product
        vocab.add("user_id", inst.user_id)
        vocab.add("product_id", p.product_id)
        vocab.add("brand_id", p.brand_id)
        vocab.add("category_id", p.category_id)
        vocab.add("scale_id", p.scale_id)
        for e in inst.history.events:
            vocab.add("brand_id", e.brand_id)
            vocab.add("category_id", e.category_id)
            vocab.add("scale_id", e.scale_id)
            if e.product_id is not None:
                vocab.add("product_id", e.product_id)
    return vocab


EVENT_FIELD_ORDER = ("event_type", "brand_id", "category_id", "scale_id", "size_position", "return_reason")


def day_offset(reference_day: int, timestamp: int) -> int:
    return max(0, min(MAX_DAY_OFFSET, reference_day - timestamp))


def encode_event(event: Event, vocab: Vocabulary, reference_day: int) -> tuple[np.ndarray, int]:
    """Integer field vector (length 6) and clipped day offset for one event."""
    vec = np.array(
        [
            vocab.lookup("event_type", event.event_type.value),
            vocab.lookup("brand_id", event.brand_id),
            vocab.lookup("category_id", event.category_id),
            vocab.lookup("scale_id", event.scale_id),
            vocab.lookup("size_position", event.size_position),
            vocab.lookup("return_reason", event.return_reason.value),
        ],
        dtype=np.int64,
    )
    return vec, day_offset(reference_day, event.timestamp)


# --------------------------------------------------------------------------
# splitting and scenarios
# --------------------------------------------------------------------------

def split_backtesting(data: Dataset | Sequence[Instance], ratios=(0.8, 0.1, 0.1)):
    """Chronological train/val/test split by cumulative ratio."""
    instances = data.instances if isinstance(data, Dataset) else list(data)
    if len(instances) < 10:
        raise TooFewInstances(f"need at least 10 instances, got {len(instances)}")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidConfig(f"bad split ratios {ratios!r}")
    ordered = sorted(instances, key=lambda inst: inst.timestamp)
    n = len(ordered)
    cut1 = int(round(n * ratios[0]))
    cut2 = int(round(n * (ratios[0] + ratios[1])))
    return ordered[:cut1], ordered[cut1:cut2], ordered[cut2:]


def _purchase_genders(full: Dataset) -> dict[str, set]:
    out = defaultdict(set)
    for uid, events in full.users.items():
        for e in events:
            if e.event_type is EventType.ORDER and e.product_id in full.products:
                out[uid].add(full.products[e.product_id].gender)
    return out


def vip_users(full: Dataset, train: Sequence[Instance]) -> set[str]:
    """Users whose order count up to the end of training exceeds the per-user mean."""
    if not train:
        return set()
    cutoff = max(inst.timestamp for inst in train)
    counts = Counter()
    for uid, events in full.users.items():
        n = sum(1 for e in events if e.event_type is EventType.ORDER and e.timestamp <= cutoff)
        if n:
            counts[uid] = n
    if not counts:
        return set()
    mean = sum(counts.values()) / len(counts)
    return {uid for uid, n in counts.items() if n > mean}


def filter_scenario(test: Sequence[Instance], full: Dataset, scenario: Scenario | str,
                    train: Sequence[Instance]) -> list[Instance]:
    scenario = Scenario(scenario)
    if scenario is Scenario.GENERAL:
        return list(test)
    if scenario is Scenario.MULTIPLE_GENDER:
        genders = _purchase_genders(full)
        keep = {uid for uid, g in genders.items() if len(g) >= 2}
    elif scenario is Scenario.VIP:
        keep = vip_users(full, train)
    else:
        keep = {inst.user_id for inst in train}
    return [inst for inst in test if inst.user_id in keep]


# --------------------------------------------------------------------------
# synthetic marketplace
# --------------------------------------------------------------------------

SIZE_FAMILIES = {
    "INT": ["XXXS", "XXS", "XS", "S", "M", "L", "XL", "XXL", "3XL", "4XL", "5XL", "6XL"],
    "IT": [str(36 + 2 * i) for i in range(14)],
    "EU": [str(32 + 2 * i) for i in range(14)],
    "US": [str(2 * i) for i in range(14)],
    "UK": [str(4 + 2 * i) for i in range(14)],
    "KID": [f"{i + 2}Y" for i in range(14)],
}
# population prior over a user's true position; positions 1..4 keep +-1 noise inside every scale
LATENT_POSITIONS = np.array([1, 2, 3, 4])
LATENT_PRIOR = np.array([0.24, 0.32, 0.27, 0.17])
MIN_SCALE_LEN = 6
MAX_SCALE_LEN = 12


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 5000
    n_products: int = 1000
    n_brands: int = 40
    n_scales: int = 12
    n_categories: int = 16
    events_per_user_range: tuple[int, int] = (1, 11)
    add2bag_fraction: float = 0.3
    return_rate: float = 0.15
    multi_gender_fraction: float = 0.3
    noise_rate: float = 0.2
    n_days: int = 365
    mean_active_days: float = 200.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "events_per_user_range", tuple(self.events_per_user_range))
        counts = (self.n_users, self.n_products, self.n_brands, self.n_scales, self.n_categories, self.n_days)
        if any(int(c) < 1 for c in counts):
            raise InvalidConfig("all counts must be >= 1")
        lo, hi = self.events_per_user_range
        if lo < 0 or hi < lo or hi < 1:
            raise InvalidConfig(f"bad events_per_user_range {self.events_per_user_range!r}")
        for name in ("add2bag_fraction", "return_rate", "multi_gender_fraction", "noise_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidConfig(f"{name} must be in [0, 1], got {v}")
        if self.mean_active_days <= 0:
            raise InvalidConfig("mean_active_days must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown generator fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from None


def _make_scales(cfg, rng) -> dict[str, Scale]:
    scales = {}
    families = list(SIZE_FAMILIES)
    for s in range(cfg.n_scales):
        fam = families[s % len(families)]
        codes = SIZE_FAMILIES[fam]
        length = int(rng.integers(MIN_SCALE_LEN, MAX_SCALE_LEN + 1))
        start = int(rng.integers(0, len(codes) - length + 1))
        sid = f"SC{s:02d}-{fam}"
        scales[sid] = Scale(sid, tuple(codes[start:start + length]))
    return scales


def _make_products(cfg, rng, scales):
    genders = list(Gender)
    weights = np.array([0.4, 0.35, 0.1, 0.15])
    cat_gender = {}
    for c in range(cfg.n_categories):
        g = genders[c] if c < len(genders) else genders[int(rng.choice(len(genders), p=weights))]
        cat_gender[f"CAT{c:02d}"] = g
    scale_ids = list(scales)
    brand_scales = {}
    for b in range(cfg.n_brands):
        k = int(rng.integers(1, min(3, len(scale_ids)) + 1))
        picks = rng.choice(len(scale_ids), size=k, replace=False)
        brand_scales[f"BR{b:03d}"] = [scale_ids[i] for i in sorted(picks)]
    brands = list(brand_scales)
    brand_pop = 1.0 / np.arange(1, len(brands) + 1) ** 0.7
    brand_pop /= brand_pop.sum()
    cats = list(cat_gender)
    products = {}
    for p in range(cfg.n_products):
        cat = cats[p] if p < len(cats) else cats[int(rng.integers(len(cats)))]
        brand = brands[int(rng.choice(len(brands), p=brand_pop))]
        bs = brand_scales[brand]
        scale = bs[int(rng.integers(len(bs)))]
        pid = f"P{p:05d}"
        products[pid] = Product(pid, brand, cat, scale, cat_gender[cat])
    return products


def generate_synthetic_dataset(config: GeneratorConfig | dict | None = None, **overrides) -> Dataset:
    """Planted-preference marketplace.

    Every user owns one true size position per gender. Orders and Add2Bag
    events land on that position, or one step off with probability
    `noise_rate`. A returned order is tagged TooLarge/TooSmall when its
    position sits above/below the truth and OtherReason when it fits.
    """
    if config is None:
        config = GeneratorConfig(**overrides)
    elif isinstance(config, dict):
        config = GeneratorConfig.from_dict({**config, **overrides})
    elif overrides:
        config = GeneratorConfig.from_dict({**asdict(config), **overrides})
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    scales = _make_scales(cfg, rng)
    products = _make_products(cfg, rng, scales)

    by_gender: dict[Gender, list[str]] = defaultdict(list)
    for pid, prod in products.items():
        by_gender[prod.gender].append(pid)
    pop = {}
    for g, pids in by_gender.items():
        w = 1.0 / np.arange(1, len(pids) + 1) ** 0.8
        pop[g] = w / w.sum()
    adult = [Gender.WOMEN, Gender.MEN]
    genders = list(Gender)

    users: dict[str, tuple[Event, ...]] = {}
    truth: dict[str, dict[str, int]] = {}
    lo, hi = cfg.events_per_user_range
    for u in range(cfg.n_users):
        uid = f"U{u:06d}"
        latent = {g: int(rng.choice(LATENT_POSITIONS, p=LATENT_PRIOR)) for g in genders}
        primary = adult[int(rng.integers(2))]
        shops = [primary]
        if rng.random() < cfg.multi_gender_fraction:
            others = [g for g in genders if g is not primary]
            shops.append(others[int(rng.integers(len(others)))])
        shops = [g for g in shops if by_gender.get(g)] or [products[next(iter(products))].gender]
        truth[uid] = {g.value: latent[g] for g in shops}

        n_events = int(rng.integers(lo, hi + 1))
        start = int(rng.integers(0, cfg.n_days))
        end = min(cfg.n_days - 1, start + int(rng.exponential(cfg.mean_active_days)))
        days = np.sort(rng.integers(start, end + 1, size=n_events))
        events = []
        for day in days:
            g = shops[0] if len(shops) == 1 or rng.random() < 0.65 else shops[1]
            pids = by_gender[g]
            pid = pids[int(rng.choice(len(pids), p=pop[g]))]
            prod = products[pid]
            pos = latent[g]
            if rng.random() < cfg.noise_rate:
                pos += 1 if rng.random() < 0.5 else -1
            pos = min(max(pos, 0), len(scales[prod.scale_id]) - 1)
            if rng.random() < cfg.add2bag_fraction:
                etype, reason = EventType.ADD2BAG, ReturnReason.NOT_APPLICABLE
            else:
                etype = EventType.ORDER
                reason = ReturnReason.NOT_RETURNED
                if rng.random() < cfg.return_rate:
                    if pos > latent[g]:
                        reason = ReturnReason.TOO_LARGE
                    elif pos < latent[g]:
                        reason = ReturnReason.TOO_SMALL
                    else:
                        reason = ReturnReason.OTHER
            events.append(Event(etype, int(day), prod.brand_id, prod.category_id, prod.scale_id,
                                int(pos), reason, pid))
        users[uid] = tuple(events)

    instances = instances_from_events(users, products)
    census = _census(users)
    return Dataset(instances, scales, products, users, census, truth, asdict(cfg))


def instances_from_events(users: dict[str, tuple[Event, ...]], products: dict[str, Product]) -> list[Instance]:
    """One instance per Order; history = that user's events strictly before the order day."""
    instances = []
    for uid, events in users.items():
        days = [e.timestamp for e in events]
        for e in events:
            if e.event_type is not EventType.ORDER:
                continue
            k = bisect.bisect_left(days, e.timestamp)
            instances.append(Instance(UserHistory(uid, events[:k]), products[e.product_id], e.size_position,
                                      e.timestamp, e.return_reason))
    return instances


def _census(users) -> dict[str, int]:
    with_orders = add2bag_only = no_events = n_orders = n_returned = n_add2bag = 0
    for events in users.values():
        orders = sum(1 for e in events if e.event_type is EventType.ORDER)
        bags = len(events) - orders
        n_orders += orders
        n_add2bag += bags
        n_returned += sum(1 for e in events if e.event_type is EventType.ORDER
                          and e.return_reason is not ReturnReason.NOT_RETURNED)
        if orders:
            with_orders += 1
        elif bags:
            add2bag_only += 1
        else:
            no_events += 1
    return {
        "n_users": len(users),
        "n_users_with_orders": with_orders,
        "n_users_add2bag_only": add2bag_only,
        "n_users_without_events": no_events,
        "n_orders": n_orders,
        "n_returned_orders": n_returned,
        "n_add2bag": n_add2bag,
    }


# --------------------------------------------------------------------------
# file format
# --------------------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    """Write a line-delimited dataset file.

    Line 1 is the header (scales, products, field vocabulary, census),
    followed by one ``user`` record per event log and one ``instance``
    record per labelled order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    domain = Vocabulary()
    for p in dataset.products.values():
        domain.add("product_id", p.product_id)
        domain.add("brand_id", p.brand_id)
        domain.add("category_id", p.category_id)
        domain.add("scale_id", p.scale_id)
    for uid in dataset.users:
        domain.add("user_id", uid)
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "num_positions": dataset.num_positions,
        "event_fields": EVENT_RECORD_FIELDS,
        "scales": {sid: list(s.ordered_sizes) for sid, s in dataset.scales.items()},
        "products": {pid: [p.brand_id, p.category_id, p.scale_id, p.gender.value]
                     for pid, p in dataset.products.items()},
        "vocabulary": domain.to_dict(),
        "census": dataset.census,
        "truth": dataset.truth,
        "config": dataset.config,
    }
    with path.open("w", encoding="utf-8") as fh:
        fh.write(_dumps(header) + "\n")
        for uid, events in dataset.users.items():
            fh.write(_dumps({"kind": "user", "user_id": uid, "events": [e.to_record() for e in events]}) + "\n")
        for inst in dataset.instances:
            fh.write(_dumps({
                "kind": "instance",
                "user_id": inst.user_id,
                "timestamp": inst.timestamp,
                "product_id": inst.product.product_id,
                "label": inst.label,
                "return_reason": inst.return_reason.value,
                "history": [e.to_record() for e in inst.history.events],
            }) + "\n")
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT:
            raise InvalidConfig(f"{path} is not a {DATASET_FORMAT} file")
        if header.get("version") != DATASET_VERSION:
            raise InvalidConfig(f"unsupported dataset version {header.get('version')!r}")
        scales = {sid: Scale(sid, tuple(codes)) for sid, codes in header["scales"].items()}
        products = {pid: Product(pid, b, c, s, Gender(g)) for pid, (b, c, s, g) in header["products"].items()}
        users, instances = {}, []
        for line in fh:
            rec = json.loads(line)
            if rec["kind"] == "user":
                users[rec["user_id"]] = tuple(Event.from_record(r) for r in rec["events"])
            else:
                hist = UserHistory(rec["user_id"], tuple(Event.from_record(r) for r in rec["history"]))
                instances.append(Instance(hist, products[rec["product_id"]], int(rec["label"]),
                                          int(rec["timestamp"]), ReturnReason(rec["return_reason"])))
    return Dataset(instances, scales, products, users, header.get("census", {}), header.get("truth", {}),
                   header.get("config", {}))
