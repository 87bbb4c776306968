"""Title-pair datasets, descriptions, and masked-LM / next-sentence instances."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .vocab import CLS, MASK, SEP, SPECIALS, Vocab, encode

METADATA_KEYS = ("brand", "container", "size")
METADATA_SEP = " | "
SPLIT_FRACTIONS = (0.72, 0.10, 0.18)
MAX_SEQ_LEN = 128
MAX_PREDICTIONS = 20


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class TitlePair:
    web_title: str
    voice_title: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.web_title.strip() or not self.voice_title.strip():
            raise DataError("titles must be non-empty")


@dataclass
class PretrainInstance:
    ids: list
    segments: list
    masked_positions: list
    masked_ids: list
    is_next: bool


@dataclass
class CorpusStats:
    avg_web_len: float
    avg_voice_len: float
    avg_unique_web: float
    avg_unique_voice: float
    avg_novel_unigrams: float
    split_counts: dict

    def lines(self):
        rows = [
            ("avg_web_title_length", self.avg_web_len),
            ("avg_voice_title_length", self.avg_voice_len),
            ("avg_unique_words_web", self.avg_unique_web),
            ("avg_unique_words_voice", self.avg_unique_voice),
            ("avg_novel_unigrams_voice", self.avg_novel_unigrams),
        ]
        out = [f"{k}={v:.4f}" for k, v in rows]
        out += [f"n_{k}={v}" for k, v in self.split_counts.items()]
        return out


# --------------------------------------------------------------------------
# file formats

def _parse_metadata(text, lineno):
    meta = {}
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        key, eq, value = part.partition("=")
        if not eq or not key.strip():
            raise DataError(f"line {lineno}: malformed metadata entry {part!r}")
        meta[key.strip().lower()] = value.strip()
    return meta


def load_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise DataError(f"line {lineno}: expected 2 or 3 tab-separated fields, got {len(fields)}")
            web, voice = fields[0].strip(), fields[1].strip()
            if not web or not voice:
                raise DataError(f"line {lineno}: empty title")
            meta = _parse_metadata(fields[2], lineno) if len(fields) == 3 else {}
            pairs.append(TitlePair(web, voice, meta))
    return pairs


def format_pair(pair):
    line = f"{pair.web_title}\t{pair.voice_title}"
    if pair.metadata:
        line += "\t" + ";".join(f"{k}={v}" for k, v in pair.metadata.items())
    return line


def save_pairs(path, pairs):
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(format_pair(p) + "\n")


def load_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.strip()]


def augment_with_metadata(pair):
    values = [pair.metadata[k] for k in METADATA_KEYS if pair.metadata.get(k)]
    if not values:
        return pair.web_title
    return pair.web_title + METADATA_SEP + " ".join(values)


# --------------------------------------------------------------------------
# splitting and statistics

def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split(pairs, seed=0):
    """Shuffle by ``seed`` and cut into train / val / test at 72 / 10 / 18."""
    n = len(pairs)
    if n < 3:
        raise DataError(f"need at least 3 pairs to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = _round_half_up(SPLIT_FRACTIONS[0] * n)
    n_val = _round_half_up(SPLIT_FRACTIONS[1] * n)
    shuffled = [pairs[i] for i in order]
    return shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]


def compute_stats(pairs, split_counts=None):
    if not pairs:
        raise DataError("cannot compute statistics of an empty dataset")
    web_len = voice_len = uniq_web = uniq_voice = novel = 0
    for p in pairs:
        web = p.web_title.lower().split()
        voice = p.voice_title.lower().split()
        web_len += len(web)
        voice_len += len(voice)
        uniq_web += len(set(web))
        uniq_voice += len(set(voice))
        novel += len(set(voice) - set(web))
    n = len(pairs)
    counts = dict(split_counts) if split_counts else {"all": n}
    if sum(counts.values()) != n:
        raise DataError(f"split counts {counts} do not sum to {n}")
    return CorpusStats(web_len / n, voice_len / n, uniq_web / n, uniq_voice / n, novel / n, counts)


# --------------------------------------------------------------------------
# synthetic grocery titles

BRANDS = (
    "Great Value", "Lucky Charms", "El Monterey", "Wonderful", "Smithfield",
    "Wesson", "Outshine", "Horizon", "Marketside", "Libby's", "Campbell's",
    "Del Monte", "Blue Diamond", "Green Giant", "Nature Valley", "Sun Harvest",
    "Golden Grove", "Prairie Farms", "Hill Country", "Morning Star",
    "Zorvia", "Quillon", "Brixta", "Vantoro", "Jexley", "Kolbrin", "Ormetto",
    "Plyvo", "Drasko", "Feltrano", "Wumbly", "Yaxon", "Nuvelle", "Tremko",
    "Hazzle", "Crumbova", "Idrelle", "Uxbridge", "Selvane", "Pomaro",
)
# Invented one-word brands; no other generated word is a prefix of them.
SINGLE_WORD_BRANDS = BRANDS[20:]

# (web name, kind, containers); kind selects the unit and title templates.
PRODUCTS = (
    ("Pizza Sauce", "weight", ("jar",)),
    ("Roasted & Salted Pistachios", "weight", ("bag",)),
    ("Sweet Peas", "weight", ("can",)),
    ("Sliced Salt Pork", "weight", ("pack",)),
    ("Gluten Free Cereal", "weight", ("box",)),
    ("Cream of Mushroom Soup", "weight", ("can",)),
    ("Cream of Chicken Soup", "weight", ("can",)),
    ("Hearts of Palm", "weight", ("can", "jar")),
    ("Honey Roasted Peanuts", "weight", ("jar", "can")),
    ("Tortilla Chips", "weight", ("bag",)),
    ("Elbow Macaroni", "weight", ("box",)),
    ("Strawberry Jam", "weight", ("jar",)),
    ("Crunchy Peanut Butter", "weight", ("jar",)),
    ("Chicken Noodle Soup", "weight", ("can",)),
    ("Trail Mix", "weight", ("bag", "pouch")),
    ("Ground Cinnamon", "weight", ("jar",)),
    ("Diet Cola", "fluid", ("bottle",)),
    ("Orange Juice", "fluid", ("bottle", "carton")),
    ("Ranch Dressing", "fluid", ("bottle",)),
    ("Maple Syrup", "fluid", ("bottle",)),
    ("Canola Oil", "gallon", ("jug",)),
    ("Whole Milk", "gallon", ("jug",)),
    ("Spring Water", "gallon", ("jug",)),
    ("Apple Cider Vinegar", "gallon", ("jug",)),
    ("Plastic Cups", "count", ("bag",)),
    ("Paper Plates", "count", ("pack",)),
    ("Beef & Cheese Burritos", "count", ("bag",)),
    ("Trash Bags", "count", ("box",)),
    ("Coffee Pods", "count", ("box",)),
    ("Frozen Fruit Bars", "pack", ("box",)),
    ("Sparkling Water", "pack", ("box",)),
    ("Yogurt Cups", "pack", ("box",)),
)

SIZES = {
    "weight": ("4", "6", "7.5", "8", "10", "11", "12", "14", "15", "16", "18", "20.5", "24", "28", "29", "32"),
    "fluid": ("12", "16", "20", "24", "32", "33.8", "48", "64"),
    "gallon": ("1", "2"),
    "count": ("8", "10", "12", "18", "20", "24", "30", "50", "100"),
    "pack": ("4", "6", "8", "12", "18", "24"),
}
UNIT_ABBREV = {"weight": "oz", "fluid": "fl oz", "gallon": "Gal", "count": "ct"}
UNIT_WORDS = {"weight": "ounce", "fluid": "fluid ounce", "gallon": "gallon", "count": "count"}
ABBREVIATIONS = ("oz", "oz.", "fl", "gal", "ct")


def article_for(word):
    """'an' when ``word`` starts with a vowel sound, else 'a'."""
    w = word.lower()
    if w[:1].isdigit():
        head = re.match(r"\d+", w).group()
        if head.startswith("8") or head in ("11", "18") or re.match(r"18\d\d\d$", head):
            return "an"
        return "a"
    if w.startswith(("one", "uni", "use", "eu")):
        return "a"
    return "an" if w[:1] in "aeiou" else "a"


def _voice_words(text):
    return text.replace("&", "and").lower()


def render_pair(brand, product, kind, container, size, form=0):
    """One templated pair; ``form`` picks among the web-title layouts of a kind."""
    b, p = brand, product
    bv, pv = brand.lower(), _voice_words(product)
    if kind == "pack":
        return TitlePair(f"{b} {p} {size} Pack a {container} {b}", f"a {container} of {size} {bv} {pv}")
    unit = UNIT_ABBREV[kind]
    voice = f"{article_for(size)} {size} {UNIT_WORDS[kind]} {container} of {bv} {pv}"
    if kind == "fluid":
        web = f"{b} {p} {container.title()}, {size} {unit} a {container}"
    elif kind == "count":
        web = f"{b} {p} {size} {unit} {container} a {container} {b}"
    elif form == 1 and kind == "weight":
        web = f"{b} {p} {size} {unit}. {container.title()} a {container}"
    else:
        web = f"{b} {p}, {size} {unit} a {container} {b}"
    if form != 2:
        return TitlePair(web, voice)
    # Brand only in metadata, as for catalog entries missing it in the title.
    web = web.replace(f"{b} ", "", 1)
    if web.endswith(f" {b}"):
        web = web[:-len(b) - 1]
    return TitlePair(web, voice, {"brand": b})


def _make_pair(rng, brand, product, kind, containers):
    container = containers[rng.integers(len(containers))]
    size = SIZES[kind][rng.integers(len(SIZES[kind]))]
    form = 0 if kind == "pack" else int(rng.integers(3))
    return render_pair(brand, product, kind, container, size, form)


def _description(rng, brand, product, kind, containers):
    container = containers[0]
    size = SIZES[kind][rng.integers(len(SIZES[kind]))]
    bv, pv = brand.lower(), _voice_words(product)
    sentences = [
        f"{bv} {pv} is a pantry favorite for busy families",
        f"{bv} makes {pv} with simple ingredients you can trust",
    ]
    if kind == "pack":
        sentences.append(f"each {container} holds a pack of {size} {pv}")
    else:
        abbrev = UNIT_ABBREV[kind].lower()
        sentences.append(f"each {container} holds {size} {UNIT_WORDS[kind]} of {pv}")
        sentences.append(f"a {size} {abbrev} {container} means a {size} {UNIT_WORDS[kind]} {container}")
    sentences += [
        f"store the {container} of {pv} in a cool dry place",
        f"enjoy {bv} {pv} with lunch or dinner",
        f"look for the {bv} logo on every {container}",
    ]
    keep = sorted(rng.choice(len(sentences), size=rng.integers(3, len(sentences) + 1), replace=False))
    return ". ".join(sentences[i] for i in keep) + "."


def generate_synthetic(n, seed=0, n_descriptions=None, brands=BRANDS):
    """Templated web/voice title pairs plus product descriptions.

    Brands are cycled so that every table entry appears once ``n`` reaches
    the table size; products and sizes are drawn from ``seed``.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    brand_order = rng.permutation(len(brands))
    pairs = []
    for i in range(n):
        brand = brands[brand_order[i % len(brands)]]
        product, kind, containers = PRODUCTS[rng.integers(len(PRODUCTS))]
        pairs.append(_make_pair(rng, brand, product, kind, containers))
    descriptions = []
    for _ in range(n if n_descriptions is None else n_descriptions):
        brand = brands[rng.integers(len(brands))]
        product, kind, containers = PRODUCTS[rng.integers(len(PRODUCTS))]
        descriptions.append(_description(rng, brand, product, kind, containers))
    return pairs, descriptions


# --------------------------------------------------------------------------
# pretraining instances

_SENTENCE_END = re.compile(r"\.(?:\s+|$)")


def split_sentences(text):
    return [s.strip() for s in _SENTENCE_END.split(text) if s.strip()]


def _truncate_pair(a, b, budget):
    a, b = list(a), list(b)
    while len(a) + len(b) > budget:
        if len(a) >= len(b):
            a.pop()
        else:
            b.pop()
    return a, b


def make_pretrain_instances(descriptions, vocab: Vocab, seed=0, max_len=MAX_SEQ_LEN,
                            max_predictions=MAX_PREDICTIONS, mask_prob=0.15):
    """One sentence-pair instance per sentence of every description.

    Sentence B is the true successor half the time; otherwise, and always
    for a description's last sentence, it is a sentence of another
    description.
    """
    docs = [[encode(s, vocab) for s in split_sentences(d)] for d in descriptions]
    docs = [[s for s in d if s] for d in docs]
    if not any(docs):
        raise DataError("no sentences in the description set")
    rng = np.random.default_rng(seed)
    nonempty = [i for i, d in enumerate(docs) if d]
    n_vocab = len(vocab)
    out = []
    for di, doc in enumerate(docs):
        for si, sent_a in enumerate(doc):
            has_next = si + 1 < len(doc)
            if has_next and rng.random() < 0.5:
                sent_b, is_next = doc[si + 1], True
            else:
                others = [j for j in nonempty if j != di]
                if not others:
                    continue
                other = docs[others[rng.integers(len(others))]]
                sent_b, is_next = other[rng.integers(len(other))], False
            a, b = _truncate_pair(sent_a, sent_b, max_len - 3)
            ids = [CLS] + a + [SEP] + b + [SEP]
            segments = [0] * (len(a) + 2) + [1] * (len(b) + 1)
            candidates = [i for i, t in enumerate(ids) if t >= len(SPECIALS)]
            n_mask = min(max_predictions, max(1, _round_half_up(mask_prob * len(candidates))))
            positions = sorted(rng.choice(candidates, size=n_mask, replace=False).tolist())
            originals = [ids[p] for p in positions]
            for p in positions:
                r = rng.random()
                if r < 0.8:
                    ids[p] = MASK
                elif r < 0.9:
                    ids[p] = int(rng.integers(len(SPECIALS), n_vocab))
            out.append(PretrainInstance(ids, segments, positions, originals, is_next))
    return out
