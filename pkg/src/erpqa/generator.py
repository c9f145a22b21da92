"""Geometry-grounded question generation over analyzed scenes.

Every record carries a ``grounding`` map with a ``kind`` key plus the numeric
inputs its answer was derived from, so answers can be recomputed without the
source rasters. True/false groundings also carry an ``ask_pair``: the two
phrasings of the same fact with opposite answers. The dataset builder picks
one of them to keep the global Yes/No ratio near its target.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from functools import lru_cache
from importlib import resources
from itertools import combinations
from typing import Iterable, Sequence

from ._seeding import rng_for
from .errors import ConfigurationError
from .geometry import FACES
from .records import CATEGORIES, QUESTION_TYPES, QaRecord
from .rewards import OPPOSITE, SpatialLexicon, default_lexicon
from .scene import (
    AnalyzedObject,
    DepthProfile,
    FilterConfig,
    SceneAnalysis,
    containment_excluded,
    similar_distance,
)

log = logging.getLogger(__name__)

AXES = ("depth", "lateral", "vertical")
# spatial_relation label words per (axis, polarity)
LABEL_WORDS = {
    ("depth", "front"): "in front of", ("depth", "back"): "behind",
    ("lateral", "left"): "left of", ("lateral", "right"): "right of",
    ("vertical", "up"): "above", ("vertical", "down"): "below",
}


@lru_cache(maxsize=1)
def default_templates() -> dict[str, str]:
    text = resources.files("erpqa").joinpath("data/templates.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass
class GenerationConfig:
    category_targets: dict[str, int] = field(default_factory=lambda: {c: 100 for c in CATEGORIES})
    # optional per-category question-type weights, e.g. {"distance": {"open_ended": 2, "true_false": 1}}
    type_mix: dict[str, dict[str, float]] | None = None
    tau_pos: float = 0.5
    decimals: int = 1
    seed: int = 0
    yes_target: float = 0.5
    yes_tolerance: float = 0.05
    volume_band: tuple[float, float] = (0.8, 1.25)
    flatness_gap: float = 0.05
    n_distractors: int = 3
    # extra (name, attribute, category) environments offered as distractors
    environment_pool: tuple[tuple[str, str, str], ...] = ()

    def __post_init__(self):
        unknown = set(self.category_targets) - set(CATEGORIES)
        if unknown:
            raise ConfigurationError(f"unknown categories in targets: {sorted(unknown)}")
        if any(int(v) < 0 for v in self.category_targets.values()):
            raise ConfigurationError("category targets must be >= 0")
        if not self.tau_pos > 0:
            raise ConfigurationError(f"tau_pos must be > 0, got {self.tau_pos}")
        if not 0.0 <= self.yes_target <= 1.0:
            raise ConfigurationError(f"yes_target must lie in [0, 1], got {self.yes_target}")
        lo, hi = self.volume_band
        if not 0 < lo <= 1 <= hi:
            raise ConfigurationError(f"volume_band must bracket 1, got {self.volume_band}")
        if self.decimals < 0 or self.n_distractors < 1:
            raise ConfigurationError("decimals must be >= 0 and n_distractors >= 1")
        for cat, mix in (self.type_mix or {}).items():
            if cat not in CATEGORIES or set(mix) - set(QUESTION_TYPES) or any(w < 0 for w in mix.values()):
                raise ConfigurationError(f"bad type_mix entry for {cat!r}: {mix}")
        self.volume_band = (float(lo), float(hi))

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationConfig":
        d = dict(d)
        if "volume_band" in d:
            d["volume_band"] = tuple(d["volume_band"])
        if "environment_pool" in d:
            d["environment_pool"] = tuple(tuple(e) for e in d["environment_pool"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(f"bad generation config: {exc}") from None

    def to_dict(self) -> dict:
        return {
            "category_targets": dict(self.category_targets), "type_mix": self.type_mix,
            "tau_pos": self.tau_pos, "decimals": self.decimals, "seed": self.seed,
            "yes_target": self.yes_target, "yes_tolerance": self.yes_tolerance,
            "volume_band": list(self.volume_band), "flatness_gap": self.flatness_gap,
            "n_distractors": self.n_distractors, "environment_pool": [list(e) for e in self.environment_pool],
        }


# -- shared helpers -----------------------------------------------------------

def render_question(grounding: dict, templates: dict[str, str] | None = None) -> str:
    """Question text for a grounding; true/false kinds select a phrasing via ``asked``."""
    templates = templates or default_templates()
    kind = grounding["kind"]
    key = kind if kind in templates else f"{kind}.{grounding['asked']}"
    return templates[key].format(a=grounding.get("a", ""), b=grounding.get("b", ""), c=grounding.get("asked", ""))


def complement(record: QaRecord, templates: dict[str, str] | None = None) -> QaRecord:
    """The same true/false fact asked with the other phrasing of its ``ask_pair``."""
    g = dict(record.grounding)
    first, second = g["ask_pair"]
    g["asked"] = second if g["asked"] == first else first
    answer = "No" if record.answer == "Yes" else "Yes"
    return replace(record, question=render_question(g, templates), answer=answer, grounding=g)


def _yn(flag: bool) -> str:
    return "Yes" if flag else "No"


def round_distance(meters: float, decimals: int = 1) -> Decimal:
    return Decimal(repr(float(meters))).quantize(Decimal(1).scaleb(-decimals), rounding=ROUND_HALF_UP)


def distance_answer(rounded: Decimal) -> str:
    return f"About {rounded} meters"


def _profile_dict(p: DepthProfile) -> dict:
    return {"p20": p.p20, "p25": p.p25, "p50": p.p50, "p75": p.p75}


def _record(scene: SceneAnalysis, category: str, qtype: str, strategy: str, grounding: dict, answer: str,
            options: list[str] | None = None, templates=None) -> QaRecord:
    return QaRecord("", scene.scene_id, category, qtype, strategy, render_question(grounding, templates),
                    answer, options, grounding)


def _tf(scene: SceneAnalysis, category: str, grounding: dict, truth_of_first: bool, templates=None) -> QaRecord:
    """True/false record phrased with the first element of ``ask_pair``."""
    grounding = {**grounding, "asked": grounding["ask_pair"][0]}
    return _record(scene, category, "true_false", "yes_no", grounding, _yn(truth_of_first), templates=templates)


def eligible_pairs(scene: SceneAnalysis, fcfg: FilterConfig = FilterConfig()) -> list[tuple[AnalyzedObject, AnalyzedObject]]:
    """Ordered object pairs (by instance id) that pass the containment guard."""
    objs = sorted(scene.objects, key=lambda o: o.instance_id)
    return [(a, b) for a, b in combinations(objs, 2) if not containment_excluded(a.instance, b.instance, fcfg)]


# -- view source --------------------------------------------------------------

def majority_face(face_counts: dict[str, int]) -> str | None:
    """Face holding the most samples; None on a tie for first place."""
    ranked = sorted(face_counts.items(), key=lambda kv: -kv[1])
    if not ranked or (len(ranked) > 1 and ranked[0][1] == ranked[1][1]):
        return None
    return ranked[0][0]


def gen_view_source(scene: SceneAnalysis, cfg: GenerationConfig, templates=None) -> list[QaRecord]:
    out = []
    face_names = [f.value for f in FACES]
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        counts = {f.value: int(c) for f, c in sorted(obj.face_counts.items(), key=lambda kv: FACES.index(kv[0]))}
        faces = list(counts)
        base = {"a": obj.name, "instance_id": obj.instance_id}
        top = majority_face(counts)
        if top is not None:
            g = {"kind": "view_majority", **base, "face_counts": counts}
            out.append(_record(scene, "view_source", "multiple_choice", "mcq", g, top, face_names, templates))
        g = {"kind": "view_seam", **base, "faces": faces, "ask_pair": ["multi", "single"]}
        out.append(_tf(scene, "view_source", g, len(faces) >= 2, templates))
        g = {"kind": "view_count", **base, "faces": faces, "count": len(faces)}
        out.append(_record(scene, "view_source", "open_ended", "counting", g, str(len(faces)), templates=templates))
    return out


# -- distance -----------------------------------------------------------------

def gen_distance(scene: SceneAnalysis, cfg: GenerationConfig, fcfg: FilterConfig = FilterConfig(),
                 templates=None) -> list[QaRecord]:
    out = []
    for obj in sorted(scene.objects, key=lambda o: o.instance_id):
        p = obj.profile
        rounded = round_distance(p.effective_depth, cfg.decimals)
        if rounded <= 0:
            continue
        g = {"kind": "distance_abs", "a": obj.name, "instance_id": obj.instance_id, "profile": _profile_dict(p),
             "decimals": cfg.decimals, "distance_m": float(rounded)}
        out.append(_record(scene, "distance", "open_ended", "distance", g, distance_answer(rounded),
                           templates=templates))
    for a, b in eligible_pairs(scene, fcfg):
        pa, pb = a.profile, b.profile
        base = {"a": a.name, "b": b.name, "instance_ids": [a.instance_id, b.instance_id],
                "profiles": [_profile_dict(pa), _profile_dict(pb)]}
        similar = similar_distance(pa, pb)
        g = {"kind": "distance_similar", **base, "ask_pair": ["similar", "different"]}
        out.append(_tf(scene, "distance", g, similar, templates))
        da, db = pa.effective_depth, pb.effective_depth
        if not similar and da != db:
            g = {"kind": "distance_closer", **base}
            out.append(_record(scene, "distance", "multiple_choice", "mcq", g, a.name if da < db else b.name,
                               [a.name, b.name], templates))
    return out


# -- environment --------------------------------------------------------------

def _base_name(name: str) -> str:
    return name.split("_")[0].casefold()


def select_distractors(target: str, pool: Sequence[tuple[str, str, str]], k: int, rng) -> list[str]:
    """Pick ``k`` distractor environment names for ``target``.

    Variants sharing the target's base name come first, then environments of
    the same scene category, then the rest of the pool in random order.
    """
    entries = {name: cat for name, _, cat in pool}
    if target not in entries:
        raise ConfigurationError(f"target environment {target!r} missing from its own pool")
    others = sorted(n for n in entries if n != target)
    variants = [n for n in others if _base_name(n) == _base_name(target)]
    same_cat = [n for n in others if n not in variants and entries[n] == entries[target]]
    rest = [n for n in others if n not in variants and n not in same_cat]
    ordered = list(variants)
    for group in (same_cat, rest):
        ordered.extend(group[i] for i in rng.permutation(len(group)))
    return ordered[:k]


def gen_environment(scene: SceneAnalysis, pool: Sequence[tuple[str, str, str]], cfg: GenerationConfig,
                    warnings: Counter | None = None, templates=None) -> list[QaRecord]:
    meta = scene.metadata
    rng = rng_for(cfg.seed, "environment", scene.scene_id)
    me = (meta.environment_name, meta.scene_attribute, meta.scene_category)
    pool = sorted(set(pool) | {me})
    out = []
    other_attr = "outdoor" if meta.scene_attribute == "indoor" else "indoor"
    g = {"kind": "env_attribute", "scene_attribute": meta.scene_attribute,
         "ask_pair": [meta.scene_attribute, other_attr]}
    out.append(_tf(scene, "environment", g, True, templates))

    distractors = select_distractors(meta.environment_name, pool, cfg.n_distractors, rng)
    if not distractors:
        if warnings is not None:
            warnings["environment: empty distractor pool"] += 1
        log.warning("%s: no distractor environments, skipping identification questions", scene.scene_id)
    else:
        options = [meta.environment_name, *distractors]
        options = [options[i] for i in rng.permutation(len(options))]
        g = {"kind": "env_identity", "environment_name": meta.environment_name, "options": options}
        out.append(_record(scene, "environment", "multiple_choice", "mcq", g, meta.environment_name, options,
                           templates))
        for d in distractors:
            pair = [meta.environment_name, d] if rng.random() < 0.5 else [d, meta.environment_name]
            g = {"kind": "env_is", "environment_name": meta.environment_name, "ask_pair": pair}
            out.append(_tf(scene, "environment", g, pair[0] == meta.environment_name, templates))

    categories = sorted({cat for _, _, cat in pool})
    if len(categories) >= 2:
        others = [c for c in categories if c != meta.scene_category]
        picks = [others[i] for i in rng.permutation(len(others))[: cfg.n_distractors]]
        options = [meta.scene_category, *picks]
        options = [options[i] for i in rng.permutation(len(options))]
        g = {"kind": "env_category", "scene_category": meta.scene_category, "options": options}
        out.append(_record(scene, "environment", "multiple_choice", "mcq", g, meta.scene_category, options,
                           templates))
        g = {"kind": "env_category_is", "scene_category": meta.scene_category,
             "ask_pair": [meta.scene_category, picks[0]]}
        out.append(_tf(scene, "environment", g, True, templates))
    return out


# -- spatial ------------------------------------------------------------------

@dataclass(frozen=True)
class SpatialRelation:
    v: tuple[float, float, float]
    polarities: dict[str, str]  # axis -> front/back/left/right/up/down, only where |component| > tau
    tau_pos: float

    @property
    def labels(self) -> dict[str, str]:
        return {axis: LABEL_WORDS[(axis, pol)] for axis, pol in self.polarities.items()}


def axis_polarities(v, tau: float) -> dict[str, str]:
    x, y, z = (float(c) for c in v)
    out = {}
    if z < -tau:
        out["depth"] = "front"
    elif z > tau:
        out["depth"] = "back"
    if x > tau:
        out["lateral"] = "right"
    elif x < -tau:
        out["lateral"] = "left"
    if y > tau:
        out["vertical"] = "up"
    elif y < -tau:
        out["vertical"] = "down"
    return out


def spatial_relation(pi, pj, tau_pos: float) -> SpatialRelation:
    v = tuple(float(a) - float(b) for a, b in zip(pi, pj))
    if len(v) != 3 or not all(math.isfinite(c) for c in v):
        raise ValueError(f"expected two finite 3-vectors, got {pi!r} and {pj!r}")
    return SpatialRelation(v, axis_polarities(v, tau_pos), tau_pos)


def relation_phrase(polarities: dict[str, str], lex: SpatialLexicon | None = None) -> str:
    """Join present labels in depth, lateral, vertical order using the lexicon's answer phrases."""
    lex = lex or default_lexicon()
    return " and ".join(lex.answer_phrases[polarities[a]] for a in AXES if a in polarities)


def gen_spatial(scene: SceneAnalysis, cfg: GenerationConfig, fcfg: FilterConfig = FilterConfig(),
                lex: SpatialLexicon | None = None, templates=None) -> list[QaRecord]:
    rng = rng_for(cfg.seed, "spatial", scene.scene_id)
    out = []
    for a, b in eligible_pairs(scene, fcfg):
        rel = spatial_relation(a.obj3d.centroid, b.obj3d.centroid, cfg.tau_pos)
        if not rel.polarities:
            continue
        base = {"a": a.name, "b": b.name, "instance_ids": [a.instance_id, b.instance_id],
                "v": list(rel.v), "tau": cfg.tau_pos}
        g = {"kind": "spatial_rel", **base}
        out.append(_record(scene, "spatial", "open_ended", "spatial", g, relation_phrase(rel.polarities, lex),
                           templates=templates))
        axes = [ax for ax in AXES if ax in rel.polarities]
        pol = rel.polarities[axes[int(rng.integers(len(axes)))]]
        g = {"kind": "spatial_axis", **base, "ask_pair": [pol, OPPOSITE[pol]]}
        out.append(_tf(scene, "spatial", g, True, templates))
    return out


# -- attributes ---------------------------------------------------------------

def gen_attribute(scene: SceneAnalysis, cfg: GenerationConfig, fcfg: FilterConfig = FilterConfig(),
                  templates=None) -> list[QaRecord]:
    lo, hi = cfg.volume_band
    out = []
    for a, b in eligible_pairs(scene, fcfg):
        base = {"a": a.name, "b": b.name, "instance_ids": [a.instance_id, b.instance_id]}
        va, vb = a.obj3d.volume, b.obj3d.volume
        if va > 0 and vb > 0 and not lo <= va / vb <= hi:
            g = {"kind": "attr_volume", **base, "volumes": [va, vb]}
            out.append(_record(scene, "attribute", "multiple_choice", "mcq", g, a.name if va > vb else b.name,
                               [a.name, b.name], templates))
            g = {"kind": "attr_volume_tf", **base, "volumes": [va, vb], "ask_pair": ["larger", "smaller"]}
            out.append(_tf(scene, "attribute", g, va > vb, templates))
        fa, fb = a.obj3d.flatness, b.obj3d.flatness
        if abs(fa - fb) >= cfg.flatness_gap:
            g = {"kind": "attr_flatness", **base, "flatness": [fa, fb]}
            out.append(_record(scene, "attribute", "multiple_choice", "mcq", g, a.name if fa < fb else b.name,
                               [a.name, b.name], templates))
    return out


# -- dataset assembly ---------------------------------------------------------

@dataclass
class GenerationStats:
    total: int
    category_counts: dict[str, int]
    category_shares: dict[str, float]
    type_counts: dict[str, int]
    type_shares: dict[str, float]
    unique_answers: int
    mean_answer_length: float
    yes_no_ratio: float | None
    supply: dict[str, int] = field(default_factory=dict)
    shortfalls: dict[str, int] = field(default_factory=dict)
    warnings: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def dataset_stats(records: Sequence[QaRecord]) -> GenerationStats:
    """Category/type shares, unique answers, mean answer length in characters, Yes share of T/F answers."""
    n = len(records)
    cats = Counter(r.category for r in records)
    types = Counter(r.question_type for r in records)
    yes = sum(1 for r in records if r.question_type == "true_false" and r.answer == "Yes")
    tf = sum(1 for r in records if r.question_type == "true_false")
    return GenerationStats(
        total=n,
        category_counts={c: cats.get(c, 0) for c in CATEGORIES},
        category_shares={c: (cats.get(c, 0) / n if n else 0.0) for c in CATEGORIES},
        type_counts={t: types.get(t, 0) for t in QUESTION_TYPES},
        type_shares={t: (types.get(t, 0) / n if n else 0.0) for t in QUESTION_TYPES},
        unique_answers=len({r.answer for r in records}),
        mean_answer_length=(sum(len(r.answer) for r in records) / n if n else 0.0),
        yes_no_ratio=(yes / tf if tf else None),
    )


def scene_candidates(scene: SceneAnalysis, pool, cfg: GenerationConfig, fcfg: FilterConfig = FilterConfig(),
                     lex: SpatialLexicon | None = None, templates=None) -> tuple[list[QaRecord], Counter]:
    warnings: Counter = Counter()
    recs = (gen_view_source(scene, cfg, templates)
            + gen_distance(scene, cfg, fcfg, templates)
            + gen_environment(scene, pool, cfg, warnings, templates)
            + gen_spatial(scene, cfg, fcfg, lex, templates)
            + gen_attribute(scene, cfg, fcfg, templates))
    return recs, warnings


def _allocate(total: int, weights: dict[str, float]) -> dict[str, int]:
    # largest-remainder apportionment
    s = sum(weights.values())
    if s <= 0:
        return {k: 0 for k in weights}
    raw = {k: total * w / s for k, w in weights.items()}
    out = {k: int(math.floor(v)) for k, v in raw.items()}
    for k in sorted(raw, key=lambda k: (-(raw[k] - out[k]), k))[: total - sum(out.values())]:
        out[k] += 1
    return out


def _sample_category(cands: list[QaRecord], target: int, mix: dict[str, float] | None, rng) -> list[int]:
    """Indices into ``cands`` chosen for one category, in candidate order."""
    if len(cands) <= target:
        return list(range(len(cands)))
    if not mix:
        return sorted(rng.choice(len(cands), size=target, replace=False).tolist())
    by_type: dict[str, list[int]] = {t: [] for t in QUESTION_TYPES}
    for i, r in enumerate(cands):
        by_type[r.question_type].append(i)
    want = _allocate(target, {t: mix.get(t, 0.0) for t in QUESTION_TYPES})
    chosen: list[int] = []
    for t in QUESTION_TYPES:
        pool = by_type[t]
        k = min(want[t], len(pool))
        chosen.extend(pool[j] for j in rng.choice(len(pool), size=k, replace=False).tolist())
    left = sorted(set(range(len(cands))) - set(chosen))
    short = target - len(chosen)
    if short > 0 and left:
        chosen.extend(left[j] for j in rng.choice(len(left), size=min(short, len(left)), replace=False).tolist())
    return sorted(chosen)


def balance_yes_no(records: list[QaRecord], target: float = 0.5, tolerance: float = 0.05,
                   templates=None) -> list[QaRecord]:
    """Rephrase true/false records so the running Yes share stays within ``target ± tolerance``.

    The default phrasing is kept unless it would push the imbalance past the
    tolerance, or it repeats a question already asked of the same scene.
    """
    out, yes, n = [], 0, 0
    seen: set[tuple[str, str]] = set()
    for r in records:
        if r.question_type != "true_false" or "ask_pair" not in r.grounding:
            out.append(r)
            continue
        alt = complement(r, templates)
        slack = max(1.0, tolerance * (n + 1))
        keep = abs(yes + (r.answer == "Yes") - target * (n + 1)) <= slack
        if (r.scene_id, r.question) in seen:
            keep = False
        elif (r.scene_id, alt.question) in seen:
            keep = True
        pick = r if keep else alt
        seen.add((pick.scene_id, pick.question))
        yes += pick.answer == "Yes"
        n += 1
        out.append(pick)
    return out


def environment_pool(scenes: Iterable[SceneAnalysis], extra=()) -> list[tuple[str, str, str]]:
    pool = {(s.metadata.environment_name, s.metadata.scene_attribute, s.metadata.scene_category) for s in scenes}
    pool.update(tuple(e) for e in extra)
    return sorted(pool)


def generate_dataset(scenes: Sequence[SceneAnalysis], cfg: GenerationConfig = GenerationConfig(),
                     fcfg: FilterConfig = FilterConfig(), lex: SpatialLexicon | None = None,
                     templates: dict[str, str] | None = None, workers: int = 1,
                     id_prefix: str = "q") -> tuple[list[QaRecord], GenerationStats]:
    """Build a category-balanced dataset; a pure function of (scenes, configs, seed).

    Candidate generation fans out over scenes; sampling, Yes/No balancing and
    id assignment are a single-threaded reduction in scene order.
    """
    scenes = list(scenes)
    pool = environment_pool(scenes, cfg.environment_pool)

    def work(scene):
        return scene_candidates(scene, pool, cfg, fcfg, lex, templates)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            per_scene = list(ex.map(work, scenes))
    else:
        per_scene = [work(s) for s in scenes]

    warnings: Counter = Counter()
    by_cat: dict[str, list[QaRecord]] = {c: [] for c in CATEGORIES}
    for recs, warn in per_scene:
        warnings.update(warn)
        for r in recs:
            by_cat[r.category].append(r)

    picked: list[QaRecord] = []
    shortfalls = {}
    for cat in CATEGORIES:
        target = int(cfg.category_targets.get(cat, 0))
        cands = by_cat[cat]
        idx = _sample_category(cands, target, (cfg.type_mix or {}).get(cat), rng_for(cfg.seed, "sample", cat))
        if len(idx) < target:
            shortfalls[cat] = target - len(idx)
            log.warning("category %s: %d of %d requested records available", cat, len(idx), target)
        picked.extend(cands[i] for i in idx)

    picked = balance_yes_no(picked, cfg.yes_target, cfg.yes_tolerance, templates)
    width = max(6, len(str(len(picked))))
    records = [replace(r, id=f"{id_prefix}{i:0{width}d}") for i, r in enumerate(picked)]
    for r in records:
        r.validate()
    stats = dataset_stats(records)
    stats.supply = {c: len(by_cat[c]) for c in CATEGORIES}
    stats.shortfalls = shortfalls
    stats.warnings = dict(warnings)
    return records, stats
