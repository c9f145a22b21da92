from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erpqa.errors import ConfigurationError
from erpqa.generator import (
    GenerationConfig,
    balance_yes_no,
    complement,
    gen_attribute,
    gen_distance,
    gen_environment,
    gen_spatial,
    gen_view_source,
    generate_dataset,
    render_question,
    select_distractors,
    spatial_relation,
)
from erpqa.geometry import CubeFace, ErpDims
from erpqa.prompts import build_prompt
from erpqa.records import QaRecord
from erpqa.rewards import normalize_option, total_reward, wrap_answer
from erpqa.scene import (
    AnalyzedObject,
    DepthProfile,
    EnvMetadata,
    Object3D,
    ObjectInstance,
    SceneAnalysis,
    analyze_scene,
    containment_excluded,
)
from erpqa.toy import make_toy_corpus

from oracles import regenerate_answer

CFG = GenerationConfig()
F = CubeFace


def obj(iid, label="chair", bbox=None, centroid=(0.0, 0.0, -5.0), faces=None, depth=5.0, profile=None,
        volume=1.0, flatness=0.5, name=None):
    bbox = bbox or (iid * 40, 100, iid * 40 + 29, 129)
    x0, y0, x1, y1 = bbox
    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    inst = ObjectInstance(iid, label, xs.ravel(), ys.ravel(), bbox)
    profile = profile or DepthProfile(depth, depth, depth, depth, xs.size)
    faces = Counter(faces or {F.FRONT: 100})
    o3 = Object3D(tuple(centroid), np.zeros((1, 3)), (1.0, 1.0, 1.0), volume, flatness, frozenset(faces))
    return AnalyzedObject(inst, profile, o3, faces, name or label)


def scene(*objects, env=("Office_Modern", "indoor", "Office"), sid="s0"):
    meta = EnvMetadata(*env, {o.instance_id: o.instance.class_label for o in objects})
    return SceneAnalysis(sid, ErpDims(512, 256), meta, tuple(objects))


def by_kind(records, kind):
    return [r for r in records if r.grounding["kind"] == kind]


class TestViewSource:
    def test_single_face_not_seam(self):
        recs = gen_view_source(scene(obj(1, faces={F.FRONT: 100})), CFG)
        (r,) = by_kind(recs, "view_seam")
        assert r.grounding["asked"] == "multi" and r.answer == "No"

    def test_count_three_faces(self):
        recs = gen_view_source(scene(obj(1, faces={F.FRONT: 50, F.RIGHT: 30, F.TOP: 20})), CFG)
        (r,) = by_kind(recs, "view_count")
        assert r.answer == "3" and r.reward_strategy == "counting"

    def test_majority_face(self):
        recs = gen_view_source(scene(obj(1, faces={F.FRONT: 80, F.RIGHT: 20})), CFG)
        (r,) = by_kind(recs, "view_majority")
        assert r.answer == "Front" and set(r.options) == {f.value for f in CubeFace}

    def test_tie_skips_majority(self):
        recs = gen_view_source(scene(obj(1, faces={F.FRONT: 50, F.RIGHT: 50})), CFG)
        assert by_kind(recs, "view_majority") == []


def prof(p20, p25, p50, p75):
    return DepthProfile(p20, p25, p50, p75, 100)


class TestDistance:
    def test_about_meters(self):
        recs = gen_distance(scene(obj(1, depth=4.23)), CFG)
        (r,) = by_kind(recs, "distance_abs")
        assert r.answer == "About 4.2 meters" and r.grounding["distance_m"] == 4.2

    def test_rounds_half_up(self):
        (r,) = by_kind(gen_distance(scene(obj(1, depth=4.25)), CFG), "distance_abs")
        assert r.answer == "About 4.3 meters"

    def test_zero_distance_skipped(self):
        assert by_kind(gen_distance(scene(obj(1, depth=0.04)), CFG), "distance_abs") == []

    def test_jaccard_third_is_similar(self):
        a = obj(1, profile=prof(10.0, 10.0, 11.0, 12.0))
        b = obj(2, label="table", profile=prof(11.0, 11.0, 12.0, 13.0))
        recs = gen_distance(scene(a, b), CFG)
        (r,) = by_kind(recs, "distance_similar")
        assert r.grounding["asked"] == "similar" and r.answer == "Yes"
        assert by_kind(recs, "distance_closer") == []

    def test_closer(self):
        a = obj(1, label="chair", depth=2.0)
        b = obj(2, label="table", depth=9.0)
        recs = gen_distance(scene(a, b), CFG)
        (r,) = by_kind(recs, "distance_closer")
        assert r.answer == "chair" and r.options == ["chair", "table"]
        (s,) = by_kind(recs, "distance_similar")
        assert s.answer == "No"


POOL = [("Town_Day", "outdoor", "Urban"), ("Town_Night", "outdoor", "Urban"), ("Forest", "outdoor", "Nature")]


class TestEnvironment:
    def test_indoor_yes(self):
        recs = gen_environment(scene(obj(1)), POOL, CFG)
        (r,) = by_kind(recs, "env_attribute")
        assert r.question == "Was this panorama captured indoors?" and r.answer == "Yes"

    def test_variant_affinity_first(self):
        d = select_distractors("Town_Day", POOL, 3, np.random.default_rng(0))
        assert d[0] == "Town_Night" and set(d) == {"Town_Night", "Forest"}

    def test_fallback_to_full_pool(self):
        pool = [("Office_Modern", "indoor", "Office")] + [(f"Env{i}", "outdoor", "Nature") for i in range(6)]
        d = select_distractors("Office_Modern", pool, 3, np.random.default_rng(0))
        assert len(d) == 3 and all(x.startswith("Env") for x in d)

    def test_same_category_before_random(self):
        pool = [("Office_Modern", "indoor", "Office"), ("Cubicles", "indoor", "Office"),
                ("Forest", "outdoor", "Nature"), ("Desert", "outdoor", "Nature")]
        for seed in range(10):
            d = select_distractors("Office_Modern", pool, 2, np.random.default_rng(seed))
            assert d[0] == "Cubicles"

    def test_empty_pool_skips_mcq(self):
        warn = Counter()
        recs = gen_environment(scene(obj(1)), [], CFG, warn)
        assert by_kind(recs, "env_identity") == [] and warn["environment: empty distractor pool"] == 1

    def test_identity_mcq(self):
        s = scene(obj(1), env=("Town_Day", "outdoor", "Urban"))
        (r,) = by_kind(gen_environment(s, POOL, CFG), "env_identity")
        assert r.answer == "Town_Day" and "Town_Night" in r.options


class TestSpatialRelation:
    def test_zero(self):
        assert spatial_relation((1, 2, 3), (1, 2, 3), 0.5).labels == {}

    def test_above_only(self):
        assert spatial_relation((0, 2, 0), (0, 0, 0), 0.5).labels == {"vertical": "above"}

    def test_three_axes(self):
        rel = spatial_relation((1, 1, 1), (0, 0, 0), 0.5)
        assert sorted(rel.labels.values()) == ["above", "behind", "right of"]

    @given(st.lists(st.floats(-50, 50), min_size=6, max_size=6), st.floats(0.01, 5))
    def test_antisymmetric(self, c, tau):
        pi, pj = c[:3], c[3:]
        opp = {"above": "below", "below": "above", "left of": "right of", "right of": "left of",
               "in front of": "behind", "behind": "in front of"}
        fwd = spatial_relation(pi, pj, tau).labels
        back = spatial_relation(pj, pi, tau).labels
        strict = {ax for ax, comp in zip(("lateral", "vertical", "depth"), spatial_relation(pi, pj, tau).v)
                  if abs(comp) > tau}
        assert {ax: opp[w] for ax, w in fwd.items() if ax in strict} == {ax: w for ax, w in back.items()
                                                                          if ax in strict}


class TestSpatial:
    def test_answer_order(self):
        a = obj(1, label="building", centroid=(1.0, 1.0, 1.0))
        b = obj(2, label="truck", centroid=(0.0, 0.0, 0.0))
        (r,) = by_kind(gen_spatial(scene(a, b), CFG), "spatial_rel")
        assert r.answer == "behind and to the right of and above"

    def test_not_above(self):
        a = obj(1, centroid=(0.0, -3.0, 0.0))
        b = obj(2, label="table", centroid=(0.0, 0.0, 0.0))
        (r,) = by_kind(gen_spatial(scene(a, b), CFG), "spatial_axis")
        asked_up = r if r.grounding["asked"] == "up" else complement(r)
        assert asked_up.question == "Is the chair above the table?" and asked_up.answer == "No"

    def test_containment_guard(self):
        a = obj(1, bbox=(0, 0, 99, 99), centroid=(3.0, 0.0, 0.0))
        b = obj(2, label="table", bbox=(2, 2, 96, 96), centroid=(0.0, 0.0, 0.0))
        assert containment_excluded(a.instance, b.instance)
        s = scene(a, b)
        assert gen_spatial(s, CFG) == [] and gen_attribute(s, CFG) == []
        assert by_kind(gen_distance(s, CFG), "distance_similar") == []


class TestAttribute:
    def test_volume(self):
        a, b = obj(1, volume=1.0, flatness=0.5), obj(2, label="table", volume=2.0, flatness=0.5)
        recs = gen_attribute(scene(a, b), CFG)
        (r,) = by_kind(recs, "attr_volume")
        assert r.answer == "table"
        assert by_kind(recs, "attr_flatness") == []

    def test_flatness(self):
        a, b = obj(1, volume=1.0, flatness=0.03), obj(2, label="table", volume=1.0, flatness=0.6)
        (r,) = by_kind(gen_attribute(scene(a, b), CFG), "attr_flatness")
        assert r.answer == "chair"

    def test_ambiguous_volume_skipped(self):
        a, b = obj(1, volume=1.0), obj(2, label="table", volume=1.1)
        assert by_kind(gen_attribute(scene(a, b), CFG), "attr_volume") == []


class TestComplementAndBalance:
    def test_complement_flips(self):
        a = obj(1, volume=1.0)
        b = obj(2, label="table", volume=3.0)
        (r,) = by_kind(gen_attribute(scene(a, b), CFG), "attr_volume_tf")
        c = complement(r)
        assert r.answer == "No" and c.answer == "Yes"
        assert c.question == "Is the chair physically smaller than the table?"
        assert complement(c) == r

    def test_balance(self):
        base = by_kind(gen_attribute(scene(obj(1, volume=1.0), obj(2, label="table", volume=3.0)), CFG),
                       "attr_volume_tf")[0]
        recs = [QaRecord(f"x{i}", f"s{i}", **{k: v for k, v in base.__dict__.items()
                                              if k not in ("id", "scene_id")}) for i in range(100)]
        out = balance_yes_no(recs, 0.5, 0.05)
        yes = sum(r.answer == "Yes" for r in out)
        assert 45 <= yes <= 55


class TestPrompt:
    def rec(self, qtype, strategy, answer="Yes", options=None):
        return QaRecord("q1", "s", "spatial" if qtype != "multiple_choice" else "attribute", qtype, strategy,
                        "Is the chair above the table?", answer, options)

    def test_true_false_suffix(self):
        p = build_prompt(self.rec("true_false", "yes_no"), ErpDims(2560, 1280))
        assert p.startswith("You are an expert in analyzing 360° panoramic (ERP) images (2560x1280).")
        assert p.endswith("<Reasoning>...</Reasoning>\n<Answer>Yes</Answer>")
        assert 'must be EXACTLY "Yes" or "No"' in p

    def test_mcq_suffix_and_options(self):
        p = build_prompt(self.rec("multiple_choice", "mcq", "chair", ["chair", "table"]), ErpDims(512, 256))
        assert "EXACTLY one of the provided options" in p and "Options: chair, table" in p
        assert "(512x256)" in p

    def test_open_ended_suffix(self):
        p = build_prompt(self.rec("open_ended", "spatial", "above"), ErpDims(512, 256))
        assert "under 20 words" in p and "Is the chair above the table?" in p


@pytest.fixture(scope="module")
def toy_scenes():
    return [analyze_scene(b) for b in make_toy_corpus(16)]


class TestGenerateDataset:
    def test_shares(self, toy_scenes):
        recs, stats = generate_dataset(toy_scenes, GenerationConfig(category_targets={c: 20 for c in
                                       ("view_source", "distance", "environment", "spatial", "attribute")}))
        assert stats.total == 100
        assert all(0.18 <= s <= 0.22 for s in stats.category_shares.values())
        assert 0.40 <= stats.yes_no_ratio <= 0.60

    def test_deterministic(self, toy_scenes):
        a, _ = generate_dataset(toy_scenes, GenerationConfig(seed=3))
        b, _ = generate_dataset(toy_scenes, GenerationConfig(seed=3), workers=4)
        assert [r.to_dict() for r in a] == [r.to_dict() for r in b]

    def test_attribute_shortfall(self, toy_scenes):
        cfg = GenerationConfig(category_targets={c: 30 for c in ("view_source", "distance", "environment",
                                                                 "spatial", "attribute")},
                               volume_band=(1e-9, 1e9), flatness_gap=2.0)
        recs, stats = generate_dataset(toy_scenes, cfg)
        assert stats.shortfalls == {"attribute": 30}
        assert {c: n for c, n in stats.category_counts.items() if c != "attribute"} == \
            {"view_source": 30, "distance": 30, "environment": 30, "spatial": 30}

    def test_records_valid_and_regenerable(self, toy_scenes):
        recs, _ = generate_dataset(toy_scenes, GenerationConfig(seed=1))
        for r in recs:
            r.validate()
            assert regenerate_answer(r.grounding) == r.answer
            assert render_question(r.grounding) == r.question
            assert total_reward(wrap_answer(r.answer), r).total == 1.0
            if r.options:
                assert len({normalize_option(o) for o in r.options}) == len(r.options)

    def test_type_mix(self, toy_scenes):
        cfg = GenerationConfig(category_targets={"distance": 40}, type_mix={"distance": {"open_ended": 1,
                               "true_false": 1, "multiple_choice": 2}})
        recs, _ = generate_dataset(toy_scenes, cfg)
        assert Counter(r.question_type for r in recs) == {"open_ended": 10, "true_false": 10,
                                                           "multiple_choice": 20}

    def test_bad_config(self):
        with pytest.raises(ConfigurationError):
            GenerationConfig(tau_pos=0)
        with pytest.raises(ConfigurationError):
            GenerationConfig(category_targets={"weather": 3})
