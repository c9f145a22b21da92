import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from erpqa.errors import DimensionMismatchError, MetadataError, MissingFileError, NoDepthError
from erpqa.geometry import CubeFace, ErpDims, direction_to_face, pixel_to_spherical, spherical_to_cartesian
from erpqa.scene import (
    DepthProfile,
    EnvMetadata,
    FilterConfig,
    ObjectInstance,
    SceneBundle,
    analyze_scene,
    bbox_overlap_ratio,
    box_metrics,
    containment_excluded,
    depth_profile,
    extract_instances,
    filter_objects,
    load_scene,
    object_3d,
    profile_from_depths,
    sample_face_counts,
    save_scene,
    similar_distance,
    visible_faces,
)
from erpqa.toy import make_toy_scene


def percentile_oracle(values, q):
    """Linear interpolation between closest ranks, rank = q*(n-1)."""
    s = sorted(values)
    r = q * (len(s) - 1)
    lo = int(math.floor(r))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (s[hi] - s[lo]) * (r - lo)


def bundle_from(seg, depth=None, labels=None, scene_id="s"):
    seg = np.asarray(seg, np.uint16)
    h, w = seg.shape
    if depth is None:
        depth = np.ones((h, w), np.float32)
    ids = {int(i) for i in np.unique(seg) if i}
    labels = labels or {i: f"obj{i}" for i in ids}
    meta = EnvMetadata("Town_Day", "outdoor", "Urban", labels)
    return SceneBundle(scene_id, ErpDims(w, h), np.zeros((h, w, 3), np.uint8),
                       np.asarray(depth, np.float32), seg, meta)


def box_instance(w, h, label="chair", x0=0, y0=0, iid=1):
    ys, xs = np.mgrid[y0:y0 + h, x0:x0 + w]
    return ObjectInstance(iid, label, xs.ravel(), ys.ravel(), (x0, y0, x0 + w - 1, y0 + h - 1))


class TestLoadScene:
    def test_round_trip(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        save_scene(b, tmp_path / "toy")
        got = load_scene(tmp_path / "toy")
        assert got.dims == ErpDims(8, 4)
        assert np.array_equal(got.segmentation, b.segmentation)
        assert np.array_equal(got.depth, b.depth)  # inf sentinel preserved
        assert np.array_equal(got.rgb, b.rgb)
        assert got.metadata == b.metadata

    def test_rgb_dims_mismatch(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        root = save_scene(b, tmp_path / "toy")
        from PIL import Image
        Image.fromarray(np.zeros((5, 8, 3), np.uint8)).save(root / "rgb.png")
        with pytest.raises(DimensionMismatchError, match="rgb"):
            load_scene(root)

    def test_depth_length_mismatch(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        root = save_scene(b, tmp_path / "toy")
        np.zeros(31, "<f4").tofile(root / "depth.f32")
        with pytest.raises(DimensionMismatchError, match="depth.f32"):
            load_scene(root)

    def test_missing_class_label(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        root = save_scene(b, tmp_path / "toy")
        seg = b.segmentation.copy()
        seg[1, 1] = 7
        from PIL import Image
        Image.fromarray(seg).save(root / "seg.png")
        with pytest.raises(MetadataError, match=r"\[7\]"):
            load_scene(root)

    def test_missing_file(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        root = save_scene(b, tmp_path / "toy")
        (root / "depth.f32").unlink()
        with pytest.raises(MissingFileError, match="depth.f32"):
            load_scene(root)

    def test_malformed_meta(self, tmp_path):
        b = make_toy_scene("toy", dims=ErpDims(8, 4), n_objects=0)
        root = save_scene(b, tmp_path / "toy")
        meta = json.loads((root / "meta.json").read_text())
        meta["scene_attribute"] = "underwater"
        (root / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(MetadataError, match="meta.json"):
            load_scene(root)
        (root / "meta.json").write_text("{not json")
        with pytest.raises(MetadataError, match="meta.json"):
            load_scene(root)


class TestExtractInstances:
    def test_all_unlabeled(self):
        assert extract_instances(bundle_from(np.zeros((4, 8)))) == []

    def test_two_blocks(self):
        seg = np.zeros((8, 12), np.uint16)
        seg[1:4, 2:5] = 1
        seg[4:7, 7:10] = 2
        insts = extract_instances(bundle_from(seg))
        assert [i.instance_id for i in insts] == [1, 2]
        for inst in insts:
            assert inst.pixel_count == 9 and inst.width == 3 and inst.height == 3
        assert insts[0].bbox2d == (2, 1, 4, 3)
        assert insts[1].bbox2d == (7, 4, 9, 6)

    def test_single_pixel(self):
        seg = np.zeros((5, 8), np.uint16)
        seg[3, 2] = 5
        (inst,) = extract_instances(bundle_from(seg))
        assert inst.bbox2d == (2, 3, 2, 3) and inst.pixel_count == 1

    def test_matches_brute_force_scan(self):
        b = make_toy_scene("t", dims=ErpDims(128, 64), n_objects=10, seed=3)
        insts = {i.instance_id: i for i in extract_instances(b)}
        seen = {}
        for y in range(64):
            for x in range(128):
                v = int(b.segmentation[y, x])
                if v:
                    seen.setdefault(v, set()).add((x, y))
        assert set(insts) == set(seen)
        for iid, pix in seen.items():
            inst = insts[iid]
            assert set(zip(inst.xs.tolist(), inst.ys.tolist())) == pix
            xs = [p[0] for p in pix]
            ys = [p[1] for p in pix]
            assert inst.bbox2d == (min(xs), min(ys), max(xs), max(ys))


class TestFilter:
    def test_square_30_kept(self):
        assert filter_objects([box_instance(30, 30, "chair")])

    def test_narrow_removed(self):
        assert not filter_objects([box_instance(24, 100)])

    def test_aspect_removed(self):
        assert not filter_objects([box_instance(200, 30, "car")])

    def test_aspect_boundary_is_exclusive(self):
        assert not filter_objects([box_instance(125, 25)])  # exactly 5
        assert filter_objects([box_instance(124, 25)])

    def test_excluded_classes_case_insensitive(self):
        assert not filter_objects([box_instance(40, 40, "Sky"), box_instance(40, 40, "WIRE")])

    def test_small_area(self):
        assert not filter_objects([box_instance(29, 30)])  # 870 < 900

    @given(st.lists(st.tuples(st.integers(1, 300), st.integers(1, 300),
                              st.sampled_from(["chair", "sky", "car", "wall"])), max_size=12))
    def test_idempotent_subset(self, specs):
        insts = [box_instance(w, h, lab, iid=i) for i, (w, h, lab) in enumerate(specs)]
        once = filter_objects(insts)
        assert filter_objects(once) == once
        assert all(any(o is i for i in insts) for o in once)


class TestContainment:
    def test_inside(self):
        a = box_instance(50, 50)
        b = box_instance(10, 10, x0=5, y0=5)
        assert containment_excluded(a, b) and containment_excluded(b, a)

    def test_disjoint(self):
        assert not containment_excluded(box_instance(10, 10), box_instance(10, 10, x0=20))

    def test_half_overlap(self):
        a, b = box_instance(10, 10), box_instance(10, 10, x0=5)
        assert bbox_overlap_ratio(a.bbox2d, b.bbox2d) == 0.5
        assert not containment_excluded(a, b)

    @given(*[st.integers(0, 40)] * 8)
    def test_symmetric(self, x0, y0, w0, h0, x1, y1, w1, h1):
        a = (x0, y0, x0 + w0, y0 + h0)
        b = (x1, y1, x1 + w1, y1 + h1)
        assert bbox_overlap_ratio(a, b) == bbox_overlap_ratio(b, a)


class TestDepthProfile:
    def test_one_to_five(self):
        p = profile_from_depths([5, 3, 1, 4, 2])
        assert (p.p25, p.p50, p.p75, p.iqr) == (2, 3, 4, 2)
        assert p.p20 == pytest.approx(percentile_oracle([1, 2, 3, 4, 5], 0.2), abs=1e-12)
        assert p.p20 == pytest.approx(1.8, abs=1e-12)
        assert p.is_thick and p.effective_depth == p.p20

    def test_constant(self):
        p = profile_from_depths([7.0] * 9)
        assert p.p50 == 7 and p.iqr == 0 and not p.is_thick and p.effective_depth == 7

    def test_thin_far(self):
        p = profile_from_depths([10.0, 10.1, 10.2])
        assert p.iqr == pytest.approx(0.1)
        assert not p.is_thick and p.effective_depth == p.p50

    def test_invalid_values_excluded(self):
        p = profile_from_depths([0, -1, float("nan"), float("inf"), 2, 4])
        assert p.valid_count == 2 and p.p50 == 3

    def test_no_valid_depth(self):
        seg = np.zeros((4, 8), np.uint16)
        seg[1, 1] = 1
        b = bundle_from(seg, depth=np.where(seg > 0, 0.0, 1.0))
        with pytest.raises(NoDepthError):
            depth_profile(extract_instances(b)[0], b)

    @given(st.lists(st.floats(0.01, 1000), min_size=1, max_size=60))
    def test_matches_oracle_and_ordering(self, vals):
        p = profile_from_depths(vals)
        for q, got in ((0.2, p.p20), (0.25, p.p25), (0.5, p.p50), (0.75, p.p75)):
            assert got == pytest.approx(percentile_oracle(vals, q), rel=1e-12, abs=1e-12)
        assert p.p20 <= p.p25 <= p.p50 <= p.p75 and p.iqr >= 0
        thick = p.iqr > max(0.6, 0.15 * p.p50)
        assert p.is_thick == thick
        assert p.effective_depth == (p.p20 if thick else p.p50)


def prof(p25, p50, p75):
    return DepthProfile(p25, p25, p50, p75, 10)


class TestSimilarDistance:
    def test_jaccard_third(self):
        assert similar_distance(prof(2, 3, 4), prof(3, 4, 5))

    def test_median_rule(self):
        assert similar_distance(prof(9.9, 10.0, 10.05), prof(10.3, 10.4, 10.6))

    def test_far_apart(self):
        assert not similar_distance(prof(1.5, 2, 2.5), prof(19, 20, 21))

    def test_jaccard_boundary_not_similar(self):
        # [0,10] vs [7,17]: jaccard 3/17 < 0.3, medians 5 vs 12
        assert not similar_distance(prof(0, 5, 10), prof(7, 12, 17))

    @given(*[st.floats(0.1, 50)] * 6)
    def test_symmetric(self, a, b, c, d, e, f):
        pa = prof(*sorted((a, b, c)))
        pb = prof(*sorted((d, e, f)))
        assert similar_distance(pa, pb) == similar_distance(pb, pa)


DIMS = ErpDims(512, 256)


def faces_of_all_pixels(inst, dims):
    out = set()
    for x, y in zip(inst.xs, inst.ys):
        s = pixel_to_spherical(x + 0.5, y + 0.5, dims)
        out.add(direction_to_face(spherical_to_cartesian(s, 1.0)))
    return out


class TestVisibleFaces:
    def test_front_only(self):
        inst = box_instance(32, 16, x0=240, y0=120)
        assert faces_of_all_pixels(inst, DIMS) == {CubeFace.FRONT}
        assert visible_faces(inst, DIMS, seed=1) == (frozenset({CubeFace.FRONT}), False)

    def test_front_right_seam(self):
        # azimuth -pi/4 sits at px = 3W/8 = 192; with the default sign convention
        # x > 0 (Right) lies left of the image center
        inst = box_instance(32, 16, x0=176, y0=120)
        assert faces_of_all_pixels(inst, DIMS) == {CubeFace.FRONT, CubeFace.RIGHT}
        faces, seam = visible_faces(inst, DIMS, seed=1)
        assert faces == {CubeFace.FRONT, CubeFace.RIGHT} and seam

    def test_single_pixel(self):
        inst = box_instance(1, 1, x0=10, y0=200)
        faces, seam = visible_faces(inst, DIMS, seed=0)
        assert len(faces) == 1 and not seam

    def test_sample_size_and_determinism(self):
        inst = box_instance(60, 40, x0=150, y0=30)
        c1 = sample_face_counts(inst, DIMS, seed=5, scene_id="a")
        c2 = sample_face_counts(inst, DIMS, seed=5, scene_id="a")
        assert c1 == c2 and sum(c1.values()) == 100
        assert sum(sample_face_counts(box_instance(5, 5), DIMS).values()) == 25
        assert set(c1) <= faces_of_all_pixels(inst, DIMS)


class TestObject3D:
    def test_single_pixel_at_center(self):
        seg = np.zeros((5, 9), np.uint16)
        seg[2, 4] = 1
        depth = np.full((5, 9), 5.0, np.float32)
        b = bundle_from(seg, depth)
        o = object_3d(extract_instances(b)[0], b)
        assert o.centroid == pytest.approx((0, 0, -5), abs=1e-12)
        assert o.aabb_dims == (0, 0, 0) and o.volume == 0 and o.flatness == 0
        assert not o.is_seam

    def test_two_points(self):
        dims, vol, flat = box_metrics([(0, 0, -1), (0, 0, -3)])
        assert dims == (0, 0, 2) and vol == 0 and flat == 0

    def test_slab(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform([-1, -0.05, -3], [1, 0.05, -1], size=(500, 3))
        pts = np.vstack([pts, [[-1, -0.05, -3], [1, 0.05, -1]]])
        dims, vol, flat = box_metrics(pts)
        assert dims == pytest.approx((2, 0.1, 2))
        assert vol == pytest.approx(0.4) and flat == pytest.approx(0.05)

    def test_points_have_pixel_depth_norm(self):
        b = make_toy_scene("t", dims=ErpDims(256, 128), n_objects=6, seed=2)
        for inst in filter_objects(extract_instances(b)):
            o = object_3d(inst, b)
            d = b.depth[inst.ys, inst.xs].astype(float)
            d = d[np.isfinite(d) & (d > 0)]
            assert np.allclose(np.linalg.norm(o.points, axis=1), d, rtol=1e-9)
            lx, ly, lz = o.aabb_dims
            assert o.volume == lx * ly * lz
            assert abs(o.flatness * max(o.aabb_dims) - min(o.aabb_dims)) < 1e-12


class TestAnalyzeScene:
    def test_toy_scene(self):
        b = make_toy_scene("t", seed=0)
        a = analyze_scene(b)
        assert a.objects
        labels = {o.instance.class_label.lower() for o in a.objects}
        assert not labels & {"sky", "ground"}
        for o in a.objects:
            assert o.instance.bbox_area >= 900
            assert sum(o.face_counts.values()) == min(100, o.instance.pixel_count)
            assert set(o.face_counts) == set(o.obj3d.visible_faces)

    def test_deterministic(self):
        b = make_toy_scene("t", seed=4)
        assert analyze_scene(b, seed=9).summary() == analyze_scene(b, seed=9).summary()
