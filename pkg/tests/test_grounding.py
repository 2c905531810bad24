import logging

import numpy as np
import pytest

from cookgen.backends.mocks import MockVlm
from cookgen.errors import (
    DegenerateMask,
    EmptyInput,
    EmptyRelevantSet,
    MissingPixelMask,
)
from cookgen.grounding import (
    Category,
    GroundedMask,
    RelevantObjectSet,
    bbox_raster,
    build_mask_plan,
    categorize_objects,
    ground_masks,
    load_plan,
    refine_location,
    relocate_core,
    relocation_shift,
    save_plan,
)

from conftest import FailingBackend, StubDetector, detection, rand_image


CUT_CARROT_FIXTURE = {
    "cut carrot": [
        "carrot, knife, cutting board",
        "core: carrot\nlocation: cutting board\nfunctional: knife",
    ]
}


class TestCategorizeObjects:
    def test_three_way_categorization(self):
        vlm = MockVlm(CUT_CARROT_FIXTURE)
        objects, history = categorize_objects("cut carrot", rand_image(0), vlm)
        assert objects.core == ["carrot"]
        assert objects.location == ["cutting board"]
        assert objects.functional == ["knife", "hand"]
        assert len(history) == 4  # two user turns, two replies

    def test_hands_in_functional_for_cutting(self):
        vlm = MockVlm(
            {
                "cut tomato": [
                    "tomato, knife",
                    "core: tomato\nlocation:\nfunctional: knife, hand",
                ]
            }
        )
        objects, _ = categorize_objects("cut tomato", rand_image(0), vlm)
        assert "hand" in objects.functional and "knife" in objects.functional

    def test_hands_auto_appended_when_omitted(self):
        vlm = MockVlm({"cut carrot": ["carrot", "core: carrot"]})
        objects, _ = categorize_objects("cut carrot", rand_image(0), vlm)
        assert objects.functional == ["hand"]

    def test_hands_not_appended_when_disabled(self):
        vlm = MockVlm({"cut carrot": ["carrot", "core: carrot"]})
        objects, _ = categorize_objects(
            "cut carrot", rand_image(0), vlm, auto_append_hands=False
        )
        assert objects.functional == []

    def test_deterministic_with_mock(self):
        vlm = MockVlm(CUT_CARROT_FIXTURE)
        a, _ = categorize_objects("cut carrot", rand_image(0), vlm)
        b, _ = categorize_objects("cut carrot", rand_image(0), vlm)
        assert a.to_row() == b.to_row()

    def test_unassigned_objects_default_to_functional(self, caplog):
        vlm = MockVlm({"cut carrot": ["carrot, bowl", "core: carrot"]})
        with caplog.at_level(logging.WARNING):
            objects, _ = categorize_objects("cut carrot", rand_image(0), vlm)
        assert "bowl" in objects.functional
        assert any("defaulted to functional" in n for n in objects.notes)

    def test_categories_stay_disjoint(self):
        vlm = MockVlm(
            {"cut carrot": ["carrot", "core: carrot\nlocation: carrot\nfunctional: carrot"]}
        )
        objects, _ = categorize_objects("cut carrot", rand_image(0), vlm)
        assert objects.core == ["carrot"]
        assert "carrot" not in objects.location
        assert "carrot" not in objects.functional

    def test_empty_relevant_set(self):
        vlm = MockVlm({"cut carrot": ["none"]})
        with pytest.raises(EmptyRelevantSet):
            categorize_objects("cut carrot", rand_image(0), vlm)


class TestRefineLocation:
    def _objects(self, locations):
        return RelevantObjectSet(
            action="put cheese", core=["cheese"], location=list(locations), functional=["hand"]
        )

    def test_most_specific_location_kept(self):
        vlm = MockVlm({"put cheese": ["burger"]})
        refined = refine_location(self._objects(["stove", "pan", "burger"]), rand_image(0), vlm)
        assert refined.location == ["burger"]

    def test_singleton_is_noop_without_backend_call(self):
        refined = refine_location(self._objects(["plate"]), rand_image(0), FailingBackend())
        assert refined.location == ["plate"]

    def test_backend_down_falls_back_to_best_score(self):
        refined = refine_location(
            self._objects(["stove", "pan"]),
            rand_image(0),
            FailingBackend(),
            scores={"pan": 0.7, "stove": 0.5},
        )
        assert refined.location == ["pan"]
        assert any("fallback" in note for note in refined.notes)

    def test_backend_down_uses_detector_scores(self):
        detector = StubDetector(
            default=[detection("pan", 0.7), detection("stove", 0.5)]
        )
        refined = refine_location(
            self._objects(["stove", "pan"]), rand_image(0), FailingBackend(), detector=detector
        )
        assert refined.location == ["pan"]

    def test_unmatched_answer_falls_back(self):
        vlm = MockVlm({"put cheese": ["the kitchen counter"]})
        refined = refine_location(
            self._objects(["stove", "pan"]), rand_image(0), vlm,
            scores={"stove": 0.9, "pan": 0.2},
        )
        assert refined.location == ["stove"]

    def test_empty_location_precondition(self):
        with pytest.raises(EmptyInput):
            refine_location(self._objects([]), rand_image(0), FailingBackend())


class TestGroundMasks:
    def test_core_object_gets_pixel_mask(self):
        objects = RelevantObjectSet(action="cut tomato", core=["tomato"])
        stub = StubDetector(default=[detection("tomato", 0.9, bbox=(10, 10, 20, 20), mask=True)])
        (mask,) = ground_masks(objects, rand_image(0), stub)
        assert mask.category is Category.CORE
        assert mask.pixel_mask is not None and mask.pixel_mask.any()

    def test_core_without_backend_mask_gets_filled_box(self):
        objects = RelevantObjectSet(action="cut tomato", core=["tomato"])
        stub = StubDetector(default=[detection("tomato", 0.9, bbox=(10, 10, 20, 20))])
        (mask,) = ground_masks(objects, rand_image(0), stub)
        assert mask.pixel_mask.sum() == 100

    def test_undetected_location_dropped(self):
        objects = RelevantObjectSet(
            action="cut tomato", core=["tomato"], location=["cutting board"]
        )
        stub = StubDetector(default=[detection("tomato", 0.9, mask=True)])
        masks = ground_masks(objects, rand_image(0), stub)
        assert [m.name for m in masks] == ["tomato"]

    def test_below_threshold_dropped(self):
        objects = RelevantObjectSet(
            action="x", core=["a"], location=["b"], functional=["c"]
        )
        stub = StubDetector(
            default=[detection("a", 0.9, mask=True), detection("b", 0.2), detection("c", 0.5)]
        )
        masks = ground_masks(objects, rand_image(0), stub)
        assert sorted(m.name for m in masks) == ["a", "c"]

    def test_empty_set_precondition(self):
        with pytest.raises(EmptyInput):
            ground_masks(RelevantObjectSet(action="x"), rand_image(0), StubDetector())


def grounded(name, category, bbox, shape=(48, 64), with_mask=False):
    pixel_mask = None
    if with_mask:
        pixel_mask = np.zeros(shape, dtype=bool)
        x0, y0, x1, y1 = bbox
        pixel_mask[y0:y1, x0:x1] = True
    return GroundedMask(name=name, category=category, bbox=bbox, pixel_mask=pixel_mask, score=0.9)


class TestRelocation:
    def test_zero_displacement_is_identity(self):
        frame = rand_image(5)
        core = grounded("cheese", Category.CORE, (10, 10, 20, 20), with_mask=True)
        # location box centred exactly on the core mask centroid (14.5, 14.5)
        location = grounded("burger", Category.LOCATION, (9, 9, 20, 20))
        assert relocation_shift(core, location.bbox, frame.shape) == (0, 0)
        out = relocate_core(frame, core, location)
        assert np.array_equal(out, frame)

    def test_moved_pixel_count_preserved(self):
        frame = rand_image(6, h=150, w=300)
        core = grounded("cheese", Category.CORE, (8, 8, 13, 13), shape=(150, 300), with_mask=True)
        location = grounded("burger", Category.LOCATION, (195, 95, 205, 105))
        dx, dy = relocation_shift(core, location.bbox, frame.shape)
        assert (dx, dy) == (190, 90)
        out = relocate_core(frame, core, location)
        ys, xs = np.nonzero(core.pixel_mask)
        assert np.array_equal(out[ys + dy, xs + dx], frame[ys, xs])
        assert len(ys) == core.pixel_mask.sum() == 25

    def test_clamped_to_stay_in_frame(self):
        frame = rand_image(7)
        core = grounded("cheese", Category.CORE, (50, 30, 60, 40), with_mask=True)
        location = grounded("burger", Category.LOCATION, (60, 44, 64, 48))
        dx, dy = relocation_shift(core, location.bbox, frame.shape)
        ys, xs = np.nonzero(core.pixel_mask)
        assert (xs + dx).max() < frame.shape[1]
        assert (ys + dy).max() < frame.shape[0]
        out = relocate_core(frame, core, location)
        assert np.array_equal(out[ys + dy, xs + dx], frame[ys, xs])

    def test_missing_pixel_mask(self):
        frame = rand_image(8)
        core = grounded("cheese", Category.CORE, (10, 10, 20, 20))
        location = grounded("burger", Category.LOCATION, (30, 30, 40, 40))
        with pytest.raises(MissingPixelMask):
            relocate_core(frame, core, location)

    def test_degenerate_mask(self):
        frame = rand_image(9)
        core = grounded("cheese", Category.CORE, (10, 10, 20, 20), with_mask=True)
        core.pixel_mask[:] = False
        location = grounded("burger", Category.LOCATION, (30, 30, 40, 40))
        with pytest.raises(DegenerateMask):
            relocate_core(frame, core, location)


class TestBuildMaskPlan:
    def test_no_masks_full_frame_fallback(self):
        frame = rand_image(1)
        plan = build_mask_plan(RelevantObjectSet(action="x"), [], frame)
        assert plan.action_stage1.all()
        assert plan.action_stage2.all()
        assert plan.final_stage.all()

    def test_fallback_disabled_leaves_empty(self):
        frame = rand_image(1)
        plan = build_mask_plan(RelevantObjectSet(action="x"), [], frame, full_frame_fallback=False)
        assert not plan.action_stage1.any()

    def test_core_only_keeps_stage1_empty(self):
        frame = rand_image(1)
        objects = RelevantObjectSet(action="x", core=["a"])
        masks = [grounded("a", Category.CORE, (5, 5, 15, 15), with_mask=True)]
        plan = build_mask_plan(objects, masks, frame)
        assert not plan.action_stage1.any()
        assert plan.action_stage2.sum() == 100
        assert plan.relocated_frame is None

    def test_disjoint_core_boxes_add_areas(self):
        frame = rand_image(1)
        objects = RelevantObjectSet(action="x", core=["a", "b"])
        masks = [
            grounded("a", Category.CORE, (0, 0, 10, 10), with_mask=True),
            grounded("b", Category.CORE, (20, 20, 25, 25), with_mask=True),
        ]
        plan = build_mask_plan(objects, masks, frame, full_frame_fallback=False)
        assert plan.action_stage2.sum() == 100 + 25

    def test_final_stage_excludes_functional_regions(self):
        frame = rand_image(1)
        objects = RelevantObjectSet(action="x", core=["a"], functional=["knife"])
        masks = [
            grounded("a", Category.CORE, (0, 0, 10, 10), with_mask=True),
            grounded("knife", Category.FUNCTIONAL, (30, 30, 40, 40)),
        ]
        plan = build_mask_plan(objects, masks, frame)
        functional_only = bbox_raster(frame.shape[:2], [(30, 30, 40, 40)])
        assert not (plan.final_stage & functional_only).any()
        assert (plan.action_stage1 & functional_only).sum() == 100

    def test_relocation_adds_destination_and_keeps_source(self):
        frame = rand_image(1)
        objects = RelevantObjectSet(action="x", core=["a"], location=["pad"])
        masks = [
            grounded("a", Category.CORE, (0, 0, 10, 10), with_mask=True),
            grounded("pad", Category.LOCATION, (40, 30, 50, 40)),
        ]
        plan = build_mask_plan(objects, masks, frame)
        assert plan.relocated_frame is not None
        source = bbox_raster(frame.shape[:2], [(0, 0, 10, 10)])
        assert (plan.action_stage2 & source).sum() == source.sum()  # vacated region masked
        assert plan.action_stage2.sum() > source.sum()              # destination too
        assert np.array_equal(plan.final_stage, plan.action_stage2)

    def test_union_monotone_in_masks(self):
        frame = rand_image(2)
        objects = RelevantObjectSet(action="x", core=["a", "b"], functional=["c"])
        rng = np.random.default_rng(0)
        masks = []
        previous = (0, 0, 0)
        for name, cat in (("a", Category.CORE), ("c", Category.FUNCTIONAL), ("b", Category.CORE)):
            x0, y0 = int(rng.integers(0, 50)), int(rng.integers(0, 35))
            masks.append(grounded(name, cat, (x0, y0, x0 + 10, y0 + 10), with_mask=True))
            plan = build_mask_plan(objects, masks, frame, full_frame_fallback=False)
            now = (plan.action_stage1.sum(), plan.action_stage2.sum(), plan.final_stage.sum())
            assert all(n >= p for n, p in zip(now, previous))
            previous = now

    def test_rasters_match_frame_shape(self):
        frame = rand_image(3, h=37, w=53)
        plan = build_mask_plan(RelevantObjectSet(action="x"), [], frame)
        assert plan.action_stage1.shape == (37, 53)

    def test_plan_round_trip(self, tmp_path):
        frame = rand_image(4)
        objects = RelevantObjectSet(action="x", core=["a"], location=["pad"])
        masks = [
            grounded("a", Category.CORE, (0, 0, 10, 10), with_mask=True),
            grounded("pad", Category.LOCATION, (40, 30, 50, 40)),
        ]
        plan = build_mask_plan(objects, masks, frame)
        save_plan(plan, objects, masks, tmp_path / "plan")
        loaded = load_plan(tmp_path / "plan")
        assert np.array_equal(loaded.action_stage1, plan.action_stage1)
        assert np.array_equal(loaded.action_stage2, plan.action_stage2)
        assert np.array_equal(loaded.final_stage, plan.final_stage)
        assert np.array_equal(loaded.relocated_frame, plan.relocated_frame)


class TestGroundedMask:
    def test_pixel_mask_clipped_to_bbox(self):
        mask = np.ones((48, 64), dtype=bool)
        g = GroundedMask("a", Category.CORE, (10, 10, 20, 20), pixel_mask=mask, score=0.9)
        assert g.pixel_mask.sum() == 100
