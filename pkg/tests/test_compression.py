import pytest

from kdrec.compression import (CensusEntry, census, census_total,
                               compression_report, electronics_reference_teacher,
                               format_report, match_published_reference,
                               netflix_reference_teacher, param_ratio_pct,
                               reference_student_layout)
from kdrec.student import StudentModel


class TestReferenceLayouts:
    def test_netflix_shaped_teacher_total(self):
        assert census_total(netflix_reference_teacher()) == 3_210_368

    def test_electronics_shaped_teacher_total(self):
        assert census_total(electronics_reference_teacher()) == 108_828_288

    def test_student_layouts(self):
        assert census_total(reference_student_layout(43739, 17239, 32)) == 1_951_296
        assert census_total(reference_student_layout(41691, 21479, 64)) == 4_042_880

    def test_netflix_layout_itemization(self):
        by_name = {e.name: e.count for e in netflix_reference_teacher()}
        assert by_name["trans0.weight"] == 4096 * 32
        assert by_name["user_id_embedding.weight"] == 43739 * 32
        assert by_name["modal0.weight"] == 17239 * 32
        assert by_name["batch_norm.weight"] + by_name["batch_norm.bias"] == 64


class TestRatio:
    def test_equal_models_100pct(self):
        assert param_ratio_pct(500, 500) == 100.0

    def test_empty_student_0pct(self):
        assert param_ratio_pct(0, 500) == 0.0

    def test_zero_teacher_rejected(self):
        with pytest.raises(ValueError):
            param_ratio_pct(10, 0)


class TestCompressionReport:
    def test_report_modes_and_published_reference(self):
        student = reference_student_layout(43739, 17239, 32)
        teacher = netflix_reference_teacher()
        report = compression_report(student, teacher,
                                    feature_dims={"image": 4096, "text": 768},
                                    n_items=17239,
                                    shape_key=(43739, 17239, 32))
        assert report["student"]["params"] == 1_951_296
        assert report["teacher"]["params"] == 3_210_368
        assert report["ratio_pct"] == pytest.approx(60.78, abs=0.01)
        storage = 17239 * (4096 + 768)
        assert report["teacher"]["params_with_feature_storage"] == \
            3_210_368 + storage
        ref = report["published_reference"]
        assert ref["name"] == "netflix"
        assert abs(ref["ratio_pct"] - 7.83) < 0.01
        text = format_report(report)
        assert "7.83" in text and "60.78" in text

    def test_unmatched_shape_has_no_reference(self):
        student = reference_student_layout(10, 10, 4)
        report = compression_report(student, student, feature_dims={},
                                    n_items=10, shape_key=(10, 10, 4))
        assert "published_reference" not in report

    def test_match_lookup(self):
        assert match_published_reference(43739, 17239, 32) == "netflix"
        assert match_published_reference(41691, 21479, 64) == "electronics"
        assert match_published_reference(1, 2, 3) is None


def test_census_of_live_model():
    model = StudentModel(6, 9, 4, 1, seed=0)
    entries = census(model.params())
    assert [e.count for e in entries] == [24, 36]
    assert census_total(entries) == model.param_count()
    assert entries[0] == CensusEntry("student.user_emb", (6, 4))
