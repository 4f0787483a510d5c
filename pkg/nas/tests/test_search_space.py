"""
Unit tests for the stage-wise search space.
"""

import json
from pathlib import Path

import numpy as np
import pytest
from django.conf import settings
from hypothesis import given, settings as hypothesis_settings
from hypothesis import strategies as st

from nas.search_space import (
    STAGE_COUNT,
    BlockVariant,
    ContinuousPoint,
    DecisionVector,
    SearchSpaceError,
    StageId,
    cardinality,
    cell_center,
    decode_arch,
    encode_arch,
    enumerate_space,
    load_space,
    parse_space,
    project,
    project_many,
)

FAMILY_ARCHS = {
    "TinySD": "RA|RA|RA|RA|RA|RA",
    "Hand-tuned": "RA|RA|RA|RAR|RAR|RAR",
    "NanoSD 1": "R|RA|RA|RARA|RRA|RRA",
    "NanoSD 2": "R|RA|RA|RARA|RARA|RR",
    "NanoSD 3": "R|RA|RA|RARA|RRA|RR",
    "NanoSD 4": "R|RA|RA|RARA|RR|RR",
    "NanoSD 5": "R|R|R|RA|RR|RR",
    "NanoSD 6": "R|R|R|RA|RA|RA",
    "NanoSD 7": "R|R|R|R|RA|RRA",
}


def default_space():
    return load_space(Path(settings.BASE_DIR) / "spaces" / "nanosd_default.json")


def space_with_counts(counts):
    labels = ["R", "RA", "RR", "RRA", "RAR", "RRRA", "RARR", "RARA"]
    return parse_space(
        {
            "name": "counts",
            "stages": [
                {"id": stage.name, "variants": labels[:n]}
                for stage, n in zip(StageId, counts, strict=True)
            ],
        }
    )


class TestParseSpace:
    """Tests for space-document parsing."""

    def test_default_space_counts(self):
        """Test the shipped space has 4 encoder and 8 decoder variants per stage."""
        space = default_space()

        assert space.counts == (4, 4, 4, 8, 8, 8)
        assert cardinality(space) == 32768

    def test_teacher_blocks_are_flagged(self):
        """Test the teacher block of every stage carries the flag."""
        space = default_space()

        for stage in StageId:
            teachers = [v.label for v in space.variants[stage] if v.is_teacher]
            assert teachers == ["RARA"]

    def test_stages_in_any_order(self):
        """Test stage order in the document does not matter."""
        document = {
            "name": "shuffled",
            "stages": [{"id": s.name, "variants": ["R"]} for s in reversed(list(StageId))],
        }

        assert cardinality(parse_space(document)) == 1

    def test_duplicate_label_names_stage(self):
        """Test a duplicated label is rejected with its stage."""
        document = {
            "name": "dup",
            "stages": [{"id": s.name, "variants": ["R", "RA"]} for s in StageId],
        }
        document["stages"][4]["variants"] = ["R", "RA", "RA"]

        with pytest.raises(SearchSpaceError) as excinfo:
            parse_space(json.dumps(document, indent=2))

        assert excinfo.value.stage == "D2"
        assert "D2" in str(excinfo.value)
        assert excinfo.value.line is not None

    def test_missing_stage(self):
        """Test a document without D1 is rejected."""
        document = {
            "name": "short",
            "stages": [{"id": s.name, "variants": ["R"]} for s in list(StageId)[:-1]],
        }

        with pytest.raises(SearchSpaceError, match="D1"):
            parse_space(document)

    def test_empty_variant_list(self):
        """Test an empty stage is rejected."""
        document = {"name": "e", "stages": [{"id": s.name, "variants": ["R"]} for s in StageId]}
        document["stages"][0]["variants"] = []

        with pytest.raises(SearchSpaceError, match="E1"):
            parse_space(document)

    def test_unknown_token(self):
        """Test a label with a character outside R/A is rejected."""
        document = {"name": "t", "stages": [{"id": s.name, "variants": ["R"]} for s in StageId]}
        document["stages"][2]["variants"] = ["R", "RX"]

        with pytest.raises(SearchSpaceError, match="E3"):
            parse_space(document)

    def test_variant_must_start_with_residual(self):
        """Test a variant beginning with attention is rejected."""
        with pytest.raises(SearchSpaceError):
            BlockVariant.from_label("AR")

    def test_malformed_json_reports_line(self):
        """Test JSON syntax errors carry a line number."""
        with pytest.raises(SearchSpaceError) as excinfo:
            parse_space('{\n  "name": "x",\n  "stages": [\n}')

        assert excinfo.value.line is not None

    def test_round_trip_through_to_dict(self):
        """Test to_dict produces a document that parses back to the same space."""
        space = default_space()

        assert parse_space(space.to_dict()) == space


class TestCardinality:
    """Tests for space cardinality."""

    @pytest.mark.parametrize(
        "counts, expected",
        [
            ((4, 4, 4, 8, 8, 8), 32768),
            ((1, 1, 1, 1, 1, 1), 1),
            ((2, 3, 4, 5, 6, 7), 5040),
            ((3, 3, 3, 8, 8, 8), 13824),
        ],
    )
    def test_product_of_counts(self, counts, expected):
        """Test cardinality is the product of per-stage counts."""
        assert cardinality(space_with_counts(counts)) == expected


class TestProjection:
    """Tests for the relax-and-project map."""

    def test_lower_boundary(self):
        """Test all-zero coordinates select the first variants."""
        z = project(ContinuousPoint((0.0,) * 6), default_space())

        assert z.indices == (0, 0, 0, 0, 0, 0)

    def test_upper_boundary_is_clamped(self):
        """Test all-one coordinates select the last variants."""
        z = project(ContinuousPoint((1.0,) * 6), default_space())

        assert z.indices == (3, 3, 3, 7, 7, 7)

    def test_floor_rule(self):
        """Test the per-coordinate floor formula."""
        x = ContinuousPoint((0.49, 0.51, 0.26, 0.12, 0.88, 0.99))
        space = default_space()

        assert project(x, space).indices == (1, 2, 1, 0, 7, 7)
        assert encode_arch(project(x, space), space) == "RA|RR|RA|R|RARA|RARA"

    def test_uniform_draws_fill_cells_evenly(self):
        """Test uniform coordinates land in each stage's cells with frequency near 1/n."""
        space = default_space()
        draws = np.random.default_rng(0).random((40_000, STAGE_COUNT))
        draws[-1] = 1.0

        rows = project_many(draws, space)

        assert tuple(int(i) for i in rows[-1]) == tuple(n - 1 for n in space.counts)
        for stage, n in enumerate(space.counts):
            frequencies = np.bincount(rows[:, stage], minlength=n) / len(rows)
            assert len(frequencies) == n
            assert np.allclose(frequencies, 1.0 / n, atol=0.01)

    def test_out_of_range_coordinate_rejected(self):
        """Test coordinates outside [0, 1] are rejected."""
        with pytest.raises(SearchSpaceError):
            ContinuousPoint((0.0, 0.0, 0.0, 0.0, 0.0, 1.5))
        with pytest.raises(SearchSpaceError):
            ContinuousPoint((0.0,) * 5)

    def test_vectorized_projection_matches_scalar(self):
        """Test project_many agrees with project row by row."""
        space = default_space()
        coords = [[0.0] * 6, [1.0] * 6, [0.49, 0.51, 0.26, 0.12, 0.88, 0.99]]

        rows = project_many(coords, space)

        for row, c in zip(rows, coords, strict=True):
            assert tuple(int(i) for i in row) == project(ContinuousPoint(c), space).indices

    @hypothesis_settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=STAGE_COUNT, max_size=STAGE_COUNT))
    def test_projection_is_total(self, coords):
        """Test every point of the unit cube projects to a valid decision vector."""
        space = default_space()

        z = project(ContinuousPoint(tuple(coords)), space)

        assert z.validate(space) is z

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(st.tuples(*(st.integers(0, n - 1) for n in (4, 4, 4, 8, 8, 8))))
    def test_cell_center_projects_back(self, indices):
        """Test the cell center of z projects to z."""
        space = default_space()
        z = DecisionVector(indices)

        assert project(cell_center(z, space), space) == z


class TestArchStrings:
    """Tests for architecture-string encoding."""

    def test_table_rows(self):
        """Test family architecture strings encode from their decoded selections."""
        space = default_space()

        assert encode_arch(decode_arch(FAMILY_ARCHS["NanoSD 2"], space), space) == (
            "R|RA|RA|RARA|RARA|RR"
        )
        assert decode_arch("R|R|R|RA|RR|RR", space).indices == (0, 0, 0, 1, 2, 2)

    def test_all_zero_vector(self):
        """Test the all-zero vector encodes as residual-only blocks."""
        space = default_space()

        assert encode_arch(DecisionVector((0,) * 6), space) == "R|R|R|R|R|R"
        assert decode_arch("R|R|R|R|R|R", space).indices == (0,) * 6

    @pytest.mark.parametrize("name", sorted(FAMILY_ARCHS))
    def test_round_trip_table_archs(self, name):
        """Test decode then encode returns each family architecture string."""
        space = default_space()
        arch = FAMILY_ARCHS[name]

        assert encode_arch(decode_arch(arch, space), space) == arch

    def test_unknown_label(self):
        """Test an unknown label names its stage."""
        with pytest.raises(SearchSpaceError) as excinfo:
            decode_arch("R|XX|R|R|R|R", default_space())

        assert excinfo.value.stage == "E2"

    def test_wrong_segment_count(self):
        """Test strings without six segments are rejected."""
        with pytest.raises(SearchSpaceError):
            decode_arch("R|R|R", default_space())

    def test_out_of_range_index(self):
        """Test encoding an index past the variant list fails."""
        with pytest.raises(SearchSpaceError):
            encode_arch(DecisionVector((4, 0, 0, 0, 0, 0)), default_space())

    @hypothesis_settings(max_examples=200, deadline=None)
    @given(st.tuples(*(st.integers(0, n - 1) for n in (4, 4, 4, 8, 8, 8))))
    def test_round_trip_property(self, indices):
        """Test decode(encode(z)) == z over the default space."""
        space = default_space()
        z = DecisionVector(indices)

        assert decode_arch(encode_arch(z, space), space) == z


class TestEnumeration:
    """Tests for exhaustive enumeration."""

    def test_default_space_enumerates_every_vector_once(self):
        """Test 32,768 distinct vectors come out."""
        vectors = {z.indices for z in enumerate_space(default_space())}

        assert len(vectors) == 32768

    def test_lexicographic_order(self):
        """Test binary space order runs from all zeros to all ones."""
        vectors = list(enumerate_space(space_with_counts((2, 2, 2, 2, 2, 2))))

        assert len(vectors) == 64
        assert vectors[0].indices == (0,) * 6
        assert vectors[-1].indices == (1,) * 6
        assert [v.indices for v in vectors] == sorted(v.indices for v in vectors)

    def test_single_vector_space(self):
        """Test a space with one variant per stage enumerates one vector."""
        assert len(list(enumerate_space(space_with_counts((1,) * 6)))) == 1

    def test_cap_is_checked_eagerly(self):
        """Test spaces above the cap fail at call time."""
        with pytest.raises(SearchSpaceError, match="cap"):
            enumerate_space(default_space(), cap=1000)
