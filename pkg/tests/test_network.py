# ABOUTME: Tests for stream network construction, topology queries and hydrologic distances
# ABOUTME: Uses the five-segment reference network plus small hand-built networks
"""Tests for staci.network"""

import itertools
import math

import networkx as nx
import numpy as np
import pytest

from staci.exceptions import DataError, NetworkError, ValidationError
from staci.network import (
    FlowRelation,
    Location,
    Segment,
    Site,
    build_network,
    hydrologic_distance,
    is_flow_connected,
    load_network,
    segments_from_csv,
    site_coordinates,
    sites_from_csv,
    upstream_segments,
    validate_additivity,
    write_network_csv,
    write_sites_csv,
)

R1 = math.sqrt(0.34)
R3 = math.sqrt(0.17)


def _figure1_segments(**weights):
    base = {"r1": 0.35, "r2": 0.5, "r3": 0.85, "r4": 0.15, "r5": 1.0}
    base.update(weights)
    return [
        Segment("r1", ((0.0, 1.0), (0.3, 0.5)), base["r1"], "r3"),
        Segment("r2", ((0.5, 0.8), (0.3, 0.5)), base["r2"], "r3"),
        Segment("r3", ((0.3, 0.5), (0.2, 0.1)), base["r3"], "r5"),
        Segment("r4", ((0.6, 0.6), (0.2, 0.1)), base["r4"], "r5"),
        Segment("r5", ((0.2, 0.1), (0.4, 0.0)), base["r5"]),
    ]


class TestSegmentAndSite:
    def test_segment_length_follows_polyline(self):
        seg = Segment("s", ((0.0, 0.0), (3.0, 0.0), (3.0, 4.0)), 1.0)
        assert seg.length == pytest.approx(7.0)
        np.testing.assert_allclose(seg.cumulative_lengths, [0.0, 3.0, 7.0])

    def test_segment_rejects_single_point(self):
        with pytest.raises(ValidationError, match="at least 2 points"):
            Segment("s", ((0.0, 0.0),), 1.0)

    def test_segment_rejects_repeated_points(self):
        with pytest.raises(ValidationError, match="must differ"):
            Segment("s", ((0.0, 0.0), (0.0, 0.0), (1.0, 0.0)), 1.0)

    @pytest.mark.parametrize("weight", [0.0, -1.0, float("nan")])
    def test_segment_rejects_nonpositive_weight(self, weight):
        with pytest.raises(ValidationError, match="weight"):
            Segment("s", ((0.0, 0.0), (1.0, 0.0)), weight)

    @pytest.mark.parametrize("arc", [-0.1, 1.1])
    def test_site_arc_position_bounds(self, arc):
        with pytest.raises(ValidationError, match="arc_position"):
            Site(1, "s", arc)


class TestBuildNetwork:
    def test_figure1_network(self, figure1):
        """Reference network builds with outlet r5 and ten sites"""
        assert figure1.outlet_id == "r5"
        assert len(figure1.segments) == 5
        assert figure1.n_sites == 10
        assert figure1.site_columns()[:2] == ["site_1", "site_2"]

    def test_single_segment_is_its_own_outlet(self):
        net = build_network([Segment("only", ((0, 0), (1, 0)), 1.0)], [Site(1, "only", 0.0)])
        assert net.outlet_id == "only"
        assert net.is_headwater("only")

    def test_cycle_detected(self):
        segments = [
            Segment("a", ((0, 0), (1, 0)), 1.0, "b"),
            Segment("b", ((1, 0), (2, 0)), 1.0, "a"),
        ]
        with pytest.raises(NetworkError, match="Cycle"):
            build_network(segments, [Site(1, "a", 0.5)])

    def test_multiple_outlets(self):
        segments = [Segment("a", ((0, 0), (1, 0)), 1.0), Segment("b", ((1, 0), (2, 0)), 1.0)]
        with pytest.raises(NetworkError, match="exactly one outlet"):
            build_network(segments, [Site(1, "a", 0.5)])

    def test_dangling_downstream(self):
        segments = [Segment("a", ((0, 0), (1, 0)), 1.0, "missing")]
        with pytest.raises(NetworkError, match="unknown segment 'missing'"):
            build_network(segments, [Site(1, "a", 0.5)])

    def test_site_on_unknown_segment(self, figure1):
        with pytest.raises(NetworkError, match="unknown segment"):
            build_network(_figure1_segments(), [Site(1, "r9", 0.5)])

    def test_duplicate_site_ids(self):
        with pytest.raises(NetworkError, match="Duplicate site"):
            build_network(
                [Segment("a", ((0, 0), (1, 0)), 1.0)], [Site(1, "a", 0.1), Site(1, "a", 0.2)]
            )

    def test_empty_inputs(self):
        with pytest.raises(NetworkError):
            build_network([], [Site(1, "a", 0.1)])
        with pytest.raises(NetworkError):
            build_network([Segment("a", ((0, 0), (1, 0)), 1.0)], [])


class TestAdditivity:
    def test_figure1_weights_pass(self, figure1):
        assert validate_additivity(figure1, tolerance=1e-9).passed

    def test_violation_reported_at_confluence(self):
        net = build_network(_figure1_segments(r3=0.9), [Site(1, "r3", 0.5)])
        report = validate_additivity(net, tolerance=1e-9)
        assert not report.passed
        flagged = {v.segment_id: v for v in report.violations}
        assert "r3" in flagged
        assert flagged["r3"].residual == pytest.approx(0.05)

    def test_headwaters_never_flagged(self):
        net = build_network(_figure1_segments(r1=5.0, r3=5.5), [Site(1, "r1", 0.5)])
        report = validate_additivity(net)
        assert {v.segment_id for v in report.violations} <= {"r3", "r5"}
        assert "r1" not in {v.segment_id for v in report.violations}


class TestUpstreamSegments:
    def test_midpoint_of_r3(self, figure1):
        covered = upstream_segments(figure1, Location("r3", 0.5))
        assert covered == {"r3": (0.0, 0.5), "r1": (0.0, 1.0), "r2": (0.0, 1.0)}

    def test_start_of_headwater(self, figure1):
        assert upstream_segments(figure1, Location("r1", 0.0)) == {"r1": (0.0, 0.0)}

    def test_outlet_end_covers_every_segment(self, figure1):
        covered = upstream_segments(figure1, Location("r5", 1.0))
        assert set(covered) == {"r1", "r2", "r3", "r4", "r5"}
        assert all(interval == (0.0, 1.0) for interval in covered.values())

    def test_unknown_location(self, figure1):
        with pytest.raises(NetworkError):
            upstream_segments(figure1, Location("nope", 0.5))


class TestFlowConnectivity:
    def test_parallel_headwaters_unconnected(self, figure1):
        assert is_flow_connected(figure1, figure1.site(2), figure1.site(4)) is FlowRelation.NONE

    def test_upstream_relation(self, figure1):
        r1_mid, r3_mid = figure1.site(2), figure1.site(6)
        assert is_flow_connected(figure1, r1_mid, r3_mid) is FlowRelation.A_UPSTREAM_OF_B
        assert is_flow_connected(figure1, r3_mid, r1_mid) is FlowRelation.B_UPSTREAM_OF_A

    def test_reflexive(self, figure1):
        site = figure1.site(3)
        assert is_flow_connected(figure1, site, site) is FlowRelation.SAME_LOCATION

    def test_matches_path_enumeration(self, figure1):
        """Segment-level relation agrees with brute-force reachability in the segment graph"""
        graph = nx.DiGraph(
            [(s.id, s.downstream_id) for s in figure1.segments.values() if s.downstream_id]
        )
        for a, b in itertools.product(figure1.sites, repeat=2):
            relation = is_flow_connected(figure1, a, b)
            if a.segment_id == b.segment_id:
                assert relation is not FlowRelation.NONE
                continue
            a_up = nx.has_path(graph, a.segment_id, b.segment_id)
            b_up = nx.has_path(graph, b.segment_id, a.segment_id)
            expected = (
                FlowRelation.A_UPSTREAM_OF_B
                if a_up
                else FlowRelation.B_UPSTREAM_OF_A if b_up else FlowRelation.NONE
            )
            assert relation is expected


class TestHydrologicDistance:
    def test_r1_mid_to_r3_mid(self, figure1):
        d = hydrologic_distance(figure1, figure1.site(2), figure1.site(6))
        assert d == pytest.approx(0.5 * R1 + 0.5 * R3)
        assert d == pytest.approx(0.4977, abs=1e-4)

    def test_same_segment(self, line_network):
        a, b = line_network.sites
        assert hydrologic_distance(line_network, a, b) == pytest.approx(0.5)
        assert hydrologic_distance(line_network, b, a) == pytest.approx(0.5)

    def test_site_to_itself(self, figure1):
        assert hydrologic_distance(figure1, figure1.site(7), figure1.site(7)) == 0.0

    def test_unconnected_pair_raises(self, figure1):
        with pytest.raises(NetworkError, match="not flow-connected"):
            hydrologic_distance(figure1, figure1.site(2), figure1.site(8))

    def test_additive_along_path(self, figure1):
        a, b, c = figure1.site(2), figure1.site(6), figure1.site(10)
        d_ab = hydrologic_distance(figure1, a, b)
        d_bc = hydrologic_distance(figure1, b, c)
        assert hydrologic_distance(figure1, a, c) == pytest.approx(d_ab + d_bc)

    def test_flow_structure_matches_pairwise_queries(self, figure1):
        structure = figure1.flow_structure
        assert np.array_equal(np.isnan(structure.distance), ~structure.connected)
        np.testing.assert_allclose(
            np.nan_to_num(structure.distance), np.nan_to_num(structure.distance.T)
        )
        assert structure.connected[1, 5] and not structure.connected[1, 3]


class TestSiteCoordinates:
    def test_midpoint(self, figure1):
        assert site_coordinates(figure1, figure1.site(2)) == pytest.approx((0.15, 0.75))

    def test_endpoints(self, figure1):
        assert site_coordinates(figure1, Location("r1", 0.0)) == pytest.approx((0.0, 1.0))
        assert site_coordinates(figure1, Location("r5", 1.0)) == pytest.approx((0.4, 0.0))


class TestNetworkFiles:
    def test_write_and_load(self, figure1, tmp_path):
        write_network_csv(tmp_path / "network.csv", figure1)
        write_sites_csv(tmp_path / "sites.csv", figure1)
        loaded = load_network(tmp_path / "network.csv", tmp_path / "sites.csv")
        assert loaded.outlet_id == "r5"
        assert [s.id for s in loaded.sites] == [s.id for s in figure1.sites]
        assert loaded.segment("r3").weight == 0.85
        assert loaded.segment("r1").polyline == figure1.segment("r1").polyline

    def test_polyline_file_format(self, tmp_path):
        path = tmp_path / "network.csv"
        path.write_text(
            "segment_id,weight,downstream_id,polyline\n"
            "up,1.0,down,0:0;1:0;1:1\n"
            "down,1.0,,1:1;2:1\n"
        )
        segments = {s.id: s for s in segments_from_csv(path)}
        assert segments["up"].length == pytest.approx(2.0)
        assert segments["down"].downstream_id is None

    def test_missing_columns(self, tmp_path):
        path = tmp_path / "network.csv"
        path.write_text("segment_id,weight\nup,1.0\n")
        with pytest.raises(DataError, match="missing columns"):
            segments_from_csv(path)

    def test_ids_with_commas_round_trip(self, tmp_path):
        segments = [
            Segment("a,1", ((0.0, 1.0), (0.0, 0.5)), 1.0, "out"),
            Segment("out", ((0.0, 0.5), (0.0, 0.0)), 1.0),
        ]
        net = build_network(segments, [Site(1, "a,1", 0.5), Site(2, "out", 0.25)])
        write_network_csv(tmp_path / "network.csv", net)
        write_sites_csv(tmp_path / "sites.csv", net)
        loaded = load_network(tmp_path / "network.csv", tmp_path / "sites.csv")
        assert loaded.segment("a,1").downstream_id == "out"
        assert [(s.id, s.segment_id, s.arc_position) for s in loaded.sites] == [
            (1, "a,1", 0.5),
            (2, "out", 0.25),
        ]

    def test_bad_site_row_names_the_row(self, tmp_path):
        path = tmp_path / "sites.csv"
        path.write_text("site_id,segment_id,arc_position\n1,r1,0.5\ntwo,r2,0.5\n")
        with pytest.raises(DataError, match="row 2"):
            sites_from_csv(path)

    def test_bad_arc_position(self, tmp_path):
        path = tmp_path / "sites.csv"
        path.write_text("site_id,segment_id,arc_position\n1,r1,half\n")
        with pytest.raises(DataError, match="'half'"):
            sites_from_csv(path)
