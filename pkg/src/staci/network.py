# ABOUTME: Directed stream network with polyline segments, flow weights and observation sites
# ABOUTME: Computes hydrologic distances, upstream sets, flow connectivity and weight additivity
"""Stream network topology and hydrologic geometry"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import networkx as nx
import numpy as np
import pandas as pd

from staci.exceptions import DataError, NetworkError, ValidationError
from staci.utils import write_table_csv

logger = logging.getLogger(__name__)

Point = tuple[float, float]


@dataclass(frozen=True)
class Segment:
    """A directed stream segment; the polyline runs from its upstream to its downstream end."""

    id: str
    polyline: tuple[Point, ...]
    weight: float
    downstream_id: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("Segment id cannot be empty")
        points = tuple((float(x), float(y)) for x, y in self.polyline)
        if len(points) < 2:
            raise ValidationError(f"Segment {self.id}: polyline needs at least 2 points")
        for p, q in zip(points, points[1:], strict=False):
            if p == q:
                raise ValidationError(
                    f"Segment {self.id}: consecutive polyline points must differ, got {p} twice"
                )
        if not self.weight > 0 or not math.isfinite(self.weight):
            raise ValidationError(f"Segment {self.id}: weight must be positive, got {self.weight}")
        object.__setattr__(self, "polyline", points)
        object.__setattr__(self, "weight", float(self.weight))
        if self.downstream_id == "":
            object.__setattr__(self, "downstream_id", None)

    @cached_property
    def cumulative_lengths(self) -> np.ndarray:
        """Arc length from the upstream end to each polyline vertex."""
        pts = np.asarray(self.polyline)
        steps = np.hypot(*np.diff(pts, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(steps)])

    @property
    def length(self) -> float:
        return float(self.cumulative_lengths[-1])


@dataclass(frozen=True)
class Site:
    """An observation site addressed by segment and arc fraction from the upstream end."""

    id: int
    segment_id: str
    arc_position: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.arc_position <= 1.0:
            raise ValidationError(
                f"Site {self.id}: arc_position must be in [0, 1], got {self.arc_position}"
            )
        object.__setattr__(self, "arc_position", float(self.arc_position))


class Location(NamedTuple):
    """A point on the network that is not necessarily an observation site."""

    segment_id: str
    arc_position: float


class FlowRelation(Enum):
    NONE = "none"
    A_UPSTREAM_OF_B = "a_upstream_of_b"
    B_UPSTREAM_OF_A = "b_upstream_of_a"
    SAME_LOCATION = "same_location"


@dataclass(frozen=True)
class AdditivityViolation:
    segment_id: str
    weight: float
    upstream_sum: float

    @property
    def residual(self) -> float:
        return abs(self.weight - self.upstream_sum)


@dataclass
class AdditivityReport:
    tolerance: float
    violations: list[AdditivityViolation] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations


@dataclass(frozen=True)
class FlowStructure:
    """Pairwise site relations in site order.

    upstream[i, j] is True when site i lies upstream of (or at) site j; distance[i, j] is the
    hydrologic distance for flow-connected pairs and NaN otherwise.
    """

    upstream: np.ndarray
    distance: np.ndarray

    @property
    def connected(self) -> np.ndarray:
        return self.upstream | self.upstream.T


class StreamNetwork:
    """Validated, immutable stream network. Build with build_network()."""

    def __init__(self, segments: dict[str, Segment], sites: tuple[Site, ...], graph: nx.DiGraph):
        self._segments = segments
        self._sites = sites
        self._graph = graph
        self._site_index = {site.id: i for i, site in enumerate(sites)}
        self.outlet_id = next(s.id for s in segments.values() if s.downstream_id is None)

    @property
    def segments(self) -> dict[str, Segment]:
        return dict(self._segments)

    @property
    def sites(self) -> tuple[Site, ...]:
        return self._sites

    @property
    def n_sites(self) -> int:
        return len(self._sites)

    def segment(self, segment_id: str) -> Segment:
        try:
            return self._segments[segment_id]
        except KeyError:
            raise NetworkError(f"Unknown segment: {segment_id!r}") from None

    def site(self, site_id: int) -> Site:
        try:
            return self._sites[self._site_index[site_id]]
        except KeyError:
            raise NetworkError(f"Unknown site: {site_id!r}") from None

    def site_index(self, site_id: int) -> int:
        try:
            return self._site_index[site_id]
        except KeyError:
            raise NetworkError(f"Unknown site: {site_id!r}") from None

    def site_weight(self, site: Site) -> float:
        return self.segment(site.segment_id).weight

    def site_columns(self) -> list[str]:
        """Column names used by observation files, in site order."""
        return [f"site_{site.id}" for site in self._sites]

    def upstream_children(self, segment_id: str) -> list[str]:
        """Segments that flow directly into segment_id."""
        self.segment(segment_id)
        return sorted(self._graph.predecessors(segment_id))

    def ancestors(self, segment_id: str) -> set[str]:
        """All segments whose downstream path reaches segment_id."""
        self.segment(segment_id)
        return nx.ancestors(self._graph, segment_id)

    def is_headwater(self, segment_id: str) -> bool:
        return not self.upstream_children(segment_id)

    def path_length(
        self, from_segment: str, from_offset: float, to_segment: str, to_offset: float
    ) -> float:
        """Distance along the stream between two points given as length offsets.

        Offsets are measured from each segment's upstream end and may be negative (points on a
        virtual extension above a headwater). The first point must be upstream of the second.
        """
        if from_segment == to_segment:
            return abs(to_offset - from_offset)
        try:
            path = nx.shortest_path(self._graph, from_segment, to_segment)
        except nx.NetworkXNoPath:
            raise NetworkError(
                f"Segment {from_segment!r} does not drain into {to_segment!r}"
            ) from None
        intermediate = sum(self._segments[s].length for s in path[1:-1])
        return (self._segments[from_segment].length - from_offset) + intermediate + to_offset

    @cached_property
    def flow_structure(self) -> FlowStructure:
        n = self.n_sites
        upstream = np.zeros((n, n), dtype=bool)
        distance = np.full((n, n), np.nan)
        for i, a in enumerate(self._sites):
            for j, b in enumerate(self._sites):
                relation = is_flow_connected(self, a, b)
                if relation is FlowRelation.NONE:
                    continue
                if relation in (FlowRelation.A_UPSTREAM_OF_B, FlowRelation.SAME_LOCATION):
                    upstream[i, j] = True
                distance[i, j] = hydrologic_distance(self, a, b)
        return FlowStructure(upstream=upstream, distance=distance)


def build_network(segments: list[Segment], sites: list[Site]) -> StreamNetwork:
    """Validate segments and sites and return an immutable StreamNetwork."""
    if not segments:
        raise NetworkError("Network needs at least one segment")
    if not sites:
        raise NetworkError("Network needs at least one site")

    by_id: dict[str, Segment] = {}
    for seg in segments:
        if seg.id in by_id:
            raise NetworkError(f"Duplicate segment id: {seg.id!r}")
        by_id[seg.id] = seg

    graph = nx.DiGraph()
    graph.add_nodes_from(by_id)
    for seg in segments:
        if seg.downstream_id is None:
            continue
        if seg.downstream_id not in by_id:
            raise NetworkError(
                f"Segment {seg.id!r} points downstream to unknown segment {seg.downstream_id!r}",
                recovery_hint="Leave downstream_id empty for the outlet segment",
            )
        graph.add_edge(seg.id, seg.downstream_id)

    if not nx.is_directed_acyclic_graph(graph):
        cycle = [edge[0] for edge in nx.find_cycle(graph)]
        raise NetworkError(f"Cycle detected in downstream pointers: {' -> '.join(cycle)}")

    outlets = [seg.id for seg in segments if seg.downstream_id is None]
    if len(outlets) != 1:
        raise NetworkError(
            f"Network must have exactly one outlet, found {len(outlets)}: {outlets}",
            recovery_hint="Every segment except the outlet needs a downstream_id",
        )
    unreachable = set(by_id) - nx.ancestors(graph, outlets[0]) - {outlets[0]}
    if unreachable:
        raise NetworkError(f"Segments do not reach the outlet: {sorted(unreachable)}")

    seen_sites: set[int] = set()
    for site in sites:
        if site.segment_id not in by_id:
            raise NetworkError(f"Site {site.id} lies on unknown segment {site.segment_id!r}")
        if site.id in seen_sites:
            raise NetworkError(f"Duplicate site id: {site.id}")
        seen_sites.add(site.id)

    net = StreamNetwork(by_id, tuple(sites), graph)
    logger.debug(
        f"Built network with {len(by_id)} segments, {len(sites)} sites, outlet {net.outlet_id}"
    )
    return net


def validate_additivity(net: StreamNetwork, tolerance: float = 1e-9) -> AdditivityReport:
    """Check that each confluence weight equals the sum of its immediate upstream weights."""
    report = AdditivityReport(tolerance=tolerance)
    for seg_id, seg in net.segments.items():
        children = net.upstream_children(seg_id)
        if not children:
            continue
        upstream_sum = sum(net.segment(c).weight for c in children)
        if abs(seg.weight - upstream_sum) > tolerance:
            report.violations.append(AdditivityViolation(seg_id, seg.weight, upstream_sum))
    for violation in report.violations:
        logger.warning(
            f"Additivity violated at {violation.segment_id}: weight {violation.weight} vs "
            f"upstream sum {violation.upstream_sum} (residual {violation.residual:.3g})"
        )
    return report


def upstream_segments(
    net: StreamNetwork, location: Site | Location
) -> dict[str, tuple[float, float]]:
    """Segments upstream of a location, each with the covered arc interval."""
    net.segment(location.segment_id)
    covered = {location.segment_id: (0.0, float(location.arc_position))}
    for seg_id in net.ancestors(location.segment_id):
        covered[seg_id] = (0.0, 1.0)
    return covered


def is_flow_connected(net: StreamNetwork, a: Site | Location, b: Site | Location) -> FlowRelation:
    """Directional flow relation between two locations."""
    if a.segment_id == b.segment_id:
        net.segment(a.segment_id)
        if a.arc_position == b.arc_position:
            return FlowRelation.SAME_LOCATION
        if a.arc_position < b.arc_position:
            return FlowRelation.A_UPSTREAM_OF_B
        return FlowRelation.B_UPSTREAM_OF_A
    if a.segment_id in net.ancestors(b.segment_id):
        return FlowRelation.A_UPSTREAM_OF_B
    if b.segment_id in net.ancestors(a.segment_id):
        return FlowRelation.B_UPSTREAM_OF_A
    return FlowRelation.NONE


def hydrologic_distance(net: StreamNetwork, a: Site | Location, b: Site | Location) -> float:
    """Distance along the stream between two flow-connected locations."""
    relation = is_flow_connected(net, a, b)
    if relation is FlowRelation.NONE:
        raise NetworkError(
            f"Locations on {a.segment_id!r} and {b.segment_id!r} are not flow-connected",
            recovery_hint="Check is_flow_connected() before asking for a distance",
        )
    if relation is FlowRelation.SAME_LOCATION:
        return 0.0
    up, down = (a, b) if relation is FlowRelation.A_UPSTREAM_OF_B else (b, a)
    up_len = net.segment(up.segment_id).length
    down_len = net.segment(down.segment_id).length
    return net.path_length(
        up.segment_id, up.arc_position * up_len, down.segment_id, down.arc_position * down_len
    )


def site_coordinates(net: StreamNetwork, s: Site | Location) -> Point:
    """Planar point at the site's arc fraction along its segment polyline."""
    seg = net.segment(s.segment_id)
    target = s.arc_position * seg.length
    pts = np.asarray(seg.polyline)
    cum = seg.cumulative_lengths
    return float(np.interp(target, cum, pts[:, 0])), float(np.interp(target, cum, pts[:, 1]))


# File formats


def _parse_polyline(text: str, segment_id: str) -> tuple[Point, ...]:
    points = []
    for pair in str(text).split(";"):
        pair = pair.strip()
        if not pair:
            continue
        x, sep, y = pair.partition(":")
        try:
            points.append((float(x), float(y)))
        except ValueError:
            raise DataError(f"Segment {segment_id}: bad polyline point {pair!r}") from None
    return tuple(points)


def segments_from_csv(path: str | Path) -> list[Segment]:
    """Read `segment_id, weight, downstream_id, polyline` rows."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Failed to read network file {path}: {e}") from e
    required = {"segment_id", "weight", "downstream_id", "polyline"}
    missing = required - set(frame.columns)
    if missing:
        raise DataError(f"Network file {path} is missing columns: {sorted(missing)}")

    segments = []
    for row in frame.itertuples(index=False):
        try:
            weight = float(row.weight)
        except ValueError:
            raise DataError(
                f"Segment {row.segment_id}: weight {row.weight!r} is not a number"
            ) from None
        segments.append(
            Segment(
                id=row.segment_id.strip(),
                polyline=_parse_polyline(row.polyline, row.segment_id),
                weight=weight,
                downstream_id=row.downstream_id.strip() or None,
            )
        )
    return segments


def sites_from_csv(path: str | Path) -> list[Site]:
    """Read `site_id, segment_id, arc_position` rows; row order is the dimension order."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Failed to read sites file {path}: {e}") from e
    missing = {"site_id", "segment_id", "arc_position"} - set(frame.columns)
    if missing:
        raise DataError(f"Sites file {path} is missing columns: {sorted(missing)}")

    sites = []
    for row_number, row in enumerate(frame.itertuples(index=False), 1):
        try:
            site_id = int(row.site_id)
            arc_position = float(row.arc_position)
        except ValueError:
            raise DataError(
                f"{path}: row {row_number} has site_id {row.site_id!r} and arc_position "
                f"{row.arc_position!r}; expected an integer and a number",
            ) from None
        segment_id = row.segment_id.strip()
        sites.append(Site(id=site_id, segment_id=segment_id, arc_position=arc_position))
    return sites


def load_network(network_path: str | Path, sites_path: str | Path) -> StreamNetwork:
    return build_network(segments_from_csv(network_path), sites_from_csv(sites_path))


def write_network_csv(path: str | Path, net: StreamNetwork) -> None:
    rows = [
        {
            "segment_id": seg.id,
            "weight": seg.weight,
            "downstream_id": seg.downstream_id or "",
            "polyline": ";".join(f"{x!r}:{y!r}" for x, y in seg.polyline),
        }
        for seg in net.segments.values()
    ]
    write_table_csv(
        Path(path),
        pd.DataFrame(rows, columns=["segment_id", "weight", "downstream_id", "polyline"]),
    )


def write_sites_csv(path: str | Path, net: StreamNetwork) -> None:
    frame = pd.DataFrame(
        {
            "site_id": [s.id for s in net.sites],
            "segment_id": [s.segment_id for s in net.sites],
            "arc_position": [s.arc_position for s in net.sites],
        }
    )
    write_table_csv(Path(path), frame)
