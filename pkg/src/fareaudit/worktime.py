"""Reconstruct standby / en-route / on-trip time and hours under both definitions.

Sessions give the envelope of logged-in time. Trips carve en-route and on-trip
intervals out of it; whatever remains inside the envelope is standby, the
waiting time one working-time definition counts and the other does not.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass
from typing import Iterable, Sequence

from .model import (
    DEFAULT_TIMEZONE,
    ActivitySegment,
    ActivityState,
    AppSession,
    MS_PER_HOUR,
    Timestamp,
    TripRecord,
    TripStatus,
    month_window,
)

Interval = tuple[int, int]  # [start_ms, end_ms)


class HoursDefinition(enum.Enum):
    TRIBUNAL = "tribunal"  # standby + en_route + on_trip
    PLATFORM = "platform"  # en_route + on_trip only


_STATES_FOR = {
    HoursDefinition.TRIBUNAL: frozenset(
        {ActivityState.STANDBY, ActivityState.EN_ROUTE, ActivityState.ON_TRIP}
    ),
    HoursDefinition.PLATFORM: frozenset({ActivityState.EN_ROUTE, ActivityState.ON_TRIP}),
}


@dataclass(frozen=True)
class Timeline:
    """Non-overlapping, time-sorted segments plus the trips found outside sessions."""

    driver_id: str
    segments: tuple[ActivitySegment, ...]
    orphan_trips: tuple[TripRecord, ...]


# ---------------------------------------------------------------------------
# Interval algebra on integer milliseconds


def merge_intervals(intervals: Iterable[Interval]) -> list[Interval]:
    out: list[Interval] = []
    for start, end in sorted(intervals):
        if end <= start:
            continue
        if out and start <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], end))
        else:
            out.append((start, end))
    return out


def subtract_intervals(base: Sequence[Interval], holes: Sequence[Interval]) -> list[Interval]:
    """base minus holes; both must be merged (disjoint, sorted)."""
    out: list[Interval] = []
    hi = 0
    for start, end in base:
        cursor = start
        while hi < len(holes) and holes[hi][1] <= cursor:
            hi += 1
        j = hi
        while j < len(holes) and holes[j][0] < end:
            hs, he = holes[j]
            if hs > cursor:
                out.append((cursor, hs))
            cursor = max(cursor, he)
            if he >= end:
                break
            j += 1
        if cursor < end:
            out.append((cursor, end))
    return out


def _overlap_ms(intervals: Iterable[Interval], lo: int, hi: int) -> int:
    total = 0
    for start, end in intervals:
        s, e = max(start, lo), min(end, hi)
        if e > s:
            total += e - s
    return total


# ---------------------------------------------------------------------------
# Segment construction


def _trip_intervals(trip: TripRecord) -> tuple[Interval | None, Interval | None]:
    """(en_route, on_trip) intervals for one trip, either possibly None."""
    if trip.status is TripStatus.COMPLETED:
        en = (trip.accept_ts.epoch_ms, trip.pickup_ts.epoch_ms)
        on = (trip.pickup_ts.epoch_ms, trip.dropoff_ts.epoch_ms)
        return (en if en[1] > en[0] else None), (on if on[1] > on[0] else None)
    # cancelled: time from accept to the last known event counts as en route
    if trip.accept_ts is None:
        return None, None
    last = trip.dropoff_ts or trip.pickup_ts
    if last is None or last.epoch_ms <= trip.accept_ts.epoch_ms:
        return None, None
    return (trip.accept_ts.epoch_ms, last.epoch_ms), None


def build_segments(
    sessions: Sequence[AppSession], trips: Sequence[TripRecord], driver_id: str | None = None
) -> Timeline:
    """Derive the activity timeline for one driver.

    On-trip time wins over en-route wherever records overlap; standby is the
    session envelope minus both. Trip time falling outside every session is
    still emitted (pay-bearing time is never dropped) and the trip is flagged
    as an orphan.
    """
    if driver_id is None:
        driver_id = (
            sessions[0].driver_id
            if sessions
            else trips[0].driver_id
            if trips
            else ""
        )

    envelopes = merge_intervals((s.login_ts.epoch_ms, s.logout_ts.epoch_ms) for s in sessions)

    en_route_raw: list[Interval] = []
    on_trip_raw: list[Interval] = []
    orphans: list[TripRecord] = []
    for trip in trips:
        en, on = _trip_intervals(trip)
        spans = [iv for iv in (en, on) if iv is not None]
        if en is not None:
            en_route_raw.append(en)
        if on is not None:
            on_trip_raw.append(on)
        if spans:
            lo = min(iv[0] for iv in spans)
            hi = max(iv[1] for iv in spans)
            covered = _overlap_ms(envelopes, lo, hi)
            if covered < hi - lo:
                orphans.append(trip)

    on_trip = merge_intervals(on_trip_raw)
    en_route = subtract_intervals(merge_intervals(en_route_raw), on_trip)
    busy = merge_intervals(list(on_trip) + list(en_route))
    standby = subtract_intervals(envelopes, busy)

    segments = sorted(
        [(iv, ActivityState.ON_TRIP) for iv in on_trip]
        + [(iv, ActivityState.EN_ROUTE) for iv in en_route]
        + [(iv, ActivityState.STANDBY) for iv in standby]
    , key=lambda pair: pair[0])

    built = tuple(
        ActivitySegment(driver_id, Timestamp(start), Timestamp(end), state)
        for (start, end), state in segments
    )
    return Timeline(driver_id, built, tuple(orphans))


# ---------------------------------------------------------------------------
# Hours


def hours_worked(
    segments: Sequence[ActivitySegment],
    period: tuple[Timestamp, Timestamp],
    definition: HoursDefinition,
) -> float:
    """Hours inside [period start, period end) under the chosen definition."""
    lo, hi = period[0].epoch_ms, period[1].epoch_ms
    states = _STATES_FOR[definition]
    total_ms = _overlap_ms(
        ((s.start_ts.epoch_ms, s.end_ts.epoch_ms) for s in segments if s.state in states),
        lo,
        hi,
    )
    return total_ms / MS_PER_HOUR


@dataclass(frozen=True, slots=True)
class UtilisationDaily:
    standby_hours: float
    en_route_hours: float
    on_trip_hours: float
    active_days: int

    @property
    def total_hours(self) -> float:
        return self.standby_hours + self.en_route_hours + self.on_trip_hours


def utilisation_daily(
    segments: Sequence[ActivitySegment], month: str, tz: str = DEFAULT_TIMEZONE
) -> UtilisationDaily:
    """Average hours per active day in each state over one calendar month.

    An active day is a local date touched by any segment. With no activity the
    averages are zero and active_days is 0.
    """
    lo, hi = month_window(month, tz)
    lo_ms, hi_ms = lo.epoch_ms, hi.epoch_ms

    totals = {state: 0 for state in ActivityState}
    days: set[dt.date] = set()
    for seg in segments:
        s = max(seg.start_ts.epoch_ms, lo_ms)
        e = min(seg.end_ts.epoch_ms, hi_ms)
        if e <= s:
            continue
        totals[seg.state] += e - s
        day = Timestamp(s).local_date(tz)
        last_day = Timestamp(e - 1).local_date(tz)
        while day <= last_day:
            days.add(day)
            day += dt.timedelta(days=1)

    n = len(days)
    if n == 0:
        return UtilisationDaily(0.0, 0.0, 0.0, 0)
    return UtilisationDaily(
        standby_hours=totals[ActivityState.STANDBY] / MS_PER_HOUR / n,
        en_route_hours=totals[ActivityState.EN_ROUTE] / MS_PER_HOUR / n,
        on_trip_hours=totals[ActivityState.ON_TRIP] / MS_PER_HOUR / n,
        active_days=n,
    )


def state_hours(
    segments: Sequence[ActivitySegment],
    period: tuple[Timestamp, Timestamp],
) -> dict[ActivityState, float]:
    """Per-state hours inside a period; building block for reports."""
    lo, hi = period[0].epoch_ms, period[1].epoch_ms
    totals = {state: 0 for state in ActivityState}
    for seg in segments:
        s = max(seg.start_ts.epoch_ms, lo)
        e = min(seg.end_ts.epoch_ms, hi)
        if e > s:
            totals[seg.state] += e - s
    return {state: ms / MS_PER_HOUR for state, ms in totals.items()}
