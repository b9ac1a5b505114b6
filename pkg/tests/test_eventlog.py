"""Event log model, CSV/XES parsing, enrichment and serialization."""
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfpm.eventlog import (
    EVENT_LEVEL,
    KIND_INTEGER,
    KIND_REAL,
    KIND_TEXT,
    TRACE_LEVEL,
    CsvLogConfig,
    Event,
    EventLog,
    LogError,
    LogParseError,
    Trace,
    csv_config_for,
    enrich_durations,
    format_timestamp,
    parse_csv,
    parse_timestamp,
    parse_xes,
    to_csv,
)
from cfpm.repair import TABLE1_CSV, repair_csv_config

TABLE1_XES = """<?xml version="1.0" encoding="UTF-8"?>
<log xmlns="http://www.xes-standard.org/">
  <extension name="Concept" prefix="concept" uri="http://www.xes-standard.org/concept.xesext"/>
  <trace>
    <string key="concept:name" value="c1"/>
    <int key="team size" value="2"/>
    <int key="model" value="7"/>
    <event>
      <string key="identity:id" value="e1"/>
      <string key="concept:name" value="inspection"/>
      <date key="time:timestamp" value="2020-04-01T08:00:00"/>
      <int key="num test" value="42"/>
    </event>
    <event>
      <string key="identity:id" value="e2"/>
      <string key="concept:name" value="repair"/>
      <date key="time:timestamp" value="2020-04-04T07:00:00"/>
      <int key="num test" value="42"/>
    </event>
    <event>
      <string key="identity:id" value="e3"/>
      <string key="concept:name" value="final test"/>
      <date key="time:timestamp" value="2020-04-28T08:00:00"/>
      <int key="num test" value="42"/>
    </event>
  </trace>
  <trace>
    <string key="concept:name" value="c2"/>
    <int key="team size" value="3"/>
    <int key="model" value="5"/>
    <event>
      <string key="identity:id" value="e4"/>
      <string key="concept:name" value="inspection"/>
      <date key="time:timestamp" value="2020-05-01T08:00:00"/>
      <int key="num test" value="26"/>
    </event>
    <event>
      <string key="identity:id" value="e5"/>
      <string key="concept:name" value="repair"/>
      <date key="time:timestamp" value="2020-05-03T11:00:00"/>
      <int key="num test" value="26"/>
    </event>
    <event>
      <string key="identity:id" value="e6"/>
      <string key="concept:name" value="final test"/>
      <date key="time:timestamp" value="2020-05-19T20:00:00"/>
      <int key="num test" value="26"/>
    </event>
  </trace>
</log>
"""


class TestTimestamps:
    def test_t_and_space_separators_agree(self):
        assert parse_timestamp("2020-04-01T08:00:00") == parse_timestamp("2020-04-01 08:00:00")

    def test_round_trip_with_milliseconds(self):
        ms = parse_timestamp("2020-04-01T08:00:00.123")
        assert format_timestamp(ms) == "2020-04-01T08:00:00.123"

    def test_utc_offset_and_z(self):
        assert parse_timestamp("2020-04-01T08:00:00Z") == parse_timestamp("2020-04-01T08:00:00")
        assert parse_timestamp("2020-04-01T09:00:00+01:00") == parse_timestamp("2020-04-01T08:00:00")

    def test_pre_epoch_rejected(self):
        with pytest.raises(ValueError):
            parse_timestamp("1961-01-01T00:00:00")


class TestParseCsv:
    def test_table1_snapshot(self, table1_log):
        assert table1_log.case_ids == ("c1", "c2")
        assert [len(t.events) for t in table1_log.traces] == [3, 3]
        c1 = table1_log.trace("c1")
        assert c1.attrs == {"team size": 2, "model": 7}
        assert [e.activity for e in c1.events] == ["inspection", "repair", "final test"]
        assert c1.events[0].attrs == {"num test": 42}
        assert table1_log.schema[(TRACE_LEVEL, "model")] == KIND_INTEGER
        assert table1_log.schema[(EVENT_LEVEL, "num test")] == KIND_INTEGER

    def test_empty_input_with_header(self):
        header = TABLE1_CSV.splitlines()[0]
        log = parse_csv(header + "\n", repair_csv_config())
        assert log.traces == ()

    def test_rows_out_of_order_sort_identically(self, table1_log):
        lines = TABLE1_CSV.splitlines()
        shuffled = [lines[0]] + [lines[3], lines[1], lines[6], lines[2], lines[5], lines[4]]
        log = parse_csv("\n".join(shuffled) + "\n", repair_csv_config())
        assert log == table1_log

    def test_missing_mandatory_column(self):
        config = repair_csv_config()
        broken = TABLE1_CSV.replace("case id", "case")
        with pytest.raises(LogParseError, match="case id"):
            parse_csv(broken, config)

    def test_unparseable_timestamp_reports_row(self):
        broken = TABLE1_CSV.replace("2020-05-03T11:00:00", "not-a-date")
        with pytest.raises(LogParseError, match="row 6"):
            parse_csv(broken, repair_csv_config())

    def test_trace_column_varying_within_case(self):
        broken = TABLE1_CSV.replace("e2,c1,repair,2020-04-04T07:00:00,2,42,7",
                                    "e2,c1,repair,2020-04-04T07:00:00,9,42,7")
        with pytest.raises(LogParseError, match="team size"):
            parse_csv(broken, repair_csv_config())

    def test_duplicate_event_id(self):
        broken = TABLE1_CSV.replace("e6", "e5")
        with pytest.raises(LogParseError, match="duplicate event id"):
            parse_csv(broken, repair_csv_config())

    def test_undeclared_column_rejected(self):
        config = CsvLogConfig("case id", "activity name", "timestamp", "event id")
        with pytest.raises(LogParseError, match="neither core nor declared"):
            parse_csv(TABLE1_CSV, config)

    def test_leading_comments_skipped(self, table1_log):
        assert parse_csv("# a comment\n# another\n" + TABLE1_CSV, repair_csv_config()) == table1_log

    def test_real_kind_inferred_for_mixed_column(self):
        text = (
            "event id,case id,activity name,timestamp,score\n"
            "e1,c1,a,2020-01-01T00:00:00,1\n"
            "e2,c1,b,2020-01-01T01:00:00,1.5\n"
        )
        config = CsvLogConfig("case id", "activity name", "timestamp", "event id",
                              event_attr_cols=("score",))
        log = parse_csv(text, config)
        assert log.schema[(EVENT_LEVEL, "score")] == KIND_REAL
        assert log.traces[0].events[0].attrs["score"] == 1.0

    def test_kind_override_keeps_numeric_text(self):
        text = (
            "event id,case id,activity name,timestamp,code\n"
            "e1,c1,a,2020-01-01T00:00:00,007\n"
        )
        config = CsvLogConfig("case id", "activity name", "timestamp", "event id",
                              event_attr_cols=("code",), kinds={"code": KIND_TEXT})
        log = parse_csv(text, config)
        assert log.traces[0].events[0].attrs["code"] == "007"


class TestParseXes:
    def test_minimal_document(self):
        doc = (
            '<log><trace><string key="concept:name" value="c1"/>'
            '<event><string key="concept:name" value="a"/>'
            '<date key="time:timestamp" value="2020-01-01T00:00:00"/></event>'
            "</trace></log>"
        )
        log, ignored = parse_xes(doc)
        assert len(log.traces) == 1 and len(log.traces[0].events) == 1
        assert log.traces[0].events[0].activity == "a"
        assert ignored == 0

    def test_table1_equivalence_with_csv(self, table1_log):
        log, ignored = parse_xes(TABLE1_XES)
        assert ignored == 1  # the extension element
        assert log == table1_log

    def test_unordered_events_resorted(self):
        doc = (
            '<log><trace><string key="concept:name" value="c1"/>'
            '<event><string key="concept:name" value="late"/>'
            '<date key="time:timestamp" value="2020-01-02T00:00:00"/></event>'
            '<event><string key="concept:name" value="early"/>'
            '<date key="time:timestamp" value="2020-01-01T00:00:00"/></event>'
            "</trace></log>"
        )
        log, _ = parse_xes(doc)
        assert [e.activity for e in log.traces[0].events] == ["early", "late"]

    def test_synthesized_event_ids(self):
        doc = (
            '<log><trace><string key="concept:name" value="c1"/>'
            '<event><string key="concept:name" value="a"/>'
            '<date key="time:timestamp" value="2020-01-01T00:00:00"/></event>'
            '<event><string key="concept:name" value="b"/>'
            '<date key="time:timestamp" value="2020-01-02T00:00:00"/></event>'
            "</trace></log>"
        )
        log, _ = parse_xes(doc)
        assert [e.event_id for e in log.traces[0].events] == ["e1", "e2"]

    def test_malformed_xml(self):
        with pytest.raises(LogParseError, match="malformed XML"):
            parse_xes("<log><trace>")

    def test_event_missing_activity(self):
        doc = (
            '<log><trace><string key="concept:name" value="c1"/>'
            '<event><date key="time:timestamp" value="2020-01-01T00:00:00"/></event>'
            "</trace></log>"
        )
        with pytest.raises(LogParseError, match="concept:name"):
            parse_xes(doc)

    def test_event_missing_timestamp(self):
        doc = (
            '<log><trace><string key="concept:name" value="c1"/>'
            '<event><string key="concept:name" value="a"/></event>'
            "</trace></log>"
        )
        with pytest.raises(LogParseError, match="time:timestamp"):
            parse_xes(doc)


class TestEnrichDurations:
    def test_inspection_duration_is_71_hours(self, enriched_log):
        c1 = enriched_log.trace("c1")
        assert c1.events[0].attrs["duration"] == 71
        assert c1.events[1].attrs["duration"] == 577
        assert "duration" not in c1.events[2].attrs

    def test_single_event_trace_gets_nothing(self):
        log = EventLog(
            (Trace("c1", (Event("e1", "a", 0),)),),
            {},
        )
        enriched = enrich_durations(log, "d")
        assert enriched.traces[0].events[0].attrs == {}

    def test_equal_timestamps_give_zero(self):
        log = EventLog((Trace("c1", (Event("e1", "a", 5000), Event("e2", "b", 5000))),), {})
        enriched = enrich_durations(log, "d", "seconds")
        assert enriched.traces[0].events[0].attrs["d"] == 0

    def test_half_up_rounding(self):
        # 90 minutes = 1.5 hours -> 2; 30 minutes -> 1 (in hours, half-up)
        log = EventLog(
            (Trace("c1", (Event("e1", "a", 0), Event("e2", "b", 90 * 60_000),
                          Event("e3", "c", 120 * 60_000))),),
            {},
        )
        enriched = enrich_durations(log, "d", "hours")
        assert enriched.traces[0].events[0].attrs["d"] == 2
        assert enriched.traces[0].events[1].attrs["d"] == 1

    def test_name_collision(self, enriched_log):
        with pytest.raises(LogError, match="already exists"):
            enrich_durations(enriched_log, "duration")

    def test_preserves_counts_and_attrs(self, table1_log, enriched_log):
        assert len(enriched_log.traces) == len(table1_log.traces)
        assert enriched_log.event_count() == table1_log.event_count()
        for before, after in zip(table1_log.traces, enriched_log.traces):
            assert before.attrs == after.attrs
            for b, a in zip(before.events, after.events):
                assert set(b.attrs).issubset(set(a.attrs))
                for k, v in b.attrs.items():
                    assert a.attrs[k] == v

    def test_unknown_unit(self, table1_log):
        with pytest.raises(LogError, match="unknown duration unit"):
            enrich_durations(table1_log, "d", "fortnights")


class TestRoundTrip:
    def test_table1_round_trip(self, table1_log):
        text = to_csv(table1_log)
        assert parse_csv(text, csv_config_for(table1_log)) == table1_log

    def test_enriched_round_trip(self, enriched_log):
        text = to_csv(enriched_log)
        assert parse_csv(text, csv_config_for(enriched_log)) == enriched_log

    def test_header_comment_survives_reparse(self, table1_log):
        text = to_csv(table1_log, header_comment="seed=1 config=abc")
        assert text.startswith("# seed=1 config=abc\n")
        assert parse_csv(text, csv_config_for(table1_log)) == table1_log


# --- property tests -----------------------------------------------------------

_text_value = st.text(
    alphabet="abcdefghij ,\"'x", min_size=1, max_size=8
).map(str.strip).filter(bool)


@st.composite
def small_logs(draw):
    n_cases = draw(st.integers(1, 4))
    traces = []
    used_ts = set()
    for c in range(n_cases):
        n_events = draw(st.integers(1, 4))
        stamps = draw(
            st.lists(
                st.integers(0, 2**40).filter(lambda t: t not in used_ts),
                min_size=n_events, max_size=n_events, unique=True,
            )
        )
        used_ts.update(stamps)
        events = []
        for k, ts in enumerate(sorted(stamps)):
            attrs = {}
            if draw(st.booleans()):
                attrs["ea"] = draw(st.floats(allow_nan=False, allow_infinity=False, width=32))
            if draw(st.booleans()):
                attrs["label"] = draw(_text_value)
            events.append(Event(f"e{c}_{k}", draw(st.sampled_from("abc")), ts, attrs))
        trace_attrs = {}
        if draw(st.booleans()):
            trace_attrs["ta"] = draw(st.integers(-10**6, 10**6))
        traces.append(Trace(f"c{c}", tuple(events), trace_attrs))
    schema = {
        (TRACE_LEVEL, "ta"): KIND_INTEGER,
        (EVENT_LEVEL, "ea"): KIND_REAL,
        (EVENT_LEVEL, "label"): KIND_TEXT,
    }
    return EventLog(tuple(traces), schema)


@settings(max_examples=60, deadline=None)
@given(small_logs())
def test_round_trip_property(log):
    text = to_csv(log)
    assert parse_csv(text, csv_config_for(log)) == log


@settings(max_examples=40, deadline=None)
@given(small_logs(), st.randoms(use_true_random=False))
def test_shuffle_within_case_is_invariant(log, rnd):
    lines = to_csv(log).splitlines()
    header, rows = lines[0], lines[1:]
    by_case: dict[str, list[str]] = {}
    for row in rows:  # case id is the second column; values contain no commas here
        by_case.setdefault(row.split(",")[1], []).append(row)
    shuffled_rows = []
    for case_rows in by_case.values():
        rnd.shuffle(case_rows)  # timestamps are unique, so order carries no information
        shuffled_rows.extend(case_rows)
    shuffled = "\n".join([header] + shuffled_rows) + "\n"
    assert parse_csv(shuffled, csv_config_for(log)) == log
