import gzip

import pytest
from hypothesis import given, strategies as st

from hybridnids.errors import FlowParseError
from hybridnids.flows import (
    ClassLabel,
    FlowRecord,
    format_flags,
    format_flow_line,
    is_attack,
    parse_flags,
    parse_flow_line,
    parse_label,
    stream_flows,
    write_flows,
)

from conftest import make_flow

LINE = "2016-03-19 00:03:04.512,1.25,42.219.153.7,143.72.8.137,53,53,UDP,.AP.SF,0,0,2,152,background"


def test_parse_line_fields():
    f = parse_flow_line(LINE)
    assert f.end_time == pytest.approx(1458345784.512)
    assert f.duration == 1.25
    assert (f.src_ip, f.dst_ip, f.src_port, f.dst_port) == ("42.219.153.7", "143.72.8.137", 53, 53)
    assert f.protocol == "UDP"
    # flags only make sense for TCP
    assert f.tcp_flags == 0
    assert (f.packets, f.bytes, f.label) == (2, 152, ClassLabel.BACKGROUND)


def test_timestamps_are_utc(monkeypatch):
    monkeypatch.setenv("TZ", "America/New_York")
    f = parse_flow_line("2016-03-19 00:00:00,0,1.1.1.1,2.2.2.2,1,2,TCP,....S.,0,0,1,40,dos")
    assert f.end_time == 1458345600.0


@pytest.mark.parametrize("code,name", [("6", "TCP"), ("17", "UDP"), ("1", "ICMP"), ("tcp", "TCP"),
                                       ("GRE", "GRE"), ("47", "47")])
def test_protocol_names(code, name):
    line = LINE.replace(",UDP,", f",{code},")
    assert parse_flow_line(line).protocol == name


def test_flags_roundtrip():
    assert parse_flags("....S.") == 0b10
    assert parse_flags("UAPRSF") == 63
    assert format_flags(parse_flags(".AP.SF")) == ".AP.SF"
    for bad in ("S.....", "....S", "xxxxxx"):
        with pytest.raises(ValueError):
            parse_flags(bad)


def test_labels():
    assert parse_label("anomaly-spam") is ClassLabel.SPAM
    assert is_attack("dos") and not is_attack(ClassLabel.BACKGROUND)
    with pytest.raises(ValueError):
        parse_label("spam")


@pytest.mark.parametrize("line,needle", [
    ("a,b,c", "wrong column count (3, expected 13)"),
    (LINE.replace("1.25", "-1"), "duration"),
    (LINE.replace("42.219.153.7", "999.1.1.1"), "does not appear"),
    (LINE.replace(",53,53,", ",53,70000,"), "port"),
    (LINE.replace("background", "benign"), "unknown class label"),
    (LINE.replace("2016-03-19 00:03:04.512", "2016/03/19"), "timestamp"),
    (LINE.replace(",2,152,", ",0,152,"), "packets"),
])
def test_parse_errors(line, needle):
    with pytest.raises(FlowParseError) as err:
        parse_flow_line(line, 7)
    assert err.value.line_number == 7
    assert str(err.value).startswith("line 7: ")
    assert needle in str(err.value)


def test_stream_reports_line_number(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text(LINE + "\n\n" + LINE + "\nbroken\n")
    it = stream_flows(p)
    assert next(it).dst_port == 53
    assert next(it).dst_port == 53
    with pytest.raises(FlowParseError, match="line 4"):
        next(it)


def test_gzip_input(tmp_path):
    p = tmp_path / "f.csv.gz"
    with gzip.open(p, "wt") as fh:
        fh.write(LINE + "\n" + LINE + "\n")
    assert len(list(stream_flows(p))) == 2


def test_record_validation():
    with pytest.raises(ValueError):
        make_flow(packets=0)
    assert make_flow(proto="UDP", flags=5).tcp_flags == 0


timestamps = st.floats(1.4e9, 1.6e9).map(lambda x: round(x, 6))


@given(t=timestamps, d=st.floats(0, 1e5, allow_nan=False), port=st.integers(0, 65535),
       flags=st.integers(0, 63), pkts=st.integers(1, 10**9),
       label=st.sampled_from(list(ClassLabel)))
def test_format_parse_roundtrip(t, d, port, flags, pkts, label):
    f = make_flow(t=t, duration=d, sport=port, flags=flags, packets=pkts, byts=pkts * 40, label=label)
    g = parse_flow_line(format_flow_line(f))
    assert g.end_time == pytest.approx(f.end_time, abs=1e-6)
    assert format_flow_line(g) == format_flow_line(f)
    assert (g.duration, g.tcp_flags, g.label) == (f.duration, f.tcp_flags, f.label)


def test_write_then_stream(tmp_path):
    flows = [make_flow(t=1458345600 + i, sport=1000 + i) for i in range(5)]
    assert write_flows(flows, tmp_path / "x.csv") == 5
    back = list(stream_flows(tmp_path / "x.csv"))
    assert [f.src_port for f in back] == [1000, 1001, 1002, 1003, 1004]
    assert isinstance(back[0], FlowRecord)
