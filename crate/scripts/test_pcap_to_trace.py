import struct

import pcap_to_trace as p2t


def ipv4_tcp(src, dst, sport, dport, vlan=False):
    ip = bytes([0x45, 0, 0, 40, 0, 0, 0, 0, 64, 6, 0, 0]) + bytes(src) + bytes(dst)
    tcp = struct.pack("!HH", sport, dport) + b"\0" * 16
    tag = b"\x81\x00\x00\x05" if vlan else b""
    return b"\0" * 12 + tag + b"\x08\x00" + ip + tcp


def write_pcap(path, packets, nanos=False):
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    with open(path, "wb") as f:
        f.write(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 65535, 1))
        for ts, frame in packets:
            frac = round((ts % 1) * (1e9 if nanos else 1e6))
            f.write(struct.pack("<IIII", int(ts), frac, len(frame), len(frame)))
            f.write(frame)


def test_buckets_and_rates(tmp_path):
    a = ipv4_tcp([10, 0, 0, 1], [10, 0, 0, 2], 1234, 80)
    b = ipv4_tcp([10, 0, 0, 3], [10, 0, 0, 4], 53, 53, vlan=True)
    pkts = [(5.00, a), (5.05, a), (5.12, b), (5.31, a)]
    cap = tmp_path / "c.pcap"
    write_pcap(cap, pkts, nanos=True)
    out = tmp_path / "t.csv"
    p2t.main([str(cap), "-o", str(out), "--bucket-ms", "100"])
    lines = out.read_text().splitlines()
    assert lines[0] == p2t.HEADER
    assert lines[1:] == [
        "0, 10.0.0.1:1234>10.0.0.2:80/tcp, 20",
        "300, 10.0.0.1:1234>10.0.0.2:80/tcp, 10",
        "100, 10.0.0.3:53>10.0.0.4:53/tcp, 10",
    ]


def test_top_and_pair_aggregation(tmp_path):
    a1 = ipv4_tcp([10, 0, 0, 1], [10, 0, 0, 2], 1, 80)
    a2 = ipv4_tcp([10, 0, 0, 1], [10, 0, 0, 2], 2, 80)
    b = ipv4_tcp([10, 0, 0, 3], [10, 0, 0, 4], 5, 5)
    cap = tmp_path / "c.pcap"
    write_pcap(cap, [(0.0, a1), (0.01, a2), (0.02, b)])
    out = tmp_path / "t.csv"
    p2t.main([str(cap), "-o", str(out), "--by-pair", "--top", "1"])
    assert out.read_text().splitlines()[1:] == ["0, 10.0.0.1>10.0.0.2, 20"]
