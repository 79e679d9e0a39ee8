#!/usr/bin/env python3
"""Convert a classic libpcap capture into a `#dsamp-trace v1` rate trace.

Packets are grouped into flows by 5-tuple (or by IP pair with --by-pair) and
counted per bucket. Each output line is `bucket_start_ms, flow_id, rate_pps`,
with bucket offsets measured from the first packet of the capture.

    python3 scripts/pcap_to_trace.py capture.pcap -o trace.csv --bucket-ms 100 --top 200
"""

import argparse
import collections
import ipaddress
import struct
import sys

HEADER = "#dsamp-trace v1"

MAGICS = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_LINUX_SLL = 113
PROTO_NAMES = {6: "tcp", 17: "udp", 1: "icmp", 58: "icmp6"}


def read_packets(stream):
    """Yield (timestamp_s, linktype, frame bytes)."""
    head = stream.read(24)
    if len(head) < 24 or head[:4] not in MAGICS:
        raise ValueError("not a classic pcap file (pcapng is not supported)")
    endian, tick = MAGICS[head[:4]]
    linktype = struct.unpack(endian + "I", head[20:24])[0]
    record = struct.Struct(endian + "IIII")
    while True:
        rh = stream.read(record.size)
        if len(rh) < record.size:
            return
        sec, frac, incl, _orig = record.unpack(rh)
        data = stream.read(incl)
        if len(data) < incl:
            return
        yield sec + frac * tick, linktype, data


def network_payload(linktype, frame):
    """Return (ethertype, l3 bytes) or None."""
    if linktype == LINKTYPE_RAW:
        if not frame:
            return None
        return (0x0800 if frame[0] >> 4 == 4 else 0x86DD), frame
    if linktype == LINKTYPE_LINUX_SLL:
        if len(frame) < 16:
            return None
        return struct.unpack("!H", frame[14:16])[0], frame[16:]
    if linktype != LINKTYPE_ETHERNET or len(frame) < 14:
        return None
    ethertype, off = struct.unpack("!H", frame[12:14])[0], 14
    while ethertype in (0x8100, 0x88A8) and len(frame) >= off + 4:
        ethertype, off = struct.unpack("!H", frame[off + 2 : off + 4])[0], off + 4
    return ethertype, frame[off:]


def flow_key(ethertype, l3, by_pair):
    if ethertype == 0x0800 and len(l3) >= 20:
        ihl = (l3[0] & 0x0F) * 4
        proto = l3[9]
        src, dst = ipaddress.IPv4Address(l3[12:16]), ipaddress.IPv4Address(l3[16:20])
        l4 = l3[ihl:]
    elif ethertype == 0x86DD and len(l3) >= 40:
        proto = l3[6]
        src, dst = ipaddress.IPv6Address(l3[8:24]), ipaddress.IPv6Address(l3[24:40])
        l4 = l3[40:]
    else:
        return None
    if by_pair:
        return f"{src}>{dst}"
    sport = dport = 0
    if proto in (6, 17) and len(l4) >= 4:
        sport, dport = struct.unpack("!HH", l4[:4])
    name = PROTO_NAMES.get(proto, str(proto))
    return f"{src}:{sport}>{dst}:{dport}/{name}"


def build_trace(packets, bucket_ms, by_pair):
    counts = collections.defaultdict(collections.Counter)
    totals = collections.Counter()
    t0 = None
    for ts, linktype, frame in packets:
        l3 = network_payload(linktype, frame)
        if l3 is None:
            continue
        key = flow_key(*l3, by_pair)
        if key is None:
            continue
        if t0 is None:
            t0 = ts
        bucket = int((ts - t0) * 1000.0 // bucket_ms)
        counts[key][bucket] += 1
        totals[key] += 1
    return counts, totals


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("pcap")
    ap.add_argument("-o", "--out", help="output file (default stdout)")
    ap.add_argument("--bucket-ms", type=float, default=100.0)
    ap.add_argument("--top", type=int, help="keep only the N flows with most packets")
    ap.add_argument("--min-packets", type=int, default=1)
    ap.add_argument("--by-pair", action="store_true", help="aggregate flows by source/destination address")
    args = ap.parse_args(argv)
    if args.bucket_ms <= 0:
        ap.error("--bucket-ms must be positive")

    with open(args.pcap, "rb") as f:
        counts, totals = build_trace(read_packets(f), args.bucket_ms, args.by_pair)

    keep = [k for k, n in totals.most_common() if n >= args.min_packets]
    if args.top is not None:
        keep = keep[: args.top]
    scale = 1000.0 / args.bucket_ms
    lines = [HEADER]
    for key in keep:
        for bucket in sorted(counts[key]):
            rate = counts[key][bucket] * scale
            lines.append(f"{bucket * args.bucket_ms:g}, {key}, {rate:g}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    print(f"{len(keep)} flows, {sum(totals[k] for k in keep)} packets", file=sys.stderr)


if __name__ == "__main__":
    main()
