#!/usr/bin/env python3
"""Regenerates the DICOM-lite fixtures in this directory.

Written with struct only, independent of the C++ writer, so the fixtures can
check the parser against bytes it did not produce. See README.md for layouts.
"""
import pathlib
import struct

HERE = pathlib.Path(__file__).resolve().parent
EXPLICIT_LE = "1.2.840.10008.1.2.1"
LONG_VRS = {b"OB", b"OD", b"OF", b"OL", b"OV", b"OW", b"SQ", b"SV", b"UC", b"UN", b"UR", b"UT", b"UV"}


def element(group, elem, vr, value):
    head = struct.pack("<HH", group, elem) + vr
    if vr in LONG_VRS:
        return head + struct.pack("<HI", 0, len(value)) + value
    return head + struct.pack("<H", len(value)) + value


def text(s, pad=b" "):
    b = s.encode("ascii")
    return b + pad if len(b) % 2 else b


def us(v):
    return struct.pack("<H", v)


def meta(ts):
    body = element(0x0002, 0x0001, b"OB", b"\x00\x01")
    body += element(0x0002, 0x0002, b"UI", text("1.2.840.10008.5.1.4.1.1.2", b"\x00"))
    body += element(0x0002, 0x0010, b"UI", text(ts, b"\x00"))
    return element(0x0002, 0x0000, b"UL", struct.pack("<I", len(body))) + body


def image(rows, cols, pixels, signed, slope=None, intercept=None, extra=b"", ts=EXPLICIT_LE):
    out = b"\x00" * 128 + b"DICM" + meta(ts)
    out += element(0x0008, 0x0060, b"CS", text("CT"))
    out += extra
    out += element(0x0028, 0x0002, b"US", us(1))
    out += element(0x0028, 0x0004, b"CS", text("MONOCHROME2"))
    out += element(0x0028, 0x0010, b"US", us(rows))
    out += element(0x0028, 0x0011, b"US", us(cols))
    out += element(0x0028, 0x0100, b"US", us(16))
    out += element(0x0028, 0x0101, b"US", us(16 if not signed else 12))
    out += element(0x0028, 0x0102, b"US", us(15 if not signed else 11))
    out += element(0x0028, 0x0103, b"US", us(1 if signed else 0))
    if intercept is not None:
        out += element(0x0028, 0x1052, b"DS", text(intercept))
    if slope is not None:
        out += element(0x0028, 0x1053, b"DS", text(slope))
    fmt = "<%d%s" % (len(pixels), "h" if signed else "H")
    out += element(0x7FE0, 0x0010, b"OW", struct.pack(fmt, *pixels))
    return out


def undefined_length_sequence():
    # (0008,1140) SQ, undefined length, one item of undefined length holding
    # a single (0008,1150) UI element, then item and sequence delimiters.
    inner = element(0x0008, 0x1150, b"UI", text("1.2.3", b"\x00"))
    item = struct.pack("<HHI", 0xFFFE, 0xE000, 0xFFFFFFFF) + inner + struct.pack("<HHI", 0xFFFE, 0xE00D, 0)
    return (struct.pack("<HH", 0x0008, 0x1140) + b"SQ" + struct.pack("<HI", 0, 0xFFFFFFFF) + item
            + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0))


def main():
    files = {
        # stored value = 100 * i; HU = stored - 1024
        "ct_4x4_unsigned.dcm": image(4, 4, [100 * i for i in range(16)], False, "1", "-1024"),
        # stored value = -300 + 50 * i; HU = 2 * stored - 5
        "ct_2x3_signed_sq.dcm": image(2, 3, [-300 + 50 * i for i in range(6)], True, "2.0", "-5",
                                      extra=undefined_length_sequence()),
        # no rescale tags: slope 1, intercept 0, flagged as defaulted
        "ct_2x2_no_rescale.dcm": image(2, 2, [0, 1, 65534, 65535], False),
        "implicit_vr_ts.dcm": image(2, 2, [1, 2, 3, 4], False, "1", "0", ts="1.2.840.10008.1.2"),
    }
    # undefined-length (encapsulated) PixelData under an explicit LE header
    enc = image(2, 2, [1, 2, 3, 4], False, "1", "0")
    cut = enc.rindex(b"\xe0\x7f\x10\x00")
    files["encapsulated_pixels.dcm"] = (enc[:cut] + struct.pack("<HH", 0x7FE0, 0x0010) + b"OB"
                                        + struct.pack("<HI", 0, 0xFFFFFFFF)
                                        + struct.pack("<HHI", 0xFFFE, 0xE000, 0)
                                        + struct.pack("<HHI", 0xFFFE, 0xE0DD, 0))
    full = files["ct_4x4_unsigned.dcm"]
    files["truncated_pixels.dcm"] = full[:-10]
    files["not_dicom.dcm"] = b"\x00" * 128 + b"NOPE" + b"\x00" * 16
    for name, data in files.items():
        (HERE / name).write_bytes(data)


if __name__ == "__main__":
    main()
