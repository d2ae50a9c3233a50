"""Binary PGM (P5) / PPM (P6) reading and writing, 8-bit only.

Images are float arrays in [0, 1] shaped ``[C, H, W]`` with C = 1 or 3.
"""
import numpy as np


class NetpbmError(ValueError):
    pass


def write_image(path, image):
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise NetpbmError(f"expected [1|3, H, W], got {img.shape}")
    if img.min() < 0 or img.max() > 1:
        raise NetpbmError("pixel values must lie in [0, 1]")
    c, h, w = img.shape
    q = np.round(255.0 * img).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    payload = q.transpose(1, 2, 0).tobytes()
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(payload)


def _header_tokens(buf):
    """Yield (token, end_offset) for the 4 header fields, skipping comments."""
    pos, n = 0, len(buf)
    for _ in range(4):
        while pos < n:
            ch = buf[pos:pos + 1]
            if ch == b"#":
                while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise NetpbmError("truncated header")
        yield buf[start:pos], pos


def read_image(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens = list(_header_tokens(buf))
    magic = tokens[0][0]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r}")
    try:
        w, h, maxval = (int(t) for t, _ in tokens[1:])
    except ValueError as exc:
        raise NetpbmError("malformed header") from exc
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    if w <= 0 or h <= 0:
        raise NetpbmError(f"bad extents {w}x{h}")
    # exactly one whitespace byte separates the header from the payload
    start = tokens[3][1] + 1
    c = 1 if magic == b"P5" else 3
    need = w * h * c
    payload = buf[start:start + need]
    if len(payload) != need:
        raise NetpbmError(f"truncated payload: expected {need} bytes, got {len(payload)}")
    q = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c)
    return q.transpose(2, 0, 1).astype(np.float64) / 255.0
