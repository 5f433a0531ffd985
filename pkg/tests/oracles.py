"""Independent scalar reference implementations used as test oracles.

Nothing here imports malgray; everything is plain Python loops so that the
array code in the package is checked against a separate derivation.
"""

import math
from decimal import ROUND_HALF_UP, Decimal


def hexdump_bytes(text, unknown=0):
    """Byte tokens of a hexdump in reading order; ``??`` becomes ``unknown``."""
    out = []
    for line in text.replace("\r\n", "\n").split("\n"):
        toks = line.split()
        for tok in toks[1:]:
            out.append(unknown if tok == "??" else int(tok, 16))
    return out


def byteplot(values, row_width, pad=0):
    """List of rows, each ``row_width`` long, last row padded."""
    rows = []
    for start in range(0, len(values), row_width):
        row = list(values[start:start + row_width])
        row += [pad] * (row_width - len(row))
        rows.append(row)
    return rows


def round_half_up(v):
    return int(Decimal(repr(v)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def bilinear_pixel(rows, out_w, out_h, x, y):
    src_h, src_w = len(rows), len(rows[0])
    sx = (x + 0.5) * (src_w / out_w) - 0.5
    sy = (y + 0.5) * (src_h / out_h) - 0.5
    sx = min(max(sx, 0.0), src_w - 1.0)
    sy = min(max(sy, 0.0), src_h - 1.0)
    x0, y0 = int(math.floor(sx)), int(math.floor(sy))
    x1, y1 = min(x0 + 1, src_w - 1), min(y0 + 1, src_h - 1)
    fx, fy = sx - x0, sy - y0
    top = rows[y0][x0] * (1 - fx) + rows[y0][x1] * fx
    bot = rows[y1][x0] * (1 - fx) + rows[y1][x1] * fx
    v = top * (1 - fy) + bot * fy
    return min(max(round_half_up(v), 0), 255)


def bilinear(rows, out_w, out_h):
    if out_w == len(rows[0]) and out_h == len(rows):
        return [list(r) for r in rows]
    return [[bilinear_pixel(rows, out_w, out_h, x, y) for x in range(out_w)] for y in range(out_h)]


def pgm(rows):
    h, w = len(rows), len(rows[0])
    return b"P5\n%d %d\n255\n" % (w, h) + bytes(v for r in rows for v in r)


def convert(text, row_width=16, out_w=256, out_h=256):
    return pgm(bilinear(byteplot(hexdump_bytes(text), row_width), out_w, out_h))


def conv2d(x, w, b, stride=1, pad=0, groups=1):
    """Nested-list cross-correlation: x[n][c][i][j], w[o][c/g][ki][kj]."""
    N, C, H, W = len(x), len(x[0]), len(x[0][0]), len(x[0][0][0])
    O, cg, KH, KW = len(w), len(w[0]), len(w[0][0]), len(w[0][0][0])
    og = O // groups
    OH = (H + 2 * pad - KH) // stride + 1
    OW = (W + 2 * pad - KW) // stride + 1
    out = [[[[0.0] * OW for _ in range(OH)] for _ in range(O)] for _ in range(N)]
    for n in range(N):
        for o in range(O):
            g = o // og
            for i in range(OH):
                for j in range(OW):
                    acc = b[o]
                    for c in range(cg):
                        for ki in range(KH):
                            for kj in range(KW):
                                r, s = i * stride + ki - pad, j * stride + kj - pad
                                if 0 <= r < H and 0 <= s < W:
                                    acc += x[n][g * cg + c][r][s] * w[o][c][ki][kj]
                    out[n][o][i][j] = acc
    return out


def vgg_param_count(plan, in_ch, side, hidden=1024, classes=9, k=3):
    """sum over convs of k*k*in*out + out, then the two dense layers."""
    total, c = 0, in_ch
    for block in plan:
        for out in block:
            total += k * k * c * out + out
            c = out
        side //= 2
    flat = c * side * side
    return total + flat * hidden + hidden + hidden * classes + classes


def adam_first_step(theta, g, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    mhat = m / (1 - b1)
    vhat = v / (1 - b2)
    return theta - lr * mhat / (math.sqrt(vhat) + eps)


M64 = 0xFFFFFFFFFFFFFFFF


def xoshiro_stream(seed):
    """Generator of xoshiro256** outputs, state filled by four SplitMix64 draws."""
    x = seed
    st = []
    for _ in range(4):
        x = (x + 0x9E3779B97F4A7C15) & M64
        z = x
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        st.append(z ^ (z >> 31))
    a, b, c, d = st

    def rotl(v, k):
        return ((v << k) | (v >> (64 - k))) & M64

    while True:
        yield (rotl((b * 5) & M64, 7) * 9) & M64
        t = (b << 17) & M64
        c ^= a
        d ^= b
        b ^= c
        a ^= d
        c ^= t
        d = rotl(d, 45)


def fisher_yates(n, seed):
    gen = xoshiro_stream(seed)
    perm = list(range(n))
    for i in range(n - 1, 0, -1):
        bound = i + 1
        limit = (2 ** 64 - bound) % bound
        r = next(gen)
        while r < limit:
            r = next(gen)
        j = r % bound
        perm[i], perm[j] = perm[j], perm[i]
    return perm
