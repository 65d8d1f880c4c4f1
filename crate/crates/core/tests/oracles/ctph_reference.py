#!/usr/bin/env python3
"""Reference piecewise fuzzy hash used to freeze expected digests in the Rust tests.

Written independently of the Rust implementation. Run it directly to print the
pinned values used by `tests/ctph_reference.rs`.
"""

ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
WINDOW = 7
MASK = 0xFFFFFFFF
FNV_OFFSET = 0x811C9DC5
FNV_PRIME = 0x01000193
MAX_DIGEST = 64
MIN_BLOCK = 3


def rolling_sums(data):
    """Rolling hash value after each byte, recomputed from the window each time."""
    out = []
    for i in range(len(data)):
        window = [0] * WINDOW
        for k in range(WINDOW):
            j = i - (WINDOW - 1) + k
            window[k] = data[j] if j >= 0 else 0
        h1 = sum(window) & MASK
        h2 = sum((k + 1) * window[k] for k in range(WINDOW)) & MASK
        h3 = 0
        for k in range(WINDOW):
            h3 = ((h3 << 5) & MASK) ^ window[k]
        out.append((h1 + h2 + h3) & MASK)
    return out


def piece_digest(data, rolls, block, limit):
    out = []
    h = FNV_OFFSET
    pending = False
    for i, c in enumerate(data):
        h = ((h ^ c) * FNV_PRIME) & MASK
        pending = True
        if rolls[i] % block == block - 1 and len(out) < limit - 1:
            out.append(ALPHABET[h & 63])
            h = FNV_OFFSET
            pending = False
    if pending:
        out.append(ALPHABET[h & 63])
    return "".join(out)


def ctph(data):
    if not data:
        return "0:"
    block = MIN_BLOCK
    while block * MAX_DIGEST < len(data):
        block *= 2
    rolls = rolling_sums(data)
    while True:
        digest = piece_digest(data, rolls, block, MAX_DIGEST)
        double = piece_digest(data, rolls, block * 2, MAX_DIGEST // 2)
        if len(digest) < MAX_DIGEST // 2 and block > MIN_BLOCK:
            block //= 2
            continue
        return "%d:%s:%s" % (block, digest, double)


def levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(
        levenshtein(a[1:], b) + 1,
        levenshtein(a, b[1:]) + 1,
        levenshtein(a[1:], b[1:]) + (a[0] != b[0]),
    )


def lcg_opcodes(seed, n):
    x = seed
    out = []
    for _ in range(n):
        x = (x * 1103515245 + 12345) % (1 << 31)
        out.append((x >> 16) % 64)
    return out


if __name__ == "__main__":
    base = lcg_opcodes(42, 200)
    edited = list(base)
    edited[100] = (edited[100] + 1) % 64
    a = ctph(base)
    b = ctph(edited)
    print("base   ", a)
    print("edited ", b)
    ba, da, _ = a.split(":")
    bb, db, _ = b.split(":")
    assert ba == bb
    m = max(len(da), len(db))
    # DP edit distance (the recursive oracle is too slow at digest length)
    prev = list(range(len(db) + 1))
    for i, ca in enumerate(da, 1):
        cur = [i]
        for j, cb in enumerate(db, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    print("distance", prev[-1], "mss", 1 - prev[-1] / m)
    print("ascii  ", ctph(b"The quick brown fox jumps over the lazy dog" * 10))
    print("small  ", ctph(bytes(range(64))))
    print("long   ", ctph(bytes(lcg_opcodes(7, 5000))))
