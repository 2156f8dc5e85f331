#!/usr/bin/env python3
"""Pure-integer deterministic ECDSA (RFC 6979) over P-256 with SHA-256.

Independent of the Rust implementation; used to freeze the known-key
vectors asserted in tests/vectors.rs. Prints r||s as hex and base64url.

usage: rfc6979_p256.py <private-key-hex> <message-hex>
"""
import base64
import hashlib
import hmac
import sys

P = 0xFFFFFFFF00000001000000000000000000000000FFFFFFFFFFFFFFFFFFFFFFFF
A = P - 3
N = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
G = (
    0x6B17D1F2E12C4247F8BCE6E563A440F277037D812DEB33A0F4A13945D898C296,
    0x4FE342E2FE1A7F9B8EE7EB4A7C0F9E162BCE33576B315ECECBB6406837BF51F5,
)


def add(p1, p2):
    if p1 is None:
        return p2
    if p2 is None:
        return p1
    if p1[0] == p2[0] and (p1[1] + p2[1]) % P == 0:
        return None
    if p1 == p2:
        lam = (3 * p1[0] * p1[0] + A) * pow(2 * p1[1], -1, P) % P
    else:
        lam = (p2[1] - p1[1]) * pow(p2[0] - p1[0], -1, P) % P
    x = (lam * lam - p1[0] - p2[0]) % P
    return (x, (lam * (p1[0] - x) - p1[1]) % P)


def mul(k, pt):
    acc = None
    while k:
        if k & 1:
            acc = add(acc, pt)
        pt = add(pt, pt)
        k >>= 1
    return acc


def bits2int(b):
    return int.from_bytes(b, "big")


def nonce(x, h1):
    xb = x.to_bytes(32, "big")
    hb = (bits2int(h1) % N).to_bytes(32, "big")
    v = b"\x01" * 32
    k = b"\x00" * 32
    k = hmac.new(k, v + b"\x00" + xb + hb, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    k = hmac.new(k, v + b"\x01" + xb + hb, hashlib.sha256).digest()
    v = hmac.new(k, v, hashlib.sha256).digest()
    while True:
        v = hmac.new(k, v, hashlib.sha256).digest()
        cand = bits2int(v)
        if 1 <= cand < N:
            return cand
        k = hmac.new(k, v + b"\x00", hashlib.sha256).digest()
        v = hmac.new(k, v, hashlib.sha256).digest()


def sign(x, msg):
    h1 = hashlib.sha256(msg).digest()
    k = nonce(x, h1)
    r = mul(k, G)[0] % N
    s = pow(k, -1, N) * (bits2int(h1) + x * r) % N
    return r, s


if __name__ == "__main__":
    x = int(sys.argv[1], 16)
    msg = bytes.fromhex(sys.argv[2])
    r, s = sign(x, msg)
    raw = r.to_bytes(32, "big") + s.to_bytes(32, "big")
    pub = mul(x, G)
    print("pub_x", format(pub[0], "064x"))
    print("pub_y", format(pub[1], "064x"))
    print("sig_hex", raw.hex())
    print("sig_b64url", base64.urlsafe_b64encode(raw).rstrip(b"=").decode())
