"""Bit-partitioned peer identifiers and ring distances.

A peer id packs an ``m``-bit semantic cluster id (``sid``, the hash of the
cluster name) above an ``n``-bit node id (``nid``, the hash of the address).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

_DIGEST_BITS = 160


@dataclass(frozen=True)
class IdParams:
    m: int = 16
    n: int = 48

    def __post_init__(self):
        if not (1 <= self.m <= 64 and 1 <= self.n <= 64):
            raise ValueError(f"id widths out of range: m={self.m}, n={self.n}")

    @property
    def k(self) -> int:
        return self.m + self.n


def hash_bits(text: str, bits: int) -> int:
    """Most significant ``bits`` bits of SHA-1(text), read big-endian."""
    if not 1 <= bits <= 64:
        raise ValueError(f"bits must be in [1, 64], got {bits}")
    digest = hashlib.sha1(text.encode("utf-8")).digest()
    return int.from_bytes(digest, "big") >> (_DIGEST_BITS - bits)


@dataclass(frozen=True, order=True)
class PeerId:
    # field order makes the dataclass ordering agree with the packed value
    sid: int
    nid: int
    n: int = 48
    m: int = 16

    def __post_init__(self):
        if not (0 <= self.sid < 1 << self.m and 0 <= self.nid < 1 << self.n):
            raise ValueError(f"id fields out of range: {self.sid}, {self.nid}")

    @property
    def packed(self) -> int:
        return (self.sid << self.n) | self.nid

    @classmethod
    def unpack(cls, value: int, p: IdParams) -> "PeerId":
        return cls(value >> p.n, value & ((1 << p.n) - 1), p.n, p.m)

    def __str__(self):
        return f"{self.sid:0{-(-self.m // 4)}x}:{self.nid:0{-(-self.n // 4)}x}"

    __repr__ = __str__


@dataclass(frozen=True)
class ClusterKey:
    value: int

    @classmethod
    def of(cls, cluster: str, p: IdParams) -> "ClusterKey":
        return cls(hash_bits(cluster, p.m))


def make_peer_id(cluster: str, address: str, p: IdParams = IdParams()) -> PeerId:
    if not cluster or not address:
        raise ValueError("cluster and address must be non-empty")
    return PeerId(hash_bits(cluster, p.m), hash_bits(address, p.n), p.n, p.m)


def ring_distance(a: int, b: int, bits: int) -> int:
    size = 1 << bits
    d = (a - b) % size
    return min(d, size - d)
