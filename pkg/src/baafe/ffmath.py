"""Arithmetic over GF(2^61 - 1): polynomials, interpolation and the key codec.

Values are plain Python ints kept in canonical form ``0 <= v < PRIME``; the
:class:`FieldElement` subclass only adds operator overloading for callers who
want ``a * b`` to reduce automatically.  The hot paths (Horner evaluation and
interpolation) work on raw ints.

Most functions accept a ``prime`` keyword so small worked examples can be run
in e.g. GF(97); production code always uses the default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from baafe.errors import DuplicateX, KeyTooLong, MalformedShares, WrongCount

PRIME = (1 << 61) - 1

#: octets of key payload carried by one coefficient (7 * 8 = 56 < 61 bits)
CHUNK_OCTETS = 7
HEADER_OCTETS = 2
MAX_KEY_OCTETS = 224


class FieldElement(int):
    """An int that stays reduced modulo :data:`PRIME` under arithmetic."""

    __slots__ = ()

    def __new__(cls, value: int = 0):
        return super().__new__(cls, int(value) % PRIME)

    def __add__(self, other):
        return FieldElement(int(self) + int(other))

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElement(int(self) - int(other))

    def __rsub__(self, other):
        return FieldElement(int(other) - int(self))

    def __mul__(self, other):
        return FieldElement(int(self) * int(other))

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-int(self))

    def __pow__(self, exponent, modulo=None):
        return FieldElement(pow(int(self), int(exponent), PRIME))

    def inverse(self) -> "FieldElement":
        if int(self) == 0:
            raise ZeroDivisionError("zero has no inverse")
        return FieldElement(pow(int(self), PRIME - 2, PRIME))

    def __truediv__(self, other):
        return self * FieldElement(other).inverse()

    def __rtruediv__(self, other):
        return FieldElement(other) * self.inverse()

    def hex(self) -> str:
        return format(int(self), "x")

    @classmethod
    def fromhex(cls, text: str) -> "FieldElement":
        value = int(text, 16)
        if not 0 <= value < PRIME:
            raise ValueError(f"{text!r} is not a canonical field element")
        return cls(value)

    def __repr__(self):
        return f"FieldElement({int(self)})"


@dataclass(frozen=True)
class Polynomial:
    """Coefficients ``c_0 .. c_d`` (index = power of x).

    The degree is nominal: the leading coefficient may be zero.
    """

    coeffs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(int(c) for c in self.coeffs))
        if not self.coeffs:
            raise ValueError("a polynomial needs at least one coefficient")

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def __call__(self, x: int) -> int:
        return poly_eval(self, x)

    def to_json(self) -> str:
        return json.dumps([format(c, "x") for c in self.coeffs])

    @classmethod
    def from_json(cls, text: str) -> "Polynomial":
        return cls(tuple(FieldElement.fromhex(h) for h in json.loads(text)))


@dataclass(frozen=True)
class KeyMaterial:
    """Key octets plus their SHA-256 digest, checked on construction."""

    data: bytes
    hash: bytes = field(default=b"")

    def __post_init__(self):
        data = bytes(self.data)
        object.__setattr__(self, "data", data)
        if not 1 <= len(data) <= MAX_KEY_OCTETS:
            raise ValueError(f"key length must be 1..{MAX_KEY_OCTETS} octets, got {len(data)}")
        digest = key_hash(data)
        if self.hash and bytes(self.hash) != digest:
            raise ValueError("key hash does not match key octets")
        object.__setattr__(self, "hash", digest)

    def __repr__(self):
        # never print key octets
        return f"KeyMaterial(len={len(self.data)}, hash={self.hash.hex()[:16]}...)"


def key_hash(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def poly_eval(p: Polynomial | Sequence[int], x: int, *, prime: int = PRIME) -> int:
    """Evaluate ``sum c_i x^i`` with Horner's rule."""
    coeffs = p.coeffs if isinstance(p, Polynomial) else p
    x = int(x) % prime
    acc = 0
    for c in reversed(coeffs):
        acc = (acc * x + c) % prime
    return acc


def _batch_inverse(values: Sequence[int], prime: int) -> list[int]:
    # Montgomery's trick: one modular exponentiation for the whole list.
    prefix = []
    acc = 1
    for v in values:
        prefix.append(acc)
        acc = acc * v % prime
    inv = pow(acc, prime - 2, prime)
    out = [0] * len(values)
    for i in range(len(values) - 1, -1, -1):
        out[i] = inv * prefix[i] % prime
        inv = inv * values[i] % prime
    return out


def lagrange_interpolate(
    points: Iterable[tuple[int, int]], d: int, *, prime: int = PRIME
) -> Polynomial:
    """Return the unique polynomial of degree <= d through ``d + 1`` points.

    Raises:
        WrongCount: if the number of points is not ``d + 1``.
        DuplicateX: if two points share an x-coordinate.
    """
    pts = [(int(x) % prime, int(y) % prime) for x, y in points]
    if len(pts) != d + 1:
        raise WrongCount(f"need exactly {d + 1} points, got {len(pts)}")
    xs = [x for x, _ in pts]
    if len(set(xs)) != len(xs):
        raise DuplicateX("x-coordinates must be pairwise distinct")

    k = len(pts)
    # master(x) = prod (x - x_i), coefficients low to high
    master = [1]
    for xi in xs:
        nxt = [0] * (len(master) + 1)
        for j, m in enumerate(master):
            nxt[j + 1] = (nxt[j + 1] + m) % prime
            nxt[j] = (nxt[j] - xi * m) % prime
        master = nxt

    denoms = []
    for i, xi in enumerate(xs):
        acc = 1
        for j, xj in enumerate(xs):
            if j != i:
                acc = acc * (xi - xj) % prime
        denoms.append(acc)
    inv_denoms = _batch_inverse(denoms, prime)

    result = [0] * k
    for i, (xi, yi) in enumerate(pts):
        scale = yi * inv_denoms[i] % prime
        if scale == 0:
            continue
        # synthetic division master / (x - xi), highest coefficient first
        carry = 0
        for j in range(k, 0, -1):
            carry = (master[j] + carry * xi) % prime
            result[j - 1] = (result[j - 1] + carry * scale) % prime
    return Polynomial(tuple(result))


def key_capacity(d: int) -> int:
    """Largest key (octets) that fits into ``d + 1`` coefficients."""
    return (d + 1) * CHUNK_OCTETS - HEADER_OCTETS


def key_to_coeffs(k: KeyMaterial, d: int) -> Polynomial:
    """Lay out ``len || key || zero padding`` across ``d + 1`` 7-octet chunks.

    Chunk ``i`` (big-endian) becomes coefficient ``c_i``.  Every coefficient is
    needed to recover the key.
    """
    data = k.data
    if len(data) > key_capacity(d):
        raise KeyTooLong(
            f"{len(data) + HEADER_OCTETS} octets do not fit in {d + 1} coefficients "
            f"({(d + 1) * CHUNK_OCTETS} available)"
        )
    blob = len(data).to_bytes(HEADER_OCTETS, "big") + data
    blob = blob.ljust((d + 1) * CHUNK_OCTETS, b"\x00")
    return Polynomial(
        tuple(
            int.from_bytes(blob[i : i + CHUNK_OCTETS], "big")
            for i in range(0, len(blob), CHUNK_OCTETS)
        )
    )


def header_plausible(c0: int, d: int) -> bool:
    """Cheap necessary condition for ``c0`` to start a valid key encoding."""
    if c0 >> (8 * CHUNK_OCTETS):
        return False
    length = c0 >> (8 * (CHUNK_OCTETS - HEADER_OCTETS))
    return 1 <= length <= min(key_capacity(d), MAX_KEY_OCTETS)


def coeffs_to_key(p: Polynomial) -> KeyMaterial:
    """Inverse of :func:`key_to_coeffs`.

    Raises:
        MalformedShares: a coefficient is wider than one chunk, the length
            header is zero or overruns the payload, or padding is nonzero.
    """
    limit = 1 << (8 * CHUNK_OCTETS)
    chunks = []
    for c in p.coeffs:
        if not 0 <= c < limit:
            raise MalformedShares("coefficient exceeds chunk width")
        chunks.append(int(c).to_bytes(CHUNK_OCTETS, "big"))
    blob = b"".join(chunks)
    length = int.from_bytes(blob[:HEADER_OCTETS], "big")
    if length == 0:
        raise MalformedShares("zero-length key")
    end = HEADER_OCTETS + length
    if end > len(blob) or length > MAX_KEY_OCTETS:
        raise MalformedShares(f"length header {length} exceeds payload")
    if any(blob[end:]):
        raise MalformedShares("nonzero padding")
    return KeyMaterial(blob[HEADER_OCTETS:end])
