"""Keyed permutations for categorical (Category-I) roots.

This is a functional stand-in for format-preserving encryption, not a
cryptographic construction.  It gives a deterministic keyed bijection on a
finite format domain, which is all the sanitizer needs: identical inputs map
identically and the output stays inside the input's format.

Two domain shapes are supported:

* :class:`TokenDomain` is an explicit finite list of tokens.  The permutation
  sorts the tokens by a keyed HMAC tag and pairs the i-th token with the i-th
  token of the shuffled order.
* :class:`DigitDomain` is the set of fixed-width decimal strings.  Values are
  permuted with a keyed balanced Feistel network over the smallest even bit
  width covering ``10**width`` and cycle-walked back into range.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from .errors import DomainError

FEISTEL_ROUNDS = 8


def _tag(key: bytes, namespace: str, *parts: str) -> bytes:
    msg = b"\x1f".join(p.encode("utf-8") for p in (namespace, *parts))
    return hmac.new(key, msg, hashlib.sha256).digest()


@dataclass(frozen=True)
class TokenDomain:
    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(str(t) for t in self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("token domain has duplicates")
        if not self.tokens:
            raise ValueError("token domain is empty")

    def __contains__(self, value: str) -> bool:
        return value in self.tokens


@dataclass(frozen=True)
class DigitDomain:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("digit width must be at least 1")

    @property
    def size(self) -> int:
        return 10**self.width

    def __contains__(self, value: str) -> bool:
        return len(value) == self.width and value.isascii() and value.isdigit()


@lru_cache(maxsize=64)
def _token_table(key: bytes, namespace: str, domain: TokenDomain) -> dict[str, str]:
    shuffled = sorted(domain.tokens, key=lambda tok: _tag(key, namespace, "tok", tok))
    return dict(zip(domain.tokens, shuffled))


def _feistel(key: bytes, namespace: str, x: int, half_bits: int) -> int:
    mask = (1 << half_bits) - 1
    left, right = x >> half_bits, x & mask
    for rnd in range(FEISTEL_ROUNDS):
        f = int.from_bytes(_tag(key, namespace, "feistel", str(rnd), str(right)), "big") & mask
        left, right = right, left ^ f
    return (left << half_bits) | right


def _permute_digits(key: bytes, namespace: str, value: str, domain: DigitDomain) -> str:
    n = domain.size
    half_bits = max(1, ((n - 1).bit_length() + 1) // 2)
    x = int(value)
    # cycle-walking: the Feistel permutes [0, 4**half_bits), so iterating from an
    # in-range point always returns to the range
    x = _feistel(key, namespace, x, half_bits)
    while x >= n:
        x = _feistel(key, namespace, x, half_bits)
    return str(x).zfill(domain.width)


def sanitize_category1(key: bytes | str, namespace: str, value: str,
                       domain: TokenDomain | DigitDomain | Sequence[str] | None = None) -> str:
    """Map ``value`` through the keyed permutation of its format domain.

    ``domain`` defaults to the fixed-width digit strings of ``value``'s length.
    A plain sequence of strings is treated as a :class:`TokenDomain`.
    """
    if isinstance(key, str):
        key = key.encode("utf-8")
    value = str(value)
    if domain is None:
        if not (value.isascii() and value.isdigit()):
            raise DomainError(f"cannot infer a format domain for {value!r}; pass one explicitly", value=value)
        domain = DigitDomain(len(value))
    elif not isinstance(domain, (TokenDomain, DigitDomain)):
        domain = TokenDomain(tuple(domain))
    if value not in domain:
        raise DomainError(f"{value!r} is outside the declared format domain", value=value)
    if isinstance(domain, TokenDomain):
        return _token_table(key, namespace, domain)[value]
    return _permute_digits(key, namespace, value, domain)
