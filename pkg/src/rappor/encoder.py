"""Client-side encoding: cohorts, Bloom filters, and the two noise stages.

Every hash below is SHA-256 over an exact byte layout, so independently
written clients produce bit-identical output:

* cohort:      first 4 digest bytes of ``b"cohort" 0x1F client`` as a
               little-endian integer, mod the cohort count
* Bloom bit t: first 4 digest bytes of ``LE32(cohort) 0x1F LE32(t) 0x1F value``,
               little-endian, mod the filter size
* permanent bit i: first 8 digest bytes of ``secret 0x00 value 0x00 LE32(i)``
               scaled to [0, 1); below f/2 forces a 1, below f forces a 0,
               otherwise the Bloom bit passes through

The permanent response is a pure function of (secret, value, f): the same
client re-reporting the same value always randomizes it the same way, which
is what bounds lifetime leakage without a memoization store.  The
instantaneous response re-randomizes per report from a caller-supplied
stream, consuming exactly one draw per bit in index order.
"""

from __future__ import annotations

import csv
import hashlib
import os
import random
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

from .errors import BitLengthMismatch, EmptyValue, InvalidParams, MalformedRow
from .params import RapporParams

SECRET_BYTES = 16
DEFAULT_CHUNK_SIZE = 50_000


def _le32(n: int) -> bytes:
    return struct.pack("<I", n)


def _le64(n: int) -> bytes:
    return struct.pack("<Q", n & 0xFFFFFFFFFFFFFFFF)


# Bit indices are hashed once per report bit; precomputing their 4-byte forms
# keeps struct.pack out of the hot loop.
_LE32_TABLE = [struct.pack("<I", i) for i in range(4096)]


def _le32_cached(n: int) -> bytes:
    if n < 4096:
        return _LE32_TABLE[n]
    return struct.pack("<I", n)


@dataclass(frozen=True)
class BitVector:
    """Fixed-width bit array stored as a non-negative integer."""

    bits: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise BitLengthMismatch(f"length must be positive, got {self.length}")
        if self.bits < 0 or self.bits >> self.length:
            raise BitLengthMismatch(
                f"value 0x{self.bits:x} does not fit in {self.length} bits"
            )

    def get(self, i: int) -> int:
        return (self.bits >> i) & 1

    def popcount(self) -> int:
        return self.bits.bit_count()

    def set_indices(self) -> list[int]:
        out = []
        bits = self.bits
        while bits:
            low = bits & -bits
            out.append(low.bit_length() - 1)
            bits ^= low
        return out

    def to_string(self) -> str:
        """Big-endian 0/1 string: leftmost character is bit length-1."""
        return format(self.bits, f"0{self.length}b")

    @classmethod
    def from_string(cls, s: str) -> "BitVector":
        if not s or set(s) - {"0", "1"}:
            raise BitLengthMismatch(f"not a 0/1 string: {s!r}")
        return cls(bits=int(s, 2), length=len(s))


class EncoderMode(Enum):
    STANDARD = "standard"
    ONE_TIME = "one-time"
    BASIC = "basic"
    BASIC_ONE_TIME = "basic-one-time"

    @property
    def one_time(self) -> bool:
        return self in (EncoderMode.ONE_TIME, EncoderMode.BASIC_ONE_TIME)

    @property
    def basic(self) -> bool:
        return self in (EncoderMode.BASIC, EncoderMode.BASIC_ONE_TIME)

    @classmethod
    def parse(cls, name: str) -> "EncoderMode":
        normalized = name.strip().lower().replace("_", "-")
        aliases = {"onetime": "one-time", "basic-onetime": "basic-one-time"}
        normalized = aliases.get(normalized, normalized)
        for mode in cls:
            if mode.value == normalized:
                return mode
        raise InvalidParams("mode", f"unknown encoder mode {name!r}")


@dataclass(frozen=True)
class Report:
    """One randomized client submission; bloom/prr kept only for audits."""

    client: str
    cohort: int
    irr: BitVector
    bloom: BitVector | None = None
    prr: BitVector | None = None


def assign_cohort(client: str, m: int) -> int:
    """Deterministic, empirically uniform cohort for a client identifier."""
    if m < 1:
        raise InvalidParams("m", "cohort count must be positive")
    digest = hashlib.sha256(b"cohort\x1f" + client.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little") % m


def bloom_indices(value: str, cohort: int, k: int, h: int) -> list[int]:
    """Bit index chosen by each of the h hashes, in hash order.

    Indices may repeat when hashes collide; callers wanting the filter
    itself should use bloom_encode.
    """
    if value == "":
        raise EmptyValue("cannot encode the empty string")
    prefix = _le32(cohort) + b"\x1f"
    value_bytes = value.encode("utf-8")
    out = []
    for t in range(h):
        digest = hashlib.sha256(prefix + _le32(t) + b"\x1f" + value_bytes).digest()
        out.append(int.from_bytes(digest[:4], "little") % k)
    return out


def bloom_encode(value: str, cohort: int, k: int, h: int) -> BitVector:
    """Set h hash-chosen bits for a value; collisions may leave fewer set."""
    bits = 0
    for index in bloom_indices(value, cohort, k, h):
        bits |= 1 << index
    return BitVector(bits=bits, length=k)


def prr(bloom: BitVector, f: float, user_secret: bytes, value: str) -> BitVector:
    """Permanent randomized response: deterministic in (secret, value, f)."""
    if f <= 0.0:
        return bloom
    prefix = user_secret + b"\x00" + value.encode("utf-8") + b"\x00"
    # u/2^64 < t is evaluated as u < t*2^64: scaling by a power of two is
    # exact, and Python compares int to float exactly, so this is the exact
    # rational comparison with no division in the loop.
    half_threshold = 0.5 * f * 2.0**64
    full_threshold = f * 2.0**64
    sha256 = hashlib.sha256
    from_bytes = int.from_bytes
    bloom_bits = bloom.bits
    out = 0
    for i in range(bloom.length):
        digest = sha256(prefix + _le32_cached(i)).digest()
        u = from_bytes(digest[:8], "little")
        if u < half_threshold:
            bit = 1
        elif u < full_threshold:
            bit = 0
        else:
            bit = (bloom_bits >> i) & 1
        out |= bit << i
    return BitVector(bits=out, length=bloom.length)


def irr(permanent: BitVector, p: float, q: float, rng) -> BitVector:
    """Instantaneous randomized response; consumes exactly k draws from rng."""
    out = 0
    bits = permanent.bits
    draw = rng.random
    for i in range(permanent.length):
        threshold = q if (bits >> i) & 1 else p
        if draw() < threshold:
            out |= 1 << i
    return BitVector(bits=out, length=permanent.length)


def derive_user_secret(master_seed: int, client: str) -> bytes:
    """16-byte per-client secret derived from the run's master seed."""
    digest = hashlib.sha256(
        b"secret\x1f" + _le64(master_seed) + b"\x1f" + client.encode("utf-8")
    ).digest()
    return digest[:SECRET_BYTES]


def report_rng(master_seed: int, index: int) -> random.Random:
    """Independent per-report stream keyed by (master seed, report index).

    Output is a function of the key alone, so any parallel schedule over
    reports reproduces the same bits.
    """
    digest = hashlib.sha256(
        b"irr\x1f" + _le64(master_seed) + b"\x1f" + _le64(index)
    ).digest()
    return random.Random(int.from_bytes(digest[:16], "little"))


def encode_report(
    client: str,
    value: str,
    params: RapporParams,
    mode: EncoderMode,
    user_secret: bytes,
    rng,
    *,
    audit: bool = False,
) -> Report:
    """Full client pipeline: cohort, Bloom filter, permanent then instant noise.

    One-time modes stop after the permanent response.  Basic modes require
    h = 1 so each value maps to a single bit.
    """
    if mode.basic and params.h != 1:
        raise InvalidParams("h", f"{mode.value} mode requires h=1, got h={params.h}")
    cohort = assign_cohort(client, params.m)
    bloom = bloom_encode(value, cohort, params.k, params.h)
    permanent = prr(bloom, params.f, user_secret, value)
    if mode.one_time:
        instant = permanent
    else:
        instant = irr(permanent, params.p, params.q, rng)
    return Report(
        client=client,
        cohort=cohort,
        irr=instant,
        bloom=bloom if audit else None,
        prr=permanent if audit else None,
    )


def encode_records(
    records: Sequence[tuple[str, str]],
    params: RapporParams,
    mode: EncoderMode,
    master_seed: int,
    *,
    start_index: int = 0,
    audit: bool = False,
) -> list[Report]:
    """Encode (client, value) pairs; report i uses stream (seed, start+i)."""
    out = []
    for offset, (client, value) in enumerate(records):
        secret = derive_user_secret(master_seed, client)
        rng = report_rng(master_seed, start_index + offset)
        out.append(
            encode_report(client, value, params, mode, secret, rng, audit=audit)
        )
    return out


def resolve_workers(requested: int | None = None) -> int:
    """Worker count for parallel stages, capped by $RAPPOR_THREADS."""
    workers = requested if requested and requested > 0 else (os.cpu_count() or 1)
    cap = os.environ.get("RAPPOR_THREADS", "")
    if cap.strip():
        workers = min(workers, max(1, int(cap)))
    return max(1, workers)


def _encode_chunk(args) -> list[Report]:
    records, params, mode, master_seed, start_index, audit = args
    return encode_records(
        records, params, mode, master_seed, start_index=start_index, audit=audit
    )


def iter_encoded_chunks(
    records: Sequence[tuple[str, str]],
    params: RapporParams,
    mode: EncoderMode,
    master_seed: int,
    *,
    audit: bool = False,
    workers: int | None = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
) -> Iterator[list[Report]]:
    """Encode in fixed-size chunks, in input order.

    Chunk boundaries depend only on chunk_size, and each report's randomness
    only on (master seed, global index), so the concatenated output is
    identical for any worker count.
    """
    workers = resolve_workers(workers)
    spans = [
        (records[i : i + chunk_size], params, mode, master_seed, i, audit)
        for i in range(0, len(records), chunk_size)
    ]
    if workers == 1 or len(spans) <= 1:
        for span in spans:
            yield _encode_chunk(span)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_encode_chunk, spans)


REPORTS_HEADER = "client,cohort,bloom,prr,irr"
TRUE_VALUES_HEADER = "client,cohort,value"


def csv_quote(field: str) -> str:
    if any(ch in field for ch in ',"\n\r'):
        return '"' + field.replace('"', '""') + '"'
    return field


def report_row(report: Report) -> str:
    bloom = report.bloom.to_string() if report.bloom is not None else ""
    permanent = report.prr.to_string() if report.prr is not None else ""
    return (
        f"{csv_quote(report.client)},{report.cohort},"
        f"{bloom},{permanent},{report.irr.to_string()}"
    )


def write_reports(reports: Iterable[Report], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(REPORTS_HEADER + "\n")
        for report in reports:
            fh.write(report_row(report) + "\n")


def read_reports(path: Union[str, Path]) -> list[Report]:
    reports = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != REPORTS_HEADER.split(","):
            raise MalformedRow(1, f"expected header {REPORTS_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise MalformedRow(lineno, f"expected 5 columns, found {len(row)}")
            try:
                cohort = int(row[1])
                bloom = BitVector.from_string(row[2]) if row[2] else None
                permanent = BitVector.from_string(row[3]) if row[3] else None
                instant = BitVector.from_string(row[4])
            except (ValueError, BitLengthMismatch) as exc:
                raise MalformedRow(lineno, str(exc)) from exc
            reports.append(
                Report(
                    client=row[0],
                    cohort=cohort,
                    irr=instant,
                    bloom=bloom,
                    prr=permanent,
                )
            )
    return reports
