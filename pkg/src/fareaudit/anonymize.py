"""Pseudonymization and field minimization for bundles leaving trust boundaries.

Driver ids become keyed hashes (holders of the salt can re-identify, nobody
else can); free-text and location fields can be stripped outright. Identity
columns such as names, emails and licence plates are never parsed into the
data model in the first place, so stripping concerns the fields that remain.
"""

from __future__ import annotations

import hashlib
import hmac
import os
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from .ingest import NormalizedBundle
from .model import AuditError

SALT_ENV_VAR = "FAREAUDIT_SALT"
MIN_SALT_BYTES = 16
PSEUDONYM_HEX_CHARS = 16

# every strippable field, with the record type that carries it
STRIPPABLE_FIELDS = {
    "memo": "payments",
    "origin_tag": "trips",
    "dest_tag": "trips",
    "product": "trips",
}
DEFAULT_STRIP_POLICY = ("memo", "origin_tag", "dest_tag")


class WeakSalt(AuditError):
    pass


class UnknownField(AuditError):
    pass


def pseudonym(driver_id: str, salt: bytes) -> str:
    """Keyed-hash pseudonym: same id and salt give the same output everywhere."""
    if len(salt) < MIN_SALT_BYTES:
        raise WeakSalt(f"salt must be at least {MIN_SALT_BYTES} bytes, got {len(salt)}")
    digest = hmac.new(salt, driver_id.encode("utf-8"), hashlib.sha256)
    return digest.hexdigest()[:PSEUDONYM_HEX_CHARS]


def pseudonymize(bundle: NormalizedBundle, salt: bytes) -> NormalizedBundle:
    """Replace the driver id with its pseudonym on every record in the bundle."""
    alias = pseudonym(bundle.driver_id, salt)
    return NormalizedBundle(
        driver_id=alias,
        trips=tuple(replace(t, driver_id=alias) for t in bundle.trips),
        payments=tuple(replace(p, driver_id=alias) for p in bundle.payments),
        dispatches=tuple(replace(d, driver_id=alias) for d in bundle.dispatches),
        sessions=tuple(replace(s, driver_id=alias) for s in bundle.sessions),
        profile=replace(bundle.profile, driver_id=alias) if bundle.profile else None,
    )


def strip_fields(
    bundle: NormalizedBundle, policy: Sequence[str] = DEFAULT_STRIP_POLICY
) -> NormalizedBundle:
    """Blank the listed fields on every record.

    Stripped values never reach serialized output: text fields become empty
    strings (memos become None), so no substring of the source value survives.
    """
    for name in policy:
        if name not in STRIPPABLE_FIELDS:
            raise UnknownField(f"not a strippable field: {name!r}")
    names = set(policy)

    trips = bundle.trips
    if names & {"origin_tag", "dest_tag", "product"}:
        trip_kwargs = {}
        if "origin_tag" in names:
            trip_kwargs["origin_tag"] = ""
        if "dest_tag" in names:
            trip_kwargs["dest_tag"] = ""
        if "product" in names:
            trip_kwargs["product"] = ""
        trips = tuple(replace(t, **trip_kwargs) for t in trips)

    payments = bundle.payments
    if "memo" in names:
        payments = tuple(replace(p, memo=None) for p in payments)

    return NormalizedBundle(
        driver_id=bundle.driver_id,
        trips=trips,
        payments=payments,
        dispatches=bundle.dispatches,
        sessions=bundle.sessions,
        profile=bundle.profile,
    )


def anonymize(
    bundle: NormalizedBundle, salt: bytes, policy: Sequence[str] = DEFAULT_STRIP_POLICY
) -> NormalizedBundle:
    return strip_fields(pseudonymize(bundle, salt), policy)


def load_salt(key_file: str | Path | None = None) -> bytes:
    """Fetch the salt from a key file or the environment, never the command line."""
    if key_file is not None:
        salt = Path(key_file).read_bytes().strip()
    else:
        text = os.environ.get(SALT_ENV_VAR, "")
        salt = text.encode("utf-8")
    if len(salt) < MIN_SALT_BYTES:
        raise WeakSalt(
            f"no usable salt: provide >= {MIN_SALT_BYTES} bytes via "
            f"a key file or the {SALT_ENV_VAR} environment variable"
        )
    return salt


def stripped_values(bundle: NormalizedBundle, policy: Sequence[str]) -> Iterable[str]:
    """The source values a strip policy removes; used to verify none survive."""
    for name in policy:
        if name not in STRIPPABLE_FIELDS:
            raise UnknownField(f"not a strippable field: {name!r}")
    for name in policy:
        if name == "memo":
            for p in bundle.payments:
                if p.memo:
                    yield p.memo
        else:
            for t in bundle.trips:
                value = getattr(t, name)
                if value:
                    yield value
