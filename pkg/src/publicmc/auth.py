"""Registration, login and session validation guarding the gateway.

Passwords are stored only as salted scrypt digests.  Session tokens are
256-bit random strings with a fixed TTL and no sliding renewal; validity
is strict: a token is good iff it is known, not revoked and now is
strictly before expires_at.
"""

from __future__ import annotations

import hashlib
import hmac
import re
import secrets
import threading
import time
from dataclasses import dataclass

USERNAME_RE = re.compile(r"^[a-z0-9_]{3,32}$")
MIN_PASSWORD_LEN = 8
DEFAULT_SESSION_TTL_S = 1800

_SCRYPT_N = 1 << 14
_SCRYPT_R = 8
_SCRYPT_P = 1


class AuthError(Exception):
    pass


class InvalidUsername(AuthError):
    pass


class DuplicateUsername(AuthError):
    pass


class WeakPassword(AuthError):
    pass


class BadCredentials(AuthError):
    """Same error whether the user is unknown or the password is wrong."""


class UnknownToken(AuthError):
    pass


class ExpiredToken(AuthError):
    pass


@dataclass(frozen=True)
class UserAccount:
    user_id: str
    username: str
    password_digest: str
    created_at: float


@dataclass(frozen=True)
class Session:
    token: str
    user_id: str
    issued_at: float
    expires_at: float


def hash_password(password: str, *, _salt: bytes | None = None) -> str:
    salt = _salt if _salt is not None else secrets.token_bytes(16)
    digest = hashlib.scrypt(password.encode("utf-8"), salt=salt,
                            n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P)
    return f"scrypt${_SCRYPT_N}${_SCRYPT_R}${_SCRYPT_P}${salt.hex()}${digest.hex()}"


def verify_password(password: str, stored: str) -> bool:
    try:
        scheme, n, r, p, salt_hex, digest_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        digest = hashlib.scrypt(password.encode("utf-8"),
                                salt=bytes.fromhex(salt_hex),
                                n=int(n), r=int(r), p=int(p))
        return hmac.compare_digest(digest.hex(), digest_hex)
    except (ValueError, TypeError):
        return False


# Verified against when a login names an unknown user, so the work done is
# the same as for a real account.
_DUMMY_DIGEST = hash_password("not-a-real-password")


class AccessControl:
    """Account and session store behind a single writer lock."""

    def __init__(self, session_ttl_s: int = DEFAULT_SESSION_TTL_S):
        if session_ttl_s <= 0:
            raise ValueError("session_ttl_s must be positive")
        self.session_ttl_s = session_ttl_s
        self._lock = threading.Lock()
        self._accounts: dict[str, UserAccount] = {}  # keyed by username
        self._sessions: dict[str, Session] = {}

    def prepare_registration(self, username: str, password: str,
                             now: float | None = None) -> UserAccount:
        """Validate inputs and build the account (digest included) without
        storing it; the caller persists an event and then calls restore()."""
        if not isinstance(username, str) or not USERNAME_RE.match(username):
            raise InvalidUsername(
                "username must be 3-32 characters of [a-z0-9_]")
        if not isinstance(password, str) or len(password) < MIN_PASSWORD_LEN:
            raise WeakPassword(f"password must be at least {MIN_PASSWORD_LEN} "
                               "characters")
        with self._lock:
            if username in self._accounts:
                raise DuplicateUsername(f"username {username!r} is taken")
        return UserAccount(
            user_id=secrets.token_hex(8),
            username=username,
            password_digest=hash_password(password),
            created_at=time.time() if now is None else now,
        )

    def register(self, username: str, password: str,
                 now: float | None = None) -> UserAccount:
        account = self.prepare_registration(username, password, now)
        self.restore(account)
        return account

    def restore(self, account: UserAccount) -> None:
        """Install an account (fresh registration or event-log replay)."""
        with self._lock:
            if account.username in self._accounts:
                raise DuplicateUsername(
                    f"username {account.username!r} is taken")
            self._accounts[account.username] = account

    def login(self, username: str, password: str,
              now: float | None = None) -> Session:
        now = time.time() if now is None else now
        with self._lock:
            account = self._accounts.get(username)
        # always burn a digest verification so unknown users cost the same
        ok = verify_password(password,
                             account.password_digest if account else _DUMMY_DIGEST)
        if account is None or not ok:
            raise BadCredentials("bad username or password")
        session = Session(
            token=secrets.token_urlsafe(32),
            user_id=account.user_id,
            issued_at=now,
            expires_at=now + self.session_ttl_s,
        )
        with self._lock:
            self._sessions[session.token] = session
        return session

    def validate_session(self, token: str, now: float | None = None) -> str:
        now = time.time() if now is None else now
        with self._lock:
            session = self._sessions.get(token)
        if session is None:
            raise UnknownToken("unknown or revoked session token")
        if not now < session.expires_at:
            raise ExpiredToken("session expired")
        return session.user_id

    def logout(self, token: str) -> None:
        """Revoke a token; idempotent, never errors."""
        with self._lock:
            self._sessions.pop(token, None)

    def get_account(self, username: str) -> UserAccount | None:
        with self._lock:
            return self._accounts.get(username)

    def get_username(self, user_id: str) -> str | None:
        with self._lock:
            for account in self._accounts.values():
                if account.user_id == user_id:
                    return account.username
        return None

    def accounts(self) -> list[UserAccount]:
        with self._lock:
            return sorted(self._accounts.values(), key=lambda a: a.username)
