"""Three-party protocol: client, authentication server and fuzzy-extractor service.

Messages are UTF-8 JSON objects framed by a 4-byte big-endian length and
exchanged one request per TCP connection.  Every message has ``type`` and
``corr_id``.  The plaintext key only travels between server and FE: in the
``key_handoff`` at enrollment and in a successful ``key_response``.

There is no channel security.  Both roles assume they run on a trusted
network segment; put TLS in front of them if that does not hold.

Enrollment is two-phase so a failure leaves no partial state behind:

    client -> server   enroll_request  {app_id, params}
    server -> FE       key_handoff     {app_id, key_hex, params}
    FE     -> server   vault_delivery  {app_id, vault}     (record held pending)
    server -> FE       enroll_ack      {app_id}            (FE persists record)
    FE     -> server   enroll_ack      {app_id}
    server             registry[app_id] = SHA-256(k); k discarded
    server -> client   vault_delivery  {app_id, vault}

Authentication:

    client -> server   auth_request    {app_id, vault}
    server -> FE       auth_challenge  {app_id, vault}
    FE     -> server   key_response    {app_id, key_hex | error}
    server -> client   auth_result     {app_id, accepted}
"""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import hmac
import json
import logging
import os
import secrets
import socket
import socketserver
import struct
import tempfile
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from baafe import errors
from baafe.behavior import Dataset, app_windows, ingest, window_features
from baafe.encoder import gen_encoder_params
from baafe.errors import (
    BaafeError,
    BindError,
    Duplicate,
    EnrollFailed,
    SchemaError,
    StoreCorrupt,
    TransportError,
    UnknownApp,
)
from baafe.extractor import FERecord, authenticate, enroll_behavior, fit_normalization, fit_scheme
from baafe.ffmath import KeyMaterial, key_capacity
from baafe.thresholds import Variant
from baafe.vault import SecurityParams, Vault, deserialize_vault, serialize_vault

log = logging.getLogger(__name__)

STORE_VERSION = 1
MAX_FRAME = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 60.0
DEFAULT_KEY_OCTETS = 32
_HEADER = struct.Struct(">I")


class MessageType(str, enum.Enum):
    ENROLL_REQUEST = "enroll_request"
    KEY_HANDOFF = "key_handoff"
    VAULT_DELIVERY = "vault_delivery"
    ENROLL_ACK = "enroll_ack"
    AUTH_REQUEST = "auth_request"
    AUTH_CHALLENGE = "auth_challenge"
    KEY_RESPONSE = "key_response"
    AUTH_RESULT = "auth_result"
    ERROR = "error"


# -- framing -------------------------------------------------------------------


def encode_frame(msg: dict) -> bytes:
    body = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_FRAME:
        raise TransportError(f"message of {len(body)} bytes exceeds the frame limit")
    return _HEADER.pack(len(body)) + body


def _recv_exact(sock: socket.socket, count: int) -> bytes:
    chunks = []
    while count:
        chunk = sock.recv(min(count, 1 << 16))
        if not chunk:
            raise TransportError("connection closed mid-message")
        chunks.append(chunk)
        count -= len(chunk)
    return b"".join(chunks)


def recv_frame(sock: socket.socket) -> bytes:
    (length,) = _HEADER.unpack(_recv_exact(sock, _HEADER.size))
    if length > MAX_FRAME:
        raise TransportError(f"peer announced a {length}-byte frame")
    return _recv_exact(sock, length)


def decode_frame(body: bytes) -> dict:
    try:
        msg = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TransportError(f"malformed message: {exc}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise TransportError("message must be a JSON object with a 'type'")
    return msg


def parse_address(addr: str | tuple[str, int]) -> tuple[str, int]:
    if isinstance(addr, tuple):
        return addr
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {addr!r}")
    return host or "127.0.0.1", int(port)


def exchange(
    addr: str | tuple[str, int],
    msg: dict,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    transcript: list[bytes] | None = None,
) -> dict:
    """Send one message and wait for the reply.

    ``transcript``, when given, collects the raw bytes sent and received.
    """
    frame = encode_frame(msg)
    try:
        with socket.create_connection(parse_address(addr), timeout=timeout) as sock:
            sock.sendall(frame)
            body = recv_frame(sock)
    except OSError as exc:
        raise TransportError(f"cannot reach {addr}: {exc}") from None
    if transcript is not None:
        transcript.append(frame)
        transcript.append(_HEADER.pack(len(body)) + body)
    return decode_frame(body)


def error_reply(msg: dict, exc: BaseException) -> dict:
    return {
        "type": MessageType.ERROR.value,
        "corr_id": msg.get("corr_id"),
        "app_id": msg.get("app_id"),
        "error": f"{type(exc).__name__}: {exc}",
    }


def raise_for_error(reply: dict) -> None:
    """Re-raise an ``error`` reply as the matching package exception."""
    if reply.get("type") != MessageType.ERROR.value:
        return
    text = str(reply.get("error", "unknown error"))
    name, _, detail = text.partition(": ")
    cls = getattr(errors, name, None)
    if isinstance(cls, type) and issubclass(cls, BaafeError):
        raise cls(detail)
    raise BaafeError(text)


def _expect(reply: dict, kind: MessageType, corr_id: str) -> dict:
    raise_for_error(reply)
    if reply.get("type") != kind.value or reply.get("corr_id") != corr_id:
        raise TransportError(f"expected {kind.value} for {corr_id}, got {reply.get('type')!r}")
    return reply


# -- persistent stores -----------------------------------------------------------


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _JsonStore:
    """A JSON document on disk, rewritten atomically after every change."""

    section = ""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.lock = threading.Lock()
        self.entries: dict[str, object] = {}
        if self.path.exists():
            self.entries = self._load()

    def _load(self) -> dict:
        try:
            doc = json.loads(self.path.read_bytes())
            if not isinstance(doc, dict) or doc.get("format_version") != STORE_VERSION:
                raise ValueError("unexpected format_version")
            raw = doc[self.section]
            if not isinstance(raw, dict):
                raise ValueError(f"{self.section!r} must be an object")
            return {app: self.parse_entry(app, value) for app, value in raw.items()}
        except (OSError, ValueError, KeyError, TypeError, BaafeError) as exc:
            raise StoreCorrupt(f"{self.path}: {exc}") from None

    def parse_entry(self, app_id: str, raw):
        return raw

    def dump_entry(self, entry) -> object:
        return entry

    def _save(self) -> None:
        doc = {
            "format_version": STORE_VERSION,
            self.section: {app: self.dump_entry(e) for app, e in sorted(self.entries.items())},
        }
        atomic_write(self.path, json.dumps(doc, indent=1).encode("utf-8"))

    def get(self, app_id: str):
        with self.lock:
            return self.entries.get(app_id)

    def put(self, app_id: str, entry) -> None:
        with self.lock:
            previous = self.entries.get(app_id)
            self.entries[app_id] = entry
            try:
                self._save()
            except BaseException:
                if previous is None:
                    self.entries.pop(app_id, None)
                else:
                    self.entries[app_id] = previous
                raise

    def __contains__(self, app_id: str) -> bool:
        return self.get(app_id) is not None


@dataclass(frozen=True)
class RegistryEntry:
    key_hash: bytes
    enrolled_at: str


class Registry(_JsonStore):
    """Server-side map of app id to key hash.  Keys themselves are never stored."""

    section = "apps"

    def parse_entry(self, app_id, raw):
        digest = bytes.fromhex(raw["key_hash"])
        if len(digest) != 32:
            raise ValueError(f"{app_id}: key hash must be 32 bytes")
        return RegistryEntry(digest, str(raw["enrolled_at"]))

    def dump_entry(self, entry: RegistryEntry):
        return {"key_hash": entry.key_hash.hex(), "enrolled_at": entry.enrolled_at}


class FEStore(_JsonStore):
    """Private per-app enrollment records kept by the FE service."""

    section = "records"

    def parse_entry(self, app_id, raw):
        record = FERecord.from_dict(raw)
        if record.app_id != app_id:
            raise ValueError(f"record filed under {app_id!r} belongs to {record.app_id!r}")
        return record

    def dump_entry(self, entry: FERecord):
        return entry.to_dict()


# -- enrollment parameters --------------------------------------------------------


@dataclass(frozen=True)
class EnrollParams:
    n: int = 56
    c: int = 200
    d: int = 32
    scheme: str = "global"
    tau: float | None = None
    divisor: float | None = None
    force: bool = False

    def __post_init__(self):
        SecurityParams(self.n, self.c, self.d)
        Variant(self.scheme)

    @property
    def sec(self) -> SecurityParams:
        return SecurityParams(self.n, self.c, self.d)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "c": self.c,
            "d": self.d,
            "scheme": self.scheme,
            "tau": self.tau,
            "divisor": self.divisor,
            "force": self.force,
        }

    @classmethod
    def from_dict(cls, raw: dict | None) -> "EnrollParams":
        raw = dict(raw or {})
        unknown = set(raw) - {"n", "c", "d", "scheme", "tau", "divisor", "force"}
        if unknown:
            raise SchemaError(f"unknown enrollment parameters: {sorted(unknown)}")
        try:
            return cls(**raw)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"bad enrollment parameters: {exc}") from None


def _vault_from_wire(raw) -> Vault:
    if not isinstance(raw, dict):
        raise SchemaError("'vault' must be a JSON object")
    return deserialize_vault(json.dumps(raw))


def _vault_to_wire(v: Vault) -> dict:
    return json.loads(serialize_vault(v))


# -- roles -------------------------------------------------------------------------


class FEService:
    """The fuzzy extractor: owns encoder state and sees behavior data, never the registry."""

    def __init__(self, store: FEStore, data_path: str | Path, *, seed=None):
        self.store = store
        self.data_path = Path(data_path)
        self._rng = np.random.default_rng(seed)
        self._rng_lock = threading.Lock()
        self._pending: dict[str, FERecord] = {}
        self._pending_lock = threading.Lock()
        self._data_lock = threading.Lock()
        self._data_stamp = None
        self._data: Dataset = {}
        self._fleet_cache: dict[int, object] = {}

    def _dataset(self) -> Dataset:
        # re-read only when the file changes, so appended days move the window
        with self._data_lock:
            st = self.data_path.stat()
            stamp = (st.st_mtime_ns, st.st_size)
            if stamp != self._data_stamp:
                self._data = ingest(self.data_path)
                self._data_stamp = stamp
                self._fleet_cache = {}
            return self._data

    def _features(self, data: Dataset, app_id: str):
        if app_id not in data:
            raise UnknownApp(f"no behavior data for app {app_id!r}")
        return [window_features(w) for w in app_windows(data, app_id)]

    def _fleet_normalization(self, data: Dataset, n: int):
        with self._data_lock:
            if n not in self._fleet_cache:
                fleet = [fv for app in sorted(data) for fv in self._features(data, app)]
                self._fleet_cache[n] = fit_normalization(fleet, n)
            return self._fleet_cache[n]

    def _child_rng(self) -> np.random.Generator:
        with self._rng_lock:
            return np.random.default_rng(self._rng.integers(0, 2**63))

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        if kind == MessageType.KEY_HANDOFF.value:
            return self._handoff(msg)
        if kind == MessageType.ENROLL_ACK.value:
            return self._commit(msg)
        if kind == MessageType.AUTH_CHALLENGE.value:
            return self._challenge(msg)
        raise SchemaError(f"FE does not handle {kind!r} messages")

    def _handoff(self, msg: dict) -> dict:
        app_id, corr_id = msg["app_id"], msg["corr_id"]
        params = EnrollParams.from_dict(msg.get("params"))
        key = KeyMaterial(bytes.fromhex(msg["key_hex"]))
        try:
            data = self._dataset()
            history = self._features(data, app_id)
            normalization = self._fleet_normalization(data, params.n)
            rng = self._child_rng()
            encoder = gen_encoder_params(int(rng.integers(0, 2**31)), params.n)
            scheme = fit_scheme(
                params.scheme,
                history,
                encoder,
                normalization,
                tau=params.tau,
                divisor=params.divisor,
            )
            vault, record = enroll_behavior(
                app_id, history[-1], key, params.sec, scheme, encoder, normalization, seed=rng
            )
        except UnknownApp:
            raise
        except (BaafeError, ValueError) as exc:
            raise EnrollFailed(f"{type(exc).__name__}: {exc}") from None
        finally:
            del key
        with self._pending_lock:
            self._pending[corr_id] = record
        return {
            "type": MessageType.VAULT_DELIVERY.value,
            "corr_id": corr_id,
            "app_id": app_id,
            "vault": _vault_to_wire(vault),
        }

    def _commit(self, msg: dict) -> dict:
        corr_id = msg["corr_id"]
        with self._pending_lock:
            record = self._pending.pop(corr_id, None)
        if record is None or record.app_id != msg.get("app_id"):
            raise EnrollFailed(f"no pending enrollment for {corr_id}")
        self.store.put(record.app_id, record)
        return {"type": MessageType.ENROLL_ACK.value, "corr_id": corr_id, "app_id": record.app_id}

    def _challenge(self, msg: dict) -> dict:
        app_id, corr_id = msg["app_id"], msg["corr_id"]
        reply = {"type": MessageType.KEY_RESPONSE.value, "corr_id": corr_id, "app_id": app_id}
        record = self.store.get(app_id)
        if record is None:
            reply["error"] = f"UnknownApp: no enrollment record for {app_id!r}"
            return reply
        try:
            v = _vault_from_wire(msg.get("vault"))
            if v.app_id != app_id:
                raise SchemaError(f"vault belongs to {v.app_id!r}")
            if v.sec.n != record.n:
                raise SchemaError(f"vault has n={v.sec.n}, enrollment used n={record.n}")
            window = self._features(self._dataset(), app_id)[-1]
            outcome = authenticate(window, v, record, seed=self._child_rng())
        except (BaafeError, ValueError) as exc:
            reply["error"] = f"{type(exc).__name__}: {exc}"
            return reply
        if outcome.success:
            reply["key_hex"] = outcome.key.data.hex()
        else:
            reply["error"] = f"rejected: {outcome.reason.value} after {outcome.attempts_used} attempts"
        return reply


def default_key_factory(octets: int) -> bytes:
    return secrets.token_bytes(octets)


class AuthServer:
    """Gatekeeper: issues keys, keeps only their hashes, checks FE answers."""

    def __init__(
        self,
        registry: Registry,
        fe_address: str | tuple[str, int],
        *,
        key_factory: Callable[[int], bytes] = default_key_factory,
        key_octets: int = DEFAULT_KEY_OCTETS,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self.registry = registry
        self.fe_address = fe_address
        self.key_factory = key_factory
        self.key_octets = key_octets
        self.timeout = timeout
        self._app_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _app_lock(self, app_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._app_locks.setdefault(app_id, threading.Lock())

    def handle(self, msg: dict) -> dict:
        kind = msg.get("type")
        if kind == MessageType.ENROLL_REQUEST.value:
            return self._enroll(msg)
        if kind == MessageType.AUTH_REQUEST.value:
            return self._auth(msg)
        raise SchemaError(f"server does not handle {kind!r} messages")

    def _fe(self, msg: dict) -> dict:
        return exchange(self.fe_address, msg, timeout=self.timeout)

    def _enroll(self, msg: dict) -> dict:
        app_id, corr_id = msg["app_id"], msg["corr_id"]
        if not isinstance(app_id, str) or not app_id:
            raise SchemaError("app_id must be a nonempty string")
        params = EnrollParams.from_dict(msg.get("params"))
        with self._app_lock(app_id):
            if app_id in self.registry and not params.force:
                raise Duplicate(f"app {app_id!r} is already enrolled")
            key = KeyMaterial(self.key_factory(min(self.key_octets, key_capacity(params.d))))
            try:
                handoff = {
                    "type": MessageType.KEY_HANDOFF.value,
                    "corr_id": corr_id,
                    "app_id": app_id,
                    "key_hex": key.data.hex(),
                    "params": params.to_dict(),
                }
                delivery = _expect(self._fe(handoff), MessageType.VAULT_DELIVERY, corr_id)
                del handoff
                ack = {"type": MessageType.ENROLL_ACK.value, "corr_id": corr_id, "app_id": app_id}
                _expect(self._fe(ack), MessageType.ENROLL_ACK, corr_id)
                stamp = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
                self.registry.put(app_id, RegistryEntry(key.hash, stamp))
            finally:
                del key
        log.info("enrolled %s", app_id)
        return {
            "type": MessageType.VAULT_DELIVERY.value,
            "corr_id": corr_id,
            "app_id": app_id,
            "vault": delivery["vault"],
        }

    def _auth(self, msg: dict) -> dict:
        app_id, corr_id = msg["app_id"], msg["corr_id"]
        entry = self.registry.get(app_id)
        if entry is None:
            raise UnknownApp(f"app {app_id!r} is not enrolled")
        result = {"type": MessageType.AUTH_RESULT.value, "corr_id": corr_id, "app_id": app_id, "accepted": False}
        challenge = {
            "type": MessageType.AUTH_CHALLENGE.value,
            "corr_id": corr_id,
            "app_id": app_id,
            "vault": msg.get("vault"),
        }
        try:
            reply = _expect(self._fe(challenge), MessageType.KEY_RESPONSE, corr_id)
        except BaafeError as exc:
            result["error"] = f"{type(exc).__name__}: {exc}"
            return result
        key_hex = reply.get("key_hex")
        if not isinstance(key_hex, str):
            result["error"] = str(reply.get("error", "no key returned"))
            return result
        try:
            digest = hashlib.sha256(bytes.fromhex(key_hex)).digest()
        except ValueError:
            result["error"] = "malformed key_hex from FE"
            return result
        result["accepted"] = hmac.compare_digest(digest, entry.key_hash)
        return result


# -- TCP plumbing ------------------------------------------------------------------


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        try:
            msg = decode_frame(recv_frame(self.request))
        except (TransportError, OSError) as exc:
            log.debug("dropping connection: %s", exc)
            return
        try:
            reply = self.server.role.handle(msg)
        except (BaafeError, KeyError, ValueError) as exc:
            if isinstance(exc, KeyError) and not isinstance(exc, BaafeError):
                exc = SchemaError(f"missing field {exc}")
            reply = error_reply(msg, exc)
        except Exception as exc:  # keep serving; the peer gets a generic error
            log.exception("unhandled error for %s", msg.get("type"))
            reply = error_reply(msg, BaafeError(f"internal error: {type(exc).__name__}"))
        try:
            self.request.sendall(encode_frame(reply))
        except OSError as exc:
            log.debug("reply not delivered: %s", exc)


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class RoleServer:
    """A role bound to a TCP port.  Use as a context manager in tests."""

    def __init__(self, role: AuthServer | FEService, bind: str | tuple[str, int]):
        self.role = role
        try:
            self._server = _TCPServer(parse_address(bind), _Handler)
        except OSError as exc:
            raise BindError(f"cannot bind {bind}: {exc}") from None
        self._server.role = role
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self._server.server_address[:2]
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        self._server.serve_forever()

    def start(self) -> "RoleServer":
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        if self._thread is not None:
            self._server.shutdown()
            self._thread.join()
            self._thread = None
        self._server.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()


def serve(
    role: str,
    bind: str,
    store: str | Path,
    *,
    data: str | Path | None = None,
    fe: str | None = None,
    key_factory: Callable[[int], bytes] = default_key_factory,
    seed=None,
) -> RoleServer:
    """Open the role's store and bind its port; the caller runs the loop.

    Raises:
        StoreCorrupt: the store file exists but cannot be read.
        BindError: the address is unavailable.
    """
    if role == "server":
        if not fe:
            raise ValueError("the server role needs the FE address")
        impl = AuthServer(Registry(store), fe, key_factory=key_factory)
    elif role == "fe":
        if not data:
            raise ValueError("the FE role needs a behavior data path")
        impl = FEService(FEStore(store), data, seed=seed)
    else:
        raise ValueError(f"unknown role {role!r}")
    return RoleServer(impl, bind)


# -- client ------------------------------------------------------------------------


def _corr_id() -> str:
    return uuid.uuid4().hex


def client_enroll(
    app_id: str,
    server: str | tuple[str, int],
    out: str | Path | None = None,
    *,
    params: EnrollParams | None = None,
    transcript: list[bytes] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> Vault:
    """Ask the server to enroll ``app_id``; writes the vault to ``out`` if given.

    Raises:
        Duplicate: already enrolled and ``params.force`` is false.
        EnrollFailed: the FE could not build a vault from the app's data.
        TransportError: the server or, through it, the FE is unreachable.
    """
    params = params or EnrollParams()
    corr_id = _corr_id()
    request = {
        "type": MessageType.ENROLL_REQUEST.value,
        "corr_id": corr_id,
        "app_id": app_id,
        "params": params.to_dict(),
    }
    reply = _expect(exchange(server, request, timeout=timeout, transcript=transcript), MessageType.VAULT_DELIVERY, corr_id)
    v = _vault_from_wire(reply["vault"])
    if out is not None:
        atomic_write(out, serialize_vault(v))
    return v


def client_authenticate(
    app_id: str,
    vault: Vault | str | Path,
    server: str | tuple[str, int],
    *,
    transcript: list[bytes] | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> bool:
    """True iff the server accepts the app's current behavior against ``vault``.

    Raises:
        UnknownApp: the server has no registration for ``app_id``.
    """
    if not isinstance(vault, Vault):
        vault = deserialize_vault(Path(vault).read_bytes())
    corr_id = _corr_id()
    request = {
        "type": MessageType.AUTH_REQUEST.value,
        "corr_id": corr_id,
        "app_id": app_id,
        "vault": _vault_to_wire(vault),
    }
    reply = _expect(exchange(server, request, timeout=timeout, transcript=transcript), MessageType.AUTH_RESULT, corr_id)
    if reply.get("error"):
        log.info("authentication of %s rejected: %s", app_id, reply["error"])
    return reply.get("accepted") is True
