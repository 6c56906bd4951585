"""Two-step command gate: classify each submitted command line, check it
against the whitelist, and hand allowed commands to the dispatcher.

Nothing here ever reaches a system shell.  Batch verbs translate to queue
operations; OS verbs run as built-in emulations confined to the user's
workspace directory.  Shell metacharacters survive word splitting only as
literal argument text.
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field
from pathlib import Path

MAX_COMMAND_BYTES = 4096

BATCH_COMMANDS = frozenset({"qsub", "qstat", "qdel", "qnodes"})

CLASS_BATCH = "batch"
CLASS_OS = "os"

REASON_NOT_WHITELISTED = "NotWhitelisted"
REASON_FORBIDDEN_FLAG = "ForbiddenFlag"
REASON_PARSE_ERROR = "ParseError"

DEFAULT_WHITELIST_TEXT = """\
# Allowed commands. NAME alone = any flags; NAME FLAG[,FLAG...] = only those.
qsub
qstat
qdel
qnodes
ls -l
cat
echo
pwd
"""


class GatewayError(Exception):
    pass


class CommandParseError(GatewayError):
    """Unbalanced quote, NUL byte, empty line or oversized command."""


class DispatchRejected(GatewayError):
    """dispatch_command was handed a rejected verdict (programming error)."""


class WorkspaceEscape(GatewayError):
    """An OS command path resolved outside the user's workspace."""


class WhitelistLoadError(GatewayError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


_ENTRY_NAME_RE = re.compile(r"^[a-z0-9_-]+$")


@dataclass(frozen=True)
class CommandRequest:
    request_id: str
    user_id: str
    raw_line: str
    submitted_at: float


@dataclass(frozen=True)
class WhitelistEntry:
    name: str
    flags: frozenset[str] | None  # None = wildcard: any flags allowed


@dataclass(frozen=True)
class Whitelist:
    entries: dict[str, WhitelistEntry]
    revision: int
    source_path: str = ""

    @classmethod
    def parse(cls, text: str, revision: int = 1,
              source_path: str = "") -> "Whitelist":
        entries: dict[str, WhitelistEntry] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(None, 1)
            name = parts[0]
            if not _ENTRY_NAME_RE.match(name):
                raise WhitelistLoadError(f"bad command name {name!r}", lineno)
            if name in entries:
                raise WhitelistLoadError(f"duplicate entry {name!r}", lineno)
            if len(parts) == 1:
                entries[name] = WhitelistEntry(name, None)
            else:
                flags = frozenset(f.strip() for f in parts[1].split(",")
                                  if f.strip())
                entries[name] = WhitelistEntry(name, flags)
        return cls(entries=entries, revision=revision, source_path=source_path)

    @classmethod
    def load(cls, path: str | Path, revision: int = 1) -> "Whitelist":
        text = Path(path).read_text(encoding="utf-8")
        return cls.parse(text, revision=revision, source_path=str(path))


@dataclass(frozen=True)
class CommandVerdict:
    allowed: bool
    command_class: str | None = None
    reason: str | None = None
    detail: str = ""


def split_command(raw_line: str) -> list[str]:
    """Shell-like word splitting with no expansion or substitution."""
    if not isinstance(raw_line, str):
        raise CommandParseError("command must be a string")
    if "\x00" in raw_line:
        raise CommandParseError("command contains NUL byte")
    if len(raw_line.encode("utf-8", errors="replace")) > MAX_COMMAND_BYTES:
        raise CommandParseError(f"command exceeds {MAX_COMMAND_BYTES} bytes")
    if not raw_line.strip():
        raise CommandParseError("empty command")
    try:
        tokens = shlex.split(raw_line, comments=False, posix=True)
    except ValueError as exc:
        raise CommandParseError(str(exc)) from None
    if not tokens:
        raise CommandParseError("empty command")
    return tokens


def classify_command(raw_line: str) -> str:
    """Batch-system verb or plain OS command; deterministic in raw_line."""
    tokens = split_command(raw_line)
    return CLASS_BATCH if tokens[0] in BATCH_COMMANDS else CLASS_OS


def filter_command(request: CommandRequest, whitelist: Whitelist) -> CommandVerdict:
    """Pure verdict for (raw_line, whitelist revision); rejection is a value."""
    try:
        tokens = split_command(request.raw_line)
    except CommandParseError as exc:
        return CommandVerdict(allowed=False, reason=REASON_PARSE_ERROR,
                              detail=str(exc))
    name = tokens[0]
    command_class = CLASS_BATCH if name in BATCH_COMMANDS else CLASS_OS
    entry = whitelist.entries.get(name)
    if entry is None:
        return CommandVerdict(allowed=False, reason=REASON_NOT_WHITELISTED,
                              detail=f"{name!r} is not an allowed command")
    if entry.flags is not None:
        for tok in tokens[1:]:
            if tok.startswith("-") and tok not in entry.flags:
                return CommandVerdict(allowed=False,
                                      reason=REASON_FORBIDDEN_FLAG,
                                      detail=f"flag {tok!r} not allowed for "
                                             f"{name!r}")
    return CommandVerdict(allowed=True, command_class=command_class)


def resolve_in_workspace(workspace: Path, relpath: str) -> Path:
    """Resolve a user-supplied path, refusing anything outside the workspace."""
    root = workspace.resolve()
    target = (root / relpath).resolve()
    if target != root and not target.is_relative_to(root):
        raise WorkspaceEscape(f"path {relpath!r} leaves the workspace")
    return target


@dataclass(frozen=True)
class DispatchReceipt:
    request_id: str
    action: str
    result: dict = field(default_factory=dict)
    error: str = ""


class Dispatcher:
    """Executes allowed commands against the queue or the workspace emulations.

    The queue hooks are injected so the gateway stays decoupled from the
    cluster core; `workspace_root` holds one directory per username.
    """

    def __init__(self, workspace_root: Path, *, submit_job, list_jobs,
                 cancel_job, list_nodes, username_of):
        self.workspace_root = Path(workspace_root)
        self._submit_job = submit_job
        self._list_jobs = list_jobs
        self._cancel_job = cancel_job
        self._list_nodes = list_nodes
        self._username_of = username_of

    def workspace_for(self, user_id: str) -> Path:
        username = self._username_of(user_id)
        if username is None:
            raise GatewayError(f"no workspace for unknown user {user_id!r}")
        ws = self.workspace_root / username
        ws.mkdir(parents=True, exist_ok=True)
        return ws

    def dispatch(self, request: CommandRequest,
                 verdict: CommandVerdict) -> DispatchReceipt:
        if not verdict.allowed:
            raise DispatchRejected("cannot dispatch a rejected command")
        tokens = split_command(request.raw_line)
        name, args = tokens[0], tokens[1:]
        if verdict.command_class == CLASS_BATCH:
            return self._dispatch_batch(request, name, args)
        return self._dispatch_os(request, name, args)

    def _dispatch_batch(self, request: CommandRequest, name: str,
                        args: list[str]) -> DispatchReceipt:
        positional = [a for a in args if not a.startswith("-")]
        if name == "qsub":
            if len(positional) != 1:
                return DispatchReceipt(request.request_id, "qsub",
                                       error="usage: qsub SCRIPT_FILE")
            ws = self.workspace_for(request.user_id)
            path = resolve_in_workspace(ws, positional[0])
            if not path.is_file():
                return DispatchReceipt(request.request_id, "qsub",
                                       error=f"no such file: {positional[0]}")
            job_id = self._submit_job(request.user_id,
                                      path.read_text(encoding="utf-8"))
            return DispatchReceipt(request.request_id, "qsub",
                                   result={"job_id": job_id})
        if name == "qstat":
            return DispatchReceipt(request.request_id, "qstat",
                                   result={"jobs": self._list_jobs()})
        if name == "qdel":
            if len(positional) != 1 or not positional[0].isdigit():
                return DispatchReceipt(request.request_id, "qdel",
                                       error="usage: qdel JOB_ID")
            self._cancel_job(request.user_id, int(positional[0]))
            return DispatchReceipt(request.request_id, "qdel",
                                   result={"job_id": int(positional[0])})
        if name == "qnodes":
            return DispatchReceipt(request.request_id, "qnodes",
                                   result={"nodes": self._list_nodes()})
        return DispatchReceipt(request.request_id, name,
                               error=f"unsupported batch verb {name!r}")

    def _dispatch_os(self, request: CommandRequest, name: str,
                     args: list[str]) -> DispatchReceipt:
        positional = [a for a in args if not a.startswith("-")]
        ws = self.workspace_for(request.user_id)
        if name == "ls":
            target = resolve_in_workspace(ws, positional[0] if positional else ".")
            if not target.exists():
                return DispatchReceipt(request.request_id, "ls",
                                       error=f"no such path: "
                                             f"{positional[0] if positional else '.'}")
            if target.is_file():
                paths = [target]
            else:
                paths = sorted(target.iterdir(), key=lambda p: p.name)
            if "-l" in args:
                listing = [f"{p.stat().st_size:>10} {p.name}" for p in paths]
            else:
                listing = [p.name for p in paths]
            return DispatchReceipt(request.request_id, "ls",
                                   result={"entries": listing})
        if name == "cat":
            if not positional:
                return DispatchReceipt(request.request_id, "cat",
                                       error="usage: cat FILE")
            path = resolve_in_workspace(ws, positional[0])
            if not path.is_file():
                return DispatchReceipt(request.request_id, "cat",
                                       error=f"no such file: {positional[0]}")
            return DispatchReceipt(request.request_id, "cat",
                                   result={"content":
                                           path.read_text(encoding="utf-8")})
        if name == "echo":
            # arguments are literal text; metacharacters are never interpreted
            return DispatchReceipt(request.request_id, "echo",
                                   result={"content": " ".join(args)})
        if name == "pwd":
            return DispatchReceipt(request.request_id, "pwd",
                                   result={"content": "/"})
        return DispatchReceipt(request.request_id, name,
                               error=f"no emulation for {name!r}")
