# src/core/sandbox.py - Confined execution of terminal commands and approved attachment scripts

import asyncio
import logging
import os
import shutil
import signal
import time
from pathlib import Path
from typing import Any, Callable, Optional

from ..models.execution import TIMEOUT_EXIT_STATUS, ExecPolicy, ExecResult, PolicyViolationRecord
from ..models.ontology import HyperedgeKind, Lifecycle
from ..utils.digests import sha256_bytes
from ..utils.paths import resolve_inside_root
from .docker_runner import run_in_container
from .documents import safe_filename
from .errors import AttachmentRefused, PolicyViolation, SpawnError, UnknownEntity
from .ontology import OntologySnapshot
from .scripting import GUARD_RUNNER, GUARD_RUNNER_NAME, is_network_module, network_imports

logger = logging.getLogger(__name__)

# --- Configuration ---
POLICY_EXIT_STATUS = 126
ATTACHMENT_STAGING_DIR = ".attachments"
READ_CHUNK = 4096

AuditHook = Callable[[str, dict[str, Any]], None]
DigestPins = Callable[[str], dict[str, str]]


# Interpreter options that take program text instead of a script file
PYTHON_PROGRAMS = ("python", "python3")
PYTHON_CODE_FLAGS = "cm"
PYTHON_VALUE_FLAGS = "WX"


def _python_inline(argv: list[str]) -> Optional[tuple[str, str, Optional[int]]]:
    """(flag, program text, index of the text in argv or None when attached to the flag)."""
    i = 1
    while i < len(argv):
        arg = argv[i]
        if not arg.startswith("-") or arg == "-" or arg == "--":
            return None
        if not arg.startswith("--"):
            cluster = arg[1:]
            for j, flag in enumerate(cluster):
                rest = cluster[j + 1:]
                if flag in PYTHON_CODE_FLAGS:
                    if rest:
                        return f"-{flag}", rest, None
                    return f"-{flag}", argv[i + 1] if i + 1 < len(argv) else "", i + 1
                if flag in PYTHON_VALUE_FLAGS:
                    if not rest:
                        i += 1
                    break
        i += 1
    return None


def _sqlite_inline(argv: list[str]) -> Optional[tuple[str, str, Optional[int]]]:
    # anything after the database file is SQL or dot-commands
    for i, arg in enumerate(argv[1:], 1):
        if arg == "-cmd":
            return "-cmd", argv[i + 1] if i + 1 < len(argv) else "", i + 1
    positional = [i for i, arg in enumerate(argv[1:], 1) if not arg.startswith("-")]
    if len(positional) > 1:
        return "sql", argv[positional[1]], positional[1]
    return None


def _inline_code(argv: list[str]) -> Optional[tuple[str, str, Optional[int]]]:
    program = Path(argv[0]).name
    if program in PYTHON_PROGRAMS:
        return _python_inline(argv)
    if program == "sqlite3":
        return _sqlite_inline(argv)
    return None


def _argument_value(arg: str) -> Optional[str]:
    if arg.startswith("-"):
        return arg.split("=", 1)[1] if "=" in arg else None
    return arg


def check_arguments(args: list[str], policy: ExecPolicy) -> list[PolicyViolationRecord]:
    """Every argument value is resolved against the jail; symlinks are followed."""
    violations = []
    for arg in args:
        value = _argument_value(arg)
        if not value:
            continue
        if value.startswith("~") or resolve_inside_root(policy.working_root, value) is None:
            violations.append(PolicyViolationRecord(
                rule="path-escape", argument=arg, message=f"'{arg}' resolves outside the working root",
            ))
    return violations


def check_policy(argv: list[str], policy: ExecPolicy) -> list[PolicyViolationRecord]:
    """Static checks run before anything is spawned."""
    violations = []
    if not argv:
        return [PolicyViolationRecord(rule="program-not-allowed", message="empty command")]
    program = argv[0]
    if program not in policy.allowed_programs:
        violations.append(PolicyViolationRecord(
            rule="program-not-allowed", argument=program,
            message=f"'{program}' is not in the allowlist {sorted(policy.allowed_programs)}",
        ))
    args = list(argv[1:])
    inline = _inline_code(argv)
    if inline is not None:
        flag, text, index = inline
        if index is not None and index <= len(args):
            args[index - 1] = ""
        if not policy.allow_inline_code:
            violations.append(PolicyViolationRecord(
                rule="inline-code", argument=flag,
                message=f"'{program} {flag}' runs program text; inline code is disabled by this policy",
            ))
        elif Path(program).name in PYTHON_PROGRAMS:
            problems = [f"module '{text}' uses the network"] if flag == "-m" and is_network_module(text) else []
            if flag == "-c":
                problems = network_imports(text)
            violations.extend(PolicyViolationRecord(rule="network-denied", argument=flag, message=problem)
                              for problem in problems)
    violations.extend(check_arguments(args, policy))
    return violations


def filtered_environment(policy: ExecPolicy) -> dict[str, str]:
    return {name: os.environ[name] for name in policy.env_passthrough if name in os.environ}


def _cap(data: bytes, limit: int) -> tuple[str, bool]:
    # errors="ignore" keeps the decoded text within the byte cap
    truncated = len(data) > limit
    return data[:limit].decode("utf-8", errors="ignore"), truncated


async def _drain(stream: asyncio.StreamReader, sink: bytearray, keep: int) -> None:
    while True:
        chunk = await stream.read(READ_CHUNK)
        if not chunk:
            return
        room = keep - len(sink)
        if room > 0:
            sink.extend(chunk[:room])


async def _run_process(argv: list[str], policy: ExecPolicy, session_id: Optional[str]) -> tuple[int, bytes, bytes, bool]:
    executable = shutil.which(argv[0])
    if executable is None:
        raise SpawnError(f"Program '{argv[0]}' not found on this host", {"program": argv[0]})
    try:
        process = await asyncio.create_subprocess_exec(
            executable, *argv[1:],
            cwd=str(policy.working_root),
            env=filtered_environment(policy),
            stdin=asyncio.subprocess.DEVNULL,
            stdout=asyncio.subprocess.PIPE,
            stderr=asyncio.subprocess.PIPE,
            start_new_session=True,
        )
    except OSError as e:
        logger.error(f"Shell Execution (Session: {session_id}): spawn failed for {argv}: {e}", exc_info=True)
        raise SpawnError(f"Failed to start '{argv[0]}': {e}", {"program": argv[0]})

    # one byte past the cap is kept so truncation is detectable
    keep = policy.max_output_bytes + 1
    stdout, stderr = bytearray(), bytearray()
    readers = asyncio.gather(_drain(process.stdout, stdout, keep), _drain(process.stderr, stderr, keep))
    timed_out = False
    try:
        await asyncio.wait_for(process.wait(), timeout=policy.wall_timeout)
    except asyncio.TimeoutError:
        timed_out = True
        logger.warning(f"Shell Execution (Session: {session_id}): {argv[0]} exceeded {policy.wall_timeout}s, killing")
        try:
            os.killpg(process.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        await process.wait()
    try:
        await asyncio.wait_for(readers, timeout=1.0)
    except asyncio.TimeoutError:
        readers.cancel()
    exit_code = TIMEOUT_EXIT_STATUS if timed_out else process.returncode
    return exit_code, bytes(stdout), bytes(stderr), timed_out


def _refuse(argv: list[str], violations: list[PolicyViolationRecord], session_id: Optional[str]) -> PolicyViolation:
    logger.warning(f"Shell Execution (Session: {session_id}): refused {argv}: {[v.rule for v in violations]}")
    return PolicyViolation(violations[0].message, {"violations": [v.model_dump() for v in violations]})


async def _execute(argv: list[str], policy: ExecPolicy, session_id: Optional[str]) -> ExecResult:
    started = time.monotonic()
    if policy.backend == "container":
        exit_code, out, err, timed_out = await run_in_container(argv, policy, session_id)
    else:
        exit_code, out, err, timed_out = await _run_process(argv, policy, session_id)
    duration = time.monotonic() - started

    stdout, stdout_truncated = _cap(out, policy.max_output_bytes)
    stderr, stderr_truncated = _cap(err, policy.max_output_bytes)
    logger.info(f"Shell Execution (Session: {session_id}): {argv[0]} exited {exit_code} in {duration:.2f}s")
    return ExecResult(
        exit_status=exit_code,
        stdout_capture=stdout,
        stderr_capture=stderr,
        stdout_truncated=stdout_truncated,
        stderr_truncated=stderr_truncated,
        timed_out=timed_out,
        duration=duration,
    )


async def run_command(argv: list[str], policy: ExecPolicy, *, session_id: Optional[str] = None,
                      raise_on_violation: bool = True) -> ExecResult:
    """
    Executes argv inside the policy's jail. Violations stop the command before it
    starts: raised as PolicyViolation, or returned as a result carrying them.
    """
    violations = check_policy(argv, policy)
    if violations:
        error = _refuse(argv, violations, session_id)
        if raise_on_violation:
            raise error
        return ExecResult(exit_status=POLICY_EXIT_STATUS, policy_violations=violations)
    return await _execute(argv, policy, session_id)


def _attachment_bytes(snapshot: OntologySnapshot, relative: str) -> bytes:
    if snapshot.root is None:
        raise AttachmentRefused("The ontology is not bound to a root directory; attachments cannot be resolved")
    path = resolve_inside_root(snapshot.root, relative)
    if path is None or not path.is_file():
        raise AttachmentRefused(f"Attachment '{relative}' does not exist under the ontology root",
                                {"attachment": relative})
    return path.read_bytes()


async def run_attachment(snapshot: OntologySnapshot, hyperedge_id: str, attachment_index: int,
                         bound_args: list[str], policy: ExecPolicy, pins: DigestPins, *,
                         session_id: Optional[str] = None, audit: Optional[AuditHook] = None,
                         override: Optional[ExecPolicy] = None) -> ExecResult:
    """
    Runs one attachment of an approved procedural hyperedge after re-checking its
    pinned digest. The interpreter comes with the approval rather than the
    allowlist; bound arguments still go through the jail check, and the script
    runs behind a socket guard after an import check for network modules.
    """
    if override is not None:
        if not override.is_narrower_than(policy):
            raise PolicyViolation("Attachment policy override must be narrower than the session policy",
                                  {"hyperedge_id": hyperedge_id})
        policy = override
    he = snapshot.hyperedges.get(hyperedge_id)
    if he is None:
        raise UnknownEntity(f"Unknown hyperedge '{hyperedge_id}'")
    if he.lifecycle != Lifecycle.APPROVED:
        raise AttachmentRefused(f"Hyperedge '{hyperedge_id}' is {he.lifecycle.value}; only approved attachments run",
                                {"lifecycle": he.lifecycle.value})
    if he.kind != HyperedgeKind.PROCEDURAL:
        raise AttachmentRefused(f"Hyperedge '{hyperedge_id}' is declarative and carries no executable protocol")
    if not 0 <= attachment_index < len(he.attachments):
        raise UnknownEntity(f"Hyperedge '{hyperedge_id}' has no attachment #{attachment_index}",
                            {"attachments": len(he.attachments)})

    relative = he.attachments[attachment_index]
    data = _attachment_bytes(snapshot, relative)
    digest = sha256_bytes(data)
    pinned = pins(hyperedge_id).get(relative)
    if pinned is None:
        raise AttachmentRefused(f"No digest was pinned for '{relative}' at approval time", {"attachment": relative})
    if pinned != digest:
        logger.warning(f"Attachment Execution (Session: {session_id}): digest mismatch on {relative}")
        raise AttachmentRefused(f"Attachment '{relative}' changed after approval (digest mismatch)",
                                {"attachment": relative, "pinned": pinned, "actual": digest})
    problems = network_imports(data.decode("utf-8", errors="replace"))
    if problems:
        logger.warning(f"Attachment Execution (Session: {session_id}): {relative} imports network modules")
        raise AttachmentRefused(f"Attachment '{relative}' is refused: {problems[0]}",
                                {"attachment": relative, "rule": "network-denied", "problems": problems})
    violations = check_arguments(list(bound_args), policy)
    if violations:
        raise _refuse(bound_args, violations, session_id)

    # scripts see only the jail, so the verified bytes are staged inside it
    staging = Path(policy.working_root) / ATTACHMENT_STAGING_DIR
    staging.mkdir(exist_ok=True)
    staged = staging / f"{safe_filename(hyperedge_id)}-{attachment_index}.py"
    staged.write_bytes(data)
    (staging / GUARD_RUNNER_NAME).write_text(GUARD_RUNNER)
    argv = ["python3", "-I", f"{ATTACHMENT_STAGING_DIR}/{GUARD_RUNNER_NAME}",
            f"{ATTACHMENT_STAGING_DIR}/{staged.name}", *bound_args]
    result = await _execute(argv, policy, session_id)
    result.attachment_digest = digest

    if audit is not None:
        audit("attachment_exec", {
            "hyperedge_id": hyperedge_id, "attachment": relative, "digest": digest,
            "exit_status": result.exit_status, "timed_out": result.timed_out,
        })
    return result
