# tests/test_sandbox.py - Confined command execution and attachment runs

import json

import pytest

from src.core.docker_runner import get_docker_client
from src.core.errors import AttachmentRefused, PolicyViolation, SpawnError
from src.core.ontology import OntologyStore
from src.core.sandbox import POLICY_EXIT_STATUS, check_policy, run_attachment, run_command
from src.core.scripting import create_attachment_script
from src.models.execution import TIMEOUT_EXIT_STATUS, ExecPolicy
from src.models.ontology import Hyperedge, HyperedgeKind, Lifecycle
from src.utils.digests import sha256_text
from tests.conftest import RECEIPT, mini_edges, mini_nodes

SCRIPT = create_attachment_script("findings['args'] = args", "hyperedge:receipt_check")


@pytest.fixture
def jail(tmp_path):
    root = tmp_path / "jail"
    root.mkdir()
    (root / "notes.txt").write_text("one\ntwo\nthree\n")
    (tmp_path / "secret.txt").write_text("TOP-SECRET\n")
    (root / "evil").symlink_to(tmp_path / "secret.txt")
    return root


@pytest.fixture
def policy(jail):
    return ExecPolicy(allowed_programs=["cat", "wc", "ls"], working_root=jail, wall_timeout=10)


def store_with_script(root, script: str) -> OntologyStore:
    (root / "attachments").mkdir(parents=True)
    (root / "attachments" / "receipt_check.py").write_text(script)
    hyperedges = [
        Hyperedge(id="hyperedge:receipt_check", title="Receipt Check", kind=HyperedgeKind.PROCEDURAL,
                  member_nodes=[RECEIPT], attachments=["attachments/receipt_check.py"], lifecycle=Lifecycle.APPROVED),
        Hyperedge(id="hyperedge:pending_check", title="Pending Check", kind=HyperedgeKind.PROCEDURAL,
                  member_nodes=[RECEIPT], attachments=["attachments/receipt_check.py"],
                  lifecycle=Lifecycle.PENDING_REVIEW),
        Hyperedge(id="hyperedge:receipts", title="Receipts", member_nodes=[RECEIPT], lifecycle=Lifecycle.APPROVED),
    ]
    return OntologyStore.from_entities(mini_nodes(), mini_edges(), hyperedges, root=root)


@pytest.fixture
def attachment_store(tmp_path):
    return store_with_script(tmp_path / "onto", SCRIPT)


def pins_for(text: str):
    return lambda he_id: {"attachments/receipt_check.py": sha256_text(text)}


# --- Static policy ---

def test_allowlist(policy):
    assert [v.rule for v in check_policy(["rm", "notes.txt"], policy)] == ["program-not-allowed"]
    assert check_policy(["cat", "notes.txt"], policy) == []


@pytest.mark.parametrize("arg", ["../outside.txt", "/etc/passwd", "~/secrets", "--file=../../x", "sub/../../x",
                                 "evil", "--in=evil", "..", "evil/../notes.txt"])
def test_path_escape(policy, arg):
    assert [v.rule for v in check_policy(["cat", arg], policy)] == ["path-escape"]


def test_paths_inside_the_jail_pass(policy):
    assert check_policy(["cat", "./notes.txt", "sub/../notes.txt", "--out=logs/a.txt"], policy) == []


def test_default_allowlist_has_no_interpreters(jail):
    policy = ExecPolicy(working_root=jail)
    assert not {"python3", "sqlite3"} & set(policy.allowed_programs)
    rules = [v.rule for v in check_policy(["python3", "-c", "print(open('../secret.txt').read())"], policy)]
    assert rules == ["program-not-allowed", "inline-code"]


@pytest.mark.parametrize("argv", [
    ["python3", "-c", "print(1)"],
    ["python3", "-Ic", "print(1)"],
    ["python3", "-W", "ignore", "-c", "print(1)"],
    ["python3", "-m", "json.tool"],
    ["python3", "-c"],
    ["sqlite3", "data.sqlite", ".shell cat ../secret.txt"],
    ["sqlite3", "-cmd", ".read dump.sql", "data.sqlite"],
])
def test_inline_code_is_refused(jail, argv):
    policy = ExecPolicy(allowed_programs=["python3", "sqlite3"], working_root=jail)
    assert [v.rule for v in check_policy(argv, policy)] == ["inline-code"]


def test_script_files_are_not_inline_code(jail):
    policy = ExecPolicy(allowed_programs=["python3", "sqlite3"], working_root=jail)
    assert check_policy(["python3", "-u", "job.py", "-c"], policy) == []
    assert check_policy(["sqlite3", "-readonly", "data.sqlite"], policy) == []


@pytest.mark.parametrize("argv", [
    ["python3", "-c", "import socket"],
    ["python3", "-c", "from urllib import request"],
    ["python3", "-c", "import http.client as h"],
    ["python3", "-c", "__import__('socket')"],
    ["python3", "-m", "http.server"],
])
def test_inline_code_may_not_use_the_network(jail, argv):
    policy = ExecPolicy(allowed_programs=["python3"], working_root=jail, allow_inline_code=True)
    assert [v.rule for v in check_policy(argv, policy)] == ["network-denied"]


def test_inline_code_needs_the_flag_to_narrow(jail):
    loose = ExecPolicy(allowed_programs=["python3"], working_root=jail, allow_inline_code=True)
    strict = ExecPolicy(allowed_programs=["python3"], working_root=jail)
    assert strict.is_narrower_than(loose)
    assert not loose.is_narrower_than(strict)


def test_policy_needs_existing_root(tmp_path):
    with pytest.raises(ValueError):
        ExecPolicy(working_root=tmp_path / "missing")


def test_narrower_policy(policy, jail):
    (jail / "inner").mkdir()
    narrow = ExecPolicy(allowed_programs=["cat"], working_root=jail / "inner", wall_timeout=1)
    assert narrow.is_narrower_than(policy)
    assert not policy.is_narrower_than(narrow)


# --- Process backend ---

async def test_runs_inside_the_jail(policy):
    result = await run_command(["wc", "-l", "notes.txt"], policy, session_id="t1")
    assert result.exit_status == 0
    assert result.stdout_capture.split()[0] == "3"
    assert not result.timed_out


async def test_violation_raises_or_returns(policy):
    with pytest.raises(PolicyViolation):
        await run_command(["rm", "-rf", "."], policy)
    result = await run_command(["cat", "../x"], policy, raise_on_violation=False)
    assert result.exit_status == POLICY_EXIT_STATUS
    assert result.policy_violations[0].rule == "path-escape"


async def test_wall_timeout_kills_the_process(jail):
    policy = ExecPolicy(allowed_programs=["python3"], working_root=jail, wall_timeout=0.5, allow_inline_code=True)
    result = await run_command(["python3", "-c", "import time; time.sleep(30)"], policy)
    assert result.timed_out
    assert result.exit_status == TIMEOUT_EXIT_STATUS
    assert result.duration < 10


async def test_output_is_capped(jail):
    policy = ExecPolicy(allowed_programs=["python3"], working_root=jail, max_output_bytes=100, allow_inline_code=True)
    result = await run_command(["python3", "-c", "print('x' * 5000)"], policy)
    assert result.exit_status == 0
    assert result.stdout_truncated
    assert len(result.stdout_capture.encode()) == 100
    assert not result.stderr_truncated


async def test_environment_is_filtered(jail, monkeypatch):
    monkeypatch.setenv("SECRET_TOKEN", "hunter2")
    monkeypatch.setenv("VISIBLE_FLAG", "yes")
    policy = ExecPolicy(allowed_programs=["python3"], working_root=jail, env_passthrough=["VISIBLE_FLAG"],
                        allow_inline_code=True)
    code = "import os, json; print(json.dumps(sorted(k for k in os.environ if k in ('SECRET_TOKEN', 'VISIBLE_FLAG'))))"
    result = await run_command(["python3", "-c", code], policy)
    assert json.loads(result.stdout_capture) == ["VISIBLE_FLAG"]


async def test_missing_program(jail):
    policy = ExecPolicy(allowed_programs=["definitely-not-installed-xyz"], working_root=jail)
    with pytest.raises(SpawnError):
        await run_command(["definitely-not-installed-xyz"], policy)


# --- Attachments ---

async def test_attachment_runs_with_pinned_digest(attachment_store, policy):
    audited = []
    result = await run_attachment(attachment_store.snapshot, "hyperedge:receipt_check", 0, ["R-1"], policy,
                                  pins_for(SCRIPT), session_id="t2",
                                  audit=lambda kind, data: audited.append(kind))
    assert result.exit_status == 0, result.stderr_capture
    assert json.loads(result.stdout_capture) == {"hyperedge": "hyperedge:receipt_check", "findings": {"args": ["R-1"]}}
    assert result.attachment_digest == sha256_text(SCRIPT)
    assert audited == ["attachment_exec"]


async def test_attachment_importing_the_network_is_refused(tmp_path, policy):
    script = create_attachment_script("import urllib.request\nfindings['page'] = 1", "hyperedge:receipt_check")
    store = store_with_script(tmp_path / "net", script)
    with pytest.raises(AttachmentRefused) as exc:
        await run_attachment(store.snapshot, "hyperedge:receipt_check", 0, [], policy, pins_for(script))
    assert exc.value.detail["rule"] == "network-denied"


async def test_attachment_sockets_are_disabled(tmp_path, policy):
    script = create_attachment_script("sys.modules['socket'].socket()", "hyperedge:receipt_check")
    store = store_with_script(tmp_path / "sock", script)
    result = await run_attachment(store.snapshot, "hyperedge:receipt_check", 0, [], policy, pins_for(script))
    assert result.exit_status == 1
    assert "network access is denied" in result.stderr_capture


async def test_attachment_arguments_stay_in_the_jail(attachment_store, policy):
    with pytest.raises(PolicyViolation):
        await run_attachment(attachment_store.snapshot, "hyperedge:receipt_check", 0, ["evil"], policy,
                             pins_for(SCRIPT))


async def test_symlinked_file_is_never_read(policy):
    result = await run_command(["cat", "evil"], policy, raise_on_violation=False)
    assert result.exit_status == POLICY_EXIT_STATUS
    assert "TOP-SECRET" not in result.stdout_capture


async def test_attachment_digest_mismatch(attachment_store, policy):
    path = attachment_store.root / "attachments" / "receipt_check.py"
    path.write_text(SCRIPT + "\nprint('tampered')\n")
    with pytest.raises(AttachmentRefused) as exc:
        await run_attachment(attachment_store.snapshot, "hyperedge:receipt_check", 0, [], policy, pins_for(SCRIPT))
    assert exc.value.detail["pinned"] == sha256_text(SCRIPT)


async def test_attachment_without_pin(attachment_store, policy):
    with pytest.raises(AttachmentRefused):
        await run_attachment(attachment_store.snapshot, "hyperedge:receipt_check", 0, [], policy, lambda he_id: {})


@pytest.mark.parametrize("he_id", ["hyperedge:pending_check", "hyperedge:receipts"])
async def test_only_approved_procedural_attachments_run(attachment_store, policy, he_id):
    with pytest.raises(AttachmentRefused):
        await run_attachment(attachment_store.snapshot, he_id, 0, [], policy, pins_for(SCRIPT))


async def test_override_must_be_narrower(attachment_store, policy, jail):
    wider = ExecPolicy(allowed_programs=["python3", "bash"], working_root=jail)
    with pytest.raises(PolicyViolation):
        await run_attachment(attachment_store.snapshot, "hyperedge:receipt_check", 0, [], policy, pins_for(SCRIPT),
                             override=wider)


# --- Container backend ---

@pytest.fixture
def docker_available():
    try:
        get_docker_client()
    except SpawnError:
        pytest.skip("Docker daemon not reachable")


async def test_container_backend_runs_in_jail(docker_available, jail):
    policy = ExecPolicy(allowed_programs=["cat"], working_root=jail, backend="container", wall_timeout=60)
    try:
        result = await run_command(["cat", "notes.txt"], policy, session_id="container-test")
    except SpawnError as e:
        pytest.skip(f"Container backend unusable here: {e.message}")
    assert result.exit_status == 0
    assert result.stdout_capture == "one\ntwo\nthree\n"
