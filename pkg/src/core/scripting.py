# src/core/scripting.py - Boilerplate for procedural-hyperedge attachment scripts
# The drafted body fills a `findings` dict; the footer prints it as one JSON document.

import ast

# Modules that open sockets or load modules by name; sandboxed Python may not import them.
NETWORK_MODULES = frozenset({
    "socket", "socketserver", "ssl", "http", "urllib.request", "urllib.error", "ftplib", "poplib", "imaplib",
    "smtplib", "telnetlib", "asyncio", "aiohttp", "requests", "httpx", "websocket", "websockets", "importlib",
})

GUARD_RUNNER_NAME = "_network_guard.py"
GUARD_RUNNER = '''# Disables socket creation, then runs the staged script as __main__
import runpy
import socket
import sys


def _denied(*args, **kwargs):
    raise PermissionError("network access is denied inside the sandbox")


for _name in ("socket", "socketpair", "fromfd", "create_connection", "create_server", "getaddrinfo"):
    setattr(socket, _name, _denied)

sys.argv = sys.argv[1:]
runpy.run_path(sys.argv[0], run_name="__main__")
'''


def is_network_module(name: str) -> bool:
    parts = name.split(".")
    return any(".".join(parts[:i]) in NETWORK_MODULES for i in range(1, len(parts) + 1))


class NetworkImportValidator(ast.NodeVisitor):
    """Deny-by-name import check: network modules and dynamic __import__ calls."""

    def __init__(self):
        self.errors: list[str] = []

    def visit_Import(self, node: ast.Import) -> None:
        for alias in node.names:
            if is_network_module(alias.name):
                self.errors.append(f"line {node.lineno}: import of network module '{alias.name}'")
        self.generic_visit(node)

    def visit_ImportFrom(self, node: ast.ImportFrom) -> None:
        module = node.module or ""
        names = [module] + [f"{module}.{alias.name}" for alias in node.names]
        blocked = next((name for name in names if name and is_network_module(name)), None)
        if blocked:
            self.errors.append(f"line {node.lineno}: import from network module '{blocked}'")
        self.generic_visit(node)

    def visit_Call(self, node: ast.Call) -> None:
        func = node.func
        name = func.id if isinstance(func, ast.Name) else func.attr if isinstance(func, ast.Attribute) else ""
        if name == "__import__":
            self.errors.append(f"line {node.lineno}: dynamic __import__ call")
        self.generic_visit(node)


def network_imports(source: str) -> list[str]:
    """Problems found in `source`. Unparseable source yields none; the interpreter reports it."""
    try:
        tree = ast.parse(source)
    except SyntaxError:
        return []
    validator = NetworkImportValidator()
    validator.visit(tree)
    return validator.errors


def create_attachment_script(body: str, hyperedge_id: str) -> str:
    """
    Wraps a drafted script body with the standard argument parsing and
    findings-emitting boilerplate. The body sees `args` (the bound arguments
    as a list of strings) and must populate `findings`.
    """
    boilerplate_header = f'''#!/usr/bin/env python3
# Attachment of {hyperedge_id}
import json
import sys

args = sys.argv[1:]
findings = {{}}

try:
    # --- Drafted body starts ---
'''
    body_lines = body.strip().splitlines() or ["pass"]
    indented_body = "\n".join("    " + line if line.strip() else "" for line in body_lines)
    boilerplate_footer = f'''
    # --- Drafted body ends ---
except Exception as e:
    print(f"Error during attachment execution: {{e}}", file=sys.stderr, flush=True)
    sys.exit(1)

print(json.dumps({{"hyperedge": "{hyperedge_id}", "findings": findings}}, sort_keys=True), flush=True)
sys.exit(0)
'''
    return boilerplate_header + indented_body + boilerplate_footer
