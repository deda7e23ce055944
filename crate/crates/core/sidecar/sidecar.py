"""Interpreter sidecar: executes and disassembles Python programs.

Speaks newline-delimited JSON on stdin/stdout. One request object per line,
one response object per line. See docs/sidecar-protocol.md.
"""

import dis
import json
import os
import resource
import subprocess
import sys
import tempfile
import time
import types

RUNNER = r"""
import os
import sys

_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
_DENIED_PREFIXES = (
    "socket.", "subprocess.", "os.system", "os.exec", "os.fork", "os.posix_spawn",
    "os.spawn", "os.remove", "os.unlink", "os.rename", "os.replace", "os.mkdir",
    "os.rmdir", "os.chmod", "os.chown", "os.truncate", "os.symlink", "os.link",
    "shutil.", "ctypes.",
)

def _guard(event, args):
    if event == "open":
        mode = args[1] if len(args) > 1 else None
        flags = args[2] if len(args) > 2 else 0
        if isinstance(mode, str) and any(c in mode for c in "wax+"):
            raise PermissionError("sandbox: write access denied")
        if isinstance(flags, int) and flags & _WRITE_FLAGS:
            raise PermissionError("sandbox: write access denied")
    elif event.startswith(_DENIED_PREFIXES):
        raise PermissionError("sandbox: %s denied" % event)

_source = sys.argv[1]
sys.argv = ["main.py"]
_code = compile(_source, "main.py", "exec")
sys.addaudithook(_guard)
exec(_code, {"__name__": "__main__", "__builtins__": __builtins__})
"""


def interpreter_version():
    return "%d.%d" % (sys.version_info.major, sys.version_info.minor)


def run_program(code, stdin, timeout, memory_cap):
    def limit():
        resource.setrlimit(resource.RLIMIT_AS, (memory_cap, memory_cap))
        os.setsid()

    env = {"PATH": os.environ.get("PATH", "/usr/bin:/bin"), "PYTHONHASHSEED": "0"}
    with tempfile.TemporaryDirectory(prefix="iodiag-run-") as cwd:
        start = time.monotonic()
        proc = subprocess.Popen(
            [sys.executable, "-I", "-S", "-c", RUNNER, code],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            cwd=cwd,
            env=env,
            preexec_fn=limit,
        )
        timed_out = False
        try:
            out, _ = proc.communicate(stdin.encode("utf-8"), timeout=timeout)
        except subprocess.TimeoutExpired:
            timed_out = True
            try:
                os.killpg(proc.pid, 9)
            except OSError:
                proc.kill()
            out, _ = proc.communicate()
        wall = time.monotonic() - start
    return {
        "stdout": out.decode("utf-8", errors="replace"),
        "exit_status": proc.returncode if proc.returncode is not None else -9,
        "wall_time": wall,
        "timed_out": timed_out,
    }


def disassemble(code):
    top = compile(code, "<program>", "exec")
    ops = []

    def walk(obj):
        for ins in dis.get_instructions(obj):
            ops.append([ins.opcode, ins.opname])
        for const in obj.co_consts:
            if isinstance(const, types.CodeType):
                walk(const)

    walk(top)
    return {"ops": ops}


def handle(request, allow_run):
    kind = request.get("kind")
    if kind == "version":
        return {"version": interpreter_version()}
    if kind == "disassemble":
        return disassemble(request["code"])
    if kind == "run":
        if not allow_run:
            raise RuntimeError("run requests are disabled in this sidecar")
        timeout = float(request["timeout"])
        memory_cap = int(request["memory_cap"])
        if timeout <= 0 or memory_cap <= 0:
            raise ValueError("limits must be positive")
        return run_program(request["code"], request.get("stdin", ""), timeout, memory_cap)
    raise ValueError("unknown request kind: %r" % (kind,))


def main():
    allow_run = "--disable-run" not in sys.argv[1:]
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request_id = None
        try:
            request = json.loads(line)
            request_id = request.get("id")
            payload = handle(request, allow_run)
            response = {"id": request_id, "ok": True, "result": payload}
        except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
            response = {"id": request_id, "ok": False, "error": "%s: %s" % (type(exc).__name__, exc)}
        sys.stdout.write(json.dumps(response, sort_keys=True) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
