"""Single-shot runner: execute one solution plus one test, report one JSON line.

Protocol
  stdin   one JSON object {"solution_code": str, "test": str}
  stdout  final line is one JSON object {"status", "error_type", "elapsed_ms"}
  exit    0 when a report was emitted, 2 when the request could not be read

Timeouts are enforced by the caller (it kills the process).
"""

import json
import os
import sys
import time


def _emit(fd, report):
    line = (json.dumps(report) + "\n").encode("utf-8")
    view = memoryview(line)
    while view:
        written = os.write(fd, view)
        view = view[written:]


def main():
    try:
        request = json.loads(sys.stdin.buffer.read().decode("utf-8"))
        solution = request["solution_code"]
        test = request["test"]
        if not isinstance(solution, str) or not isinstance(test, str):
            raise TypeError("fields must be strings")
        if not solution or not test:
            raise ValueError("fields must be non-empty")
    except Exception:
        return 2

    # Keep the real stdout for the report; everything the solution writes,
    # at the Python or fd level, goes to the null device.
    report_fd = os.dup(1)
    sink = os.open(os.devnull, os.O_WRONLY)
    sys.stdout.flush()
    sys.stderr.flush()
    os.dup2(sink, 1)
    os.dup2(sink, 2)
    sys.stdout = open(os.devnull, "w")
    sys.stderr = sys.stdout

    namespace = {"__name__": "__main__", "__builtins__": __builtins__}
    status = "pass"
    error_type = None
    start = time.perf_counter()
    try:
        exec(compile(solution, "<solution>", "exec"), namespace)
        exec(compile(test, "<test>", "exec"), namespace)
    except AssertionError:
        status = "assert_fail"
        error_type = "AssertionError"
    except BaseException as exc:  # noqa: BLE001 - SystemExit etc. are outcomes too
        status = "error"
        error_type = type(exc).__name__
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    _emit(report_fd, {"status": status, "error_type": error_type, "elapsed_ms": elapsed_ms})
    return 0


if __name__ == "__main__":
    # os._exit skips atexit hooks and non-daemon threads left by the solution.
    os._exit(main())
