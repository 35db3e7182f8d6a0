"""Shared store for the one-line acceptance verdicts printed after the run."""

LINES = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion}: {detail}"
    LINES.append(line)
    print(line)
    return ok
