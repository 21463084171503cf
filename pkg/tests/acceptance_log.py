"""Collects one result line per acceptance criterion for the terminal summary."""

RESULTS = {}


def record(criterion, ok, detail):
    RESULTS[criterion] = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
